"""Unrolled architectures and their forward passes.

Two architectures are provided: the learned shrinkage network (per-layer
matrices and thresholds around a soft-thresholding activation) and a
residual MLP that unrolls gradient descent. Forward passes optionally
inject per-layer Gaussian noise into each layer's input; noise is a
training-time device and every evaluation path runs with it off.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NumericalError
from .optimizee import ObjectiveKind, ProblemSpec, soft_threshold

__all__ = [
    "Arch",
    "NoiseMode",
    "NoiseSchedule",
    "ListaLayerParams",
    "ResGdLayerParams",
    "ModelParams",
    "Trajectory",
    "init_lista",
    "init_resgd",
    "forward",
    "forward_batch",
]


class Arch(str, Enum):
    LISTA = "lista"
    RESGD = "resgd"


class NoiseMode(str, Enum):
    OFF = "off"
    GRAD_PROPORTIONAL = "grad_proportional"
    INVERSE_LAYER = "inverse_layer"


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-layer noise level rule.

    grad_proportional: sigma_l = sigma_hat * ||grad f(y_{l-1}; x)|| / sqrt(d),
    per sample, so the noise vanishes as iterates approach an optimum.
    inverse_layer: sigma_l = sigma_hat / sqrt(l).
    off: all draws are zero vectors.
    """

    mode: NoiseMode = NoiseMode.OFF
    sigma_hat: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", NoiseMode(self.mode))
        if self.sigma_hat < 0:
            raise ValueError(f"sigma_hat must be nonnegative, got {self.sigma_hat}")

    @classmethod
    def off(cls) -> "NoiseSchedule":
        return cls(NoiseMode.OFF, 0.0)


def _require_finite(name: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")


@dataclass
class ListaLayerParams:
    """One learned shrinkage layer: y = S_beta(d_u @ x + d_e @ y_prev)."""

    d_u: np.ndarray  # d x p
    d_e: np.ndarray  # d x d
    beta: np.ndarray  # d, nonnegative thresholds

    def __post_init__(self):
        self.d_u = np.asarray(self.d_u, dtype=np.float64)
        self.d_e = np.asarray(self.d_e, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        d = self.d_u.shape[0]
        if self.d_u.ndim != 2 or self.d_e.shape != (d, d) or self.beta.shape != (d,):
            raise ValueError("inconsistent LISTA layer shapes")
        for name in ("d_u", "d_e", "beta"):
            _require_finite(name, getattr(self, name))
        if np.any(self.beta < 0):
            raise ValueError("beta must be nonnegative")

    def fields(self) -> dict[str, np.ndarray]:
        return {"d_u": self.d_u, "d_e": self.d_e, "beta": self.beta}


@dataclass
class ResGdLayerParams:
    """One residual layer: y = y_prev - w2 @ tanh(w1 @ [y_prev; x] + b1) - b2."""

    w1: np.ndarray  # h x (d + p)
    b1: np.ndarray  # h
    w2: np.ndarray  # d x h
    b2: np.ndarray  # d

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        h = self.w1.shape[0]
        d = self.w2.shape[0]
        if self.b1.shape != (h,) or self.w2.shape != (d, h) or self.b2.shape != (d,):
            raise ValueError("inconsistent residual-MLP layer shapes")
        for name in ("w1", "b1", "w2", "b2"):
            _require_finite(name, getattr(self, name))

    def fields(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class ModelParams:
    """Stack of layer parameters plus the dimensions they act on.

    dims is (p, d, h); h is 0 for the shrinkage architecture.
    """

    arch: Arch
    layers: list
    dims: tuple[int, int, int]

    def __post_init__(self):
        self.arch = Arch(self.arch)
        if not self.layers:
            raise ValueError("layers must be non-empty")
        p, d, h = self.dims
        for i, layer in enumerate(self.layers):
            if self.arch is Arch.LISTA:
                if not isinstance(layer, ListaLayerParams) or layer.d_u.shape != (d, p):
                    raise ValueError(f"layer {i} inconsistent with dims {self.dims}")
            else:
                if not isinstance(layer, ResGdLayerParams) or layer.w1.shape != (h, d + p):
                    raise ValueError(f"layer {i} inconsistent with dims {self.dims}")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def copy(self) -> "ModelParams":
        layers = [type(l)(**{k: v.copy() for k, v in l.fields().items()}) for l in self.layers]
        return ModelParams(self.arch, layers, self.dims)


@dataclass
class Trajectory:
    """Per-layer outputs y_0..y_L and the noise vectors actually added.

    Arrays have shape (d, B) where B is the batch width; single-sample
    trajectories use B = 1 columns via `forward`.
    """

    y: list
    noise: list

    def __post_init__(self):
        if len(self.noise) != len(self.y) - 1:
            raise ValueError("noise draws must number one fewer than outputs")

    @property
    def num_layers(self) -> int:
        return len(self.y) - 1


def init_lista(spec: ProblemSpec, num_layers: int) -> ModelParams:
    """Initialize every layer at the point equivalent to the proximal iteration.

    d_u = (1/nu) D.T, d_e = I - (1/nu) D.T D, beta = (alpha/nu) 1, so a
    noise-free forward pass from y0 = 0 reproduces the solver's iterates.
    """
    if spec.kind is not ObjectiveKind.LASSO:
        raise ValueError("init_lista requires a lasso spec")
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    d_mat = spec.mat
    d_u = d_mat.T / spec.nu
    d_e = np.eye(spec.d) - (d_mat.T @ d_mat) / spec.nu
    beta = np.full(spec.d, spec.alpha / spec.nu)
    layers = [
        ListaLayerParams(d_u.copy(), d_e.copy(), beta.copy()) for _ in range(num_layers)
    ]
    return ModelParams(Arch.LISTA, layers, (spec.p, spec.d, 0))


def init_resgd(dims: tuple[int, int, int], num_layers: int, seed: int) -> ModelParams:
    """Random residual-MLP stack: weights N(0, 1/fan_in), zero biases."""
    p, d, h = dims
    if h < 1:
        raise ValueError("hidden width must be >= 1")
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(num_layers):
        w1 = rng.standard_normal((h, d + p)) / np.sqrt(d + p)
        w2 = rng.standard_normal((d, h)) / np.sqrt(h)
        layers.append(ResGdLayerParams(w1, np.zeros(h), w2, np.zeros(d)))
    return ModelParams(Arch.RESGD, layers, dims)


def apply_layer_batch(arch: Arch, layer, x: np.ndarray, z: np.ndarray):
    """Apply one layer to noisy inputs z (d x B) with signals x (p x B).

    Returns the layer output together with the intermediates needed for
    backpropagation (pre-activations and masks / hidden activations).
    """
    if arch is Arch.LISTA:
        a = layer.d_u @ x + layer.d_e @ z
        mask = np.abs(a) > layer.beta[:, None]  # strict: subderivative 0 at the kink
        y = np.sign(a) * np.maximum(np.abs(a) - layer.beta[:, None], 0.0)
        return y, {"z": z, "a": a, "mask": mask}
    u = np.concatenate([z, x], axis=0)
    hidden = np.tanh(layer.w1 @ u + layer.b1[:, None])
    update = layer.w2 @ hidden + layer.b2[:, None]
    return z - update, {"z": z, "u": u, "hidden": hidden}


def gradient_batch(y: np.ndarray, x: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Columnwise objective (sub)gradient for a batch of code vectors."""
    mat = spec.mat
    g = mat.T @ (mat @ y - x)
    if spec.kind is ObjectiveKind.QUADRATIC:
        return g
    out = g + spec.alpha * np.sign(y)
    zero = y == 0.0
    if np.any(zero):
        gz = g[zero]
        out[zero] = np.sign(gz) * np.maximum(np.abs(gz) - spec.alpha, 0.0)
    return out


def noise_sigmas(
    layer_index: int,
    y_prev: np.ndarray,
    x: np.ndarray,
    schedule: NoiseSchedule,
    spec: ProblemSpec,
) -> np.ndarray:
    """Per-sample noise standard deviations for one layer, shape (1, B)."""
    batch = y_prev.shape[1]
    if schedule.mode is NoiseMode.OFF:
        return np.zeros((1, batch))
    if schedule.mode is NoiseMode.INVERSE_LAYER:
        return np.full((1, batch), schedule.sigma_hat / np.sqrt(layer_index))
    g = gradient_batch(y_prev, x, spec)
    norms = np.linalg.norm(g, axis=0, keepdims=True)
    return schedule.sigma_hat * norms / np.sqrt(y_prev.shape[0])


def forward_batch(
    x: np.ndarray,
    y0: np.ndarray,
    params: ModelParams,
    schedule: NoiseSchedule,
    spec: ProblemSpec,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Run the unrolled network over a batch.

    x has shape (p, B) and y0 shape (d, B). Layer l receives
    ``y_{l-1} + n_l`` with n_l drawn per the schedule; draws are recorded in
    the returned trajectory. With the schedule off no random numbers are
    consumed and the forward pass is a pure function of (x, y0, params).
    """
    p, d, _ = params.dims
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != p:
        raise ValueError(f"x has shape {x.shape}, expected ({p}, B)")
    if y0.shape != (d, x.shape[1]):
        raise ValueError(f"y0 has shape {y0.shape}, expected ({d}, {x.shape[1]})")
    if schedule.mode is not NoiseMode.OFF and rng is None:
        raise ValueError("a seeded rng is required when noise is on")

    ys = [y0]
    noise = []
    y = y0
    for l, layer in enumerate(params.layers, start=1):
        if schedule.mode is NoiseMode.OFF:
            n = np.zeros_like(y)
            z = y
        else:
            sigma = noise_sigmas(l, y, x, schedule, spec)
            n = rng.standard_normal(y.shape) * sigma
            z = y + n
        y, _ = apply_layer_batch(params.arch, layer, x, z)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite output at layer {l}")
        ys.append(y)
        noise.append(n)
    return Trajectory(ys, noise)


def forward(
    x: np.ndarray,
    y0: np.ndarray,
    params: ModelParams,
    schedule: NoiseSchedule,
    spec: ProblemSpec,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Single-sample forward pass; see `forward_batch`."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    y0 = np.asarray(y0, dtype=np.float64).reshape(-1, 1)
    return forward_batch(x, y0, params, schedule, spec, rng)
