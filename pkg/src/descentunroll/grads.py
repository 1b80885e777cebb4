"""Empirical Lagrangian and its exact parameter gradient.

The training objective is the batch MSE of the final layer plus the
dual-weighted per-layer constraint slacks, all evaluated on the same noisy
trajectories. Gradients are computed by hand-coded reverse mode over the
small op set the architectures use (affine maps, soft threshold, tanh,
residual add, l2 norms, squared error), with noise draws treated as
constants. Finite differences validate the whole thing.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import NumericalError
from .network import (
    Arch,
    ModelParams,
    NoiseMode,
    NoiseSchedule,
    apply_layer_batch,
    gradient_batch,
    noise_sigmas,
)
from .optimizee import ObjectiveKind, ProblemSpec

NORM_GUARD = 1e-12  # l2-norm gradients are zeroed below this magnitude


class ConstraintFamily(str, Enum):
    GRAD_NORM = "grad_norm"  # gradient norm of the objective must contract
    DIST_TO_OPT = "dist_to_opt"  # distance to the oracle solution must contract


@dataclass(frozen=True)
class ConstraintKind:
    kind: ConstraintFamily
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "kind", ConstraintFamily(self.kind))
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")


@dataclass
class Batch:
    """Column-stacked samples: x (p, B), y_star (d, B), y0 (d, B)."""

    x: np.ndarray
    y_star: np.ndarray
    y0: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y_star = np.asarray(self.y_star, dtype=np.float64)
        self.y0 = np.asarray(self.y0, dtype=np.float64)
        if self.x.ndim != 2 or self.x.shape[1] == 0:
            raise ValueError("batch must be non-empty with shape (p, B)")
        if self.y_star.shape[1] != self.x.shape[1] or self.y0.shape != self.y_star.shape:
            raise ValueError("batch arrays disagree on size")

    @property
    def size(self) -> int:
        return self.x.shape[1]


class ParamGrads:
    """Gradient arrays mirroring a ModelParams layer stack."""

    def __init__(self, layers: list[dict[str, np.ndarray]]):
        self.layers = layers

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "ParamGrads":
        return cls([{k: np.zeros_like(v) for k, v in l.fields().items()} for l in params.layers])

    def arrays(self):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.items():
                yield i, name, arr

    def assert_finite(self):
        for i, name, arr in self.arrays():
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"non-finite gradient for layer {i + 1} parameter {name}")


def _dual_vector(duals, num_layers: int) -> np.ndarray:
    lam = np.asarray(getattr(duals, "lam", duals), dtype=np.float64)
    if lam.shape != (num_layers,):
        raise ValueError(f"dual vector has shape {lam.shape}, expected ({num_layers},)")
    if np.any(lam < 0):
        raise ValueError("dual variables must be nonnegative")
    return lam


def _check_constraint_applicable(spec: ProblemSpec, ck: ConstraintKind):
    if ck.kind is ConstraintFamily.GRAD_NORM and spec.kind is ObjectiveKind.LASSO:
        raise ValueError(
            "gradient-norm constraints require a smooth objective; "
            "use dist_to_opt for lasso problems"
        )


def constraint_slack_matrix(
    ys: list, x: np.ndarray, y_star: np.ndarray, spec: ProblemSpec, ck: ConstraintKind
) -> np.ndarray:
    """Per-sample slacks, shape (L, B); entry (l-1, i) is C(y_l, y_{l-1})."""
    _check_constraint_applicable(spec, ck)
    shrink = 1.0 - ck.epsilon
    if ck.kind is ConstraintFamily.DIST_TO_OPT:
        norms = [np.linalg.norm(y - y_star, axis=0) for y in ys]
    else:
        norms = [np.linalg.norm(gradient_batch(y, x, spec), axis=0) for y in ys]
    return np.stack([norms[l] - shrink * norms[l - 1] for l in range(1, len(ys))])


def constraint_slacks(traj, sample, spec: ProblemSpec, ck: ConstraintKind) -> np.ndarray:
    """Slack vector (length L) for a single sample's trajectory."""
    x = np.asarray(sample.x, dtype=np.float64).reshape(-1, 1)
    y_star = np.asarray(sample.y_star, dtype=np.float64).reshape(-1, 1)
    ys = [np.asarray(y, dtype=np.float64).reshape(-1, 1) for y in traj.y]
    return constraint_slack_matrix(ys, x, y_star, spec, ck)[:, 0]


class _Tape(NamedTuple):
    ys: list
    internals: list
    value: float
    mse: float
    mean_slacks: np.ndarray
    lam: np.ndarray


def _forward_tape(
    batch: Batch,
    params: ModelParams,
    duals,
    ck: ConstraintKind,
    schedule: NoiseSchedule,
    spec: ProblemSpec,
    rng: np.random.Generator | None,
    noise: list | None = None,
) -> _Tape:
    """Forward pass recording the intermediates backprop needs.

    If `noise` is given those draws are reused instead of sampling; this is
    how the value and the gradient are guaranteed to see the same function.
    """
    _check_constraint_applicable(spec, ck)
    lam = _dual_vector(duals, params.num_layers)
    x, y_star = batch.x, batch.y_star
    ys = [batch.y0]
    internals = []
    y = batch.y0
    for l, layer in enumerate(params.layers, start=1):
        if noise is not None:
            n = noise[l - 1]
        elif schedule.mode is NoiseMode.OFF:
            n = np.zeros_like(y)
        else:
            if rng is None:
                raise ValueError("a seeded rng is required when noise is on")
            sigma = noise_sigmas(l, y, x, schedule, spec)
            n = rng.standard_normal(y.shape) * sigma
        y, internal = apply_layer_batch(params.arch, layer, x, y + n)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite output at layer {l}")
        internal["noise"] = n
        ys.append(y)
        internals.append(internal)

    resid = ys[-1] - y_star
    mse = float(np.mean(np.sum(resid * resid, axis=0)))
    slacks = constraint_slack_matrix(ys, x, y_star, spec, ck)
    mean_slacks = slacks.mean(axis=1)
    value = mse + float(lam @ mean_slacks)
    return _Tape(ys, internals, value, mse, mean_slacks, lam)


def _guarded_units(u: np.ndarray) -> np.ndarray:
    """Columnwise u / ||u||, zero where the norm is below the guard."""
    norms = np.linalg.norm(u, axis=0, keepdims=True)
    safe = np.where(norms >= NORM_GUARD, norms, 1.0)
    return np.where(norms >= NORM_GUARD, u / safe, 0.0)


def _backward(tape: _Tape, batch: Batch, params: ModelParams, ck: ConstraintKind, spec: ProblemSpec) -> ParamGrads:
    num_layers = params.num_layers
    batch_size = batch.size
    x, y_star = batch.x, batch.y_star
    shrink = 1.0 - ck.epsilon

    # Seed adjoints: the MSE term plus the direct constraint terms, all of
    # which depend only on forward quantities.
    ybar = [np.zeros_like(y) for y in tape.ys]
    ybar[num_layers] += (2.0 / batch_size) * (tape.ys[num_layers] - y_star)
    if ck.kind is ConstraintFamily.DIST_TO_OPT:
        units = [_guarded_units(y - y_star) for y in tape.ys]
        sens = units
    else:
        gram = spec.mat.T @ spec.mat
        units = [_guarded_units(gradient_batch(y, x, spec)) for y in tape.ys]
        sens = [gram @ u for u in units]
    for l in range(1, num_layers + 1):
        lam_l = tape.lam[l - 1]
        if lam_l == 0.0:
            continue
        ybar[l] += (lam_l / batch_size) * sens[l]
        ybar[l - 1] -= (lam_l / batch_size) * shrink * sens[l - 1]

    grads = ParamGrads.zeros_like(params)
    for l in range(num_layers, 0, -1):
        layer = params.layers[l - 1]
        internal = tape.internals[l - 1]
        gbar = ybar[l]
        gl = grads.layers[l - 1]
        if params.arch is Arch.LISTA:
            abar = gbar * internal["mask"]
            gl["beta"] += -np.sum(np.sign(internal["a"]) * abar, axis=1)
            gl["d_u"] += abar @ x.T
            gl["d_e"] += abar @ internal["z"].T
            ybar[l - 1] += layer.d_e.T @ abar
        else:
            hidden = internal["hidden"]
            mbar = -gbar
            gl["w2"] += mbar @ hidden.T
            gl["b2"] += np.sum(mbar, axis=1)
            hpre_bar = (layer.w2.T @ mbar) * (1.0 - hidden * hidden)
            gl["w1"] += hpre_bar @ internal["u"].T
            gl["b1"] += np.sum(hpre_bar, axis=1)
            ybar[l - 1] += gbar + (layer.w1.T @ hpre_bar)[: params.dims[1]]
    grads.assert_finite()
    return grads


def empirical_lagrangian(
    batch: Batch,
    params: ModelParams,
    duals,
    ck: ConstraintKind,
    schedule: NoiseSchedule,
    spec: ProblemSpec,
    rng: np.random.Generator | None = None,
) -> tuple[float, np.ndarray]:
    """Lagrangian value and per-layer mean slacks over one batch.

    value = mean ||y_L - y*||^2 + sum_l lambda_l * mean slack_l, with the
    slacks computed on the same noisy trajectories as the loss.
    """
    tape = _forward_tape(batch, params, duals, ck, schedule, spec, rng)
    return tape.value, tape.mean_slacks


def lagrangian_grad(
    batch: Batch,
    params: ModelParams,
    duals,
    ck: ConstraintKind,
    schedule: NoiseSchedule,
    spec: ProblemSpec,
    rng: np.random.Generator | None = None,
) -> ParamGrads:
    """Exact gradient of the empirical Lagrangian w.r.t. every parameter."""
    tape = _forward_tape(batch, params, duals, ck, schedule, spec, rng)
    return _backward(tape, batch, params, ck, spec)


class LagrangianStep(NamedTuple):
    value: float
    mse: float
    mean_slacks: np.ndarray
    grads: ParamGrads


def lagrangian_value_and_grad(
    batch: Batch,
    params: ModelParams,
    duals,
    ck: ConstraintKind,
    schedule: NoiseSchedule,
    spec: ProblemSpec,
    rng: np.random.Generator | None = None,
) -> LagrangianStep:
    """Value, MSE part, mean slacks and gradient from a single noise draw."""
    tape = _forward_tape(batch, params, duals, ck, schedule, spec, rng)
    return LagrangianStep(tape.value, tape.mse, tape.mean_slacks, _backward(tape, batch, params, ck, spec))


def _param_count(params: ModelParams) -> int:
    return sum(arr.size for layer in params.layers for arr in layer.fields().values())


def _locate(params: ModelParams, flat: int):
    """Map a flat coordinate index to (layer array, numpy index tuple)."""
    for layer in params.layers:
        for arr in layer.fields().values():
            if flat < arr.size:
                return arr, np.unravel_index(flat, arr.shape)
            flat -= arr.size
    raise IndexError("flat parameter index out of range")


def _grad_entry(grads: ParamGrads, flat: int) -> float:
    for layer in grads.layers:
        for arr in layer.values():
            if flat < arr.size:
                return float(arr[np.unravel_index(flat, arr.shape)])
            flat -= arr.size
    raise IndexError("flat parameter index out of range")


def _activation_masks(tape: _Tape) -> list:
    return [i["mask"] for i in tape.internals if "mask" in i]


def finite_diff_check(
    params: ModelParams,
    batch: Batch,
    duals,
    ck: ConstraintKind,
    spec: ProblemSpec,
    h: float = 1e-5,
    samples: int = 20,
    seed: int = 0,
    grads: ParamGrads | None = None,
) -> float:
    """Max relative error of the analytic gradient vs central differences.

    Runs with noise off so the Lagrangian is deterministic. `samples`
    coordinates are chosen at random (all of them when `samples` covers the
    parameter count). Coordinates whose perturbation flips a soft-threshold
    activation between the two evaluation points are skipped: the central
    difference straddles a kink there and measures nothing.

    Pass precomputed `grads` to check an externally supplied gradient.
    """
    schedule = NoiseSchedule.off()
    if grads is None:
        grads = lagrangian_grad(batch, params, duals, ck, schedule, spec)
    total = _param_count(params)
    if samples >= total:
        coords = np.arange(total)
    else:
        coords = np.sort(np.random.default_rng(seed).choice(total, size=samples, replace=False))

    max_rel = 0.0
    for flat in coords:
        arr, idx = _locate(params, int(flat))
        orig = arr[idx]
        arr[idx] = orig + h
        tape_plus = _forward_tape(batch, params, duals, ck, schedule, spec, None)
        arr[idx] = orig - h
        tape_minus = _forward_tape(batch, params, duals, ck, schedule, spec, None)
        arr[idx] = orig
        masks_plus = _activation_masks(tape_plus)
        masks_minus = _activation_masks(tape_minus)
        if any(not np.array_equal(mp, mm) for mp, mm in zip(masks_plus, masks_minus)):
            continue  # kink crossed between the two evaluation points
        fd = (tape_plus.value - tape_minus.value) / (2.0 * h)
        an = _grad_entry(grads, int(flat))
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
        max_rel = max(max_rel, rel)
    return max_rel
