"""Primal-dual training loop and checkpoint persistence.

Each epoch runs batched ADAM descent on the empirical Lagrangian, then one
projected ascent step on the dual variables using the epoch's accumulated
mean slacks. Disabling constraints freezes the duals at zero, which reduces
the loop to plain MSE training (optionally with the noise injection kept
on, giving the noise-trained baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import binio
from .errors import FileFormatError, NumericalError
from .grads import Batch, ConstraintKind, ParamGrads, lagrangian_value_and_grad
from .network import (
    Arch,
    ListaLayerParams,
    ModelParams,
    NoiseSchedule,
    ResGdLayerParams,
    forward_batch,
    init_lista,
    init_resgd,
)
from .optimizee import ObjectiveKind, ProblemSpec

CHECKPOINT_MAGIC = b"UDCK"
CHECKPOINT_VERSION = 1
_ARCH_TAGS = {Arch.LISTA: 1, Arch.RESGD: 2}
_TAG_ARCHS = {v: k for k, v in _ARCH_TAGS.items()}


@dataclass
class DualState:
    """Nonnegative multipliers, one per layer constraint."""

    lam: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if self.lam.ndim != 1:
            raise ValueError("dual vector must be 1-D")
        if not np.all(np.isfinite(self.lam)) or np.any(self.lam < 0):
            raise ValueError("dual variables must be finite and nonnegative")

    @classmethod
    def zeros(cls, num_layers: int) -> "DualState":
        return cls(np.zeros(num_layers))


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.eps_stab <= 0:
            raise ValueError("adam eps_stab must be positive")


@dataclass(frozen=True)
class TrainConfig:
    arch: Arch = Arch.LISTA
    num_layers: int = 10
    hidden_width: int = 0  # 0 selects 4 * (d + p) for the residual MLP
    epochs: int = 30
    batch_size: int = 64
    mu_w: float = 1e-5
    mu_lambda: float = 1e-3
    epsilon: float = 0.05
    constraint: str = "dist_to_opt"
    noise_mode: str = "grad_proportional"
    sigma_hat: float = 1.0
    constraints_enabled: bool = True
    noise_enabled: bool = True
    skip_first_layer_constraint: bool = False
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    divergence_factor: float = 1e3
    dual_slack_source: str = "epoch_mean"  # or "last_batch"
    y0_mode: str = "gauss"  # layer-0 estimates: N(0, I) draws or zeros
    y0_scale: float = 1.0  # standard deviation of the gaussian layer-0 draws

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mu_w <= 0 or self.mu_lambda <= 0:
            raise ValueError("step sizes must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.hidden_width < 0:
            raise ValueError("hidden_width must be >= 0")
        if self.divergence_factor <= 0:
            raise ValueError("divergence_factor must be positive")
        if self.dual_slack_source not in ("epoch_mean", "last_batch"):
            raise ValueError(f"unknown dual_slack_source {self.dual_slack_source!r}")
        if self.y0_mode not in ("gauss", "zeros"):
            raise ValueError(f"unknown y0_mode {self.y0_mode!r}")
        if self.y0_scale <= 0:
            raise ValueError("y0_scale must be positive")
        ConstraintKind(self.constraint, self.epsilon)  # validates the pair
        NoiseSchedule(self.noise_mode, self.sigma_hat)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    mean_slacks: np.ndarray
    duals: np.ndarray
    val_mse: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)


class AdamState:
    """First/second moment accumulators mirroring the parameter tree."""

    def __init__(self, m: ParamGrads, v: ParamGrads, t: int = 0):
        self.m = m
        self.v = v
        self.t = t

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(ParamGrads.zeros_like(params), ParamGrads.zeros_like(params))


def primal_step(
    params: ModelParams,
    grads: ParamGrads,
    adam_state: AdamState,
    mu_w: float,
    adam: AdamConfig = AdamConfig(),
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected ADAM update, then project thresholds to >= 0."""
    adam_state.t += 1
    bc1 = 1.0 - adam.beta1**adam_state.t
    bc2 = 1.0 - adam.beta2**adam_state.t
    for layer, glayer, mlayer, vlayer in zip(
        params.layers, grads.layers, adam_state.m.layers, adam_state.v.layers
    ):
        arrs = layer.fields()
        for name, g in glayer.items():
            m = mlayer[name]
            v = vlayer[name]
            m *= adam.beta1
            m += (1.0 - adam.beta1) * g
            v *= adam.beta2
            v += (1.0 - adam.beta2) * g * g
            step = mu_w * (m / bc1) / (np.sqrt(v / bc2) + adam.eps_stab)
            if not np.all(np.isfinite(step)):
                raise NumericalError(f"non-finite primal update for parameter {name}")
            arrs[name] -= step
        if isinstance(layer, ListaLayerParams):
            np.maximum(layer.beta, 0.0, out=layer.beta)
    return params, adam_state


def dual_step(duals: DualState, mean_slacks: np.ndarray, mu_lambda: float) -> DualState:
    """Projected ascent ``lambda_l <- max(lambda_l + mu * slack_l, 0)``."""
    mean_slacks = np.asarray(mean_slacks, dtype=np.float64)
    return DualState(np.maximum(duals.lam + mu_lambda * mean_slacks, 0.0))


def _validation_mse(params, x, y_star, y0, spec) -> float:
    traj = forward_batch(x, y0, params, NoiseSchedule.off(), spec)
    resid = traj.y[-1] - y_star
    return float(np.mean(np.sum(resid * resid, axis=0)))


def train(
    config: TrainConfig,
    dataset,
    initial_params: ModelParams | None = None,
) -> tuple[ModelParams, DualState, TrainHistory]:
    """Run the primal-dual loop on a dataset's train split.

    Deterministic given `config.seed`: the seed sequence spawns independent
    streams for parameter init, epoch shuffles, noise draws and the layer-0
    initial estimates. Raises NumericalError if the batch loss exceeds
    ``divergence_factor`` times the first batch's loss.
    """
    spec: ProblemSpec = dataset.spec
    p, d = spec.p, spec.d
    if config.arch is Arch.LISTA and spec.kind is not ObjectiveKind.LASSO:
        raise ValueError("the shrinkage architecture requires a lasso dataset")
    hidden = config.hidden_width if config.hidden_width > 0 else 4 * (d + p)

    seeds = np.random.SeedSequence(config.seed).spawn(5)
    init_ss, shuffle_ss, noise_ss, y0_ss, val_ss = seeds
    if initial_params is not None:
        params = initial_params.copy()
    elif config.arch is Arch.LISTA:
        params = init_lista(spec, config.num_layers)
    else:
        params = init_resgd((p, d, hidden), config.num_layers, init_ss)

    duals = DualState.zeros(config.num_layers)
    adam_state = AdamState.zeros_like(params)
    ck = ConstraintKind(config.constraint, config.epsilon)
    schedule = (
        NoiseSchedule(config.noise_mode, config.sigma_hat)
        if config.noise_enabled
        else NoiseSchedule.off()
    )

    x_all = np.stack([s.x for s in dataset.samples], axis=1)
    ystar_all = np.stack([s.y_star for s in dataset.samples], axis=1)
    train_idx = np.asarray(dataset.splits["train"], dtype=np.int64)
    val_idx = np.asarray(dataset.splits["val"], dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("dataset has an empty train split")

    shuffle_rng = np.random.default_rng(shuffle_ss)
    noise_rng = np.random.default_rng(noise_ss)
    y0_rng = np.random.default_rng(y0_ss)
    gauss_y0 = config.y0_mode == "gauss"
    val_y0 = (
        config.y0_scale * np.random.default_rng(val_ss).standard_normal((d, val_idx.size))
        if gauss_y0
        else np.zeros((d, val_idx.size))
    )
    x_val = x_all[:, val_idx]
    ystar_val = ystar_all[:, val_idx]

    history = TrainHistory()
    initial_loss = None
    for epoch in range(config.epochs):
        order = train_idx[shuffle_rng.permutation(train_idx.size)]
        slack_acc = np.zeros(config.num_layers)
        loss_acc = 0.0
        seen = 0
        last_slacks = np.zeros(config.num_layers)
        for start in range(0, order.size, config.batch_size):
            sel = order[start : start + config.batch_size]
            y0 = (
                config.y0_scale * y0_rng.standard_normal((d, sel.size))
                if gauss_y0
                else np.zeros((d, sel.size))
            )
            batch = Batch(x_all[:, sel], ystar_all[:, sel], y0)
            step = lagrangian_value_and_grad(batch, params, duals, ck, schedule, spec, noise_rng)
            if initial_loss is None:
                initial_loss = max(step.mse, 1e-12)
            if step.mse > config.divergence_factor * initial_loss:
                raise NumericalError(
                    f"training diverged at epoch {epoch}: batch loss {step.mse:g} "
                    f"exceeds {config.divergence_factor:g} x initial loss {initial_loss:g}"
                )
            primal_step(params, step.grads, adam_state, config.mu_w, config.adam)
            slack_acc += step.mean_slacks * sel.size
            loss_acc += step.mse * sel.size
            seen += sel.size
            last_slacks = step.mean_slacks
        epoch_slacks = slack_acc / seen

        if config.constraints_enabled:
            source = epoch_slacks if config.dual_slack_source == "epoch_mean" else last_slacks
            duals = dual_step(duals, source, config.mu_lambda)
            if config.skip_first_layer_constraint:
                duals.lam[0] = 0.0

        val_mse = (
            _validation_mse(params, x_val, ystar_val, val_y0, spec)
            if val_idx.size
            else float("nan")
        )
        history.records.append(
            EpochRecord(epoch, loss_acc / seen, epoch_slacks, duals.lam.copy(), val_mse)
        )
    return params, duals, history


def write_history_csv(history: TrainHistory, path):
    num_layers = history.records[0].mean_slacks.size if history.records else 0
    cols = ["epoch", "train_loss", "val_mse"]
    cols += [f"slack_{l}" for l in range(1, num_layers + 1)]
    cols += [f"dual_{l}" for l in range(1, num_layers + 1)]
    lines = [",".join(cols)]
    for rec in history.records:
        row = [str(rec.epoch), f"{rec.train_loss:.17g}", f"{rec.val_mse:.17g}"]
        row += [f"{v:.17g}" for v in rec.mean_slacks]
        row += [f"{v:.17g}" for v in rec.duals]
        lines.append(",".join(row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def save_checkpoint(params: ModelParams, duals: DualState, path):
    """Write the model and duals in the binary checkpoint format."""
    if duals.lam.size != params.num_layers:
        raise ValueError("dual vector length must equal the layer count")
    p, d, h = params.dims
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        binio.write_u32(f, CHECKPOINT_VERSION)
        binio.write_u8(f, _ARCH_TAGS[params.arch])
        for dim in (p, d, h, params.num_layers):
            binio.write_u32(f, dim)
        for layer in params.layers:
            for arr in layer.fields().values():
                binio.write_array(f, arr)
        binio.write_array(f, duals.lam)


def load_checkpoint(path) -> tuple[ModelParams, DualState]:
    """Read a checkpoint; bit-exact inverse of `save_checkpoint`."""
    with open(path, "rb") as f:
        binio.expect_magic(f, CHECKPOINT_MAGIC, "checkpoint")
        binio.expect_version(f, CHECKPOINT_VERSION, "checkpoint")
        tag = binio.read_u8(f)
        if tag not in _TAG_ARCHS:
            raise FileFormatError(f"unknown architecture tag {tag}")
        arch = _TAG_ARCHS[tag]
        p, d, h, num_layers = (binio.read_u32(f) for _ in range(4))
        layers = []
        for _ in range(num_layers):
            if arch is Arch.LISTA:
                layers.append(
                    ListaLayerParams(
                        binio.read_array(f, (d, p)),
                        binio.read_array(f, (d, d)),
                        binio.read_array(f, (d,)),
                    )
                )
            else:
                layers.append(
                    ResGdLayerParams(
                        binio.read_array(f, (h, d + p)),
                        binio.read_array(f, (h,)),
                        binio.read_array(f, (d, h)),
                        binio.read_array(f, (d,)),
                    )
                )
        duals = DualState(binio.read_array(f, (num_layers,)))
        binio.expect_eof(f, "checkpoint")
    return ModelParams(arch, layers, (p, d, h)), duals
