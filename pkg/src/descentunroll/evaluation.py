"""Per-layer diagnostics of a trained unrolled optimizer.

Evaluation always runs with noise off; the API takes no noise schedule on
purpose. The report carries, per layer, the mean distance to the oracle
solution, the mean objective, the mean (sub)gradient norm and its running
best, the mean l1 norm, and the fraction of samples whose descent slack is
nonpositive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grads import ConstraintKind, constraint_slack_matrix
from .network import ModelParams, NoiseSchedule, forward_batch, gradient_batch
from .optimizee import ObjectiveKind, ProblemSpec


@dataclass
class MetricsReport:
    """Per-layer statistics over an evaluation split (rows l = 0..L)."""

    dist_mean: np.ndarray
    obj_mean: np.ndarray
    gradnorm_mean: np.ndarray
    l1_mean: np.ndarray
    satisfaction: np.ndarray
    zbest: np.ndarray
    n_samples: int
    slack_matrix: np.ndarray | None = None  # (L, n) per-sample slacks
    l1_samples: np.ndarray | None = None  # (L+1, n) raw l1 values

    def __post_init__(self):
        if np.any(np.diff(self.zbest) > 0):
            raise ValueError("running-best gradient norm must be non-increasing")
        if np.any((self.satisfaction < 0) | (self.satisfaction > 1)):
            raise ValueError("satisfaction rates must lie in [0, 1]")

    @property
    def num_layers(self) -> int:
        return self.dist_mean.size - 1


def _objective_batch(y: np.ndarray, x: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    r = x - spec.mat @ y
    obj = 0.5 * np.sum(r * r, axis=0)
    if spec.kind is ObjectiveKind.LASSO:
        obj = obj + spec.alpha * np.sum(np.abs(y), axis=0)
    return obj


def layer_metrics(
    params: ModelParams,
    dataset,
    split: str,
    ck: ConstraintKind,
    y0_seed: int = 0,
) -> MetricsReport:
    """Evaluate all per-layer statistics over one dataset split.

    Layer-0 initial estimates are drawn N(0, I) from `y0_seed`, so repeated
    evaluations (and sweeps comparing against this one) see identical
    trajectories.
    """
    spec: ProblemSpec = dataset.spec
    x, y_star = dataset.split_arrays(split)
    n = x.shape[1]
    if n == 0:
        raise ValueError(f"split {split!r} is empty")
    y0 = np.random.default_rng(y0_seed).standard_normal((spec.d, n))
    traj = forward_batch(x, y0, params, NoiseSchedule.off(), spec)
    return metrics_from_trajectory(traj.y, x, y_star, spec, ck)


def metrics_from_trajectory(
    ys: list, x: np.ndarray, y_star: np.ndarray, spec: ProblemSpec, ck: ConstraintKind
) -> MetricsReport:
    """Aggregate a batch trajectory (list of (d, n) arrays) into a report."""
    n = x.shape[1]
    dist = np.array([np.mean(np.linalg.norm(y - y_star, axis=0)) for y in ys])
    obj = np.array([np.mean(_objective_batch(y, x, spec)) for y in ys])
    gradnorm = np.array(
        [np.mean(np.linalg.norm(gradient_batch(y, x, spec), axis=0)) for y in ys]
    )
    l1_samples = np.stack([np.sum(np.abs(y), axis=0) for y in ys])
    slacks = constraint_slack_matrix(ys, x, y_star, spec, ck)
    satisfaction = np.concatenate([[1.0], np.mean(slacks <= 0.0, axis=1)])
    return MetricsReport(
        dist_mean=dist,
        obj_mean=obj,
        gradnorm_mean=gradnorm,
        l1_mean=l1_samples.mean(axis=1),
        satisfaction=satisfaction,
        zbest=np.minimum.accumulate(gradnorm),
        n_samples=n,
        slack_matrix=slacks,
        l1_samples=l1_samples,
    )


@dataclass
class EnvelopeReport:
    passed: bool
    delta_hat: float
    offset: float
    tau: float
    envelope: np.ndarray
    violations: list[int]


def rate_envelope_check(
    report: MetricsReport, epsilon: float, offset_fit: bool = True, tau: float = 0.10
) -> EnvelopeReport:
    """Check the exponential gradient-norm envelope layer by layer.

    The decay factor per layer is (1 - delta_hat)(1 - epsilon) with
    delta_hat taken from the worst per-layer satisfaction rate. The additive
    offset, when fitted, is the smallest nonnegative constant that touches
    the observed curve; every layer must then stay within (1 + tau) of it.
    """
    z = report.gradnorm_mean
    num_layers = report.num_layers
    delta_hat = float(1.0 - np.min(report.satisfaction[1:]))
    factor = (1.0 - delta_hat) * (1.0 - epsilon)
    decay = factor ** np.arange(num_layers + 1)
    envelope = decay * z[0]
    offset = 0.0
    if offset_fit:
        offset = max(0.0, float(np.min(z - envelope)))
    bound = envelope + offset * (1.0 + tau)
    violations = [l for l in range(num_layers + 1) if z[l] > bound[l]]
    return EnvelopeReport(not violations, delta_hat, offset, tau, bound, violations)


METRICS_HEADER = "layer,dist_mean,obj_mean,gradnorm_mean,l1_mean,satisfaction,zbest"


def export_metrics(report: MetricsReport, path):
    """Write the per-layer statistics as CSV with round-trippable floats."""
    lines = [METRICS_HEADER]
    for l in range(report.num_layers + 1):
        fields = (
            report.dist_mean[l],
            report.obj_mean[l],
            report.gradnorm_mean[l],
            report.l1_mean[l],
            report.satisfaction[l],
            report.zbest[l],
        )
        lines.append(str(l) + "," + ",".join(f"{v:.17g}" for v in fields))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_metrics(path) -> MetricsReport:
    """Parse an exported metrics CSV back into a (per-layer only) report."""
    with open(path) as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"unexpected metrics header in {path}")
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return MetricsReport(
        dist_mean=rows[:, 1],
        obj_mean=rows[:, 2],
        gradnorm_mean=rows[:, 3],
        l1_mean=rows[:, 4],
        satisfaction=rows[:, 5],
        zbest=rows[:, 6],
        n_samples=0,
    )


def export_slacks(report: MetricsReport, path):
    """Write the per-sample slack matrix as `layer,sample,slack` rows."""
    if report.slack_matrix is None:
        raise ValueError("report carries no per-sample slacks")
    lines = ["layer,sample,slack"]
    num_layers, n = report.slack_matrix.shape
    for l in range(num_layers):
        for i in range(n):
            lines.append(f"{l + 1},{i},{report.slack_matrix[l, i]:.17g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def export_l1_samples(report: MetricsReport, path):
    """Write raw per-sample l1 norms per layer; binning is left to plotting."""
    if report.l1_samples is None:
        raise ValueError("report carries no per-sample l1 values")
    lines = ["layer,sample,l1"]
    num_rows, n = report.l1_samples.shape
    for l in range(num_rows):
        for i in range(n):
            lines.append(f"{l},{i},{report.l1_samples[l, i]:.17g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
