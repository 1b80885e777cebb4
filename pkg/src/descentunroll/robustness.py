"""Out-of-distribution and layer-noise harnesses.

The OOD harness perturbs every signal with Gaussian noise of a given size,
re-solves the labels from scratch with the dataset's oracle budget, and
re-evaluates models on the shifted problems. The layer-noise harness turns
the gradient-proportional noise injection back on at inference to probe how
well the learned descent behavior survives perturbations of the iterates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, solve_label
from .evaluation import MetricsReport, layer_metrics, metrics_from_trajectory
from .grads import ConstraintKind
from .network import ModelParams, NoiseMode, NoiseSchedule, forward_batch


def make_ood_dataset(
    dataset: Dataset, perturbation: float, rng: np.random.Generator, threads: int = 1
) -> Dataset:
    """Shifted copy of a dataset: x + N(0, p^2 I) with labels re-solved.

    The dictionary, splits and oracle budget are unchanged; the solver runs
    from scratch on every shifted signal.
    """
    if perturbation < 0:
        raise ValueError("perturbation size must be nonnegative")
    spec = dataset.spec
    noise = rng.standard_normal((spec.p, len(dataset.samples)))
    shifted = [
        s.x + perturbation * noise[:, i] for i, s in enumerate(dataset.samples)
    ]

    def label(x):
        return solve_label(x, spec, dataset.gen.oracle_iters, dataset.gen.oracle_tol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(label, shifted))
    else:
        samples = [label(x) for x in shifted]
    return Dataset(spec, samples, dict(dataset.splits), dataset.gen)


@dataclass
class OodEntry:
    perturbation: float
    model: str
    report: MetricsReport

    @property
    def slack_means(self) -> np.ndarray:
        return self.report.slack_matrix.mean(axis=1)


@dataclass
class OodReport:
    entries: list[OodEntry] = field(default_factory=list)

    def entry(self, perturbation: float, model: str) -> OodEntry:
        for e in self.entries:
            if e.perturbation == perturbation and e.model == model:
                return e
        raise KeyError(f"no entry for p={perturbation}, model={model!r}")


def ood_sweep(
    models: list[tuple[str, ModelParams]],
    dataset: Dataset,
    p_list: list[float],
    ck: ConstraintKind,
    split: str = "test",
    seed: int = 0,
    y0_seed: int = 0,
    threads: int = 1,
) -> OodReport:
    """Evaluate labeled models over a grid of perturbation sizes.

    Each grid point gets its own noise stream derived from (seed, index), so
    points are independent and the sweep is reproducible; all models at one
    point see the same shifted dataset.
    """
    report = OodReport()
    for i, p in enumerate(p_list):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        ood = make_ood_dataset(dataset, p, rng, threads=threads)
        for name, params in models:
            metrics = layer_metrics(params, ood, split, ck, y0_seed=y0_seed)
            report.entries.append(OodEntry(p, name, metrics))
    return report


def export_ood_csv(report: OodReport, path):
    """`p,model,layer,dist_mean,obj_mean,slack_mean`; layer 0 has no slack."""
    lines = ["p,model,layer,dist_mean,obj_mean,slack_mean"]
    for e in report.entries:
        slacks = np.concatenate([[0.0], e.slack_means])
        for l in range(e.report.num_layers + 1):
            lines.append(
                f"{e.perturbation:.17g},{e.model},{l},"
                f"{e.report.dist_mean[l]:.17g},{e.report.obj_mean[l]:.17g},{slacks[l]:.17g}"
            )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


@dataclass
class NoiseSweepEntry:
    sigma_hat: float
    report: MetricsReport


@dataclass
class NoiseSweepReport:
    model: str
    entries: list[NoiseSweepEntry] = field(default_factory=list)


def layer_noise_sweep(
    params: ModelParams,
    dataset: Dataset,
    sigma_hat_list: list[float],
    ck: ConstraintKind,
    split: str = "test",
    seed: int = 0,
    y0_seed: int = 0,
    model_name: str = "model",
) -> NoiseSweepReport:
    """Evaluate with gradient-proportional noise injected at inference.

    sigma_hat = 0 reproduces the clean evaluation bit for bit. Constraint
    satisfaction is measured on the noisy trajectories themselves.
    """
    spec = dataset.spec
    x, y_star = dataset.split_arrays(split)
    y0 = np.random.default_rng(y0_seed).standard_normal((spec.d, x.shape[1]))
    report = NoiseSweepReport(model_name)
    for j, sigma_hat in enumerate(sigma_hat_list):
        rng = np.random.default_rng(np.random.SeedSequence((seed, j)))
        schedule = NoiseSchedule(NoiseMode.GRAD_PROPORTIONAL, sigma_hat)
        traj = forward_batch(x, y0, params, schedule, spec, rng)
        metrics = metrics_from_trajectory(traj.y, x, y_star, spec, ck)
        report.entries.append(NoiseSweepEntry(sigma_hat, metrics))
    return report


def export_noise_csv(report: NoiseSweepReport, path):
    """`sigma_hat,model,layer,dist_mean,l1_mean,satisfaction` rows."""
    lines = ["sigma_hat,model,layer,dist_mean,l1_mean,satisfaction"]
    for e in report.entries:
        for l in range(e.report.num_layers + 1):
            lines.append(
                f"{e.sigma_hat:.17g},{report.model},{l},"
                f"{e.report.dist_mean[l]:.17g},{e.report.l1_mean[l]:.17g},"
                f"{e.report.satisfaction[l]:.17g}"
            )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
