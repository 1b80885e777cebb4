"""Synthetic dataset generation and binary persistence.

Signals are sparse combinations of dictionary columns plus Gaussian noise;
labels come from the reference solvers, never from the generating codes.
Everything is deterministic under a single seed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import FileFormatError
from .optimizee import (
    IstaResult,
    ObjectiveKind,
    ProblemSpec,
    ista_solve,
    lambda_max_gram,
    quad_solve,
)

DATASET_MAGIC = b"UDSC"
DATASET_VERSION = 1
_KIND_TAGS = {ObjectiveKind.QUADRATIC: 1, ObjectiveKind.LASSO: 2}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class LabeledSample:
    x: np.ndarray
    y_star: np.ndarray
    oracle_residual: float
    oracle_iters: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y_star = np.asarray(self.y_star, dtype=np.float64)


@dataclass(frozen=True)
class GenConfig:
    """Generation metadata stored alongside a dataset."""

    seed: int = 0
    sparsity: int = 8
    noise_std: float = 0.05
    oracle_iters: int = 5000
    oracle_tol: float = 1e-8


@dataclass
class Dataset:
    spec: ProblemSpec
    samples: list[LabeledSample]
    splits: dict[str, np.ndarray]
    gen: GenConfig = field(default_factory=GenConfig)

    def __post_init__(self):
        n = len(self.samples)
        seen = np.concatenate([np.asarray(self.splits[name]) for name in SPLIT_NAMES])
        if sorted(seen.tolist()) != list(range(n)):
            raise ValueError("splits must be disjoint and cover all samples")
        self.splits = {
            name: np.asarray(self.splits[name], dtype=np.int64) for name in SPLIT_NAMES
        }

    def split_arrays(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Column-stacked (x, y_star) arrays for one split."""
        idx = self.splits[name]
        if idx.size == 0:
            return np.zeros((self.spec.p, 0)), np.zeros((self.spec.d, 0))
        x = np.stack([self.samples[i].x for i in idx], axis=1)
        y = np.stack([self.samples[i].y_star for i in idx], axis=1)
        return x, y


def gen_dictionary(p: int, d: int, seed: int) -> tuple[np.ndarray, float]:
    """Overcomplete dictionary with iid standard normal entries.

    Returns the matrix and a spectral bound nu: the power-iteration estimate
    of the largest eigenvalue of D.T D, inflated by 1%.
    """
    if not d > p >= 1:
        raise ValueError(f"dictionary needs d > p >= 1, got p={p}, d={d}")
    mat = np.random.default_rng(seed).standard_normal((p, d))
    return mat, 1.01 * lambda_max_gram(mat)


def gen_signals(
    spec: ProblemSpec, n: int, sparsity: int, noise_std: float, seed: int
) -> list[np.ndarray]:
    """Draw ``x = D code + noise`` with an s-sparse standard normal code.

    The codes are discarded; labels always come from the oracle solvers so
    that they solve the stated problem rather than echo the generator.
    """
    if not 0 <= sparsity <= spec.d:
        raise ValueError(f"sparsity must lie in [0, {spec.d}], got {sparsity}")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    rng = np.random.default_rng(seed)
    signals = []
    for _ in range(n):
        code = np.zeros(spec.d)
        if sparsity:
            support = rng.choice(spec.d, size=sparsity, replace=False)
            code[support] = rng.standard_normal(sparsity)
        x = spec.mat @ code
        if noise_std:
            x = x + noise_std * rng.standard_normal(spec.p)
        signals.append(x)
    return signals


def solve_label(x: np.ndarray, spec: ProblemSpec, budget: int, tol: float) -> LabeledSample:
    """Label one signal with the oracle for the spec's problem family."""
    if spec.kind is ObjectiveKind.LASSO:
        result: IstaResult = ista_solve(x, spec, max_iters=budget, tol=tol)
        return LabeledSample(x, result.y, result.residual, result.iters)
    y = quad_solve(x, spec)
    residual = float(np.linalg.norm(spec.mat.T @ (spec.mat @ y - x)))
    return LabeledSample(x, y, residual, 1)


def build_dataset(
    spec: ProblemSpec,
    signals: list[np.ndarray],
    oracle_budget: int = 5000,
    tol: float = 1e-8,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    gen: GenConfig | None = None,
    threads: int = 1,
) -> Dataset:
    """Label signals with the oracle and assign seeded splits.

    Samples that miss `tol` within the budget are kept with their residual
    recorded. Split sizes are floor(frac * n) for train/val with the test
    split absorbing the remainder. Label solving may run on `threads`
    workers; results are collected in sample order so the outcome is
    identical to a serial run.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n = len(signals)

    def label(x):
        return solve_label(x, spec, oracle_budget, tol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(label, signals))
    else:
        samples = [label(x) for x in signals]

    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(fractions[0] * n)
    n_val = int(fractions[1] * n)
    splits = {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val :]),
    }
    if gen is None:
        gen = GenConfig(seed=seed, oracle_iters=oracle_budget, oracle_tol=tol)
    return Dataset(spec, samples, splits, gen)


def save_dataset(dataset: Dataset, path):
    """Write a dataset in the binary format; round-trips bit-exactly."""
    spec = dataset.spec
    n = len(dataset.samples)
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        binio.write_u32(f, DATASET_VERSION)
        binio.write_u8(f, _KIND_TAGS[spec.kind])
        binio.write_u32(f, spec.p)
        binio.write_u32(f, spec.d)
        binio.write_u32(f, n)
        binio.write_f64(f, spec.alpha)
        binio.write_f64(f, spec.nu)
        binio.write_array(f, spec.mat)
        for s in dataset.samples:
            binio.write_array(f, s.x)
            binio.write_array(f, s.y_star)
            binio.write_f64(f, s.oracle_residual)
            binio.write_u32(f, s.oracle_iters)
        for name in SPLIT_NAMES:
            idx = dataset.splits[name]
            binio.write_u32(f, idx.size)
            binio.write_u32_array(f, idx)
        binio.write_u64(f, dataset.gen.seed)
        binio.write_u32(f, dataset.gen.sparsity)
        binio.write_f64(f, dataset.gen.noise_std)
        binio.write_u32(f, dataset.gen.oracle_iters)
        binio.write_f64(f, dataset.gen.oracle_tol)


def load_dataset(path) -> Dataset:
    """Read a dataset written by `save_dataset`, validating the format."""
    with open(path, "rb") as f:
        binio.expect_magic(f, DATASET_MAGIC, "dataset")
        binio.expect_version(f, DATASET_VERSION, "dataset")
        tag = binio.read_u8(f)
        if tag not in _TAG_KINDS:
            raise FileFormatError(f"unknown problem-kind tag {tag}")
        kind = _TAG_KINDS[tag]
        p = binio.read_u32(f)
        d = binio.read_u32(f)
        n = binio.read_u32(f)
        alpha = binio.read_f64(f)
        nu = binio.read_f64(f)
        mat = binio.read_array(f, (p, d))
        spec = ProblemSpec(kind, mat, alpha, nu)
        samples = []
        for _ in range(n):
            x = binio.read_array(f, (p,))
            y = binio.read_array(f, (d,))
            residual = binio.read_f64(f)
            iters = binio.read_u32(f)
            samples.append(LabeledSample(x, y, residual, iters))
        splits = {}
        for name in SPLIT_NAMES:
            count = binio.read_u32(f)
            splits[name] = binio.read_u32_array(f, count)
        gen = GenConfig(
            seed=binio.read_u64(f),
            sparsity=binio.read_u32(f),
            noise_std=binio.read_f64(f),
            oracle_iters=binio.read_u32(f),
            oracle_tol=binio.read_f64(f),
        )
        binio.expect_eof(f, "dataset")
    return Dataset(spec, samples, splits, gen)
