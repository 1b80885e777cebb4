"""Optimizee problems: least squares and LASSO.

Defines the two problem families solved by the unrolled optimizers, their
objectives and (sub)gradients, the soft-thresholding operator, and the
reference solvers (proximal iteration, pseudo-inverse, support enumeration)
used to produce labels and ground truth for tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np


class ObjectiveKind(str, Enum):
    QUADRATIC = "quadratic"
    LASSO = "lasso"


def lambda_max_gram(mat: np.ndarray, iters: int = 200, rtol: float = 1e-10) -> float:
    """Largest eigenvalue of ``mat.T @ mat`` by power iteration.

    Runs at most `iters` iterations, stopping early once the eigenvalue
    estimate changes by a relative factor below `rtol`. The start vector is
    drawn from a fixed-seed generator so the estimate is deterministic.
    """
    mat = np.asarray(mat, dtype=np.float64)
    gram = mat.T @ mat
    n = gram.shape[0]
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    for _ in range(iters):
        w = gram @ v
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
        if abs(lam - lam_prev) <= rtol * lam:
            break
        lam_prev = lam
    # Rayleigh quotient squares the eigenvector error.
    return float(v @ (gram @ v))


@dataclass(frozen=True)
class ProblemSpec:
    """One optimizee instance.

    `mat` is A for quadratic problems (min ||x - Ay||) and the dictionary D
    for LASSO. `alpha` weighs the l1 term and is forced to 0 for quadratic
    problems. `nu` must upper-bound the largest eigenvalue of mat.T @ mat;
    this is validated by power iteration at construction (1% tolerance).
    """

    kind: ObjectiveKind
    mat: np.ndarray
    alpha: float = 0.0
    nu: float = field(default=0.0)

    def __post_init__(self):
        mat = np.asarray(self.mat, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
            raise ValueError(f"mat must be a 2-D matrix, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("mat has non-finite entries")
        object.__setattr__(self, "mat", mat)
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        alpha = float(self.alpha)
        if alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {alpha}")
        if self.kind is ObjectiveKind.QUADRATIC:
            alpha = 0.0
        object.__setattr__(self, "alpha", alpha)
        nu = float(self.nu)
        if nu <= 0:
            raise ValueError(f"nu must be positive, got {nu}")
        lam = lambda_max_gram(mat)
        if nu < 0.99 * lam:
            raise ValueError(
                f"nu={nu:g} is below the largest eigenvalue of mat.T@mat "
                f"(power-iteration estimate {lam:g})"
            )
        object.__setattr__(self, "nu", nu)

    @property
    def p(self) -> int:
        return self.mat.shape[0]

    @property
    def d(self) -> int:
        return self.mat.shape[1]


def _check_dims(y: np.ndarray, x: np.ndarray, spec: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != (spec.d,):
        raise ValueError(f"y has shape {y.shape}, expected ({spec.d},)")
    if x.shape != (spec.p,):
        raise ValueError(f"x has shape {x.shape}, expected ({spec.p},)")
    return y, x


def quad_objective(y: np.ndarray, x: np.ndarray, spec: ProblemSpec) -> float:
    """Least-squares objective ``0.5 * ||x - A y||^2``."""
    if spec.kind is not ObjectiveKind.QUADRATIC:
        raise ValueError("quad_objective requires a quadratic spec")
    y, x = _check_dims(y, x, spec)
    r = x - spec.mat @ y
    return float(0.5 * (r @ r))


def quad_gradient(y: np.ndarray, x: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Gradient ``A.T (A y - x)`` of the least-squares objective."""
    if spec.kind is not ObjectiveKind.QUADRATIC:
        raise ValueError("quad_gradient requires a quadratic spec")
    y, x = _check_dims(y, x, spec)
    return spec.mat.T @ (spec.mat @ y - x)


def lasso_objective(y: np.ndarray, x: np.ndarray, spec: ProblemSpec) -> float:
    """LASSO objective ``0.5 * ||x - D y||^2 + alpha * ||y||_1``."""
    if spec.kind is not ObjectiveKind.LASSO:
        raise ValueError("lasso_objective requires a lasso spec")
    y, x = _check_dims(y, x, spec)
    r = x - spec.mat @ y
    return float(0.5 * (r @ r) + spec.alpha * np.sum(np.abs(y)))


def lasso_subgradient(y: np.ndarray, x: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Minimum-norm subgradient of the LASSO objective.

    Away from zeros this is ``D.T (D y - x) + alpha * sign(y)``. At a zero
    coordinate the l1 subdifferential is the interval ``g_i + alpha*[-1, 1]``
    and the element of smallest magnitude, ``soft_threshold(g_i, alpha)``, is
    selected so that the subgradient norm vanishes exactly at an optimum.
    """
    if spec.kind is not ObjectiveKind.LASSO:
        raise ValueError("lasso_subgradient requires a lasso spec")
    y, x = _check_dims(y, x, spec)
    g = spec.mat.T @ (spec.mat @ y - x)
    out = g + spec.alpha * np.sign(y)
    zero = y == 0.0
    if np.any(zero):
        gz = g[zero]
        out[zero] = np.sign(gz) * np.maximum(np.abs(gz) - spec.alpha, 0.0)
    return out


def soft_threshold(v: np.ndarray, theta) -> np.ndarray:
    """Elementwise shrinkage ``sign(v) * max(|v| - theta, 0)``.

    `theta` may be a scalar or a per-coordinate vector; it must be
    nonnegative. Output magnitudes never exceed the input's and signs are
    never flipped.
    """
    v = np.asarray(v, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < 0):
        raise ValueError("soft_threshold requires theta >= 0")
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def ista_step(y: np.ndarray, x: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """One proximal gradient step ``S_{alpha/nu}(y - (1/nu) D.T (D y - x))``."""
    d_mat = spec.mat
    return soft_threshold(y - (1.0 / spec.nu) * (d_mat.T @ (d_mat @ y - x)), spec.alpha / spec.nu)


class IstaResult(NamedTuple):
    y: np.ndarray
    iters: int
    residual: float


def ista_solve(x: np.ndarray, spec: ProblemSpec, max_iters: int = 5000, tol: float = 1e-8) -> IstaResult:
    """Solve the LASSO problem by proximal gradient iteration from y = 0.

    Stops once the fixed-point residual ``||y_k - step(y_k)||`` drops to
    `tol`, or after `max_iters` iterations; non-convergence is reported
    through the returned residual, never as an error.
    """
    if spec.kind is not ObjectiveKind.LASSO:
        raise ValueError("ista_solve requires a lasso spec")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.p,):
        raise ValueError(f"x has shape {x.shape}, expected ({spec.p},)")
    y = np.zeros(spec.d)
    y_next = ista_step(y, x, spec)
    residual = float(np.linalg.norm(y - y_next))
    iters = 0
    for k in range(1, max_iters + 1):
        y = y_next
        y_next = ista_step(y, x, spec)  # probe doubles as the next iterate
        residual = float(np.linalg.norm(y - y_next))
        iters = k
        if residual <= tol:
            break
    return IstaResult(y, iters, residual)


def quad_solve(x: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Minimum-norm least-squares solution of ``min_y ||x - A y||``.

    Uses the pseudo-inverse with singular values below 1e-12 of the largest
    treated as zero, which guards degenerate A.
    """
    if spec.kind is not ObjectiveKind.QUADRATIC:
        raise ValueError("quad_solve requires a quadratic spec")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.p,):
        raise ValueError(f"x has shape {x.shape}, expected ({spec.p},)")
    return np.linalg.pinv(spec.mat, rcond=1e-12) @ x


_ORACLE_MAX_DIM = 12


def lasso_oracle_small(x: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Brute-force global LASSO minimizer for small code dimension.

    Enumerates every support with every sign assignment on it, solves the
    stationarity system ``D_S.T (D_S y_S - x) + alpha s_S = 0`` on each,
    keeps sign-consistent candidates and returns the one with the lowest
    objective. Refuses d > 12 to bound the combinatorial blowup.
    """
    if spec.kind is not ObjectiveKind.LASSO:
        raise ValueError("lasso_oracle_small requires a lasso spec")
    if spec.d > _ORACLE_MAX_DIM:
        raise ValueError(f"lasso_oracle_small supports d <= {_ORACLE_MAX_DIM}, got d={spec.d}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.p,):
        raise ValueError(f"x has shape {x.shape}, expected ({spec.p},)")

    d = spec.d
    best = np.zeros(d)
    best_obj = lasso_objective(best, x, spec)
    for support in range(1, 2**d):
        idx = [i for i in range(d) if support >> i & 1]
        d_s = spec.mat[:, idx]
        gram = d_s.T @ d_s
        rhs0 = d_s.T @ x
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=len(idx)))).T
        rhs = rhs0[:, None] - spec.alpha * signs
        try:
            sols = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            sols = np.linalg.lstsq(gram, rhs, rcond=None)[0]
        consistent = np.all(sols * signs > 0, axis=0)
        for j in np.flatnonzero(consistent):
            cand = np.zeros(d)
            cand[idx] = sols[:, j]
            obj = lasso_objective(cand, x, spec)
            if obj < best_obj:
                best_obj = obj
                best = cand
    return best
