"""Hypothesis-testing primitives shared by the discovery and diagnosis pipelines.

Implements:
- empirical CDFs and the exact two-sample Kolmogorov-Smirnov statistic
- the asymptotic Smirnov p-value plus a permutation oracle to validate it
- Benjamini-Hochberg step-up selection with adjusted q-values
- expected-false-positive arithmetic for naive thresholding across many tests
- a known-variance mean-difference test with a practical-significance gate
- a conservative calibration bound turning a p-value into an odds-scale bound
- a closed-form log-odds dependence test (uniform vs. Dirichlet-multinomial
  over binned delays) that needs no sampling-based inference

All functions are pure in (inputs, seed); there is no shared state, so many
tests can be evaluated in parallel with identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "EmpiricalCdf",
    "TestOutcome",
    "RejectionSet",
    "LogOddsModel",
    "empirical_cdf",
    "ks_statistic",
    "ks_p_value",
    "permutation_p_value",
    "bh_select",
    "expected_false_positives",
    "mean_difference_test",
    "calibrate_p_value",
    "log_odds_dependence",
]

_SERIES_TOL = 1e-12
_SERIES_MAX_TERMS = 100_000
# Below this value the Smirnov tail is 1 to well past double precision
# (survival mass < 1e-200), and the alternating series converges too slowly.
_LAMBDA_FLOOR = 0.05


@dataclass(frozen=True, eq=False)
class EmpiricalCdf:
    """Right-continuous step CDF fitted to a sample."""

    sorted_samples: np.ndarray
    n: int

    def __call__(self, x: float) -> float:
        """Fraction of samples <= x."""
        return float(np.searchsorted(self.sorted_samples, x, side="right")) / self.n


@dataclass(frozen=True)
class TestOutcome:
    """Result of a single two-sample test."""

    statistic: float
    p_value: float
    n_a: int
    n_b: int
    significant: bool
    practically_significant: bool | None = None


@dataclass(frozen=True, eq=False)
class RejectionSet:
    """Benjamini-Hochberg selection over a family of p-values.

    ``threshold`` is the selected p-value cutoff (0.0 when nothing is
    rejected); ``q_values`` are the step-up adjusted p-values in input order.
    """

    m: int
    alpha: float
    threshold: float
    rejected_indices: frozenset[int]
    q_values: np.ndarray


@dataclass(frozen=True)
class LogOddsModel:
    """Binned-delay dependence model: K equal bins over [0, horizon] with a
    symmetric Dirichlet prior of concentration ``dirichlet_alpha``."""

    horizon: float
    bins: int = 20
    dirichlet_alpha: float = 1.0

    def __post_init__(self) -> None:
        if not (self.horizon > 0):
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if not (self.dirichlet_alpha > 0):
            raise ValueError(f"dirichlet_alpha must be > 0, got {self.dirichlet_alpha}")


def empirical_cdf(samples: Sequence[float] | np.ndarray) -> EmpiricalCdf:
    """Fit a right-continuous empirical CDF to a non-empty sample."""
    a = np.asarray(samples, dtype=float)
    if a.ndim != 1:
        raise ValueError("samples must be 1-D")
    if a.size == 0:
        raise ValueError("no samples")
    if not np.all(np.isfinite(a)):
        raise ValueError("samples must be finite")
    out = np.sort(a)
    out.flags.writeable = False
    return EmpiricalCdf(sorted_samples=out, n=int(out.size))


def _ks_numerator(a: EmpiricalCdf, b: EmpiricalCdf) -> int:
    """max |b.n * count_a(x) - a.n * count_b(x)| over the union of sample
    points.  Integer-exact so that lattice ties compare reliably;
    D = numerator / (a.n * b.n)."""
    grid = np.union1d(a.sorted_samples, b.sorted_samples)
    ca = np.searchsorted(a.sorted_samples, grid, side="right")
    cb = np.searchsorted(b.sorted_samples, grid, side="right")
    return int(np.abs(b.n * ca - a.n * cb).max())


def ks_statistic(a: EmpiricalCdf, b: EmpiricalCdf) -> float:
    """Exact sup-distance between two empirical CDFs.

    Evaluated over the union of both sample points (right-continuous
    convention handles ties), so the supremum is attained exactly.
    """
    return _ks_numerator(a, b) / (a.n * b.n)


def ks_p_value(d: float, n: int, m: int) -> float:
    """Asymptotic two-sample Smirnov p-value for statistic ``d``.

    Q(lambda) = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lambda^2) with
    lambda = d * sqrt(n*m/(n+m)); the series is truncated once terms drop
    below 1e-12 and the result is clamped to [0, 1].
    """
    if not math.isfinite(d):
        raise ValueError(f"statistic must be finite, got {d}")
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"statistic must lie in [0, 1], got {d}")
    if n < 1 or m < 1:
        raise ValueError("sample counts must be >= 1")
    lam = d * math.sqrt(n * m / (n + m))
    if lam < _LAMBDA_FLOOR:
        return 1.0
    total = 0.0
    sign = 1.0
    for j in range(1, _SERIES_MAX_TERMS + 1):
        term = math.exp(-2.0 * j * j * lam * lam)
        if term < _SERIES_TOL:
            break
        total += sign * term
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def permutation_p_value(
    a: Sequence[float] | np.ndarray,
    b: Sequence[float] | np.ndarray,
    n_perm: int,
    rng_seed: int,
) -> float:
    """Permutation tail probability of the two-sample KS statistic.

    Pools both samples, re-splits ``n_perm`` times at the original sizes and
    recomputes the statistic; returns (1 + #{D_perm >= D_obs}) / (n_perm + 1).
    Deterministic for a fixed seed.  This is the finite-sample oracle used to
    validate :func:`ks_p_value`.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    xa = np.asarray(a, dtype=float)
    xb = np.asarray(b, dtype=float)
    if xa.size == 0 or xb.size == 0:
        raise ValueError("both samples must be non-empty")
    observed = _ks_numerator(empirical_cdf(xa), empirical_cdf(xb))

    n, m = int(xa.size), int(xb.size)
    total = n + m
    pooled = np.sort(np.concatenate([xa, xb]))
    # The pooled multiset is permutation-invariant, so a split is fully
    # described by which sorted positions belong to sample a.  D is then the
    # max prefix discrepancy, evaluated at the last index of each tie run.
    # Comparisons use the integer numerator m*count_a - n*count_b so that
    # statistic ties (D lives on a 1/(n*m) lattice) are never split by
    # floating-point rounding.
    last_of_run = np.ones(total, dtype=bool)
    last_of_run[:-1] = pooled[:-1] != pooled[1:]
    positions = np.arange(1, total + 1)

    rng = np.random.default_rng(rng_seed)
    exceed = 0
    chunk = max(1, min(n_perm, 4_000_000 // max(total, 1)))
    done = 0
    while done < n_perm:
        rows = min(chunk, n_perm - done)
        order = np.argsort(rng.random((rows, total)), axis=1)
        member_a = np.zeros((rows, total), dtype=np.int64)
        np.put_along_axis(member_a, order[:, :n], 1, axis=1)
        cum_a = np.cumsum(member_a, axis=1)
        disc = np.abs(m * cum_a - n * (positions - cum_a))
        d_perm = disc[:, last_of_run].max(axis=1)
        exceed += int(np.count_nonzero(d_perm >= observed))
        done += rows
    return (1 + exceed) / (n_perm + 1)


def bh_select(p_values: Sequence[float] | np.ndarray, alpha: float) -> RejectionSet:
    """Benjamini-Hochberg step-up selection at FDR level ``alpha``.

    Rejects every p-value <= p_(k*) where k* is the largest i with
    p_(i) <= i * alpha / m; q-values are the standard step-up adjustment
    min_{j: p_(j) >= p_i} (m * p_(j) / j), clamped to 1.
    """
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1:
        raise ValueError("p_values must be 1-D")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    bad = np.nonzero(~((p >= 0.0) & (p <= 1.0)))[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"p_values[{i}] = {p[i]} outside [0, 1]")

    m = int(p.size)
    if m == 0:
        return RejectionSet(0, alpha, 0.0, frozenset(), np.empty(0))

    order = np.argsort(p, kind="stable")
    p_sorted = p[order]
    ranks = np.arange(1, m + 1)

    passing = np.nonzero(p_sorted <= ranks * alpha / m)[0]
    threshold = float(p_sorted[passing[-1]]) if passing.size else 0.0
    rejected = frozenset(int(i) for i in np.nonzero(p <= threshold)[0]) if passing.size else frozenset()

    q_sorted = np.minimum.accumulate((m * p_sorted / ranks)[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    q.flags.writeable = False
    return RejectionSet(m=m, alpha=alpha, threshold=threshold, rejected_indices=rejected, q_values=q)


def expected_false_positives(m: int, p_threshold: float) -> float:
    """Expected count of falsely rejected nulls when all ``m`` tests are null
    and each is rejected at ``p_threshold``."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if not 0.0 <= p_threshold <= 1.0:
        raise ValueError(f"p_threshold must lie in [0, 1], got {p_threshold}")
    return float(m) * float(p_threshold)


def mean_difference_test(
    a: Sequence[float] | np.ndarray,
    b: Sequence[float] | np.ndarray,
    sigma: float,
    alpha: float,
    practical_delta: float,
) -> TestOutcome:
    """Two-sided z-test for a mean difference with known shared ``sigma``,
    gated on practical significance.

    With very large samples a tiny gap turns statistically significant while
    being operationally meaningless; ``practically_significant`` is therefore
    true only when the test rejects AND |mean_a - mean_b| >= practical_delta.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    xa = np.asarray(a, dtype=float)
    xb = np.asarray(b, dtype=float)
    if xa.size == 0 or xb.size == 0:
        raise ValueError("both samples must be non-empty")
    gap = float(xa.mean() - xb.mean())
    se = sigma * math.sqrt(1.0 / xa.size + 1.0 / xb.size)
    z = gap / se
    p = math.erfc(abs(z) / math.sqrt(2.0))
    significant = p <= alpha
    return TestOutcome(
        statistic=z,
        p_value=p,
        n_a=int(xa.size),
        n_b=int(xb.size),
        significant=significant,
        practically_significant=bool(significant and abs(gap) >= practical_delta),
    )


def calibrate_p_value(p: float) -> float:
    """Conservative odds-scale calibration of a p-value: min(1, -e*p*ln p)
    for p < 1/e, else 1.

    A lower bound on the evidence a p-value carries, useful when very large
    samples make raw p-values look far more convincing than they are.  It is
    a bound, not a posterior probability.
    """
    if not p > 0:
        raise ValueError(f"p must be > 0, got {p}")
    if p > 1:
        raise ValueError(f"p must be <= 1, got {p}")
    if p >= 1.0 / math.e:
        return 1.0
    return min(1.0, -math.e * p * math.log(p))


def log_odds_dependence(delays: Sequence[float] | np.ndarray, model: LogOddsModel) -> float:
    """Closed-form log Bayes factor for delay dependence.

    Bins delays into K equal-width bins over [0, horizon] and compares a
    uniform-delay null (independent channels) against a Dirichlet-multinomial
    alternative:

        log BF = lgamma(K*a) - lgamma(n + K*a)
                 + sum_k [lgamma(c_k + a) - lgamma(a)] + n * log K

    Positive values favor dependence.  Conjugacy keeps this exact and cheap,
    with no simulation-based inference in the loop.
    """
    k = model.bins
    if k < 2:
        raise ValueError(f"need at least 2 bins, got {k}")
    x = np.asarray(delays, dtype=float)
    if x.size == 0:
        return 0.0
    if np.any(x < 0) or np.any(x > model.horizon):
        bad = x[(x < 0) | (x > model.horizon)][0]
        raise ValueError(f"delay {bad} outside [0, {model.horizon}]")

    width = model.horizon / k
    idx = np.minimum((x / width).astype(int), k - 1)
    counts = np.bincount(idx, minlength=k)
    n = int(x.size)
    a = model.dirichlet_alpha
    log_bf = math.lgamma(k * a) - math.lgamma(n + k * a) - k * math.lgamma(a)
    log_bf += float(sum(math.lgamma(c + a) for c in counts))
    log_bf += n * math.log(k)
    return log_bf
