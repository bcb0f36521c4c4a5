"""Condition-level statistics on orthonormalized trajectories.

Each (style, text) condition is summarized by a Gaussian over the pooled
trajectory points of its trials; conditions are compared by closed-form
KL divergence, and within-style vs across-style divergences by a
Mann-Whitney rank test.  Character-level structure is read off by
segmenting trajectories at the attention argmax.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import rankdata

EXACT_MWU_LIMIT = 20
DEFAULT_RIDGE = 1e-6


@dataclass
class ConditionDistribution:
    """Gaussian fit to the pooled trajectory points of one condition."""

    mean: np.ndarray
    cov: np.ndarray
    n_points: int


@dataclass
class KlMatrix:
    labels: list
    values: np.ndarray

    def to_dict(self):
        return {
            "labels": [str(label) for label in self.labels],
            "values": [[float(v) for v in row] for row in self.values],
        }


@dataclass
class MwuResult:
    u_statistic: float
    n_a: int
    n_b: int
    p_value: float
    method: str

    def to_dict(self):
        return {
            "u_statistic": float(self.u_statistic),
            "n_a": int(self.n_a),
            "n_b": int(self.n_b),
            "p_value": float(self.p_value),
            "method": self.method,
        }


@dataclass
class StyleSeparation:
    """Mann-Whitney comparison of within-style vs across-style divergences."""

    test: MwuResult
    within_mean: float
    across_mean: float
    n_within: int
    n_across: int

    def to_dict(self):
        return {
            "test": self.test.to_dict(),
            "within_mean": float(self.within_mean),
            "across_mean": float(self.across_mean),
            "n_within": int(self.n_within),
            "n_across": int(self.n_across),
        }


@dataclass
class CharSegment:
    """A maximal run of timesteps whose attention argmax is one character."""

    trial_id: str
    character: str
    t_start: int
    t_end: int
    values: np.ndarray


def fit_condition_gaussian(trajs: list, ridge: float = DEFAULT_RIDGE) -> ConditionDistribution:
    """Pool all timesteps of all trajectories and fit mean and covariance.

    The sample covariance (denominator n-1) gets ridge*I added so the
    result is positive definite even for degenerate point clouds.
    """
    points = np.vstack([np.atleast_2d(t) for t in trajs])
    n, k = points.shape
    if n < k + 1:
        raise ValueError(f"too few points for a {k}-D Gaussian: {n} < {k + 1}")
    mean = points.mean(axis=0)
    cov = np.cov(points, rowvar=False, ddof=1).reshape(k, k) + ridge * np.eye(k)
    return ConditionDistribution(mean=mean, cov=cov, n_points=n)


def kl_gaussian(a: ConditionDistribution, b: ConditionDistribution) -> float:
    """Closed-form KL(a || b) between multivariate Gaussians."""
    k = a.mean.shape[0]
    if b.mean.shape[0] != k:
        raise ValueError(f"dimension mismatch: {k} vs {b.mean.shape[0]}")
    chol_b = linalg.cho_factor(b.cov, lower=True)
    chol_a = linalg.cholesky(a.cov, lower=True)
    trace_term = np.trace(linalg.cho_solve(chol_b, a.cov))
    delta = b.mean - a.mean
    quad = delta @ linalg.cho_solve(chol_b, delta)
    logdet_b = 2.0 * np.sum(np.log(np.diag(chol_b[0])))
    logdet_a = 2.0 * np.sum(np.log(np.diag(chol_a)))
    val = 0.5 * (trace_term + quad - k + logdet_b - logdet_a)
    return max(0.0, float(val))


def kl_matrix(conditions: list, symmetrize: bool = False) -> KlMatrix:
    """Pairwise KL divergences between (label, distribution) conditions.

    The matrix is directional by construction (entry [i][j] is
    KL(cond_i || cond_j)); with symmetrize=True the Jeffreys variant
    KL(i||j) + KL(j||i) is stored instead.
    """
    if len(conditions) < 2:
        raise ValueError("need at least two conditions")
    labels = [label for label, _ in conditions]
    dists = [dist for _, dist in conditions]
    m = len(dists)
    values = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i != j:
                values[i, j] = kl_gaussian(dists[i], dists[j])
    if symmetrize:
        values = values + values.T
    return KlMatrix(labels=labels, values=values)


def _tie_corrected_sd(ranks: np.ndarray, n_a: int, n_b: int) -> float:
    n = n_a + n_b
    _, counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(counts.astype(np.float64) ** 3 - counts))
    var = (n_a * n_b / 12.0) * ((n + 1) - tie_term / (n * (n - 1)))
    return math.sqrt(max(var, 0.0))


def mwu_test(sample_a, sample_b) -> MwuResult:
    """Two-sided Mann-Whitney U test from midranks.

    Small samples (n_a + n_b <= 20) without cross-group ties get an exact
    p-value by enumerating all group assignments of the observed ranks;
    otherwise a normal approximation with tie-corrected variance and 0.5
    continuity correction is used.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    n_a, n_b = a.size, b.size
    n = n_a + n_b
    ranks = rankdata(np.concatenate([a, b]), method="average")
    u_obs = float(np.sum(ranks[:n_a]) - n_a * (n_a + 1) / 2.0)
    mu = n_a * n_b / 2.0

    cross_ties = bool(set(a.tolist()) & set(b.tolist()))
    if n <= EXACT_MWU_LIMIT and not cross_ties:
        target = abs(u_obs - mu)
        hits = 0
        total = 0
        base = n_a * (n_a + 1) / 2.0
        for combo in itertools.combinations(range(n), n_a):
            u = float(ranks[list(combo)].sum()) - base
            if abs(u - mu) >= target - 1e-12:
                hits += 1
            total += 1
        return MwuResult(u_obs, n_a, n_b, hits / total, "exact")

    sd = _tie_corrected_sd(ranks, n_a, n_b)
    if sd == 0.0:
        p = 1.0
    else:
        z = max(0.0, abs(u_obs - mu) - 0.5) / sd
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return MwuResult(u_obs, n_a, n_b, p, "normal-approx-tie-corrected")


def style_separation_test(m: KlMatrix, labels: list) -> StyleSeparation:
    """Compare same-style vs different-style divergence values.

    labels are the ConditionLabels aligned with the matrix rows; the
    off-diagonal entries are split into ordered pairs with equal style_id
    (within) and different style_id (across).
    """
    size = len(labels)
    if m.values.shape != (size, size):
        raise ValueError("labels do not align with the matrix")
    within, across = [], []
    for i in range(size):
        for j in range(size):
            if i == j:
                continue
            value = float(m.values[i, j])
            if labels[i].style_id == labels[j].style_id:
                within.append(value)
            else:
                across.append(value)
    if not within or not across:
        raise ValueError(
            "a group empty: need at least 2 styles and 2 texts for the separation test"
        )
    result = mwu_test(within, across)
    return StyleSeparation(
        test=result,
        within_mean=float(np.mean(within)),
        across_mean=float(np.mean(across)),
        n_within=len(within),
        n_across=len(across),
    )


def segment_by_character(
    trajectory: np.ndarray,
    attention_trace: np.ndarray,
    text: str,
    target_char: str,
    trial_id: str = "",
) -> list:
    """Maximal runs of timesteps attending (argmax) to the target character.

    Each timestep is assigned the character position with the largest
    attention weight, ties resolved toward the lowest position.
    """
    trajectory = np.atleast_2d(trajectory)
    if attention_trace.shape[0] != trajectory.shape[0]:
        raise ValueError("attention trace rows must match trajectory rows")
    if attention_trace.shape[1] != len(text):
        raise ValueError(
            f"text/trace width mismatch: {len(text)} characters vs {attention_trace.shape[1]} columns"
        )
    assigned = np.argmax(attention_trace, axis=1)
    segments = []
    start = None
    for t, u in enumerate(assigned):
        hit = text[u] == target_char
        if hit and start is None:
            start = t
        elif not hit and start is not None:
            segments.append(CharSegment(trial_id, target_char, start, t, trajectory[start:t]))
            start = None
    if start is not None:
        t_end = len(assigned)
        segments.append(CharSegment(trial_id, target_char, start, t_end, trajectory[start:t_end]))
    return segments


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Canonical angles (radians, ascending) between the column spans of a and b.

    Uses the combined cosine/sine formulation so that near-zero angles are
    resolved to full precision (plain arccos of the QR cross-product
    singular values bottoms out around sqrt(eps)).
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    for name, mat in (("first", a), ("second", b)):
        if np.linalg.matrix_rank(mat) < mat.shape[1]:
            raise ValueError(f"rank-deficient input: columns of the {name} matrix are dependent")
    angles = linalg.subspace_angles(a, b)
    return np.clip(np.sort(angles), 0.0, np.pi / 2.0)
