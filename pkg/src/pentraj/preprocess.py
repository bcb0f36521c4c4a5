"""Activation preprocessing ahead of latent-trajectory fitting.

Two defenses against a singular pooled observation covariance, which the
factor-analysis noise update cannot handle: a size-3 median filter that
suppresses synchronous spikes shared by many units, and removal of unit
columns that are (numerically) constant or exact duplicates of another
column.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

VAR_FLOOR = 1e-10
DUPLICATE_TOL = 1e-12
RANK_CUTOFF = 1e-10


@dataclass
class PreprocessReport:
    dropped_units: list
    covariance_rank: int
    q_effective: int

    def to_dict(self):
        return {
            "dropped_units": [int(i) for i in self.dropped_units],
            "covariance_rank": int(self.covariance_rank),
            "q_effective": int(self.q_effective),
        }


def median_filter3(series: np.ndarray) -> np.ndarray:
    """Size-3 median filter with replicate padding at both ends.

    output[t] = median(series[t-1], series[t], series[t+1]); length is
    preserved and every output value is one of the input values.
    """
    s = np.asarray(series, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise ValueError("series must be a nonempty 1-D array")
    padded = np.concatenate(([s[0]], s, [s[-1]]))
    window = np.stack([padded[:-2], padded[1:-1], padded[2:]])
    return np.median(window, axis=0)


def filter_trial(trial):
    """Median-filter each unit column of a trial; metadata is untouched."""
    filtered = np.column_stack(
        [median_filter3(trial.activations[:, j]) for j in range(trial.activations.shape[1])]
    )
    return replace(trial, activations=filtered)


def covariance_rank(pooled: np.ndarray) -> int:
    """Numerical rank of the sample covariance of pooled rows."""
    cov = np.cov(pooled, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    svals = np.linalg.svd(cov, compute_uv=False)
    if svals[0] == 0.0:
        return 0
    return int(np.sum(svals > RANK_CUTOFF * svals[0]))


def drop_degenerate_units(trials: list, var_floor: float = VAR_FLOOR):
    """Remove unit columns that make the pooled covariance rank deficient.

    Drops columns whose pooled variance falls below var_floor and exact
    duplicates (pooled correlation 1 within 1e-12; the lowest index of a
    duplicate group is kept).  Returns the reduced trials and a report
    with the dropped indices and the numerical rank of the remaining
    pooled covariance.
    """
    if not trials:
        raise ValueError("no trials given")
    q = trials[0].activations.shape[1]
    for trial in trials:
        if trial.activations.shape[1] != q:
            raise ValueError("all trials must share the unit count q")
    pooled = np.vstack([t.activations for t in trials])

    variances = np.var(pooled, axis=0, ddof=1)
    dropped = set(np.nonzero(variances < var_floor)[0].tolist())

    live = [j for j in range(q) if j not in dropped]
    if len(live) > 1:
        corr = np.corrcoef(pooled[:, live], rowvar=False)
        for a in range(len(live)):
            if live[a] in dropped:
                continue
            for b in range(a + 1, len(live)):
                if live[b] in dropped:
                    continue
                if abs(corr[a, b] - 1.0) <= DUPLICATE_TOL:
                    dropped.add(live[b])

    keep = [j for j in range(q) if j not in dropped]
    if not keep:
        raise ValueError("no usable units after dropping degenerate columns")

    reduced = [replace(t, activations=t.activations[:, keep]) for t in trials]
    rank = covariance_rank(pooled[:, keep])
    report = PreprocessReport(
        dropped_units=sorted(int(j) for j in dropped),
        covariance_rank=rank,
        q_effective=len(keep),
    )
    return reduced, report
