"""Empirical checks: moment curves, Lyapunov estimates, stationary laws,
ergodic time averages and regime occupation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import ctmc
from .model import ModelSpec
from .sde_engine import Trajectory, TrajectoryBatch

MIN_LAW_SAMPLES = 1000
MIN_BINS = 30
KS_THIN = 100


class InsufficientDataError(ValueError):
    pass


def default_burn_in(spec: ModelSpec) -> float:
    """Ten mean-reversion times of the slowest regime."""
    return 10.0 / float(spec.b.min())


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentCurve:
    times: NDArray[np.float64]
    p: float
    estimates: NDArray[np.float64]
    std_errors: NDArray[np.float64]
    n_paths: int

    def to_csv(self, path: str | Path, envelope: NDArray[np.float64] | None = None) -> None:
        env = np.full_like(self.times, np.nan) if envelope is None else envelope
        with open(path, "w") as fh:
            fh.write("t,estimate,std_error,envelope\n")
            for row in zip(self.times, self.estimates, self.std_errors, env):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _values_at(traj: Trajectory, grid: NDArray[np.float64]) -> NDArray[np.float64]:
    idx = np.searchsorted(traj.times, grid)
    idx = np.clip(idx, 0, traj.times.shape[0] - 1)
    hit = np.abs(traj.times[idx] - grid) <= 1e-9 * np.maximum(1.0, grid)
    if hit.all():
        return traj.x[idx]
    return np.interp(grid, traj.times, traj.x)


def moment_curve(batch: TrajectoryBatch, p: float, grid: ArrayLike) -> MomentCurve:
    """Sample mean of ``X_t^p`` over the batch with its standard error.

    Grid times that are stored points are read directly; others are linearly
    interpolated per path.  Paths are reduced in seed order, so shuffling
    the batch leaves the result bit-identical.
    """
    if len(batch) == 0:
        raise InsufficientDataError("empty batch")
    grid = np.asarray(grid, dtype=np.float64)
    t_end = batch.config.t_end
    if np.any(grid < 0) or np.any(grid > t_end * (1 + 1e-12)):
        raise ValueError("grid must lie in [0, t_end]")
    trajs = sorted(batch.trajectories, key=lambda tr: tr.seed)
    vals = np.stack([_values_at(tr, grid) for tr in trajs]) ** p
    n = vals.shape[0]
    est = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(est)
    start = grid == 0
    est[start] = batch.model.x0**p
    se[start] = 0.0
    return MomentCurve(grid, float(p), est, se, n)


def lyapunov_estimate(curve: MomentCurve) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """``(t, (1/t) log estimate)`` for ``t > 0``; a zero estimate maps to ``-inf``."""
    mask = curve.times > 0
    t = curve.times[mask]
    est = curve.estimates[mask]
    with np.errstate(divide="ignore"):
        vals = np.where(est > 0, np.log(np.where(est > 0, est, 1.0)) / t, -np.inf)
    return t, vals


# ---------------------------------------------------------------------------
# Stationary law
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalLaw:
    bin_edges: NDArray[np.float64]
    density: NDArray[np.float64]
    cdf_grid: NDArray[np.float64]
    cdf: NDArray[np.float64]
    sample_count: int
    burn_in: float
    mean: float
    variance: float
    samples: NDArray[np.float64]
    weights: NDArray[np.float64]

    def to_csv(self, density_path: str | Path, cdf_path: str | Path) -> None:
        with open(density_path, "w") as fh:
            fh.write("bin_left,bin_right,density\n")
            for lo, hi, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.density):
                fh.write(f"{float(lo)!r},{float(hi)!r},{float(d)!r}\n")
        with open(cdf_path, "w") as fh:
            fh.write("x,cdf\n")
            for x, c in zip(self.cdf_grid, self.cdf):
                fh.write(f"{float(x)!r},{float(c)!r}\n")


def _post_burn_in(traj: Trajectory, burn_in: float) -> tuple[NDArray, NDArray]:
    # left-point weights: each node carries the step that follows it
    w = np.diff(traj.times)
    x = traj.x[:-1]
    keep = traj.times[:-1] >= burn_in
    return x[keep], w[keep]


def _pooled(source: Trajectory | TrajectoryBatch | Iterable[Trajectory], burn_in: float):
    trajs = [source] if isinstance(source, Trajectory) else list(source)
    xs, ws = zip(*(_post_burn_in(tr, burn_in) for tr in trajs))
    return np.concatenate(xs), np.concatenate(ws)


def empirical_law(
    source: Trajectory | TrajectoryBatch | Iterable[Trajectory],
    burn_in: float,
    bins: int | None = None,
) -> EmpiricalLaw:
    """Time-weighted histogram density and CDF of post-burn-in states.

    Bin width follows Freedman-Diaconis with at least 30 bins.
    """
    x, w = _pooled(source, burn_in)
    if x.shape[0] < MIN_LAW_SAMPLES:
        raise InsufficientDataError(
            f"only {x.shape[0]} samples after burn-in {burn_in:g}; need {MIN_LAW_SAMPLES}"
        )
    if bins is None:
        edges = np.histogram_bin_edges(x, bins="fd")
        if edges.shape[0] - 1 < MIN_BINS:
            edges = np.linspace(x.min(), x.max(), MIN_BINS + 1)
    else:
        edges = np.linspace(x.min(), x.max(), bins + 1)
    if edges[-1] == edges[0]:
        edges = np.array([edges[0] - 0.5, edges[0] + 0.5])
    counts, edges = np.histogram(x, bins=edges, weights=w)
    widths = np.diff(edges)
    total = counts.sum()
    density = counts / (total * widths)
    cdf = np.cumsum(counts) / total
    cdf[-1] = 1.0
    mean = float(np.sum(w * x) / w.sum())
    var = float(np.sum(w * (x - mean) ** 2) / w.sum())
    return EmpiricalLaw(
        bin_edges=edges,
        density=density,
        cdf_grid=edges[1:],
        cdf=np.minimum(cdf, 1.0),
        sample_count=int(x.shape[0]),
        burn_in=float(burn_in),
        mean=mean,
        variance=var,
        samples=x,
        weights=w,
    )


def ks_distance(
    x1: ArrayLike,
    x2: ArrayLike,
    w1: ArrayLike | None = None,
    w2: ArrayLike | None = None,
) -> float:
    """Sup distance between two (optionally weighted) empirical CDFs."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    w1 = np.ones_like(x1) if w1 is None else np.asarray(w1, dtype=np.float64)
    w2 = np.ones_like(x2) if w2 is None else np.asarray(w2, dtype=np.float64)
    o1, o2 = np.argsort(x1, kind="stable"), np.argsort(x2, kind="stable")
    x1, w1, x2, w2 = x1[o1], w1[o1], x2[o2], w2[o2]
    c1 = np.concatenate([[0.0], np.cumsum(w1) / w1.sum()])
    c2 = np.concatenate([[0.0], np.cumsum(w2) / w2.sum()])
    pts = np.concatenate([x1, x2])
    f1 = c1[np.searchsorted(x1, pts, side="right")]
    f2 = c2[np.searchsorted(x2, pts, side="right")]
    return float(np.abs(f1 - f2).max())


def law_ks_distance(law1: EmpiricalLaw, law2: EmpiricalLaw, thin: int = KS_THIN) -> float:
    """KS distance on every ``thin``-th post-burn-in sample of two laws."""
    return ks_distance(
        law1.samples[::thin], law2.samples[::thin], law1.weights[::thin], law2.weights[::thin]
    )


# ---------------------------------------------------------------------------
# Ergodic averages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErgodicAverage:
    f_name: str
    time_average: float
    t_end: float
    burn_in: float


def _truncated_identity(x, K=100.0):
    return np.where(x <= K, x, 0.0)


def _indicator_le(x, c=1.0):
    return (x <= c).astype(np.float64)


def _square(x):
    return x * x


def _min_k(x, K=100.0):
    return np.minimum(x, K)


TEST_FUNCTIONS: dict[str, Callable[..., NDArray[np.float64]]] = {
    "truncated_identity": _truncated_identity,
    "indicator_le": _indicator_le,
    "square": _square,
    "min_k": _min_k,
}


def ergodic_average(traj: Trajectory, f: str, burn_in: float, **params) -> ErgodicAverage:
    """Trapezoidal time average of a registered test function over ``[burn_in, t_end]``.

    Registered names: ``truncated_identity`` (``x 1{x<=K}``),
    ``indicator_le`` (``1{x<=c}``), ``square`` and ``min_k`` (``min(x, K)``).
    """
    if f not in TEST_FUNCTIONS:
        raise KeyError(f"unregistered test function {f!r}; choose from {sorted(TEST_FUNCTIONS)}")
    t_end = float(traj.times[-1])
    if not t_end > burn_in:
        raise ValueError("t_end must exceed burn_in")
    keep = traj.times >= burn_in
    t = traj.times[keep]
    y = TEST_FUNCTIONS[f](traj.x[keep], **params)
    avg = float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)) / (t[-1] - t[0]))
    return ErgodicAverage(f, avg, t_end, float(burn_in))


def regime_occupation(path: ctmc.RegimePath | Trajectory, m: int) -> NDArray[np.float64]:
    """Fraction of time spent in each regime."""
    if isinstance(path, Trajectory):
        w = np.diff(path.times)
        occ = np.bincount(path.regimes[:-1], weights=w, minlength=m)
        return occ / occ.sum()
    return ctmc.occupation_fractions(path, m)
