"""Euler-Maruyama and Milstein path simulation along a sampled regime path.

A single compiled kernel advances one path over an arbitrary step sequence;
batch generation is just that kernel applied per path index, so a path is
bit-identical whether it is produced alone, in a serial batch or by a
thread pool.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from numpy.typing import NDArray

from . import ctmc, rng
from .model import ModelSpec

MAX_REDRAWS = 100


class Scheme(str, enum.Enum):
    EULER = "euler"
    MILSTEIN = "milstein"


class ChainMode(str, enum.Enum):
    EXACT = "exact"
    DISCRETIZED = "discretized"


class Positivity(str, enum.Enum):
    REFLECT = "reflect"
    REJECT = "reject"


class SimulationError(RuntimeError):
    def __init__(self, path_index: int, message: str):
        self.path_index = path_index
        super().__init__(f"path {path_index}: {message}")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    In discretized chain mode the regime is redrawn from ``P(delta)`` every
    ``delta``; ``delta`` defaults to ``dt`` and otherwise must divide ``dt``
    an integer number of times (the SDE step uses the regime in force at
    its left endpoint).  ``thin`` keeps every n-th grid point of the stored
    trajectory.
    """

    dt: float
    t_end: float
    scheme: Scheme = Scheme.MILSTEIN
    chain_mode: ChainMode = ChainMode.DISCRETIZED
    delta: float | None = None
    positivity: Positivity = Positivity.REFLECT
    n_paths: int = 1
    base_seed: int = 42
    thin: int = 1

    def __post_init__(self):
        for name, enum_cls in (
            ("scheme", Scheme),
            ("chain_mode", ChainMode),
            ("positivity", Positivity),
        ):
            object.__setattr__(self, name, enum_cls(getattr(self, name)))
        if not (self.dt > 0 and self.t_end > 0):
            raise ValueError("dt and t_end must be positive")
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.delta is not None:
            if self.delta <= 0 or self.delta > self.dt * (1 + 1e-12):
                raise ValueError("delta must be in (0, dt]")
            ratio = self.dt / self.delta
            if abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ValueError("dt must be an integer multiple of delta")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def substeps(self) -> int:
        return 1 if self.delta is None else int(round(self.dt / self.delta))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("scheme", "chain_mode", "positivity"):
            d[k] = d[k].value
        return d


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored path: ``regimes[k]`` is the regime on ``[times[k], times[k+1])``."""

    times: NDArray[np.float64]
    x: NDArray[np.float64]
    regimes: NDArray[np.int64]
    reflections: int
    n_steps: int
    seed: tuple[int, int]

    def digest(self) -> str:
        h = hashlib.sha256()
        _update_digest(h, self)
        return h.hexdigest()

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("t,x,regime\n")
            for t, x, r in zip(self.times, self.x, self.regimes):
                fh.write(f"{float(t)!r},{float(x)!r},{int(r) + 1}\n")


def _update_digest(h, traj: Trajectory) -> None:
    h.update(np.ascontiguousarray(traj.times).tobytes())
    h.update(np.ascontiguousarray(traj.x).tobytes())
    h.update(np.ascontiguousarray(traj.regimes, dtype=np.int64).tobytes())
    h.update(int(traj.reflections).to_bytes(8, "little"))


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    trajectories: list[Trajectory]
    config: SimConfig
    model: ModelSpec
    digests: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, k: int) -> Trajectory:
        return self.trajectories[k]

    @property
    def reflected_fraction(self) -> float:
        steps = sum(t.n_steps for t in self.trajectories)
        return sum(t.reflections for t in self.trajectories) / steps if steps else 0.0

    def digest(self) -> str:
        h = hashlib.sha256()
        for d in self.digests:
            h.update(d.encode())
        return h.hexdigest()

    def manifest(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "config": self.config.to_dict(),
            "digests": self.digests,
            "batch_digest": self.digest(),
            "reflected_fraction": self.reflected_fraction,
        }

    def write_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# One-step maps
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _euler(x, a, b, s, th, dt, dB):
    return x + (a - b * x) * dt + s * x**th * dB


@numba.njit(cache=True, nogil=True)
def _milstein(x, a, b, s, th, dt, dB):
    return (
        x
        + (a - b * x) * dt
        + s * x**th * dB
        + 0.5 * s * s * th * x ** (2.0 * th - 1.0) * (dB * dB - dt)
    )


def euler_step(x: float, regime: int, dt: float, dB: float, spec: ModelSpec) -> float:
    """Raw Euler-Maruyama update (no positivity handling); ``regime`` is 0-based."""
    i = regime
    return float(_euler(x, spec.a[i], spec.b[i], spec.sigma[i], spec.theta[i], dt, dB))


def milstein_step(x: float, regime: int, dt: float, dB: float, spec: ModelSpec) -> float:
    """Raw Milstein update; adds ``sigma^2 theta x^(2 theta - 1) (dB^2 - dt) / 2``."""
    i = regime
    return float(_milstein(x, spec.a[i], spec.b[i], spec.sigma[i], spec.theta[i], dt, dB))


@numba.njit(cache=True, nogil=True)
def _integrate(x0, h, regimes, z, spare, a, b, s, th, milstein, reflect, keep, out):
    """Advance one path; returns (interventions, failed_step or -1)."""
    x = x0
    j = 0
    if keep[0] == 0:
        out[0] = x
        j = 1
    n_spare = spare.shape[0]
    used = 0
    interventions = 0
    for k in range(h.shape[0]):
        i = regimes[k]
        hk = h[k]
        sq = math.sqrt(hk)
        dB = sq * z[k]
        if milstein:
            xn = _milstein(x, a[i], b[i], s[i], th[i], hk, dB)
        else:
            xn = _euler(x, a[i], b[i], s[i], th[i], hk, dB)
        if reflect:
            if xn < 0.0:
                xn = -xn
                interventions += 1
            if xn == 0.0:
                xn = hk * a[i]
                interventions += 1
        else:
            tries = 0
            while not xn > 0.0:
                if tries >= 100 or used >= n_spare:
                    return interventions, k
                dB = sq * spare[used]
                used += 1
                tries += 1
                if milstein:
                    xn = _milstein(x, a[i], b[i], s[i], th[i], hk, dB)
                else:
                    xn = _euler(x, a[i], b[i], s[i], th[i], hk, dB)
            if tries > 0:
                interventions += 1
        x = xn
        if j < keep.shape[0] and keep[j] == k + 1:
            out[j] = x
            j += 1
    return interventions, -1


def integrate_increments(
    spec: ModelSpec,
    dB: NDArray[np.float64],
    dt: float,
    regimes: NDArray[np.int64] | None = None,
    scheme: Scheme | str = Scheme.MILSTEIN,
    positivity: Positivity | str = Positivity.REFLECT,
) -> tuple[NDArray[np.float64], int]:
    """Run the scheme over caller-supplied Brownian increments.

    Returns the full state path (length ``len(dB) + 1``) and the number of
    positivity interventions.  Used for strong-error studies where several
    step sizes must share one Brownian path.  Reject mode has no spare draws
    here, so a non-positive step raises.
    """
    dB = np.asarray(dB, dtype=np.float64)
    n = dB.shape[0]
    h = np.full(n, float(dt))
    if regimes is None:
        regimes = np.full(n, spec.i0 - 1, dtype=np.int64)
    out = np.empty(n + 1)
    interventions, failed = _integrate(
        spec.x0, h, np.asarray(regimes, dtype=np.int64), dB / math.sqrt(dt), np.empty(0),
        spec.a, spec.b, spec.sigma, spec.theta,
        Scheme(scheme) is Scheme.MILSTEIN, Positivity(positivity) is Positivity.REFLECT,
        np.arange(n + 1, dtype=np.int64), out,
    )
    if failed >= 0:
        raise SimulationError(0, f"non-positive step {failed}")
    return out, int(interventions)


def _keep_indices(n_points: int, thin: int) -> NDArray[np.int64]:
    keep = np.arange(0, n_points, thin, dtype=np.int64)
    if keep[-1] != n_points - 1:
        keep = np.append(keep, n_points - 1)
    return keep


def _grid_and_regimes(spec: ModelSpec, cfg: SimConfig, path_index: int):
    """Step lengths, per-step regimes and node times for one path."""
    n = cfg.n_steps
    i0 = spec.i0 - 1
    if cfg.chain_mode is ChainMode.EXACT:
        path = ctmc.sample_path_exact(spec.q, i0, cfg.t_end, cfg.base_seed, path_index)
        uniform = np.arange(n + 1) * cfg.dt
        uniform[-1] = cfg.t_end
        jt = path.jump_times
        # drop jump times that coincide with grid nodes to avoid zero steps
        near = np.abs(jt - uniform[np.clip(np.rint(jt / cfg.dt).astype(np.int64), 0, n)])
        jt = jt[near > 1e-12]
        times = np.union1d(uniform, jt)
        h = np.diff(times)
        regimes = path.state_at(times[:-1])
        uniform_mask = np.isin(times, uniform, assume_unique=True)
        return times, h, regimes, uniform_mask
    k = cfg.substeps
    delta = cfg.dt / k
    gen = rng.stream(cfg.base_seed, path_index, rng.CHAIN)
    fine = ctmc.discrete_chain_states(spec.q, i0, n * k, delta, gen)
    regimes = fine[: n * k : k]
    times = np.arange(n + 1) * cfg.dt
    h = np.full(n, cfg.dt)
    return times, h, regimes, None


def simulate_path(spec: ModelSpec, cfg: SimConfig, path_index: int = 0) -> Trajectory:
    """Simulate one trajectory; a pure function of ``(spec, cfg, path_index)``.

    Raises
    ------
    SimulationError
        Reject mode could not find a positive step within the redraw cap.
    """
    times, h, regimes, uniform_mask = _grid_and_regimes(spec, cfg, path_index)
    n_steps = h.shape[0]
    z = rng.stream(cfg.base_seed, path_index, rng.BROWNIAN).standard_normal(n_steps)
    if cfg.positivity is Positivity.REJECT:
        spare = rng.stream(cfg.base_seed, path_index, rng.SPARE).standard_normal(
            n_steps // 20 + 10 * MAX_REDRAWS
        )
    else:
        spare = np.empty(0)

    if uniform_mask is None or cfg.thin == 1:
        keep = _keep_indices(n_steps + 1, cfg.thin)
    else:
        keep = np.flatnonzero(uniform_mask)
        keep = keep[_keep_indices(keep.shape[0], cfg.thin)]
    out = np.empty(keep.shape[0])
    interventions, failed = _integrate(
        spec.x0,
        h,
        regimes.astype(np.int64),
        z,
        spare,
        spec.a,
        spec.b,
        spec.sigma,
        spec.theta,
        cfg.scheme is Scheme.MILSTEIN,
        cfg.positivity is Positivity.REFLECT,
        keep,
        out,
    )
    if failed >= 0:
        raise SimulationError(
            path_index, f"no positive step after {MAX_REDRAWS} redraws at step {failed}"
        )
    stored_regimes = np.append(regimes, regimes[-1])[keep]
    return Trajectory(
        times=times[keep],
        x=out,
        regimes=stored_regimes.astype(np.int64),
        reflections=int(interventions),
        n_steps=n_steps,
        seed=(cfg.base_seed, path_index),
    )


def simulate_batch(spec: ModelSpec, cfg: SimConfig, workers: int | None = None) -> TrajectoryBatch:
    """``cfg.n_paths`` trajectories; path k uses the key ``(base_seed, k)``.

    ``workers > 1`` runs paths on a thread pool (the kernel releases the
    GIL); the result is assembled in path order and identical to the serial
    run.
    """

    def one(k: int) -> Trajectory:
        try:
            return simulate_path(spec, cfg, k)
        except SimulationError:
            raise
        except Exception as exc:  # attach the path index to anything else
            raise SimulationError(k, str(exc)) from exc

    indices = range(cfg.n_paths)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(one, indices))
    else:
        trajs = [one(k) for k in indices]
    return TrajectoryBatch(trajs, cfg, spec, [t.digest() for t in trajs])
