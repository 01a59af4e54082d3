"""Finite-state continuous-time Markov chain machinery.

Regimes are 0-based indices inside this module; CSV exports write 1-based
labels to match the model file convention.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import rng
from .model import ROW_SUM_TOL, ModelSpec

_CHUNK = 1 << 20


class ReducibleChainError(ValueError):
    """Raised when an operation needs an irreducible generator."""

    def __init__(self, unreachable: list[int], source: int = 0):
        self.unreachable = unreachable
        labels = ", ".join(str(i + 1) for i in unreachable)
        super().__init__(f"generator is reducible: states {{{labels}}} not mutually reachable "
                         f"with state {source + 1}")


@dataclass(frozen=True, eq=False)
class Generator:
    """Validated rate matrix: nonnegative off-diagonals, zero row sums."""

    q: NDArray[np.float64]

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64, ndmin=2)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError(f"generator must be square, got shape {q.shape}")
        off = q[~np.eye(q.shape[0], dtype=bool)]
        if np.any(off < 0):
            raise ValueError("generator off-diagonal entries must be >= 0")
        if np.any(np.abs(q.sum(axis=1)) > ROW_SUM_TOL):
            raise ValueError("generator rows must sum to zero")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def m(self) -> int:
        return self.q.shape[0]

    @classmethod
    def from_model(cls, spec: ModelSpec) -> Generator:
        return cls(spec.q)


def _as_generator(g: Generator | ArrayLike) -> Generator:
    return g if isinstance(g, Generator) else Generator(g)


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------

def _reachable(q: NDArray[np.float64], start: int, transpose: bool = False) -> set[int]:
    adj = q.T if transpose else q
    seen = {start}
    todo = deque([start])
    while todo:
        i = todo.popleft()
        for j in np.flatnonzero(adj[i] > 0):
            j = int(j)
            if j != i and j not in seen:
                seen.add(j)
                todo.append(j)
    return seen


def _unreachable_states(g: Generator) -> list[int]:
    fwd = _reachable(g.q, 0)
    back = _reachable(g.q, 0, transpose=True)
    return sorted(set(range(g.m)) - (fwd & back))


def is_irreducible(g: Generator | ArrayLike) -> bool:
    """True iff every state reaches every other along edges with q_ij > 0."""
    g = _as_generator(g)
    return not _unreachable_states(g)


def _require_irreducible(g: Generator) -> None:
    bad = _unreachable_states(g)
    if bad:
        raise ReducibleChainError(bad)


# ---------------------------------------------------------------------------
# Invariant distribution, transition matrices, Poisson system
# ---------------------------------------------------------------------------

def invariant_distribution(g: Generator | ArrayLike) -> NDArray[np.float64]:
    """Unique probability row vector ``pi`` with ``pi Q = 0``.

    Solves the balance equations with the last one replaced by the
    normalisation ``sum(pi) = 1``.
    """
    g = _as_generator(g)
    _require_irreducible(g)
    m = g.m
    lhs = g.q.T.copy()
    lhs[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    pi = np.linalg.solve(lhs, rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def expm(mat: ArrayLike, tol: float = 1e-16) -> NDArray[np.float64]:
    """Matrix exponential by scaling and squaring of a truncated Taylor series."""
    a = np.asarray(mat, dtype=np.float64)
    norm = np.abs(a).sum(axis=1).max() if a.size else 0.0
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    a = a / (2.0**squarings)
    n = a.shape[0]
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 40):
        term = term @ a / k
        result = result + term
        if np.abs(term).max() <= tol * np.abs(result).max():
            break
    for _ in range(squarings):
        result = result @ result
    return result


def transition_matrix(g: Generator | ArrayLike, delta: float) -> NDArray[np.float64]:
    """``P(delta) = exp(delta Q)``, clipped to be a stochastic matrix.

    ``delta = 0`` returns the identity exactly.
    """
    g = _as_generator(g)
    if delta < 0 or not np.isfinite(delta):
        raise ValueError(f"delta must be a nonnegative finite time, got {delta}")
    if delta == 0:
        return np.eye(g.m)
    p = expm(delta * g.q)
    # Roundoff can leave tiny negatives where q_ij = 0 and the chain needs
    # several hops; rows are renormalised after clipping.
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PoissonSolution:
    xi: NDArray[np.float64]
    centered_rhs: NDArray[np.float64]
    pi: NDArray[np.float64]

    def residual(self, q: NDArray[np.float64]) -> float:
        return float(np.abs(q @ self.xi - self.centered_rhs).max())


def solve_poisson(g: Generator | ArrayLike, mu: ArrayLike) -> PoissonSolution:
    """Solve ``Q xi = -mu + (pi . mu) 1`` with the normalisation ``pi . xi = 0``.

    The singular system is augmented with the normalisation row and solved
    by least squares; the augmented matrix has full column rank when the
    chain is irreducible.
    """
    g = _as_generator(g)
    _require_irreducible(g)
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (g.m,):
        raise ValueError(f"mu must have {g.m} entries")
    pi = invariant_distribution(g)
    rhs = -(mu - pi @ mu)
    lhs = np.vstack([g.q, pi])
    xi, *_ = np.linalg.lstsq(lhs, np.append(rhs, 0.0), rcond=None)
    # one refinement step tightens the residual to roundoff level
    corr, *_ = np.linalg.lstsq(lhs, np.append(rhs - g.q @ xi, -pi @ xi), rcond=None)
    xi = xi + corr
    return PoissonSolution(xi=xi, centered_rhs=rhs, pi=pi)


# ---------------------------------------------------------------------------
# Path sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegimePath:
    """Piecewise-constant regime trajectory on ``[0, t_end]``.

    ``states[k]`` holds on ``[jump_times[k-1], jump_times[k])`` with
    ``jump_times[-1] := 0`` and a final interval ending at ``t_end``.
    """

    jump_times: NDArray[np.float64]
    states: NDArray[np.int64]
    t_end: float

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=np.float64)
        st = np.asarray(self.states, dtype=np.int64)
        if st.shape[0] != jt.shape[0] + 1:
            raise ValueError("need exactly one more state than jump times")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.shape[0])

    def intervals(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        starts = np.concatenate([[0.0], self.jump_times])
        ends = np.concatenate([self.jump_times, [self.t_end]])
        return starts, ends

    def state_at(self, t: ArrayLike) -> NDArray[np.int64]:
        """Regime in force at each time (right-continuous)."""
        idx = np.searchsorted(self.jump_times, np.asarray(t, dtype=np.float64), side="right")
        return self.states[idx]

    def to_csv(self, path: str | Path) -> None:
        starts, ends = self.intervals()
        with open(path, "w") as fh:
            fh.write("t_start,t_end,state\n")
            for s, e, st in zip(starts, ends, self.states):
                fh.write(f"{float(s)!r},{float(e)!r},{int(st) + 1}\n")


def sample_path_exact(
    g: Generator | ArrayLike, i0: int, t_end: float, seed: int, path_index: int = 0
) -> RegimePath:
    """Jump-by-jump (Gillespie) sampling of the chain started in state ``i0``.

    ``i0`` is 0-based.  Holding times in state i are Exp(-q_ii); the next
    state is drawn with probabilities q_ij / -q_ii.
    """
    g = _as_generator(g)
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    gen = rng.stream(seed, path_index, rng.CHAIN)
    q = g.q
    rates = -np.diag(q)
    jump_probs = np.where(np.eye(g.m, dtype=bool), 0.0, np.clip(q, 0.0, None))
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(jump_probs, axis=1) / jump_probs.sum(axis=1, keepdims=True)
    jumps: list[float] = []
    states = [int(i0)]
    t = 0.0
    i = int(i0)
    while rates[i] > 0:
        t += gen.exponential(1.0 / rates[i])
        if t >= t_end:
            break
        i = min(int(np.searchsorted(cum[i], gen.random(), side="right")), g.m - 1)
        jumps.append(t)
        states.append(i)
    return RegimePath(np.array(jumps), np.array(states, dtype=np.int64), float(t_end))


@numba.njit(cache=True, nogil=True)
def _categorical_chain(i0, cum, u, out):
    i = i0
    m = cum.shape[0]
    for k in range(u.shape[0]):
        row = cum[i]
        j = 0
        while j < m - 1 and u[k] >= row[j]:
            j += 1
        i = j
        out[k] = i
    return i


def discrete_chain_states(
    g: Generator | ArrayLike, i0: int, n_steps: int, delta: float, gen: np.random.Generator
) -> NDArray[np.int8 | np.int64]:
    """States after each of ``n_steps`` categorical draws from rows of P(delta).

    Returns an array of length ``n_steps + 1`` whose first entry is ``i0``.
    """
    g = _as_generator(g)
    out = np.empty(n_steps + 1, dtype=np.int64)
    out[0] = i0
    if g.m == 1:
        out[:] = 0
        return out
    cum = np.cumsum(transition_matrix(g, delta), axis=1)
    cum[:, -1] = 1.0
    i = int(i0)
    for start in range(0, n_steps, _CHUNK):
        stop = min(start + _CHUNK, n_steps)
        u = gen.random(stop - start)
        i = _categorical_chain(i, cum, u, out[start + 1 : stop + 1])
    return out


def _compress(states: NDArray[np.int64], grid: NDArray[np.float64], t_end: float) -> RegimePath:
    change = np.flatnonzero(states[1:] != states[:-1]) + 1
    return RegimePath(grid[change], states[np.concatenate([[0], change])], t_end)


def sample_path_discretized(
    g: Generator | ArrayLike,
    i0: int,
    t_end: float,
    delta: float,
    seed: int,
    path_index: int = 0,
) -> RegimePath:
    """Regime redrawn every ``delta`` from the row of ``P(delta)``.

    The state is constant between grid points ``k * delta``.
    """
    g = _as_generator(g)
    if delta <= 0:
        raise ValueError("delta must be positive")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    n = int(math.ceil(t_end / delta - 1e-9))
    gen = rng.stream(seed, path_index, rng.CHAIN)
    states = discrete_chain_states(g, i0, n, delta, gen)
    grid = np.arange(n + 1) * delta
    # the state drawn at step k holds from k*delta; the last draw is unused
    return _compress(states[:n], grid[:n], float(t_end))


def occupation_fractions(path: RegimePath, m: int) -> NDArray[np.float64]:
    """Fraction of ``[0, t_end]`` spent in each regime."""
    starts, ends = path.intervals()
    lengths = np.clip(ends, None, path.t_end) - starts
    occ = np.bincount(path.states, weights=lengths, minlength=m).astype(np.float64)
    return occ / occ.sum()
