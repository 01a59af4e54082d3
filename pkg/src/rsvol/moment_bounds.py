"""Closed-form p-th moment envelope for the regime-switching equation.

For a positive weight vector ``beta`` with ``mu = A(p) beta > 0`` the
Lyapunov function ``V(x, i) = beta_i x^p`` satisfies ``LV <= -lambda_p V + C_p``,
which gives::

    E[X_t^p] <= x0^p exp(-lambda_p t) + C_p / (beta_hat lambda_p) (1 - exp(-lambda_p t))

with ``beta_hat = min_i beta_i``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .mmatrix import certify
from .model import ModelSpec

_THETA_ONE_TOL = 1e-12


class HypothesisCase(str, enum.Enum):
    CASE1 = "Case1"
    CASE2 = "Case2"
    NOT_APPLICABLE = "NotApplicable"


class ThetaOneError(ValueError):
    """The three-way constant is singular because some theta(i) equals 1."""


def check_hypotheses(spec: ModelSpec, p: float) -> tuple[HypothesisCase, str]:
    """Which set of sufficient conditions covers the p-th moment bound.

    ``Case1`` is the ``p = 1`` certificate (``A(1)`` a nonsingular
    M-matrix).  ``Case2`` needs ``p > max(1, 2(1 - min theta))``, every
    theta in ``[1/2, 1]`` and ``A(p)`` a nonsingular M-matrix.
    """
    if p == 1:
        rep = certify(spec, 1.0)
        if rep.verdict:
            return HypothesisCase.CASE1, (
                f"A(1) is a nonsingular M-matrix (s={rep.s:g} > rho(G)={rep.rho_G:.6g})"
            )
        return HypothesisCase.NOT_APPLICABLE, (
            f"A(1) is not a nonsingular M-matrix (s={rep.s:g} <= rho(G)={rep.rho_G:.6g})"
        )
    if p < 1:
        return HypothesisCase.NOT_APPLICABLE, f"p={p:g} < 1 is not covered"

    th = spec.theta
    if np.any(th < 0.5) or np.any(th > 1.0):
        bad = [int(i) + 1 for i in np.flatnonzero((th < 0.5) | (th > 1.0))]
        return HypothesisCase.NOT_APPLICABLE, f"theta(i) outside [1/2, 1] for regimes {bad}"
    threshold = max(1.0, 2.0 * (1.0 - float(th.min())))
    if not p > threshold:
        return HypothesisCase.NOT_APPLICABLE, (
            f"p={p:g} does not exceed max(1, 2(1 - min theta)) = {threshold:g}"
        )
    rep = certify(spec, p)
    if not rep.verdict:
        return HypothesisCase.NOT_APPLICABLE, (
            f"A({p:g}) is not a nonsingular M-matrix (s={rep.s:g} <= rho(G)={rep.rho_G:.6g})"
        )
    return HypothesisCase.CASE2, (
        f"theta in [1/2, 1], p={p:g} > {threshold:g}, A({p:g}) nonsingular M-matrix "
        f"(s={rep.s:g} > rho(G)={rep.rho_G:.6g})"
    )


@dataclass(frozen=True)
class MomentEnvelope:
    p: float
    lambda_p: float
    C_p: float
    beta_hat: float
    x0: float
    theta_one_branch: bool = False

    @property
    def asymptotic_bound(self) -> float:
        return self.C_p / (self.beta_hat * self.lambda_p)

    def __call__(self, t: ArrayLike) -> NDArray[np.float64] | float:
        t = np.asarray(t, dtype=np.float64)
        decay = np.exp(-self.lambda_p * t)
        out = self.x0**self.p * decay + self.asymptotic_bound * (1.0 - decay)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["asymptotic_bound"] = self.asymptotic_bound
        return d


def _pow(base: float, expo: float) -> float:
    # positive base only; exp/log keeps large p from overflowing early
    if expo == 0:
        return 1.0
    try:
        return math.exp(expo * math.log(base))
    except OverflowError:
        return math.inf


def regime_terms(
    spec: ModelSpec, p: float, beta: ArrayLike, mu: ArrayLike, theta_one_branch: bool = False
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per-regime decay rates and additive constants.

    ``lambda_p`` is the minimum of the rates and ``C_p`` the maximum of the
    constants.  Regimes with theta = 1 use a two-way Young split on the
    drift term after absorbing the diffusion term into ``mu``
    (``mu' = mu - p(p-1) sigma^2 beta / 2``); that branch is only taken when
    ``theta_one_branch`` is set.
    """
    beta = np.asarray(beta, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(beta <= 0) or np.any(mu <= 0):
        raise ValueError("beta and mu must be strictly positive")
    rates = np.empty(spec.m)
    consts = np.empty(spec.m)
    for i in range(spec.m):
        a, s, th, b_i, m_i = spec.a[i], spec.sigma[i], spec.theta[i], beta[i], mu[i]
        drift_const = _pow(p * b_i * a, p) * _pow(3.0 / m_i, p - 1.0) / p
        if p == 1:
            rates[i] = m_i / b_i
            consts[i] = drift_const
            continue
        if abs(th - 1.0) <= _THETA_ONE_TOL:
            if not theta_one_branch:
                raise ThetaOneError(
                    f"theta({i + 1}) = 1 makes the diffusion exponent p/(2-2 theta) singular; "
                    "use theta_one_branch=True"
                )
            m_eff = m_i - 0.5 * p * (p - 1.0) * s * s * b_i
            if m_eff <= 0:
                raise ThetaOneError(
                    f"theta({i + 1}) = 1: mu - p(p-1) sigma^2 beta / 2 = {m_eff:g} <= 0"
                )
            rates[i] = (p + 1.0) * m_eff / (2.0 * p * b_i)
            consts[i] = _pow(p * b_i * a, p) * _pow(2.0 / m_eff, p - 1.0) / p
            continue
        k = 2.0 - 2.0 * th
        diff_const = (
            (k / p)
            * _pow(0.5 * p * (p - 1.0) * s * s * b_i, p / k)
            * _pow(3.0 / m_i, (p - 2.0 + 2.0 * th) / k)
        )
        rates[i] = (p + 3.0 - 2.0 * th) * m_i / (3.0 * p * b_i)
        consts[i] = drift_const + diff_const
    return rates, consts


def compute_constants(
    spec: ModelSpec,
    p: float,
    beta: ArrayLike,
    mu: ArrayLike,
    theta_one_branch: bool = False,
) -> MomentEnvelope:
    """Evaluate ``lambda_p``, ``C_p`` and ``beta_hat`` for given weights.

    Raises
    ------
    ThetaOneError
        Some theta(i) == 1 with ``p > 1`` and the extension branch not
        requested, or requested but ``mu'`` not positive.
    ValueError
        theta(i) outside [1/2, 1] for ``p > 1``, or non-positive weights.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if p > 1 and (np.any(spec.theta < 0.5) or np.any(spec.theta > 1.0 + _THETA_ONE_TOL)):
        raise ValueError("p > 1 requires every theta(i) in [1/2, 1]")
    rates, consts = regime_terms(spec, p, beta, mu, theta_one_branch)
    used_branch = bool(p > 1 and np.any(np.abs(spec.theta - 1.0) <= _THETA_ONE_TOL))
    return MomentEnvelope(
        p=float(p),
        lambda_p=float(rates.min()),
        C_p=float(consts.max()),
        beta_hat=float(np.min(beta)),
        x0=spec.x0,
        theta_one_branch=used_branch,
    )


def envelope_for(spec: ModelSpec, p: float) -> tuple[HypothesisCase, str, MomentEnvelope | None]:
    """Hypothesis check followed by the canonical-weight envelope, if any."""
    case, msg = check_hypotheses(spec, p)
    if case is HypothesisCase.NOT_APPLICABLE:
        return case, msg, None
    rep = certify(spec, p)
    env = compute_constants(spec, p, rep.beta, rep.mu, theta_one_branch=True)
    return case, msg, env


def envelope_curve(env: MomentEnvelope, grid: ArrayLike) -> NDArray[np.float64]:
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be nonnegative and nondecreasing")
    return np.atleast_1d(env(grid))


def lyapunov_exponent_bound(env: MomentEnvelope) -> float:
    """Upper bound on ``limsup (1/t) log E[X_t^p]``; a bounded envelope gives 0."""
    return 0.0
