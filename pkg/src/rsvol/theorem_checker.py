"""Sufficient-condition certificates: positivity, p-th moment boundedness and
positive recurrence (unique ergodic stationary law)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ctmc
from .model import ModelSpec
from .moment_bounds import HypothesisCase, MomentEnvelope, envelope_for

_EQ_TOL = 1e-12


def _is_half(th: np.ndarray) -> np.ndarray:
    return np.abs(th - 0.5) <= _EQ_TOL


@dataclass(frozen=True)
class CheckResult:
    holds: bool
    rule: str
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"holds": self.holds, "rule": self.rule, "details": self.details}


def check_positivity(spec: ModelSpec) -> CheckResult:
    """Global positive solution: per regime, theta = 1/2 with 2a >= sigma^2, or theta > 1/2."""
    th, a, s2 = spec.theta, spec.a, spec.sigma**2
    half = _is_half(th)
    ok = (half & (2 * a >= s2)) | (~half & (th > 0.5))
    rows = [
        f"regime {i + 1}: theta={th[i]:g}, "
        + (f"2a={2 * a[i]:g} {'>=' if ok[i] else '<'} sigma^2={s2[i]:g}" if half[i] else "theta > 1/2")
        for i in range(spec.m)
    ]
    return CheckResult(
        bool(ok.all()),
        "for all i: (theta(i) = 1/2 and 2a(i) >= sigma(i)^2) or theta(i) > 1/2",
        {"per_regime": rows, "failing_regimes": [int(i) + 1 for i in np.flatnonzero(~ok)]},
    )


def _switching_requirements(spec: ModelSpec) -> list[str]:
    failed = []
    if spec.m > 1:
        off = spec.q[~np.eye(spec.m, dtype=bool)]
        if np.any(off <= 0):
            failed.append("all off-diagonal q_ij > 0")
        if not ctmc.is_irreducible(spec.q):
            failed.append("regime chain irreducible")
    return failed


def _lyapunov_witness(spec: ModelSpec, mu: np.ndarray, p: float) -> dict:
    sol = ctmc.solve_poisson(spec.q, mu)
    gamma = 1.0 + p * float(sol.xi.max())
    return {
        "mu": mu.tolist(),
        "pi": sol.pi.tolist(),
        "xi": sol.xi.tolist(),
        "poisson_residual": sol.residual(spec.q),
        "p": p,
        "gamma": gamma,
        "min_gamma_minus_p_xi": float((gamma - p * sol.xi).min()),
    }


def check_recurrence_power(spec: ModelSpec) -> CheckResult:
    """Positive recurrence when every 2 theta(i) lies in (1, 3].

    The witness uses ``mu(i) = a(i) - sigma(i)^2 / 2`` in the Poisson
    system (the condition itself does not pin ``mu`` down; this choice is
    flagged in the details), ``p = 1`` and ``gamma = 1 + max_i xi_i``.
    """
    rule = "for all i: 2 theta(i) in (1, 3]; q_ij > 0 for i != j; chain irreducible"
    two_th = 2 * spec.theta
    failed = []
    bad = np.flatnonzero(~((two_th > 1 + _EQ_TOL) & (two_th <= 3 + _EQ_TOL)))
    if bad.size:
        failed.append(f"2 theta(i) in (1, 3] fails for regimes {[int(i) + 1 for i in bad]}")
    failed += _switching_requirements(spec)
    if failed:
        return CheckResult(False, rule, {"failed": failed})
    mu = spec.a - 0.5 * spec.sigma**2
    details = _lyapunov_witness(spec, mu, 1.0)
    details["mu_interpretation"] = "mu(i) := a(i) - 0.5 sigma(i)^2 (assumed; not fixed by the condition)"
    return CheckResult(True, rule, details)


def check_recurrence_sqrt(spec: ModelSpec) -> CheckResult:
    """Positive recurrence for theta = 1/2 everywhere with mu(i) = a(i) - sigma(i)^2/2 > 0.

    The witness exponent is ``p = min_i mu(i) / sigma(i)^2``, half the
    largest admissible value, so ``mu(i) - p sigma(i)^2 / 2 >= mu(i) / 2``.
    """
    rule = "for all i: theta(i) = 1/2 and mu(i) = a(i) - 0.5 sigma(i)^2 > 0; q_ij > 0; irreducible"
    failed = []
    mu = spec.a - 0.5 * spec.sigma**2
    half = _is_half(spec.theta)
    if not half.all():
        failed.append(f"theta(i) = 1/2 fails for regimes {[int(i) + 1 for i in np.flatnonzero(~half)]}")
    if np.any(mu <= 0):
        failed.append(f"mu(i) > 0 fails for regimes {[int(i) + 1 for i in np.flatnonzero(mu <= 0)]}")
    failed += _switching_requirements(spec)
    if failed:
        return CheckResult(False, rule, {"failed": failed, "mu": mu.tolist()})
    p = float(np.min(mu / spec.sigma**2))
    details = _lyapunov_witness(spec, mu, p)
    details["min_mu_minus_half_p_sigma2"] = float(np.min(mu - 0.5 * p * spec.sigma**2))
    return CheckResult(True, rule, details)


@dataclass(frozen=True)
class CertificateReport:
    positivity: CheckResult
    moment_case: HypothesisCase
    moment_message: str
    p: float
    envelope: MomentEnvelope | None
    recurrence_power: CheckResult
    recurrence_sqrt: CheckResult

    @property
    def stationary(self) -> bool:
        return self.recurrence_power.holds or self.recurrence_sqrt.holds

    @property
    def assumptions_failed(self) -> list[str]:
        out = []
        if not self.positivity.holds:
            out.append("positivity: " + self.positivity.rule)
        if self.moment_case is HypothesisCase.NOT_APPLICABLE:
            out.append("moment_bound: " + self.moment_message)
        for name, res in (
            ("recurrence_power", self.recurrence_power),
            ("recurrence_sqrt", self.recurrence_sqrt),
        ):
            if not res.holds:
                out += [f"{name}: {msg}" for msg in res.details.get("failed", [])]
        return out

    def to_dict(self) -> dict:
        return {
            "positivity": self.positivity.to_dict(),
            "moment_bound": {
                "case": self.moment_case.value,
                "p": self.p,
                "message": self.moment_message,
                "envelope": None if self.envelope is None else self.envelope.to_dict(),
            },
            "recurrence": {
                "power_diffusion": self.recurrence_power.to_dict(),
                "square_root": self.recurrence_sqrt.to_dict(),
                "stationary_distribution": self.stationary,
            },
            "assumptions_failed": self.assumptions_failed,
        }

    def to_text(self) -> str:
        def yn(flag: bool) -> str:
            return "yes" if flag else "no"

        env = self.envelope
        lines = [
            f"{'certificate':<34}{'holds':<7}detail",
            f"{'global positive solution':<34}{yn(self.positivity.holds):<7}{self.positivity.rule}",
            f"{'p-th moment bound (p=%g)' % self.p:<34}"
            f"{yn(env is not None):<7}{self.moment_case.value}: {self.moment_message}",
        ]
        if env is not None:
            lines.append(
                f"{'':<41}lambda_p={env.lambda_p:.10g} C_p={env.C_p:.10g} "
                f"beta_hat={env.beta_hat:.10g} limsup<={env.asymptotic_bound:.10g}"
            )
        lines += [
            f"{'recurrence, 2 theta in (1,3]':<34}{yn(self.recurrence_power.holds):<7}"
            f"{self.recurrence_power.rule}",
            f"{'recurrence, theta = 1/2':<34}{yn(self.recurrence_sqrt.holds):<7}"
            f"{self.recurrence_sqrt.rule}",
        ]
        if not self.stationary:
            lines.append("no stationarity certificate from the available sufficient conditions")
        for item in self.assumptions_failed:
            lines.append(f"  failed: {item}")
        return "\n".join(lines)


def full_report(spec: ModelSpec, p: float) -> CertificateReport:
    case, msg, env = envelope_for(spec, p)
    return CertificateReport(
        positivity=check_positivity(spec),
        moment_case=case,
        moment_message=msg,
        p=float(p),
        envelope=env,
        recurrence_power=check_recurrence_power(spec),
        recurrence_sqrt=check_recurrence_sqrt(spec),
    )
