"""Model definition: per-regime SDE coefficients plus the switching generator."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
ROW_SUM_REPAIR_TOL = 1e-9

_FIELDS = ("m", "a", "b", "sigma", "theta", "q", "x0", "i0")


class ModelFileError(ValueError):
    """The model file is missing, unreadable, or does not match the schema."""


class ModelValidationError(ValueError):
    """The model parsed but violates one or more coefficient/generator rules."""

    def __init__(self, report: ValidationReport):
        self.report = report
        lines = "; ".join(f"{f}: {msg}" for f, _, msg in report.violations)
        super().__init__(f"invalid model: {lines}")


def _frozen(values: ArrayLike, ndim: int) -> NDArray[np.float64]:
    arr = np.array(values, dtype=np.float64, ndmin=ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficients of the regime-switching equation and its initial state.

    Parameters
    ----------
    a, b, sigma, theta : (m,) array
        Drift constant, mean-reversion speed, volatility rate and diffusion
        exponent for each regime.
    q : (m, m) array
        Infinitesimal generator of the regime chain.
    x0 : float
        Initial value of the diffusion.
    i0 : int
        Initial regime, 1-based (``1 <= i0 <= m``).

    Construction never validates; call :func:`validate` for a report.
    Arrays are stored read-only.
    """

    a: NDArray[np.float64]
    b: NDArray[np.float64]
    sigma: NDArray[np.float64]
    theta: NDArray[np.float64]
    q: NDArray[np.float64]
    x0: float
    i0: int
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        for name in ("a", "b", "sigma", "theta"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 1))
        object.__setattr__(self, "q", _frozen(self.q, 2))
        object.__setattr__(self, "x0", float(self.x0))
        object.__setattr__(self, "i0", int(self.i0))

    @property
    def m(self) -> int:
        return int(self.a.shape[0])

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (
            self.x0 == other.x0
            and self.i0 == other.i0
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("a", "b", "sigma", "theta", "q")
            )
        )

    def replace(self, **changes) -> ModelSpec:
        kw = {k: getattr(self, k) for k in ("a", "b", "sigma", "theta", "q", "x0", "i0")}
        kw.update(changes)
        return ModelSpec(**kw)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "sigma": self.sigma.tolist(),
            "theta": self.theta.tolist(),
            "q": self.q.tolist(),
            "x0": self.x0,
            "i0": self.i0,
        }


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[tuple[str, str, str], ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> list[tuple[str, str]]:
        return [(f, r) for f, r, _ in self.violations]


def validate(spec: ModelSpec) -> ValidationReport:
    """Collect every violated model invariant.

    Violations are returned as ``(field, rule, message)`` triples; nothing is
    raised.  An empty list means the model is usable by every downstream
    module.
    """
    out: list[tuple[str, str, str]] = []
    m = spec.m

    for name in ("b", "sigma", "theta"):
        arr = getattr(spec, name)
        if arr.shape != (m,):
            out.append((name, "length", f"expected {m} entries, got {arr.shape[0]}"))
    if spec.q.shape != (m, m):
        out.append(("q", "shape", f"expected {m}x{m} matrix, got {spec.q.shape}"))
    if m < 1:
        out.append(("m", "m >= 1", "at least one regime is required"))

    for name in ("a", "b", "sigma"):
        arr = getattr(spec, name)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            bad = [int(i) + 1 for i in np.flatnonzero(~(arr > 0))]
            out.append((name, "positive", f"{name}(i) > 0 required; fails for regimes {bad}"))

    th = spec.theta
    if np.any(~(th >= 0.5)):
        bad = [int(i) + 1 for i in np.flatnonzero(~(th >= 0.5))]
        out.append(("theta", "θ ≥ 1/2 required", f"theta(i) >= 1/2 fails for regimes {bad}"))

    if spec.q.shape == (m, m) and m >= 1:
        q = spec.q
        off = q[~np.eye(m, dtype=bool)]
        if not np.all(np.isfinite(q)):
            out.append(("q", "finite", "generator has non-finite entries"))
        if np.any(off < 0):
            out.append(("q", "off-diagonal nonnegative", "q_ij >= 0 required for i != j"))
        rows = np.abs(q.sum(axis=1))
        if np.any(rows > ROW_SUM_TOL):
            worst = int(np.argmax(rows))
            out.append(
                ("q", "rows sum to zero", f"row {worst + 1} sums to {q[worst].sum():.3g}")
            )

    if not (np.isfinite(spec.x0) and spec.x0 > 0):
        out.append(("x0", "positive", "x0 > 0 required"))
    if not 1 <= spec.i0 <= max(m, 0):
        out.append(("i0", "range", f"i0 must be in 1..{m}"))

    return ValidationReport(tuple(out))


def _repair_rows(q: NDArray[np.float64]) -> tuple[NDArray[np.float64], list[str]]:
    q = q.copy()
    notes = []
    for i, s in enumerate(q.sum(axis=1)):
        if 0 < abs(s) <= ROW_SUM_REPAIR_TOL:
            q[i, i] = -(q[i].sum() - q[i, i])
            notes.append(f"row {i + 1} of q re-normalized (sum was {s:.3g})")
    return q, notes


def model_from_dict(data: dict) -> ModelSpec:
    """Build and validate a model from the JSON-schema dictionary.

    Raises
    ------
    ModelFileError
        Missing fields, wrong types, or array lengths inconsistent with ``m``.
    ModelValidationError
        Well-formed but invalid coefficients or generator.
    """
    if not isinstance(data, dict):
        raise ModelFileError("model file must contain a JSON object")
    missing = [k for k in _FIELDS if k not in data]
    if missing:
        raise ModelFileError(f"missing field(s): {', '.join(missing)}")
    try:
        m = int(data["m"])
        vecs = {k: np.asarray(data[k], dtype=np.float64) for k in ("a", "b", "sigma", "theta")}
        q = np.asarray(data["q"], dtype=np.float64)
        x0 = float(data["x0"])
        i0 = int(data["i0"])
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model field: {exc}") from exc
    for k, v in vecs.items():
        if v.shape != (m,):
            raise ModelFileError(f"field {k!r} must have {m} entries")
    if q.shape != (m, m):
        raise ModelFileError(f"field 'q' must be {m}x{m}")

    q, notes = _repair_rows(q)
    for note in notes:
        logger.info(note)
    spec = ModelSpec(q=q, x0=x0, i0=i0, notes=tuple(notes), **vecs)
    report = validate(spec)
    if not report.ok:
        raise ModelValidationError(report)
    return spec


def load_model(path: str | Path) -> ModelSpec:
    """Read a JSON model file (see README for the schema)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(data)


def save_model(spec: ModelSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


PAPER_Q = np.array(
    [
        [-7.0, 3.0, 2.0, 2.0],
        [3.0, -9.0, 3.0, 3.0],
        [3.0, 2.0, -8.0, 3.0],
        [2.0, 3.0, 4.0, -9.0],
    ]
)


def paper_example(x0: float = 0.2, i0: int = 3) -> ModelSpec:
    """The built-in four-regime square-root example, started at (0.2, 3)."""
    return ModelSpec(
        a=[4.0, 1.5, 0.8, 0.55],
        b=[2.0, 1.0, 1.0, 1.0],
        sigma=[2.0, 1.0, 1.0, 0.4],
        theta=[0.5, 0.5, 0.5, 0.5],
        q=PAPER_Q,
        x0=x0,
        i0=i0,
    )
