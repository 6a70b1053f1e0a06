"""Bounded truncations ``F_mu`` of ``xi -> xi^2`` and their inequality suite.

The base profile ``chi`` is the identity on ``[0, 1]``, the constant 2 on
``[2, inf)`` and the quintic ``1 + s + 4 s^3 - 7 s^4 + 3 s^5`` (``s = xi - 1``)
in between, which matches value, slope and curvature at both joints (C^2).
Everything about ``F_mu(xi) = mu chi(xi^2 / mu)`` reduces to the scaled
variable ``s = xi^2 / mu``; the constants below are measured on ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from ..geometry import DomainError

# chi on the transition interval, coefficients in s = xi - 1 (ascending powers)
_P = np.array([1.0, 1.0, 0.0, 4.0, -7.0, 3.0])
_DP = np.polynomial.polynomial.polyder(_P)
_D2P = np.polynomial.polynomial.polyder(_DP)
_REL = 1e-12  # relative slack for floating-point comparisons


def chi(x):
    x = np.asarray(x, dtype=float)
    s = np.clip(x - 1.0, 0.0, 1.0)
    mid = np.polynomial.polynomial.polyval(s, _P)
    return np.where(x <= 1.0, x, np.where(x >= 2.0, 2.0, mid))


def dchi(x):
    x = np.asarray(x, dtype=float)
    s = np.clip(x - 1.0, 0.0, 1.0)
    mid = np.polynomial.polynomial.polyval(s, _DP)
    return np.where(x <= 1.0, 1.0, np.where(x >= 2.0, 0.0, mid))


def d2chi(x):
    x = np.asarray(x, dtype=float)
    s = np.clip(x - 1.0, 0.0, 1.0)
    mid = np.polynomial.polynomial.polyval(s, _D2P)
    return np.where((x <= 1.0) | (x >= 2.0), 0.0, mid)


def _sup(f, lo: float, hi: float, n: int = 200_001) -> float:
    """Dense-grid maximum of ``f`` on ``[lo, hi]`` polished by a bounded 1-d search."""
    grid = np.linspace(lo, hi, n)
    vals = f(grid)
    k = int(np.argmax(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n - 1)]
    best = float(vals[k])
    if b > a:
        res = minimize_scalar(lambda x: -float(f(np.array([x]))[0]), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-14})
        best = max(best, -float(res.fun))
    return best


def _ratio_G(s):
    """``|G_F| / F`` as a function of ``s = xi^2 / mu`` (``s > 0``)."""
    return np.abs(2.0 * s * dchi(s) - chi(s)) / chi(s)


def _ratio_F2(s):
    """``|xi^2 F''|`` divided by the regime quantity (``F``, ``xi^2`` or ``mu``)."""
    val = np.abs(s * (2.0 * dchi(s) + 4.0 * s * d2chi(s)))
    denom = np.where(s <= 1.0, chi(s), np.where(s <= 2.0, s, 1.0))
    return val / denom


@dataclass
class TruncationFamily:
    """``F_mu(xi) = mu chi(xi^2 / mu)`` with measured profile constants."""

    mu: float
    A0: float
    A1: float
    C_chi: float

    def F(self, xi):
        xi = np.asarray(xi, dtype=float)
        return self.mu * chi(xi * xi / self.mu)

    def dF(self, xi):
        xi = np.asarray(xi, dtype=float)
        return 2.0 * xi * dchi(xi * xi / self.mu)

    def d2F(self, xi):
        xi = np.asarray(xi, dtype=float)
        s = xi * xi / self.mu
        return 2.0 * dchi(s) + 4.0 * s * d2chi(s)

    def G(self, xi):
        xi = np.asarray(xi, dtype=float)
        return xi * self.dF(xi) - self.F(xi)


_CONSTANTS: dict[str, float] = {}


def profile_constants() -> dict[str, float]:
    """``A0 = sup chi'``, ``A1 = sup |chi''|`` and ``C_chi`` (cached)."""
    if not _CONSTANTS:
        A0 = _sup(dchi, 0.0, 2.0)
        A1 = _sup(lambda x: np.abs(d2chi(x)), 0.0, 2.0)
        tiny = 1e-9
        C = max(
            _sup(_ratio_G, tiny, 1.0), _sup(_ratio_G, 1.0, 2.0), _sup(_ratio_G, 2.0, 4.0),
            _sup(_ratio_F2, tiny, 1.0), _sup(_ratio_F2, 1.0, 2.0), _sup(_ratio_F2, 2.0, 4.0),
        )
        _CONSTANTS.update(A0=A0, A1=A1, C_chi=C)
    return dict(_CONSTANTS)


def build_truncation(mu: float) -> TruncationFamily:
    if not mu > 0 or not math.isfinite(mu):
        raise DomainError(f"truncation scale must be positive, got {mu}")
    c = profile_constants()
    return TruncationFamily(float(mu), c["A0"], c["A1"], c["C_chi"])


@dataclass
class SuiteRow:
    mu: float
    check: str
    worst: float  # max of lhs - rhs (<= 0 means satisfied)
    passed: bool


@dataclass
class SuiteTable:
    rows: list[SuiteRow] = field(default_factory=list)

    @property
    def failures(self) -> list[SuiteRow]:
        return [r for r in self.rows if not r.passed]

    def as_dicts(self) -> list[dict]:
        return [{"mu": r.mu, "check": r.check, "worst": r.worst, "passed": r.passed} for r in self.rows]


def _le(lhs, rhs) -> float:
    """Largest violation of ``lhs <= rhs`` with a relative rounding slack."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    slack = _REL * np.maximum(1.0, np.abs(rhs))
    return float(np.max(lhs - rhs - slack))


def truncation_property_suite(mus=(1.0, 10.0, 100.0), n_grid: int = 100_000,
                              span: float = 3.0) -> SuiteTable:
    """Check every bound on ``F_mu``, ``F_mu'``, ``F_mu''`` and ``G_{F_mu}`` on a dense grid.

    The grid covers ``|xi| <= span * sqrt(mu_max)`` so every regime is sampled
    for every ``mu``.  Limit statements are checked as monotone decay of the
    error on a fixed window as ``mu`` grows, with exactness once the window
    lies in the unsaturated region.
    """
    table = SuiteTable()
    xi = np.linspace(-span * math.sqrt(max(mus)), span * math.sqrt(max(mus)), n_grid)
    x2 = xi * xi
    for mu in mus:
        fam = build_truncation(mu)
        A0, A1, C = fam.A0, fam.A1, fam.C_chi
        F, dF, d2F, G = fam.F(xi), fam.dF(xi), fam.d2F(xi), fam.G(xi)
        checks = {
            "sup F <= 2 mu": _le(F, 2 * mu),
            "F <= 2 xi^2": _le(F, 2 * x2),
            "|F'| <= 2 sqrt2 A0 sqrt(mu)": _le(np.abs(dF), 2 * math.sqrt(2) * A0 * math.sqrt(mu)),
            "|F'| <= 2 sqrt2 A0 |xi|": _le(np.abs(dF), 2 * math.sqrt(2) * A0 * np.abs(xi)),
            "|F''| <= 8 A1 + 2 A0": _le(np.abs(d2F), 8 * A1 + 2 * A0),
            "|G| <= (4 A0 + 2) mu": _le(np.abs(G), (4 * A0 + 2) * mu),
            "|G| <= 2 (sqrt2 A0 + 1) xi^2": _le(np.abs(G), 2 * (math.sqrt(2) * A0 + 1) * x2),
            "|G| <= C_chi F": _le(np.abs(G), C * F),
        }
        a = np.abs(xi)
        lo, mid, hi = a <= math.sqrt(mu), (a >= math.sqrt(mu)) & (a <= math.sqrt(2 * mu)), a > math.sqrt(2 * mu)
        q = np.abs(x2 * d2F)
        checks["|xi^2 F''| <= C_chi F (|xi| <= sqrt mu)"] = _le(q[lo], C * F[lo])
        checks["|xi^2 F''| <= C_chi xi^2 (sqrt mu <= |xi| <= sqrt 2mu)"] = _le(q[mid], C * x2[mid])
        checks["|xi^2 F''| <= C_chi mu (|xi| > sqrt 2mu)"] = _le(q[hi], C * mu) if np.any(hi) else -math.inf
        checks["F = xi^2 for xi^2 <= mu"] = float(np.max(np.abs(F[lo] - x2[lo])))
        checks["G = xi^2 for xi^2 <= mu"] = float(np.max(np.abs(G[lo] - x2[lo])))
        checks["A0 > 1"] = 1.0 - A0
        for name, worst in checks.items():
            exact = name.startswith(("F =", "G ="))
            ok = worst <= 1e-12 * max(1.0, mu) if exact else worst <= 0.0
            table.rows.append(SuiteRow(mu, name, worst, bool(ok)))
    # limits as mu grows on a fixed window
    window = np.linspace(-3.0, 3.0, 20_001)
    errs = {"F -> xi^2": [], "F' -> 2 xi": [], "F'' -> 2": [], "G -> xi^2": []}
    for mu in sorted(mus):
        fam = build_truncation(mu)
        errs["F -> xi^2"].append(np.max(np.abs(fam.F(window) - window**2)))
        errs["F' -> 2 xi"].append(np.max(np.abs(fam.dF(window) - 2 * window)))
        errs["F'' -> 2"].append(np.max(np.abs(fam.d2F(window) - 2.0)))
        errs["G -> xi^2"].append(np.max(np.abs(fam.G(window) - window**2)))
    for name, e in errs.items():
        e = np.array(e)
        ok = bool(np.all(np.diff(e) <= 1e-12) and e[-1] <= 1e-10)
        table.rows.append(SuiteRow(max(mus), f"limit {name}", float(e[-1]), ok))
    return table
