"""Numerical checkers for the divergence-validity conditions of a loss.

The checks reduce validity of a component-function pair to the shape of the
optimal-payoff profile around the balance point gamma = 1/2:

  * necessary: psi(gamma) + psi(1-gamma) >= 2 psi(1/2) (strictly, off 1/2,
    for the strong form);
  * sufficient: psi has a (unique) global minimum at 1/2;
  * curvature route: f'' + g'' <= 0 plus a crossing point where f = g and
    f' = -g' != 0 certifies the unique minimum directly.

Verdicts are "Supported"/"Refuted", never "Proven": a finite grid can refute a
universally quantified claim by counterexample but only support it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .landscape import DEFAULT_SEARCH, PsiProfile
from .losses import eval_derivatives

TAU = 1e-9  # margin tolerance, well below every derived margin scale


class Verdict(Enum):
    SUPPORTED_STRONG = "SupportedStrong"
    SUPPORTED_WEAK = "SupportedWeak"
    REFUTED = "Refuted"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class NecessaryResult:
    """Margins psi(g) + psi(1-g) - 2 psi(1/2) per grid point, and the verdict
    of the (strict) inequality test. ``anchored`` is False when psi(1/2)
    diverges and the test cannot run."""

    margins: np.ndarray
    passed: bool
    strict: bool
    anchored: bool


@dataclass(frozen=True)
class SufficientResult:
    global_min_at_half: bool
    unique: bool
    argmin_gamma: float


@dataclass(frozen=True)
class Theorem5Record:
    y_star: float | None
    boundary_condition_ok: bool
    concavity_ok: bool
    kink_blocked: bool

    @property
    def holds(self):
        return (self.y_star is not None and self.boundary_condition_ok
                and self.concavity_ok and not self.kink_blocked)


@dataclass(frozen=True)
class ValidityReport:
    necessary_margins: np.ndarray
    necessary_ok: bool
    strict_necessary_ok: bool
    sufficient_min_location: float
    global_min_at_half: bool
    min_unique: bool
    theorem5: Theorem5Record
    verdict: Verdict

    def to_dict(self):
        t5 = self.theorem5
        return {
            "margins": [None if math.isinf(m) else m for m in self.necessary_margins.tolist()],
            "necessary_ok": self.necessary_ok,
            "strict_necessary_ok": self.strict_necessary_ok,
            "min_location": self.sufficient_min_location,
            "global_min_at_half": self.global_min_at_half,
            "min_unique": self.min_unique,
            "theorem5": {
                "y_star": t5.y_star,
                "boundary_condition_ok": t5.boundary_condition_ok,
                "concavity_ok": t5.concavity_ok,
                "kink_blocked": t5.kink_blocked,
                "holds": t5.holds,
            },
            "verdict": self.verdict.value,
        }


def _half_index(profile):
    gammas = profile.gammas
    n = len(gammas)
    for i in range(n):
        if abs(gammas[i] + gammas[n - 1 - i] - 1.0) > 1e-12:
            raise ValueError("profile grid is not symmetric about 1/2")
    idx = int(np.argmin(np.abs(gammas - 0.5)))
    if abs(gammas[idx] - 0.5) > 1e-12:
        raise ValueError("profile grid does not contain gamma = 1/2")
    return idx


def check_necessary(profile, strict):
    """Necessary-condition margins; +inf margins pass both forms."""
    half = _half_index(profile)
    psi = profile.psi
    if not math.isfinite(psi[half]):
        return NecessaryResult(margins=np.full_like(psi, math.nan),
                               passed=False, strict=strict, anchored=False)
    margins = psi + psi[::-1] - 2.0 * psi[half]
    if strict:
        off = np.ones(len(psi), dtype=bool)
        off[half] = False
        passed = bool(np.all(margins[off] > TAU))
    else:
        passed = bool(np.all(margins >= -TAU))
    return NecessaryResult(margins=margins, passed=passed, strict=strict, anchored=True)


def check_sufficient(profile):
    """Whether the profile's global minimum sits (uniquely) at gamma = 1/2."""
    half = _half_index(profile)
    psi = profile.psi
    psi_half = psi[half]
    if not math.isfinite(psi_half):
        raise ValueError("psi(1/2) must be finite for the sufficient check")
    global_min = bool(np.all(psi >= psi_half - TAU))
    step = float(profile.gammas[1] - profile.gammas[0]) if len(profile.gammas) > 1 else 0.0
    away = np.abs(profile.gammas - 0.5) > step
    unique = global_min and bool(np.all(psi[away] > psi_half + TAU))
    finite = np.where(np.isfinite(psi), psi, math.inf)
    argmin_gamma = float(profile.gammas[int(np.argmin(finite))])
    return SufficientResult(global_min_at_half=global_min, unique=unique,
                            argmin_gamma=argmin_gamma)


def _bisect_root(fun, a, b, iters=100):
    fa = fun(a)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = fun(mid)
        if fm == 0.0:
            return mid
        if (fa < 0) != (fm < 0):
            b = mid
        else:
            a, fa = mid, fm
        if abs(b - a) < 1e-13:
            break
    return 0.5 * (a + b)


def check_theorem5(loss, search=None):
    """Numerically verify the curvature route to strong validity.

    The effective real-side function is eps*f, so the checks are: crossings of
    eps*f - g on the search interval (by sign-change bisection; plateau edges
    of eps*f = g count as candidate crossings), |eps*f' + g'| < 1e-7 and
    |eps*f'| > 1e-7 there, and eps*f'' + g'' <= TAU on a dense grid. Crossings
    at kink points yield ``kink_blocked`` instead of a certificate.
    """
    loss.require_pointwise("check_theorem5")
    search = search or DEFAULT_SEARCH
    eps = loss.epsilon
    ys = np.linspace(-search.y_max, search.y_max, search.grid_points)

    def diff(y):
        return float(eps * loss.f(y) - loss.g(y))

    dv = eps * np.asarray(loss.f(ys), dtype=np.float64) - np.asarray(loss.g(ys), dtype=np.float64)
    ztol = 1e-12 * (1.0 + float(np.max(np.abs(dv))))
    zero = np.abs(dv) <= ztol
    roots = []
    for i in range(len(ys) - 1):
        if zero[i] or zero[i + 1]:
            continue
        if (dv[i] < 0) != (dv[i + 1] < 0):
            roots.append(_bisect_root(diff, float(ys[i]), float(ys[i + 1])))
    # boundaries of exact-zero plateaus (e.g. eps*f = g on a half line)
    for i in np.flatnonzero(zero):
        if i > 0 and not zero[i - 1]:
            roots.append(_bisect_edge_zero(diff, float(ys[i]), float(ys[i - 1]), ztol))
        if i + 1 < len(ys) and not zero[i + 1]:
            roots.append(_bisect_edge_zero(diff, float(ys[i]), float(ys[i + 1]), ztol))
    roots = sorted(set(round(r, 12) for r in roots))

    # curvature holds loss-wide; evaluate away from kink points
    dense = np.linspace(-search.y_max, search.y_max, 10000)
    if loss.kinks:
        keep = np.ones(len(dense), dtype=bool)
        for k in loss.kinks:
            keep &= np.abs(dense - k) > 1e-6
        dense = dense[keep]
    concavity_ok = bool(np.all(
        eps * np.asarray(loss.d2f(dense)) + np.asarray(loss.d2g(dense)) <= TAU))

    best = None
    for r in roots:
        ds = eval_derivatives(loss, r)
        f1 = eps * ds.f1
        ok = (not ds.kink) and abs(f1 + ds.g1) < 1e-7 and abs(f1) > 1e-7
        rec = Theorem5Record(y_star=float(r), boundary_condition_ok=ok,
                             concavity_ok=concavity_ok, kink_blocked=ds.kink)
        if ok:
            return rec
        if best is None:
            best = rec
    if best is not None:
        return best
    return Theorem5Record(y_star=None, boundary_condition_ok=False,
                          concavity_ok=concavity_ok, kink_blocked=False)


def _bisect_edge_zero(fun, inside, outside, ztol, iters=80):
    # boundary of {y : fun(y) == 0} between a zero point and a nonzero point
    for _ in range(iters):
        mid = 0.5 * (inside + outside)
        if abs(fun(mid)) <= ztol:
            inside = mid
        else:
            outside = mid
        if abs(outside - inside) <= 1e-13:
            break
    return inside


def classify(loss, gammas=None, search=None):
    """Full validity report for a pointwise loss.

    SupportedStrong needs either a unique profile minimum at 1/2 or a full
    curvature certificate, and in both cases the strict necessary margins;
    SupportedWeak a non-unique minimum at 1/2; Refuted a violated necessary
    margin; anything else (including a divergent psi(1/2)) is Inconclusive.
    """
    loss.require_pointwise("classify")
    profile = PsiProfile.compute(loss, gammas=gammas, search=search)
    half = _half_index(profile)
    th5 = check_theorem5(loss, search)
    if not math.isfinite(profile.psi[half]):
        return ValidityReport(
            necessary_margins=np.full_like(profile.psi, math.nan),
            necessary_ok=False, strict_necessary_ok=False,
            sufficient_min_location=math.nan, global_min_at_half=False,
            min_unique=False, theorem5=th5, verdict=Verdict.INCONCLUSIVE)

    nec = check_necessary(profile, strict=False)
    nec_strict = check_necessary(profile, strict=True)
    suf = check_sufficient(profile)

    if not nec.passed:
        verdict = Verdict.REFUTED
    elif (suf.global_min_at_half and suf.unique and nec_strict.passed) or \
            (th5.holds and nec_strict.passed):
        verdict = Verdict.SUPPORTED_STRONG
    elif suf.global_min_at_half:
        verdict = Verdict.SUPPORTED_WEAK
    else:
        verdict = Verdict.INCONCLUSIVE

    return ValidityReport(
        necessary_margins=nec.margins,
        necessary_ok=nec.passed,
        strict_necessary_ok=nec_strict.passed,
        sufficient_min_location=suf.argmin_gamma,
        global_min_at_half=suf.global_min_at_half,
        min_unique=suf.unique,
        theorem5=th5,
        verdict=verdict)
