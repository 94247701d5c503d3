"""Discriminator-optimal payoff landscapes.

For a pointwise loss the payoff at mixing weight gamma and score y is

    payoff(gamma, y) = epsilon * gamma * f(y) + (1 - gamma) * g(y)

and the optimal-score profile is its maximum over y, which may be attained at
a point, on an interval (piecewise-linear losses), or not at all (+inf for
losses that grow without bound). The inner maximization is a dense grid scan
followed by golden-section refinement of the winning cell, which is robust for
the piecewise-linear catalog entries where derivative-based search fails.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np


class IoError(OSError):
    """Export destination cannot be written."""


@dataclass(frozen=True)
class SearchConfig:
    """Inner-maximization controls for the score variable."""

    y_max: float = 50.0
    grid_points: int = 4096
    plateau_tol: float = 1e-7      # grid points this close to the max join the argmax hull
    boundary_slope_tol: float = 1e-6   # outward slope above this at the boundary => divergent
    refine_xtol: float = 1e-10


DEFAULT_SEARCH = SearchConfig()

# export ranges where each loss's saddle structure is visible (the theory puts
# no bound on y; these are presentation defaults)
DEFAULT_Y_RANGES = {
    "classic_minimax": (-8.0, 8.0),
    "classic_nonsaturating": (-8.0, 8.0),
    "classic_linear": (-8.0, 8.0),
    "wasserstein": (-3.0, 3.0),
    "least_squares": (-2.0, 3.0),
    "hinge_minimax": (-3.0, 3.0),
    "hinge_nonsaturating": (-3.0, 3.0),
    "hinge_linear": (-3.0, 3.0),
    "absolute": (-2.0, 3.0),
    "asymmetric": (-3.0, 3.0),
}


@dataclass(frozen=True)
class Argmax:
    """Maximizer descriptor: a point (lo == hi), an interval, or divergent."""

    kind: str  # "point" | "interval" | "divergent"
    lo: float = math.nan
    hi: float = math.nan

    @property
    def is_divergent(self):
        return self.kind == "divergent"


DIVERGENT = Argmax("divergent")


def _weights(loss, gamma):
    wf = gamma if loss.epsilon == 1.0 else loss.epsilon * gamma
    return wf, 1.0 - gamma


def psi_big(loss, gamma, y):
    """Pointwise payoff epsilon*gamma*f(y) + (1-gamma)*g(y).

    ``y`` may be a scalar or a numpy array (the component functions vectorize).
    """
    loss.require_pointwise("psi_big")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    wf, wg = _weights(loss, gamma)
    val = wf * loss.f(y) + wg * loss.g(y)
    return float(val) if np.ndim(val) == 0 else val


def _golden_max(fun, a, b, xtol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = fun(x1), fun(x2)
    while b - a > xtol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = fun(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = fun(x1)
    x = 0.5 * (a + b)
    return x, fun(x)


def _bisect_edge(pred, inside, outside, xtol=1e-12, iters=80):
    # boundary of {y : pred(y)} between a point satisfying it and one that doesn't
    for _ in range(iters):
        mid = 0.5 * (inside + outside)
        if pred(mid):
            inside = mid
        else:
            outside = mid
        if abs(outside - inside) <= xtol:
            break
    return inside


def psi_small(loss, gamma, search=None):
    """Maximum of the payoff over all scores, with its argmax descriptor.

    Returns ``(value, Argmax)``; divergent maximization is reported as
    ``(inf, DIVERGENT)``, which is a legitimate result, not an error.
    """
    loss.require_pointwise("psi_small")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    search = search or DEFAULT_SEARCH
    ys = np.linspace(-search.y_max, search.y_max, search.grid_points)
    fv = np.asarray(loss.f(ys), dtype=np.float64)
    gv = np.asarray(loss.g(ys), dtype=np.float64)
    return _psi_from_values(loss, gamma, ys, fv, gv, search)


def _psi_from_values(loss, gamma, ys, fv, gv, search):
    wf, wg = _weights(loss, gamma)
    vals = wf * fv + wg * gv
    m_idx = int(np.argmax(vals))
    m = vals[m_idx]
    dy = ys[1] - ys[0]
    tiny = 1e-12 * max(1.0, abs(m))

    if vals[-1] >= m - tiny and (vals[-1] - vals[-2]) / dy > search.boundary_slope_tol:
        return math.inf, DIVERGENT
    if vals[0] >= m - tiny and (vals[0] - vals[1]) / dy > search.boundary_slope_tol:
        return math.inf, DIVERGENT

    def payoff(y):
        return wf * float(loss.f(y)) + wg * float(loss.g(y))

    lo_b = ys[max(m_idx - 1, 0)]
    hi_b = ys[min(m_idx + 1, len(ys) - 1)]
    y_ref, v_ref = _golden_max(payoff, lo_b, hi_b, search.refine_xtol)
    value = max(float(m), v_ref)

    # argmax hull: grid points within tolerance of the refined maximum
    thresh = value - search.plateau_tol
    near = np.flatnonzero(vals >= thresh)
    if len(near) > 1:
        first, last = int(near[0]), int(near[-1])
        lo = ys[first]
        if first > 0:
            lo = _bisect_edge(lambda y: payoff(y) >= thresh, ys[first], ys[first - 1])
        hi = ys[last]
        if last < len(ys) - 1:
            hi = _bisect_edge(lambda y: payoff(y) >= thresh, ys[last], ys[last + 1])
        return value, Argmax("interval", float(lo), float(hi))
    return value, Argmax("point", float(y_ref), float(y_ref))


@dataclass(frozen=True)
class PsiProfile:
    """Optimal-payoff values over a gamma grid, with argmax descriptors."""

    gammas: np.ndarray
    psi: np.ndarray
    argmax: tuple
    search_bound: float

    @classmethod
    def compute(cls, loss, gammas=None, search=None):
        loss.require_pointwise("PsiProfile")
        search = search or DEFAULT_SEARCH
        if gammas is None:
            gammas = np.linspace(0.0, 1.0, 1001)
        gammas = np.asarray(gammas, dtype=np.float64)
        ys = np.linspace(-search.y_max, search.y_max, search.grid_points)
        fv = np.asarray(loss.f(ys), dtype=np.float64)
        gv = np.asarray(loss.g(ys), dtype=np.float64)
        psi = np.empty_like(gammas)
        arg = []
        for i, gm in enumerate(gammas):
            value, a = _psi_from_values(loss, float(gm), ys, fv, gv, search)
            psi[i] = value
            arg.append(a)
        return cls(gammas=gammas, psi=psi, argmax=tuple(arg), search_bound=search.y_max)

    def at_half(self):
        idx = int(np.argmin(np.abs(self.gammas - 0.5)))
        if abs(self.gammas[idx] - 0.5) > 1e-12:
            raise ValueError("profile grid does not contain gamma = 1/2")
        return idx, float(self.psi[idx])


def export_landscape(loss, gamma_grid, y_grid, out, search=None):
    """Write payoff-surface and profile CSVs.

    ``out`` is the surface CSV path (header ``gamma,y,psi_big``); the profile
    companion (header ``gamma,psi,argmax_lo,argmax_hi``) is written next to it
    with a ``_psi`` suffix. Divergent profile values are encoded as the
    literal string ``inf`` with empty argmax cells. Returns both paths.
    """
    loss.require_pointwise("export_landscape")
    gamma_grid = np.asarray(gamma_grid, dtype=np.float64)
    y_grid = np.asarray(y_grid, dtype=np.float64)
    for name, grid in (("gamma_grid", gamma_grid), ("y_grid", y_grid)):
        if grid.size == 0:
            raise ValueError(f"{name} is empty")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise ValueError(f"{name} must be strictly increasing")

    stem, ext = os.path.splitext(str(out))
    psi_path = stem + "_psi" + (ext or ".csv")
    fv = np.asarray(loss.f(y_grid), dtype=np.float64)
    gv = np.asarray(loss.g(y_grid), dtype=np.float64)
    try:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "y", "psi_big"])
            for gm in gamma_grid:
                wf, wg = _weights(loss, float(gm))
                vals = wf * fv + wg * gv
                for y, v in zip(y_grid, vals):
                    w.writerow([repr(float(gm)), repr(float(y)), repr(float(v))])
        with open(psi_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "psi", "argmax_lo", "argmax_hi"])
            for gm in gamma_grid:
                value, arg = psi_small(loss, float(gm), search)
                if arg.is_divergent:
                    w.writerow([repr(float(gm)), "inf", "", ""])
                else:
                    w.writerow([repr(float(gm)), repr(value), repr(arg.lo), repr(arg.hi)])
    except OSError as e:
        raise IoError(f"cannot write landscape export: {e}") from e
    return str(out), psi_path
