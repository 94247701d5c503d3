"""Catalog of adversarial-loss component function triples.

Each entry stores the discriminator activations for real-pair scores (``f``)
and fake-pair scores (``g``), the generator activation (``h``), their first
and second derivatives, and the kink locations where the derivatives are only
one-sided. The formula callables accept python floats, numpy arrays and
autodiff tensors alike, so the same definitions drive both the landscape
analysis and the training graphs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad


class NotInCatalog(KeyError):
    """Requested loss name is not a catalog entry."""


class InvalidWeight(ValueError):
    """Real-term weight must be strictly positive."""


class Unsupported(ValueError):
    """Operation requires a pointwise loss (f, g defined per score)."""


def _is_tensor(x):
    return isinstance(x, ad.Tensor)


def _arr(x):
    return np.asarray(x, dtype=np.float64)


def _softplus(x):
    return ad.softplus(x) if _is_tensor(x) else np.logaddexp(0.0, x)


def _sigmoid(x):
    x = _arr(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _min0(x):
    # min(0, x) == -relu(-x)
    if _is_tensor(x):
        return ad.scale(ad.relu(ad.scale(x, -1.0)), -1.0)
    return np.minimum(0.0, x)


def _absval(x):
    if _is_tensor(x):
        return ad.add(ad.relu(x), ad.relu(ad.scale(x, -1.0)))
    return np.abs(_arr(x))


def _neg(x):
    return ad.scale(x, -1.0) if _is_tensor(x) else -_arr(x)


@dataclass(frozen=True)
class ComponentLoss:
    """A named (f, g, h) triple with derivatives.

    ``pointwise`` is False for relativistic variants, which couple a batch and
    carry no per-score component functions (their formula fields are None).
    ``epsilon`` weights the real term of the discriminator objective; 1 is the
    undeformed loss. ``kinks`` lists the points where f or g is not
    differentiable; derivative callables return the right-hand limit there.
    """

    name: str
    f: object = None
    g: object = None
    h: object = None
    df: object = None
    dg: object = None
    dh: object = None
    d2f: object = None
    d2g: object = None
    pointwise: bool = True
    epsilon: float = 1.0
    kinks: tuple = ()

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidWeight(f"epsilon must be > 0, got {self.epsilon}")

    def require_pointwise(self, what):
        if not self.pointwise:
            raise Unsupported(f"{what} needs a pointwise loss, got {self.name!r}")
        return self


@dataclass(frozen=True)
class DerivativeSample:
    f1: float
    g1: float
    f2: float
    g2: float
    kink: bool


KINK_ATOL = 1e-9


def eval_derivatives(loss, y):
    """(f', g', f'', g'') at y, flagging kink points instead of erroring.

    At a kink the returned values are the right-hand limits and ``kink`` is
    True, meaning "no trustworthy derivative information here".
    """
    loss.require_pointwise("eval_derivatives")
    y = float(y)
    kink = any(abs(y - k) <= KINK_ATOL for k in loss.kinks)
    return DerivativeSample(float(loss.df(y)), float(loss.dg(y)),
                            float(loss.d2f(y)), float(loss.d2g(y)), kink)


class GeneratorVariant(Enum):
    """Generator activation families: minimax h=g, nonsaturating, linear."""

    MINIMAX = "minimax"
    NONSATURATING = "nonsaturating"
    LINEAR = "linear"


def with_generator_variant(loss, variant):
    """Replace h (and h') of a pointwise loss by the named variant."""
    loss.require_pointwise("with_generator_variant")
    variant = GeneratorVariant(variant)
    if variant is GeneratorVariant.MINIMAX:
        h, dh = loss.g, loss.dg
    elif variant is GeneratorVariant.NONSATURATING:
        h, dh = _h_nonsat, _dh_nonsat
    else:
        h, dh = _neg, _dconst(-1.0)
    return dataclasses.replace(loss, h=h, dh=dh)


def epsilon_weighted(loss, eps):
    """Copy of ``loss`` whose real term is weighted by ``eps`` downstream."""
    if not eps > 0:
        raise InvalidWeight(f"epsilon must be > 0, got {eps}")
    loss.require_pointwise("epsilon_weighted")
    return dataclasses.replace(loss, epsilon=float(eps))


# ---------------------------------------------------------------------------
# formulas

def _zero(y):
    return np.zeros_like(_arr(y))


def _dconst(c):
    return lambda y: np.full_like(_arr(y), c)


def _h_nonsat(y):
    return _softplus(_neg(y))


def _dh_nonsat(y):
    return -_sigmoid(-_arr(y))


def _classic_f(y):
    return _neg(_softplus(_neg(y)))


def _classic_g(y):
    return _neg(_softplus(y))


def _classic_d2(y):
    return -_sigmoid(_arr(y)) * _sigmoid(-_arr(y))


def _classic(name, h, dh):
    # f(y) = -log(1 + e^-y), g(y) = -y - log(1 + e^-y) = -log(1 + e^y)
    return ComponentLoss(
        name=name, f=_classic_f, g=_classic_g, h=h,
        df=lambda y: _sigmoid(-_arr(y)), dg=lambda y: -_sigmoid(_arr(y)), dh=dh,
        d2f=_classic_d2, d2g=_classic_d2)


def _hinge_f(y):
    return _min0(y - 1.0)


def _hinge_g(y):
    return _min0(_neg(y) - 1.0)


def _hinge(name, h, dh):
    # f(y) = min(0, y - 1), g(y) = min(0, -y - 1); kinks at +-1
    return ComponentLoss(
        name=name, f=_hinge_f, g=_hinge_g, h=h,
        df=lambda y: np.where(_arr(y) < 1.0, 1.0, 0.0),
        dg=lambda y: np.where(_arr(y) >= -1.0, -1.0, 0.0),
        dh=dh, d2f=_zero, d2g=_zero, kinks=(-1.0, 1.0))


def _build_catalog():
    losses = {}
    losses["classic_minimax"] = _classic(
        "classic_minimax", h=_classic_g, dh=lambda y: -_sigmoid(_arr(y)))
    losses["classic_nonsaturating"] = _classic(
        "classic_nonsaturating", h=_h_nonsat, dh=_dh_nonsat)
    losses["classic_linear"] = _classic("classic_linear", h=_neg, dh=_dconst(-1.0))

    losses["wasserstein"] = ComponentLoss(
        name="wasserstein",
        f=lambda y: y if _is_tensor(y) else _arr(y) + 0.0,
        g=_neg, h=_neg,
        df=_dconst(1.0), dg=_dconst(-1.0), dh=_dconst(-1.0),
        d2f=_zero, d2g=_zero)

    losses["least_squares"] = ComponentLoss(
        name="least_squares",
        f=lambda y: _neg((y - 1.0) * (y - 1.0)),
        g=lambda y: _neg(y * y),
        h=lambda y: (y - 1.0) * (y - 1.0),
        df=lambda y: -2.0 * (_arr(y) - 1.0),
        dg=lambda y: -2.0 * _arr(y),
        dh=lambda y: 2.0 * (_arr(y) - 1.0),
        d2f=_dconst(-2.0), d2g=_dconst(-2.0))

    losses["hinge_minimax"] = _hinge(
        "hinge_minimax", h=_hinge_g, dh=lambda y: np.where(_arr(y) >= -1.0, -1.0, 0.0))
    losses["hinge_nonsaturating"] = _hinge(
        "hinge_nonsaturating", h=_h_nonsat, dh=_dh_nonsat)
    losses["hinge_linear"] = _hinge("hinge_linear", h=_neg, dh=_dconst(-1.0))

    losses["absolute"] = ComponentLoss(
        name="absolute",
        f=lambda y: _neg(_absval(1.0 - y)),
        g=lambda y: _neg(_absval(y)),
        h=lambda y: _absval(1.0 - y),
        df=lambda y: np.where(_arr(y) < 1.0, 1.0, -1.0),
        dg=lambda y: np.where(_arr(y) < 0.0, 1.0, -1.0),
        dh=lambda y: np.where(_arr(y) < 1.0, -1.0, 1.0),
        d2f=_zero, d2g=_zero, kinks=(0.0, 1.0))

    losses["asymmetric"] = ComponentLoss(
        name="asymmetric",
        f=lambda y: _neg(_absval(y)),
        g=_neg, h=_neg,
        df=lambda y: np.where(_arr(y) < 0.0, 1.0, -1.0),
        dg=_dconst(-1.0), dh=_dconst(-1.0),
        d2f=_zero, d2g=_zero, kinks=(0.0,))

    losses["relativistic"] = ComponentLoss(name="relativistic", pointwise=False)
    losses["relativistic_hinge"] = ComponentLoss(name="relativistic_hinge", pointwise=False)
    return losses


CATALOG = _build_catalog()

# convenience aliases for the Table-1 row names
ALIASES = {"classic": "classic_minimax", "hinge": "hinge_linear"}

POINTWISE_NAMES = tuple(n for n, l in CATALOG.items() if l.pointwise)


def get_loss(name):
    """Look up a catalog entry by name (aliases: classic, hinge)."""
    key = ALIASES.get(name, name)
    try:
        return CATALOG[key]
    except KeyError:
        raise NotInCatalog(name) from None
