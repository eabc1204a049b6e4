"""Explicit potential modifications: tangent-line regularization at the
origin, attraction-tail strengthening, repulsion-tail capping.

All modified potentials keep closed-form values and derivatives (piecewise
power law / affine), so splice continuity and ordering bounds hold to
machine precision.  Repulsions are never regularized at the origin: the
strong-force barrier must survive.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .potentials import (
    FamilyError,
    PotentialFamily,
    PowerLaw,
    TabulatedPotential,
    family_from_dict,
    family_to_dict,
)


class SmoothingParameterError(ValueError):
    """Modification parameters that would break a splice or a bound."""


def _as_array(s):
    return np.asarray(s, dtype=float)


def _piecewise(s, mask, left, right):
    """Evaluate callables on the two sides of a mask without touching the
    other side's (possibly out-of-domain) points."""
    s = _as_array(s)
    scalar = s.ndim == 0
    s = np.atleast_1d(s)
    out = np.empty_like(s)
    m = np.asarray(mask(s))
    if m.any():
        out[m] = left(s[m])
    if (~m).any():
        out[~m] = right(s[~m])
    return out[0] if scalar else out


@dataclass(frozen=True)
class SmoothedPotential:
    """Tangent-line regularization below the cut radius.

    Below ``epsilon`` the potential is the line touching the base at
    ``epsilon``; above it is the base itself.  The result is C^1 with a
    Lipschitz derivative bounded away from zero on (-inf, epsilon], and is
    convex whenever the base is.
    """

    base: PowerLaw
    epsilon: float

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise SmoothingParameterError(f"cut radius must be positive, got {self.epsilon}")
        if not (float(self.base.deriv(self.epsilon)) < 0):
            raise SmoothingParameterError("base potential must be decreasing at the cut")

    @property
    def f_eps(self) -> float:
        return float(self.base.value(self.epsilon))

    @property
    def slope(self) -> float:
        return float(self.base.deriv(self.epsilon))

    @property
    def nu(self) -> float:
        """Uniform force bound on the regularized region."""
        return -self.slope

    def value(self, s):
        f_eps, slope, eps = self.f_eps, self.slope, self.epsilon
        return _piecewise(s, lambda x: x <= eps,
                          lambda x: f_eps + slope * (x - eps),
                          self.base.value)

    def deriv(self, s):
        slope, eps = self.slope, self.epsilon
        return _piecewise(s, lambda x: x <= eps,
                          lambda x: np.full_like(x, slope),
                          self.base.deriv)

    def deriv2(self, s):
        eps = self.epsilon
        return _piecewise(s, lambda x: x <= eps,
                          lambda x: np.zeros_like(x),
                          self.base.deriv2)

    @property
    def singular_at_zero(self) -> bool:
        return False

    kind = "tabulated-smooth"


def smooth_tangent(base: PowerLaw, epsilon: float) -> SmoothedPotential:
    """Replace the base below ``epsilon`` by its tangent line at ``epsilon``."""
    return SmoothedPotential(base=base, epsilon=epsilon)


def _power_tail(base) -> PowerLaw:
    """The power-law form governing a potential's behaviour at s >= 1."""
    if isinstance(base, PowerLaw):
        return base
    if isinstance(base, SmoothedPotential):
        if base.epsilon >= 1.0:
            raise SmoothingParameterError(
                "tail modification expects the tangent cut below s=1")
        return base.base
    raise SmoothingParameterError(
        f"tail modification needs a power-law tail, got {type(base).__name__}")


@dataclass(frozen=True)
class TailDampedAttraction:
    """Attraction with a derivative-magnitude floor delta * s**(-gamma-1)
    glued in beyond s=1; value recovered by integrating the magnitude from
    infinity, so the result still vanishes at infinity and dominates the
    base pointwise by at most delta/gamma.
    """

    base: SmoothedPotential
    delta: float
    gamma: float

    mode = "attraction-floor"

    def __post_init__(self):
        if not (self.delta > 0 and self.gamma > 0):
            raise SmoothingParameterError("delta and gamma must be positive")
        if not (self.delta < -float(self.base.deriv(1.0))):
            raise SmoothingParameterError(
                f"delta={self.delta} must stay below the base force at s=1 "
                f"({-float(self.base.deriv(1.0))}) to keep the splice continuous")

    @property
    def s_star(self) -> float:
        """Where the floor branch takes over (inf if it never does)."""
        tail = _power_tail(self.base)
        p, a = tail.p, tail.a
        if self.gamma >= p:
            return math.inf
        return (p * a / self.delta) ** (1.0 / (p - self.gamma))

    @property
    def offset(self) -> float:
        """Constant lift of the value below the takeover point."""
        s_star = self.s_star
        if not math.isfinite(s_star):
            return 0.0
        return self.delta / (self.gamma * s_star ** self.gamma) - float(
            self.base.value(s_star))

    def magnitude(self, s):
        """Derivative magnitude u(s): base force below 1, pointwise max of
        base force and the floor beyond."""
        s = _as_array(s)
        base_mag = -np.asarray(self.base.deriv(s), dtype=float)
        floor = np.where(s >= 1.0, self.delta * np.maximum(s, 1.0) ** (-self.gamma - 1.0), 0.0)
        return np.maximum(base_mag, floor)

    def value(self, s):
        s_star, off = self.s_star, self.offset
        d, g = self.delta, self.gamma
        return _piecewise(s, lambda x: x >= s_star,
                          lambda x: d / (g * x ** g),
                          lambda x: np.asarray(self.base.value(x)) + off)

    def deriv(self, s):
        s_star = self.s_star
        d, g = self.delta, self.gamma
        return _piecewise(s, lambda x: x >= s_star,
                          lambda x: -d * x ** (-g - 1.0),
                          self.base.deriv)

    def deriv2(self, s):
        s_star = self.s_star
        d, g = self.delta, self.gamma
        return _piecewise(s, lambda x: x >= s_star,
                          lambda x: d * (g + 1.0) * x ** (-g - 2.0),
                          self.base.deriv2)

    @property
    def singular_at_zero(self) -> bool:
        return self.base.singular_at_zero

    kind = "tabulated-smooth"


def dampen_attraction_tail(base: SmoothedPotential, delta: float, gamma: float,
                           alpha: float | None = None) -> TailDampedAttraction:
    """Strengthen the attraction tail so it decays no faster than
    delta * s**(-gamma); gamma must stay below the homogeneity exponent."""
    if alpha is not None and not (0.0 < gamma < alpha):
        raise SmoothingParameterError(f"gamma={gamma} must lie in (0, {alpha})")
    return TailDampedAttraction(base=base, delta=delta, gamma=gamma)


def repulsion_tail_coefficient(base, alpha: float, grid=None) -> tuple[float, bool]:
    """liminf of -s**(alpha+1) g'(s); closed form for power laws, a flagged
    last-decade estimate for tabulated potentials."""
    if isinstance(base, PowerLaw):
        ell = base.p * base.a if base.p == alpha else 0.0
        return ell, False
    if isinstance(base, TabulatedPotential):
        g = np.asarray(base.grid, dtype=float)
        lo = g[-1] / 10.0
        probe = g[g >= lo]
        ell = float(np.max(-probe ** (alpha + 1.0) * np.asarray(base.deriv(probe))))
        return ell, True
    raise SmoothingParameterError(
        f"cannot estimate tail coefficient for {type(base).__name__}")


@dataclass(frozen=True)
class CappedRepulsion:
    """Repulsion with derivative magnitude capped by (ell+1) * s**(-alpha-1)
    beyond the switch radius; untouched (still singular) near the origin."""

    base: PowerLaw
    alpha: float
    s_k: float
    ell: float
    ell_is_estimate: bool = False

    mode = "repulsion-cap"

    @property
    def cap_coefficient(self) -> float:
        return self.ell + 1.0

    def magnitude(self, s):
        s = _as_array(s)
        base_mag = -np.asarray(self.base.deriv(s), dtype=float)
        cap = self.cap_coefficient * np.abs(s) ** (-self.alpha - 1.0)
        return np.where(s >= self.s_k, np.minimum(base_mag, cap), base_mag)

    def _correction(self, s):
        """integral_s^inf of (base magnitude - capped magnitude); zero when
        the cap never binds (always the case for admissible power laws)."""
        return np.zeros_like(_as_array(s))

    def value(self, s):
        return np.asarray(self.base.value(s)) - self._correction(s)

    def deriv(self, s):
        return -self.magnitude(s)

    def deriv2(self, s):
        s = _as_array(s)
        base_mag = -np.asarray(self.base.deriv(s), dtype=float)
        cap = self.cap_coefficient * np.abs(s) ** (-self.alpha - 1.0)
        capped = (s >= self.s_k) & (cap < base_mag)
        return np.where(capped,
                        self.cap_coefficient * (self.alpha + 1.0)
                        * np.abs(s) ** (-self.alpha - 2.0),
                        np.asarray(self.base.deriv2(s), dtype=float))

    @property
    def singular_at_zero(self) -> bool:
        return self.base.singular_at_zero

    kind = "power-law"


def cap_repulsion_tail(base: PowerLaw, target_neighborhood: float,
                       alpha: float) -> CappedRepulsion:
    """Cap the repulsion force beyond the smallest admissible switch radius
    at or past ``target_neighborhood``."""
    if target_neighborhood <= 0:
        raise SmoothingParameterError("target neighbourhood must be positive")
    ell, est = repulsion_tail_coefficient(base, alpha)
    s_k = max(target_neighborhood, 1.0)
    if isinstance(base, PowerLaw) and base.p > alpha:
        # admissibility: the base force must already sit below the cap there
        s_k = max(s_k, (base.p * base.a / (ell + 1.0)) ** (1.0 / (base.p - alpha)))
    return CappedRepulsion(base=base, alpha=alpha, s_k=s_k, ell=ell,
                           ell_is_estimate=est)


# ---------------------------------------------------------------------------
# Family-level application and serialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothingParams:
    """Family-level modification knobs.

    ``epsilon`` cuts every attraction with its tangent line; ``delta`` and
    ``gamma`` (defaulted from the family when requested) strengthen the
    attraction tails; ``s_k`` caps the repulsion tails beyond that radius.
    Unset fields leave the corresponding modification off.
    """

    epsilon: float | None = None
    delta: float | None = None
    gamma: float | None = None
    s_k: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in
                (("epsilon", self.epsilon), ("delta", self.delta),
                 ("gamma", self.gamma), ("s_k", self.s_k))
                if v is not None}

    @staticmethod
    def from_dict(data: dict) -> "SmoothingParams":
        return SmoothingParams(
            epsilon=data.get("epsilon"), delta=data.get("delta"),
            gamma=data.get("gamma"), s_k=data.get("s_k"))


def default_tail_params(family: PotentialFamily, epsilon: float) -> SmoothingParams:
    """delta/gamma defaults: gamma = alpha/2, delta = min(1e-3, |f'(1)|/2)."""
    force_at_one = min(-float(smooth_tangent(fi, epsilon).deriv(1.0))
                       if isinstance(fi, PowerLaw) else -float(fi.deriv(1.0))
                       for fi in family.f)
    return SmoothingParams(epsilon=epsilon, gamma=family.alpha / 2.0,
                           delta=min(1e-3, force_at_one / 2.0))


def apply_smoothing(family: PotentialFamily, params: SmoothingParams | None) -> PotentialFamily:
    """Produce the effective family: regularized attractions, optionally
    tail-strengthened, and optionally tail-capped repulsions."""
    if params is None:
        return family
    f = []
    for fi in family.f:
        eff = fi
        if params.epsilon is not None and isinstance(fi, PowerLaw):
            eff = smooth_tangent(fi, params.epsilon)
        if params.delta is not None and params.gamma is not None:
            if not isinstance(eff, SmoothedPotential):
                raise SmoothingParameterError(
                    "attraction tail damping requires a tangent-smoothed base")
            eff = dampen_attraction_tail(eff, params.delta, params.gamma, family.alpha)
        f.append(eff)
    g = {}
    for pair in family.pairs():
        gij = family.g[pair]
        if params.s_k is not None and isinstance(gij, PowerLaw):
            g[pair] = cap_repulsion_tail(gij, params.s_k, family.alpha)
        else:
            g[pair] = gij
    return family.with_potentials(f, g)


def family_with_smoothing_to_json(family: PotentialFamily,
                                  smoothing: SmoothingParams | None) -> str:
    data = family_to_dict(family)
    if smoothing is not None and smoothing.to_dict():
        data["smoothing"] = smoothing.to_dict()
    return json.dumps(data, sort_keys=True)


def family_with_smoothing_from_json(text: str) -> tuple[PotentialFamily, SmoothingParams | None]:
    data = json.loads(text)
    if not isinstance(data, dict):
        raise FamilyError("family JSON must be an object")
    smoothing = None
    if "smoothing" in data:
        smoothing = SmoothingParams.from_dict(data["smoothing"])
        data = {k: v for k, v in data.items() if k != "smoothing"}
    return family_from_dict(data), smoothing
