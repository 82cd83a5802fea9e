"""Large-deviations decay rates of the three method groups.

All rates are per-locus exponents: P[method fails with L loci] ~ exp(-L * alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cache
from typing import Callable, Optional

import numpy as np
from scipy.optimize import bisect, brentq

from .estimators import MethodGroup


class SolverError(RuntimeError):
    pass


class ChernoffPreconditionError(ValueError):
    pass


class Regime(str, Enum):
    SMALL = "small"
    LARGE = "large"


# Above this branch length the STEAC tilt is solved in sigma = (1 - s) t.
LARGE_T_SWITCH = 30.0
S_UPPER_CAP = 1.0 - 1e-14
_XTOL = 1e-15
_RTOL = 4.0 * np.finfo(float).eps
_MAX_ITER = 500


@dataclass(frozen=True)
class MgfSpec:
    """MGF of a per-locus increment Y and the threshold y of the failure event."""

    phi: Callable[[float], float]
    phi_prime: Callable[[float], float]
    domain: tuple[float, float]
    y: float
    log_phi: Optional[Callable[[float], float]] = None
    dlog_phi: Optional[Callable[[float], float]] = None

    def log_mgf(self, s: float) -> float:
        if self.log_phi is not None:
            return self.log_phi(s)
        return math.log(self.phi(s))

    def tilt(self, s: float) -> float:
        if self.dlog_phi is not None:
            return self.dlog_phi(s)
        return self.phi_prime(s) / self.phi(s)

    @property
    def mean(self) -> float:
        return self.tilt(0.0)


@dataclass(frozen=True)
class RatePoint:
    t: float
    alpha_glass: float
    alpha_rstar: float
    alpha_steac: float
    s_star_rstar: float
    s_star_steac: float


@dataclass(frozen=True)
class AsymptoticConstants:
    sigma_star: float
    beta_infinity_steac: float
    beta_infinity_rstar: float

    @classmethod
    def compute(cls) -> AsymptoticConstants:
        sigma = solve_sigma_star()
        return cls(
            sigma_star=sigma,
            beta_infinity_steac=sigma - math.log(2.0),
            beta_infinity_rstar=0.5 * math.log(4.0 / 3.0),
        )


def _check_t(t: float) -> None:
    if not (t >= 0.0):
        raise ValueError(f"Branch length must be >= 0, got {t}")


def alpha_glass(t: float) -> float:
    _check_t(t)
    return float(t)


def _rstar_parts(t: float) -> tuple[float, float]:
    """(p + W_p, W_p) for branch length t."""
    w = math.exp(-t) / 3.0
    return (1.0 - 2.0 * math.expm1(-t)) / 3.0, w


def alpha_rstar(t: float) -> tuple[float, float]:
    _check_t(t)
    if t == 0.0:
        return 0.0, 0.0
    q, w = _rstar_parts(t)
    rate = -math.log(2.0 * math.sqrt(w * q) + w)
    s_star = 0.5 * math.log(q / w)
    return rate, s_star


def rstar_mgf(t: float) -> MgfSpec:
    """Y = 2*[failed, AC|B] + [failed, BC|A]; failure when the sum exceeds L."""
    _check_t(t)
    q, w = _rstar_parts(t)
    return MgfSpec(
        phi=lambda s: q + w * (math.exp(s) + math.exp(2.0 * s)),
        phi_prime=lambda s: w * (math.exp(s) + 2.0 * math.exp(2.0 * s)),
        domain=(-math.inf, math.inf),
        y=1.0,
    )


def _steac_log_phi(s: float, t: float, one_minus_s: Optional[float] = None) -> float:
    gap = (1.0 - s) if one_minus_s is None else one_minus_s
    return (
        -s * t
        + math.log1p(-s * s * math.exp(-gap * t) / 3.0)
        - (math.log(gap * (1.0 + s)) if gap < 0.5 else math.log1p(-s * s))
    )


def _steac_dlog_phi(s: float, t: float) -> float:
    gap = 1.0 - s
    decay = math.exp(-gap * t)
    numerator = 6.0 * s - 3.0 * t * gap * (1.0 + s) - 2.0 * s * decay
    return numerator / (gap * (1.0 + s) * (3.0 - s * s * decay))


def steac_mgf(t: float) -> MgfSpec:
    """Y = d_AB - d_AC per locus; failure when the sum over loci is positive."""
    _check_t(t)
    return MgfSpec(
        phi=lambda s: math.exp(_steac_log_phi(s, t)),
        phi_prime=lambda s: math.exp(_steac_log_phi(s, t)) * _steac_dlog_phi(s, t),
        domain=(-1.0, 1.0),
        y=0.0,
        log_phi=lambda s: _steac_log_phi(s, t),
        dlog_phi=lambda s: _steac_dlog_phi(s, t),
    )


def steac_fixed_point_map(t: float, s: float) -> float:
    return 0.5 * (6.0 * s - 3.0 * t * (1.0 - s * s)) * math.exp((1.0 - s) * t)


def _sigma_g(sigma: float) -> float:
    return 3.0 * math.exp(sigma) - 1.0 - 3.0 * sigma * math.exp(sigma)


def sigma_map(sigma: float) -> float:
    """u = 1/t as a function of sigma = (1 - s) t along the STEAC tilt curve."""
    g = _sigma_g(sigma)
    return g / (sigma * (g + 1.5 * sigma * math.exp(sigma)))


@cache
def solve_sigma_star() -> float:
    # G(0) = 2 > 0 and G(2) = -3e^2 - 1 < 0; G is strictly decreasing on (0, inf).
    return float(bisect(_sigma_g, 0.0, 2.0, xtol=1e-13, maxiter=_MAX_ITER))


def _root(fn: Callable[[float], float], lo: float, hi: float, what: str) -> float:
    f_lo, f_hi = fn(lo), fn(hi)
    if not (f_lo < 0.0 < f_hi):
        raise SolverError(f"{what}: invalid bracket [{lo}, {hi}] with values {f_lo}, {f_hi}")
    return float(brentq(fn, lo, hi, xtol=_XTOL, rtol=_RTOL, maxiter=_MAX_ITER))


def _steac_tilt(t: float) -> tuple[float, float]:
    """(s*, 1 - s*) for t > 0."""
    if t <= LARGE_T_SWITCH:
        s = _root(lambda x: steac_fixed_point_map(t, x) - x, 0.0, S_UPPER_CAP, "STEAC tilt")
        return s, 1.0 - s
    u = 1.0 / t
    sigma_star = solve_sigma_star()
    sigma = _root(
        lambda x: -(_sigma_g(x) - u * x * (_sigma_g(x) + 1.5 * x * math.exp(x))),
        0.0,
        sigma_star,
        "STEAC sigma",
    )
    gap = sigma / t
    return 1.0 - gap, gap


def alpha_steac(t: float) -> tuple[float, float]:
    _check_t(t)
    if t == 0.0:
        return 0.0, 0.0
    s, gap = _steac_tilt(t)
    return -_steac_log_phi(s, t, gap), s


def alpha_steac_direct(t: float) -> float:
    """STEAC rate from the s-coordinate solve regardless of t."""
    _check_t(t)
    if t == 0.0:
        return 0.0
    s = _root(lambda x: steac_fixed_point_map(t, x) - x, 0.0, S_UPPER_CAP, "STEAC tilt")
    return -_steac_log_phi(s, t)


def chernoff_rate(m: MgfSpec) -> tuple[float, float]:
    """Rate y*s - ln phi(s) at the tilt solving phi'(s)/phi(s) = y, s > 0."""
    lo, hi = m.domain
    if not (lo < 0.0 < hi):
        raise ChernoffPreconditionError(f"MGF domain {m.domain} does not contain 0")
    mean = m.mean
    if not (m.y > mean):
        raise ChernoffPreconditionError(f"Threshold {m.y} does not exceed the mean {mean}")

    def excess(s: float) -> float:
        return m.tilt(s) - m.y

    if math.isfinite(hi):
        upper = hi - 1e-14 * max(1.0, abs(hi))
    else:
        upper = 1.0
        try:
            while excess(upper) <= 0.0 and upper < 512.0:
                upper *= 2.0
        except OverflowError as exc:
            raise ChernoffPreconditionError("MGF overflowed before bracketing the tilt") from exc
    try:
        if excess(upper) <= 0.0:
            raise ChernoffPreconditionError(
                f"No tilt in (0, {upper}) reaches y = {m.y}; point mass or light tail"
            )
        s_star = _root(excess, 0.0, upper, "Chernoff tilt")
    except OverflowError as exc:
        raise ChernoffPreconditionError("MGF overflowed inside the bracket") from exc
    return m.y * s_star - m.log_mgf(s_star), s_star


def asymptote(method_group: MethodGroup, t: float, regime: Regime) -> float:
    _check_t(t)
    group = MethodGroup(method_group)
    regime = Regime(regime)
    if group is MethodGroup.GLASS:
        return float(t)
    if group is MethodGroup.RSTAR:
        if regime is Regime.SMALL:
            return 0.75 * t * t
        return 0.5 * t - 0.5 * math.log(4.0 / 3.0)
    if regime is Regime.SMALL:
        return 0.375 * t * t
    if t == 0.0:
        return math.nan
    return t - math.log(t) - (solve_sigma_star() - math.log(2.0))


def beta_correction(method_group: MethodGroup, t: float) -> float:
    """Gap between the leading large-t growth and the exact rate."""
    _check_t(t)
    group = MethodGroup(method_group)
    if group is MethodGroup.GLASS:
        return 0.0
    if group is MethodGroup.RSTAR:
        return 0.5 * t - alpha_rstar(t)[0]
    if t == 0.0:
        raise ValueError("STEAC large-t correction needs t > 0")
    return t - math.log(t) - alpha_steac(t)[0]


def rate_point(t: float) -> RatePoint:
    rstar_rate, rstar_s = alpha_rstar(t)
    steac_rate, steac_s = alpha_steac(t)
    return RatePoint(
        t=float(t),
        alpha_glass=alpha_glass(t),
        alpha_rstar=rstar_rate,
        alpha_steac=steac_rate,
        s_star_rstar=rstar_s,
        s_star_steac=steac_s,
    )


def rate_grid(t_min: float, t_max: float, steps: int) -> np.ndarray:
    if not (0.0 <= t_min < t_max):
        raise ValueError(f"Need 0 <= t_min < t_max, got {t_min}, {t_max}")
    if steps < 2:
        raise ValueError(f"Need at least 2 grid points, got {steps}")
    return np.linspace(t_min, t_max, steps)


def rate_curve(t_min: float, t_max: float, steps: int) -> list[RatePoint]:
    return [rate_point(float(t)) for t in rate_grid(t_min, t_max, steps)]


def find_crossover(t_min: float = 0.5, t_max: float = 5.0, steps: int = 64) -> float:
    """Branch length where the R* and STEAC rates cross."""

    def gap(t: float) -> float:
        return alpha_rstar(t)[0] - alpha_steac(t)[0]

    grid = rate_grid(t_min, t_max, steps)
    values = [gap(float(t)) for t in grid]
    for (a, fa), (b, fb) in zip(zip(grid, values), zip(grid[1:], values[1:])):
        if fa > 0.0 >= fb:
            if fb == 0.0:
                return float(b)
            return float(brentq(gap, float(a), float(b), xtol=1e-13, maxiter=_MAX_ITER))
    raise SolverError(f"No R*/STEAC crossover in [{t_min}, {t_max}]")


RATE_CURVE_HEADER = (
    "t",
    "alpha_glass",
    "alpha_rstar",
    "alpha_steac",
    "s_star_rstar",
    "s_star_steac",
    "asym_rstar_small",
    "asym_rstar_large",
    "asym_steac_small",
    "asym_steac_large",
)


def rate_point_row(point: RatePoint) -> list[float]:
    t = point.t
    return [
        t,
        point.alpha_glass,
        point.alpha_rstar,
        point.alpha_steac,
        point.s_star_rstar,
        point.s_star_steac,
        asymptote(MethodGroup.RSTAR, t, Regime.SMALL),
        asymptote(MethodGroup.RSTAR, t, Regime.LARGE),
        asymptote(MethodGroup.STEAC, t, Regime.SMALL),
        asymptote(MethodGroup.STEAC, t, Regime.LARGE),
    ]


def alpha(method_group: MethodGroup, t: float) -> float:
    group = MethodGroup(method_group)
    if group is MethodGroup.GLASS:
        return alpha_glass(t)
    if group is MethodGroup.RSTAR:
        return alpha_rstar(t)[0]
    return alpha_steac(t)[0]
