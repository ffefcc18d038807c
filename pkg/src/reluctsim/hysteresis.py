"""
Classical and generalized Preisach hysteresis with a product-of-Cauchy density.

The irreversible part of the flux density is the classical Preisach output normalized by the mass of the
full Preisach triangle; the reversible part is a single-valued curve with a double-exponential slope.
The memory of the model is the pair of extrema sets, represented here by :class:`ExtremaHistory`.

The functions in this module are pure and evaluate the staircase from scratch; :class:`PreisachTracker`
is the incremental equivalent used wherever many evaluations along a trajectory are needed.
"""

from __future__ import annotations

import copy
import dataclasses
import enum
import functools
import logging
import math
from typing import Sequence

import numpy as np
import numpy.typing as npt

from . import _kernels as K

MU0 = K.MU0

_logger = logging.getLogger(__name__)


class Direction(enum.Enum):
    INCREASING = +1
    DECREASING = -1

    @property
    def sign(self) -> int:
        return self.value

    def flipped(self) -> Direction:
        return Direction.DECREASING if self is Direction.INCREASING else Direction.INCREASING


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input: {v}")


@dataclasses.dataclass(frozen=True)
class CauchyDist:
    location: float
    """[A/m]"""
    scale: float
    """[A/m], positive"""

    def __post_init__(self) -> None:
        _check_finite(self.location, self.scale)
        if not self.scale > 0:
            raise ValueError(f"Cauchy scale must be positive: {self.scale}")


@dataclasses.dataclass(frozen=True)
class PreisachDistribution:
    """Density P(alpha, beta) = f1(h_c) f2(h_m) with h_c = (alpha - beta)/2 and h_m = (alpha + beta)/2."""

    f1: CauchyDist
    f2: CauchyDist

    def __post_init__(self) -> None:
        if self.f2.location != 0:
            raise ValueError(f"mean-field location must be zero for a loop symmetric about the origin: {self.f2}")

    @staticmethod
    def from_params(m_hc: float, s_hc: float, s_hm: float) -> PreisachDistribution:
        return PreisachDistribution(CauchyDist(m_hc, s_hc), CauchyDist(0.0, s_hm))


@dataclasses.dataclass(frozen=True)
class RevParams:
    """
    Reversible permeability mu0 + mu1 exp(-|H|/H1) + mu2 exp(-|H|/H2).
    mu1 and mu2 may be negative as long as the total stays strictly positive for every H.
    """

    mu1: float
    """[H/m]"""
    mu2: float
    """[H/m]"""
    H1: float
    """[A/m]"""
    H2: float
    """[A/m]"""

    def __post_init__(self) -> None:
        _check_finite(self.mu1, self.mu2, self.H1, self.H2)
        if not (self.H1 > 0 and self.H2 > 0):
            raise ValueError(f"H1 and H2 must be positive: {self}")
        lowest = self.min_permeability()
        if not lowest > 0:
            raise ValueError(f"reversible permeability is not strictly positive (minimum {lowest:.6g} H/m): {self}")

    def min_permeability(self) -> float:
        """Minimum over H >= 0, checked at the origin, at infinity and at the interior stationary point if any."""
        candidates = [0.0]
        if self.H1 != self.H2 and self.mu1 * self.mu2 < 0:
            ratio = -(self.mu1 * self.H2) / (self.mu2 * self.H1)
            x = math.log(ratio) / (1.0 / self.H1 - 1.0 / self.H2)
            if x > 0:
                candidates.append(x)
        values = [MU0 + self.mu1 * math.exp(-x / self.H1) + self.mu2 * math.exp(-x / self.H2) for x in candidates]
        return min(values + [MU0])


@dataclasses.dataclass(frozen=True)
class GpmParams:
    rev: RevParams
    dist: PreisachDistribution
    b_irr_sat: float
    """Saturation level of the irreversible part [T]"""
    alpha0: float = 1e4
    """Upper input bound [A/m]"""
    beta0: float = -1e4
    """Lower input bound [A/m]"""

    def __post_init__(self) -> None:
        _check_finite(self.b_irr_sat, self.alpha0, self.beta0)
        if not self.b_irr_sat > 0:
            raise ValueError(f"b_irr_sat must be positive: {self.b_irr_sat}")
        if not self.beta0 < self.alpha0:
            raise ValueError(f"beta0 must be below alpha0: {self.beta0}, {self.alpha0}")

    @functools.cached_property
    def t0(self) -> float:
        """Normalization T(alpha0, beta0), computed once."""
        return triangle_integral(self.alpha0, self.beta0, self.dist)

    @functools.cached_property
    def packed(self) -> npt.NDArray[np.float64]:
        p = _pack(self.dist, self.alpha0, self.beta0)
        p[K.P_T0] = self.t0
        p[K.P_BIRR] = self.b_irr_sat
        p[K.P_MU1] = self.rev.mu1
        p[K.P_H1] = self.rev.H1
        p[K.P_MU2] = self.rev.mu2
        p[K.P_H2] = self.rev.H2
        p.setflags(write=False)
        return p

    @property
    def merge_tolerance(self) -> float:
        return 1e-9 * (self.alpha0 - self.beta0)


TABLE_IV = GpmParams(
    rev=RevParams(mu1=168.8 * MU0, mu2=64.13 * MU0, H1=1262.0, H2=8821.0),
    dist=PreisachDistribution.from_params(m_hc=227.9, s_hc=154.9, s_hm=138.0),
    b_irr_sat=0.8103,
    alpha0=1e4,
    beta0=-1e4,
)
"""Identified parameters of the solenoid valve core, with the +/-10 kA/m demagnetization range as the bounds."""


def _pack(dist: PreisachDistribution, alpha0: float, beta0: float) -> npt.NDArray[np.float64]:
    p = np.zeros(K.N_PARAMS)
    p[K.P_M1] = dist.f1.location
    p[K.P_S1] = dist.f1.scale
    p[K.P_M2] = dist.f2.location
    p[K.P_S2] = dist.f2.scale
    p[K.P_ALPHA0] = alpha0
    p[K.P_BETA0] = beta0
    return p


# ---------------------------------------------------------------------------------------------------------------------
# Extrema history


@dataclasses.dataclass(frozen=True)
class ExtremaHistory:
    """
    Past maxima (strictly decreasing) and minima (strictly increasing), excluding the bounds themselves.
    Equal counts mean the input is increasing; one more maximum than minima means it is decreasing.
    The only element allowed to touch a bound is a lone leading maximum equal to alpha0, which encodes
    the descent from positive saturation.
    """

    maxima: tuple[float, ...] = ()
    minima: tuple[float, ...] = ()
    alpha0: float = 1e4
    beta0: float = -1e4

    def __post_init__(self) -> None:
        object.__setattr__(self, "maxima", tuple(float(x) for x in self.maxima))
        object.__setattr__(self, "minima", tuple(float(x) for x in self.minima))
        a, b = self.maxima, self.minima
        if not self.beta0 < self.alpha0:
            raise ValueError(f"invalid bounds: {self.beta0}, {self.alpha0}")
        if len(b) not in (len(a), len(a) - 1):
            raise ValueError(f"inconsistent extrema counts: {len(a)} maxima, {len(b)} minima")
        if any(x <= y for x, y in zip(a, a[1:])):
            raise ValueError(f"maxima must be strictly decreasing: {a}")
        if any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError(f"minima must be strictly increasing: {b}")
        if a and b and not max(b) < min(a):
            raise ValueError("every maximum must exceed every minimum")
        for k, x in enumerate(a):
            if not (self.beta0 < x < self.alpha0 or (k == 0 and x == self.alpha0)):
                raise ValueError(f"maximum {x} outside ({self.beta0}, {self.alpha0})")
        for x in b:
            if not self.beta0 < x < self.alpha0:
                raise ValueError(f"minimum {x} outside ({self.beta0}, {self.alpha0})")

    @property
    def direction(self) -> Direction:
        """Direction implied by the cardinality convention."""
        return Direction.INCREASING if len(self.minima) == len(self.maxima) else Direction.DECREASING

    @property
    def lower(self) -> float:
        """Innermost minimum, beta0 if none."""
        return self.minima[-1] if self.minima else self.beta0

    @property
    def upper(self) -> float:
        """Innermost maximum, alpha0 if none."""
        return self.maxima[-1] if self.maxima else self.alpha0

    def turning_points(self) -> npt.NDArray[np.float64]:
        """Interleaved [beta0, a1, b1, a2, ...] as used by the staircase sums."""
        pts = [self.beta0]
        for k, x in enumerate(self.maxima):
            pts.append(x)
            if k < len(self.minima):
                pts.append(self.minima[k])
        return np.array(pts, dtype=np.float64)

    @staticmethod
    def from_turning_points(pts: Sequence[float], alpha0: float, beta0: float) -> ExtremaHistory:
        pts = list(pts)
        return ExtremaHistory(maxima=tuple(pts[1::2]), minima=tuple(pts[2::2]), alpha0=alpha0, beta0=beta0)

    def _check(self, direction: Direction) -> None:
        if direction is not self.direction:
            raise ValueError(
                f"{direction.name} input is inconsistent with {len(self.maxima)} maxima and {len(self.minima)} minima"
            )


def history_update(hist: ExtremaHistory, H: float, direction: Direction) -> tuple[ExtremaHistory, list[tuple[float, float]]]:
    """
    Applies the wiping-out rule for the input reaching H in the given direction.
    Returns the reduced history and the removed (maximum, minimum) pairs, innermost first.
    """
    _check_finite(H)
    hist._check(direction)
    maxima = list(hist.maxima)
    minima = list(hist.minima)
    events: list[tuple[float, float]] = []
    if direction is Direction.INCREASING:
        while maxima and H >= maxima[-1]:
            events.append((maxima.pop(), minima.pop()))
    else:
        while minima and H <= minima[-1]:
            events.append((maxima.pop(), minima.pop()))
    if not events:
        return hist, events
    return dataclasses.replace(hist, maxima=tuple(maxima), minima=tuple(minima)), events


def push_extremum(hist: ExtremaHistory, H: float, new_direction: Direction) -> ExtremaHistory:
    """
    Records H as the extremum at which the input turns to ``new_direction``.
    H must lie strictly between the innermost minimum and maximum (run :func:`history_update` first), except at the
    bounds: turning down at or above alpha0 from an empty history, or turning up at or below beta0, resets to the
    corresponding saturated state. A turn within the merge tolerance of the previous extremum cancels it.
    """
    _check_finite(H)
    hist._check(new_direction.flipped())
    tol = 1e-9 * (hist.alpha0 - hist.beta0)
    maxima = list(hist.maxima)
    minima = list(hist.minima)
    if new_direction is Direction.DECREASING:
        if not maxima and H >= hist.alpha0:
            return dataclasses.replace(hist, maxima=(hist.alpha0,), minima=())
        if minima and abs(H - minima[-1]) <= tol:
            minima.pop()
            return dataclasses.replace(hist, maxima=tuple(maxima), minima=tuple(minima))
        if not hist.lower < H < hist.upper:
            raise ValueError(f"extremum {H} outside ({hist.lower}, {hist.upper}); wipe out the history first")
        maxima.append(H)
    else:
        if H <= hist.beta0 and len(maxima) == 1 and not minima:
            return dataclasses.replace(hist, maxima=(), minima=())
        if abs(H - maxima[-1]) <= tol:
            maxima.pop()
            return dataclasses.replace(hist, maxima=tuple(maxima), minima=tuple(minima))
        if not hist.lower < H < hist.upper:
            raise ValueError(f"extremum {H} outside ({hist.lower}, {hist.upper}); wipe out the history first")
        minima.append(H)
    return dataclasses.replace(hist, maxima=tuple(maxima), minima=tuple(minima))


def demag_history(n: int, bounds: tuple[float, float] = (-1e4, 1e4)) -> ExtremaHistory:
    """
    Demagnetized state: n interleaved maxima and minima (counting the bounds) converging to zero in equal steps,
    alpha_k = hi - k*step and beta_k = lo + k*step with step = (hi - lo)/(2n). Equal counts, so the input is
    taken as increasing from here.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if n < 1:
        raise ValueError(f"n must be at least 1: {n}")
    if not lo < hi:
        raise ValueError(f"degenerate range: {bounds}")
    step = (hi - lo) / (2 * n)
    maxima = tuple(hi - step * k for k in range(1, n))
    minima = tuple(lo + step * k for k in range(1, n))
    return ExtremaHistory(maxima=maxima, minima=minima, alpha0=hi, beta0=lo)


# ---------------------------------------------------------------------------------------------------------------------
# Classical Preisach model


def cauchy_pdf(x: float, d: CauchyDist) -> float:
    _check_finite(x)
    u = (x - d.location) / d.scale
    return 1.0 / (math.pi * d.scale * (1.0 + u * u))


def cauchy_cdf(x: float, d: CauchyDist) -> float:
    if math.isnan(x):
        raise ValueError("non-finite input: nan")
    return 0.5 + math.atan((x - d.location) / d.scale) / math.pi


def preisach_density(alpha: float, beta: float, dist: PreisachDistribution) -> float:
    _check_finite(alpha, beta)
    if alpha < beta:
        raise ValueError(f"alpha must not be below beta: {alpha} < {beta}")
    return cauchy_pdf(0.5 * (alpha - beta), dist.f1) * cauchy_pdf(0.5 * (alpha + beta), dist.f2)


class QuadratureError(RuntimeError):
    pass


def triangle_integral(alpha_i: float, beta_j: float, dist: PreisachDistribution) -> float:
    """
    Preisach mass of the triangle with vertices (beta_j, alpha_i), (alpha_i, alpha_i), (beta_j, beta_j),
    evaluated as a single adaptive Gauss-Kronrod integral over the coercive coordinate.
    """
    _check_finite(alpha_i, beta_j)
    if alpha_i < beta_j:
        raise ValueError(f"alpha must not be below beta: {alpha_i} < {beta_j}")
    value, err, status = K.triangle(float(alpha_i), float(beta_j), _pack(dist, 0.0, 0.0))
    if status != 0:
        raise QuadratureError(f"T({alpha_i}, {beta_j}) did not converge: value={value}, error estimate={err}")
    return value


def _staircase(hist: ExtremaHistory, dist: PreisachDistribution, direction: Direction, H: float):
    """Wipes the history at H, then returns (packed params, turning points, prefix sums, npts)."""
    hist, _ = history_update(hist, H, direction)
    p = _pack(dist, hist.alpha0, hist.beta0)
    p[K.P_T0] = K.triangle_value(hist.alpha0, hist.beta0, p)
    pts = hist.turning_points()
    cum = np.empty_like(pts)
    K.build_prefix(pts, pts.size, cum, p)
    return hist, p, pts, cum


def cpm_output(H: float, hist: ExtremaHistory, direction: Direction, dist: PreisachDistribution) -> float:
    """
    Classical Preisach output for input H reached monotonically in ``direction`` from the state ``hist``.
    Loops closed on the way to H are wiped out before the staircase is summed.
    """
    _check_finite(H)
    hist._check(direction)
    if not hist.beta0 <= H <= hist.alpha0:
        raise ValueError(f"H={H} outside [{hist.beta0}, {hist.alpha0}]")
    hist, p, pts, cum = _staircase(hist, dist, direction, H)
    active = K.direct_active(H, pts, pts.size, p)
    return K.cpm_value(pts.size, cum, active)


def b_rev(H: float, rev: RevParams) -> float:
    _check_finite(H)
    a = abs(H)
    return (
        MU0 * H
        + math.copysign(1.0, H) * rev.mu1 * rev.H1 * -math.expm1(-a / rev.H1)
        + math.copysign(1.0, H) * rev.mu2 * rev.H2 * -math.expm1(-a / rev.H2)
    )


def mu_rev(H: float, rev: RevParams) -> float:
    _check_finite(H)
    a = abs(H)
    return MU0 + rev.mu1 * math.exp(-a / rev.H1) + rev.mu2 * math.exp(-a / rev.H2)


def _check_bounds(hist: ExtremaHistory, p: GpmParams) -> None:
    if (hist.alpha0, hist.beta0) != (p.alpha0, p.beta0):
        raise ValueError(f"history bounds ({hist.beta0}, {hist.alpha0}) differ from ({p.beta0}, {p.alpha0})")


def gpm_b(H: float, hist: ExtremaHistory, direction: Direction, p: GpmParams) -> float:
    """
    Flux density [T] of the generalized model. Outside the Preisach bounds the irreversible part stays at
    saturation while the reversible part keeps following H.
    """
    _check_finite(H)
    _check_bounds(hist, p)
    Hc = min(max(H, p.beta0), p.alpha0)
    if Hc != H:
        _logger.debug("H=%g clamped to the Preisach bounds", H)
    return b_rev(H, p.rev) + p.b_irr_sat * cpm_output(Hc, hist, direction, p.dist) / p.t0


def mu_irr(H: float, hist: ExtremaHistory, direction: Direction, p: GpmParams) -> float:
    """Irreversible incremental permeability [H/m]: twice the density integrated along the moving staircase edge."""
    _check_finite(H)
    _check_bounds(hist, p)
    hist._check(direction)
    if not p.beta0 <= H <= p.alpha0:
        return 0.0
    hist, _ = history_update(hist, H, direction)
    increasing = direction is Direction.INCREASING
    anchor = hist.lower if increasing else hist.upper
    return p.b_irr_sat / p.t0 * 2.0 * K.edge(float(H), anchor, increasing, p.packed)


def mu_gpm(H: float, hist: ExtremaHistory, direction: Direction, p: GpmParams) -> float:
    return mu_rev(H, p.rev) + mu_irr(H, hist, direction, p)


def saturation_magnetization(p: GpmParams) -> float:
    """Limit of M = B/mu0 - H for H -> infinity [A/m]."""
    return (p.rev.mu1 * p.rev.H1 + p.rev.mu2 * p.rev.H2 + p.b_irr_sat) / MU0


# ---------------------------------------------------------------------------------------------------------------------
# Incremental evaluation


class PreisachTracker:
    """
    Mutable staircase with cached prefix sums, so that each new input sample costs O(1) amortized.
    One instance belongs to one trajectory; it is not meant to be shared.
    """

    def __init__(self, p: GpmParams, hist: ExtremaHistory, H: float = 0.0, direction: Direction | None = None) -> None:
        _check_bounds(hist, p)
        direction = direction or hist.direction
        hist._check(direction)
        hist, _ = history_update(hist, H, direction)
        self.params = p
        self._p = p.packed
        self._pts = np.empty(hist.turning_points().size + 64)
        self._cum = np.empty_like(self._pts)
        n = hist.turning_points().size
        self._pts[:n] = hist.turning_points()
        self._npts = n
        K.build_prefix(self._pts, n, self._cum, self._p)
        self._H = float(H)
        self._active = K.direct_active(self._H, self._pts, n, self._p)
        self.clamped = 0
        """Number of samples that fell outside the Preisach bounds."""

    def copy(self) -> PreisachTracker:
        other = copy.copy(self)
        other._pts = self._pts.copy()
        other._cum = self._cum.copy()
        return other

    @property
    def H(self) -> float:
        return self._H

    @property
    def direction(self) -> Direction:
        return Direction.INCREASING if self._npts % 2 == 1 else Direction.DECREASING

    @property
    def history(self) -> ExtremaHistory:
        return ExtremaHistory.from_turning_points(self._pts[: self._npts], self.params.alpha0, self.params.beta0)

    def cpm(self) -> float:
        return K.cpm_value(self._npts, self._cum, self._active)

    def b(self) -> float:
        return K.b_rev(self._H, self._p) + self.params.b_irr_sat * self.cpm() / self.params.t0

    def mu(self) -> float:
        H = self._H
        mu = K.mu_rev(H, self._p)
        if self.params.beta0 <= H <= self.params.alpha0:
            increasing = self._npts % 2 == 1
            anchor = self._pts[self._npts - 1]
            mu += self.params.b_irr_sat / self.params.t0 * 2.0 * K.edge(H, anchor, increasing, self._p)
        return mu

    def _reserve(self, extra: int) -> None:
        if self._npts + extra > self._pts.size:
            size = 2 * (self._npts + extra)
            self._pts = np.concatenate([self._pts, np.empty(size - self._pts.size)])
            self._cum = np.concatenate([self._cum, np.empty(size - self._cum.size)])

    def move(self, H: float) -> None:
        """Moves the input to H, reversing at the current value first if H lies in the opposite direction."""
        self._reserve(1)
        self._npts, self._active, self._H, outside = _replay_kernel(
            np.array([float(H)]), self._pts, self._npts, self._cum, self._active, self._H, self._p,
            self.params.merge_tolerance, np.empty(1),
        )
        self.clamped += outside

    def reverse(self) -> None:
        """Turns the input direction at the current value."""
        self._reserve(1)
        self._npts, self._active = K.reverse(
            self._H, self._pts, self._npts, self._cum, self._active, self.params.merge_tolerance, self._p
        )

    def replay(self, H: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Drives the model through the samples of H and returns B at each of them."""
        H = np.ascontiguousarray(H, dtype=np.float64)
        self._reserve(H.size)
        out = np.empty(H.size)
        self._npts, self._active, self._H, outside = _replay_kernel(
            H, self._pts, self._npts, self._cum, self._active, self._H, self._p, self.params.merge_tolerance, out
        )
        self.clamped += outside
        return out


@K.njit
def _replay_kernel(Hs, pts, npts, cum, active, H, p, merge_tol, out):
    outside = 0
    for k in range(Hs.size):
        Hn = Hs[k]
        increasing = npts % 2 == 1
        if (increasing and Hn < H) or ((not increasing) and Hn > H):
            npts, active = K.reverse(H, pts, npts, cum, active, merge_tol, p)
            increasing = not increasing
        while True:
            level = K.wipe_level(pts, npts)
            if math.isnan(level):
                break
            if (increasing and Hn >= level) or ((not increasing) and Hn <= level):
                npts, active = K.wipe(level, pts, npts, cum, active, p)
                H = level
            else:
                break
        active += K.active_increment(H, Hn, pts[npts - 1], increasing, p)
        H = Hn
        if H > p[K.P_ALPHA0] or H < p[K.P_BETA0]:
            outside += 1
        out[k] = K.b_rev(H, p) + p[K.P_BIRR] * K.cpm_value(npts, cum, active) / p[K.P_T0]
    return npts, active, H, outside
