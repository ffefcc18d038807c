"""
Three-stage identification from bench records.

1. Reversible permeability: slopes of B(H) just after the reversal points of minor loops, fitted by the
   double-exponential law.
2. Irreversible part: Preisach distribution and saturation level, by replaying the measured field through a
   demagnetized model and matching B over all excitation levels jointly.
3. Eddy-current coefficient: full hybrid simulation with the gap pinned, matching current and flux.

Stages 1 and 2 separate the linear coefficients (mu1, mu2 and the saturation level) from the nonlinear ones and
solve for the former by least squares inside the objective, so the simplex only searches the nonlinear ones.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np
import numpy.typing as npt

from .hybrid import (
    ActuatorParams,
    HybridState,
    SimConfig,
    SimulationError,
    VoltageWaveform,
    rest_state,
    simulate,
)
from .hysteresis import (
    MU0,
    GpmParams,
    PreisachDistribution,
    PreisachTracker,
    RevParams,
    demag_history,
)
from .magnetics import EddyParams, MagneticParams, reluctance
from .optimize import FitResult, MinimizeOptions, minimize

_logger = logging.getLogger(__name__)

SLOPE_WINDOW = 5
UNIFORM_RTOL = 1e-6
"""Allowed relative deviation of each sampling interval from the mean interval"""


@dataclasses.dataclass(frozen=True, eq=False)
class ExperimentRecord:
    t: npt.NDArray[np.float64]
    i: npt.NDArray[np.float64]
    """Coil current [A]"""
    phi: npt.NDArray[np.float64]
    """Magnetic flux [Wb]"""
    gap: float | None
    """Fixed gap during the test [m]"""
    v: npt.NDArray[np.float64] | None = None
    """Coil voltage [V], required for the eddy-current stage"""
    wave: str = ""
    level: float = 0.0

    def __post_init__(self) -> None:
        for name in ("t", "i", "phi", "v"):
            a = getattr(self, name)
            if a is not None:
                object.__setattr__(self, name, np.asarray(a, dtype=np.float64))
        n = self.t.size
        if self.t.ndim != 1 or self.i.shape != (n,) or self.phi.shape != (n,):
            raise ValueError("t, i and phi must be one-dimensional and of equal length")
        if self.v is not None and self.v.shape != (n,):
            raise ValueError("v must have one sample per time stamp")
        for name in ("t", "i", "phi", "v"):
            a = getattr(self, name)
            if a is not None and not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite sample in {name}")
        if n >= 2:
            d = np.diff(self.t)
            if np.any(d <= 0):
                raise ValueError("time stamps must be strictly increasing")
            if np.max(np.abs(d - d.mean())) > UNIFORM_RTOL * d.mean():
                raise ValueError("samples must be uniformly spaced in time")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


@dataclasses.dataclass(frozen=True, eq=False)
class BHSeries:
    H: npt.NDArray[np.float64]
    B: npt.NDArray[np.float64]
    level: float = 0.0


@dataclasses.dataclass(frozen=True)
class ReversalPoint:
    H: float
    """Field at the reversal [A/m]"""
    slope: float
    """dB/dH just after the reversal [H/m]"""

    def __post_init__(self) -> None:
        if not self.slope > 0:
            raise ValueError(f"reversal slope must be positive: {self.slope}")


class IdentificationError(RuntimeError):
    pass


_T = TypeVar("_T")
_R = TypeVar("_R")


def max_workers() -> int:
    """Cap on concurrent evaluations, from RELUCTSIM_THREADS (default 1)."""
    raw = os.environ.get("RELUCTSIM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"RELUCTSIM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"RELUCTSIM_THREADS must be a positive integer, got {raw!r}")
    return n


def _map(fn: Callable[[_T], _R], items: Sequence[_T], workers: int) -> list[_R]:
    # The compiled kernels release the GIL, so threads overlap the per-series work.
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def derive_bh(records: Sequence[ExperimentRecord], params: MagneticParams) -> list[BHSeries]:
    """Iron field and flux density per sample, neglecting eddy currents."""
    out = []
    for r in records:
        if r.gap is None:
            raise ValueError("the gap of the record is unknown")
        R, _ = reluctance(r.gap, params.reluctance)
        H = (params.coil.N * r.i - r.phi * R) / params.core.l_iron
        out.append(BHSeries(H, r.phi / params.core.A_iron, r.level))
    return out


def extract_reversal_slopes(series: BHSeries, window: int = SLOPE_WINDOW) -> list[ReversalPoint]:
    """
    Reversals are where the sign of the H increments flips; the slope is a straight-line fit over the window of
    samples starting at the reversal, so only the new branch is used.
    """
    if window < 2:
        raise ValueError("the slope window needs at least two samples")
    H, B = series.H, series.B
    dH = np.diff(H)
    idx = np.nonzero(dH)[0]
    out: list[ReversalPoint] = []
    for a, b in zip(idx[:-1], idx[1:]):
        if np.sign(dH[a]) == np.sign(dH[b]):
            continue
        k = b  # first sample of the new branch; any flat run before it sits at the extremum
        if k + window > H.size:
            warnings.warn(f"reversal at sample {k} skipped: fewer than {window} samples follow it", stacklevel=2)
            continue
        h = H[k:k + window]
        slope = np.polyfit(h - h[0], B[k:k + window], 1)[0]
        if not slope > 0:
            warnings.warn(f"reversal at sample {k} skipped: non-positive slope {slope:.3g}", stacklevel=2)
            continue
        out.append(ReversalPoint(float(H[k]), float(slope)))
    return out


def _rev_basis(H: npt.NDArray[np.float64], H1: float, H2: float) -> npt.NDArray[np.float64]:
    a = np.abs(H)
    return np.column_stack([np.exp(-a / H1), np.exp(-a / H2)])


def _rev_linear(H, y, H1, H2) -> tuple[float, float]:
    coef, *_ = np.linalg.lstsq(_rev_basis(H, H1, H2), y - MU0, rcond=None)
    return float(coef[0]), float(coef[1])


def fit_rev(
    points: Sequence[ReversalPoint], options: MinimizeOptions | None = None, seed: int | None = None
) -> FitResult:
    """Least-squares fit of the reversible permeability law. FitResult.value is the RevParams."""
    H = np.array([p.H for p in points])
    y = np.array([p.slope for p in points])
    if len(np.unique(np.round(np.abs(H), 9))) < 4:
        raise ValueError("at least four reversal points with distinct |H| are required")
    H_lo = max(1e-3 * float(np.max(np.abs(H))), 1e-3)
    H_hi = 1e3 * max(float(np.max(np.abs(H))), 1.0)

    def model(x) -> tuple[float, float, float, float]:
        H1, H2 = sorted(x)
        mu1, mu2 = _rev_linear(H, y, H1, H2)
        return mu1, mu2, H1, H2

    def rmse(x) -> float:
        mu1, mu2, H1, H2 = model(x)
        try:
            RevParams(mu1, mu2, H1, H2)
        except ValueError:
            return math.inf
        r = MU0 + _rev_basis(H, H1, H2) @ np.array([mu1, mu2]) - y
        return float(np.sqrt(np.mean(r * r)))

    decades = 10.0 ** np.arange(math.floor(math.log10(H_lo)), math.ceil(math.log10(H_hi)) + 1)
    decades = decades[(decades >= H_lo) & (decades <= H_hi)]
    seeds = [(a, b) for a in decades for b in decades if a < b]
    best = min(seeds, key=rmse)
    if not math.isfinite(rmse(best)):
        raise IdentificationError("no admissible starting point for the reversible permeability")
    res = minimize(rmse, best, [(H_lo, H_hi)] * 2, options, names=("H1", "H2"), seed=seed)
    mu1, mu2, H1, H2 = model(np.array([res.params["H1"], res.params["H2"]]))
    rev = RevParams(mu1, mu2, H1, H2)
    return dataclasses.replace(
        res, params={"mu1": mu1, "mu2": mu2, "H1": H1, "H2": H2}, value=rev
    )


def coercive_estimate(series: Sequence[BHSeries]) -> float:
    """|H| at the zero crossings of B on the widest loop, a starting point for the coercive field distribution."""
    s = max(series, key=lambda x: float(np.max(np.abs(x.H))))
    crossings = []
    for k in np.nonzero(np.diff(np.sign(s.B)) != 0)[0]:
        B0, B1 = s.B[k], s.B[k + 1]
        if B1 == B0:
            continue
        crossings.append(abs(s.H[k] + (s.H[k + 1] - s.H[k]) * (-B0) / (B1 - B0)))
    if not crossings:
        raise IdentificationError("the measured loops never cross B = 0")
    return float(np.median(crossings))


class _GpmObjective:
    """RMSE of B over all series for given (m_hc, s_hc, s_hm), with the saturation level solved in closed form."""

    def __init__(
        self, series: Sequence[BHSeries], rev: RevParams, bounds: tuple[float, float], n_demag: int, workers: int = 1
    ) -> None:
        self.series = list(series)
        self.workers = workers
        self.rev = rev
        self.beta0, self.alpha0 = bounds
        self.hist = demag_history(n_demag, bounds)
        self.r = [s.B - _b_rev_array(s.H, rev) for s in self.series]
        self.n = sum(s.H.size for s in self.series)

    def shapes(self, x) -> list[npt.NDArray[np.float64]]:
        """Normalized irreversible output along each series."""
        m_hc, s_hc, s_hm = x
        gp = GpmParams(self.rev, PreisachDistribution.from_params(m_hc, s_hc, s_hm), 1.0, self.alpha0, self.beta0)
        base = PreisachTracker(gp, self.hist)
        return _map(lambda s: base.copy().replay(s.H) - _b_rev_array(s.H, self.rev), self.series, self.workers)

    def solve(self, x) -> tuple[float, float]:
        y = self.shapes(x)
        yy = sum(float(a @ a) for a in y)
        yr = sum(float(a @ b) for a, b in zip(y, self.r))
        # a negative level is unphysical; at zero the distribution drops out and the objective goes flat
        b_irr = max(yr / yy, 0.0) if yy > 0 else 0.0
        sse = sum(float(np.sum((b - b_irr * a) ** 2)) for a, b in zip(y, self.r))
        return math.sqrt(sse / self.n), b_irr

    def __call__(self, x) -> float:
        return self.solve(x)[0]


def _b_rev_array(H: npt.NDArray[np.float64], rev: RevParams) -> npt.NDArray[np.float64]:
    a = np.abs(H)
    return np.sign(H) * (MU0 * a + rev.mu1 * rev.H1 * -np.expm1(-a / rev.H1) + rev.mu2 * rev.H2 * -np.expm1(-a / rev.H2))


def fit_gpm(
    series: Sequence[BHSeries],
    rev: RevParams,
    bounds: tuple[float, float] = (-1e4, 1e4),
    n_demag: int = 100,
    options: MinimizeOptions | None = None,
    seed: int | None = None,
    workers: int | None = None,
) -> FitResult:
    """
    Fits the Preisach distribution and the irreversible saturation level with the reversible part frozen.
    Each series is replayed from the demagnetized staircase. FitResult.value is (PreisachDistribution, b_irr_sat).
    """
    if not series:
        raise ValueError("no B-H series to fit")
    lo, hi = bounds
    for s in series:
        if s.H.size and (np.max(s.H) > hi or np.min(s.H) < lo):
            raise IdentificationError("measured field leaves the Preisach bounds; the data cannot be replayed")
    obj = _GpmObjective(series, rev, bounds, n_demag, workers or max_workers())
    hc = coercive_estimate(series)
    width = hi - lo
    pb = [(1e-4 * width, 0.5 * width)] * 3
    x0 = np.clip([hc, 0.5 * hc, 0.5 * hc], pb[0][0], pb[0][1])
    scale = max(float(np.max(np.abs(s.B))) for s in series)
    if max(float(np.max(np.abs(r))) for r in obj.r) <= 1e-6 * scale:
        # the reversible part explains everything: the objective is flat in the distribution
        rmse, _ = obj.solve(x0)
        dist = PreisachDistribution.from_params(*x0)
        return FitResult(
            {"m_hc": float(x0[0]), "s_hc": float(x0[1]), "s_hm": float(x0[2]), "b_irr_sat": 0.0}, rmse, 0, 1, False,
            "no irreversible part in the data: the saturation level is zero and the distribution is unidentifiable",
            (dist, 0.0),
        )
    res = minimize(obj, x0, pb, options, names=("m_hc", "s_hc", "s_hm"), seed=seed)
    x = np.array([res.params["m_hc"], res.params["s_hc"], res.params["s_hm"]])
    rmse, b_irr = obj.solve(x)
    if not math.isfinite(rmse):
        raise IdentificationError("the B-H objective is not finite at the fitted point")
    dist = PreisachDistribution.from_params(*x)
    return dataclasses.replace(res, params={**res.params, "b_irr_sat": b_irr}, objective=rmse, value=(dist, b_irr))


def kec_objective(
    records: Sequence[ExperimentRecord], sims: Sequence[tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]]
) -> float:
    """Square root of the summed normalized squared errors of current and flux, over all records jointly."""
    ei = si = ep = sp = 0.0
    for r, (i_sim, phi_sim) in zip(records, sims):
        ei += float(np.sum((r.i - i_sim) ** 2))
        si += float(np.sum(r.i**2))
        ep += float(np.sum((r.phi - phi_sim) ** 2))
        sp += float(np.sum(r.phi**2))
    if si == 0 or sp == 0:
        raise ValueError("measured current and flux must not be identically zero")
    return math.sqrt(ei / si + ep / sp)


def simulate_record(
    record: ExperimentRecord, params: ActuatorParams, start: HybridState, dt: float = 1e-6
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Current and flux at the record's time stamps, with the armature pinned at the record's gap."""
    if record.v is None:
        raise ValueError("the record has no voltage samples")
    t0 = record.t[0]
    wave = VoltageWaveform(record.t - t0, record.v)
    tr = simulate(start, wave, params, SimConfig(t_end=float(record.t[-1] - t0), dt=dt, pinned=True))
    ts = record.t - t0
    return np.interp(ts, tr.t, tr.i), np.interp(ts, tr.t, tr.phi)


def pinned_start(params: ActuatorParams, gap: float, n_demag: int = 100) -> HybridState:
    gp = params.gpm
    return rest_state(params, demag_history(n_demag, (gp.beta0, gp.alpha0)), z=gap)


def fit_kec(
    records: Sequence[ExperimentRecord],
    params: ActuatorParams,
    dt: float = 1e-6,
    n_demag: int = 100,
    bounds: tuple[float, float] | None = None,
    options: MinimizeOptions | None = None,
    seed: int | None = None,
    workers: int | None = None,
) -> FitResult:
    """
    Scalar fit of k_ec by full simulation of each record from the demagnetized state. The k_ec in params only
    sets the starting point when it is positive; otherwise N^2/R is used.
    """
    if not records:
        raise ValueError("no records to fit")
    for r in records:
        if r.gap is None or r.v is None:
            raise ValueError("eddy-current records need voltage samples and a known gap")
    c = params.magnetic
    k0 = c.eddy.k_ec if c.eddy.k_ec > 0 else c.coil.N**2 / c.coil.R
    bounds = bounds or (1e-3 * k0, 1e3 * k0)
    # The rest state does not depend on k_ec.
    starts = [pinned_start(params, r.gap, n_demag) for r in records]
    workers = workers or max_workers()

    def with_kec(k: float) -> ActuatorParams:
        return ActuatorParams(dataclasses.replace(c, eddy=EddyParams(k)), params.mech)

    def objective(x) -> float:
        p = with_kec(float(x[0]))
        try:
            sims = _map(lambda rs: simulate_record(rs[0], p, rs[1], dt), list(zip(records, starts)), workers)
        except SimulationError as ex:
            _logger.info("k_ec = %g rejected: %s", x[0], ex)
            return math.inf
        return kec_objective(records, sims)

    res = minimize(objective, [min(max(k0, bounds[0]), bounds[1])], [bounds], options, names=("k_ec",), seed=seed)
    if not math.isfinite(res.objective):
        raise IdentificationError("every candidate k_ec failed to simulate")
    return dataclasses.replace(res, value=res.params["k_ec"])


def degauss_waveform(
    amplitude: float, decay: float, cycles: int, rate: float, frequency: float = 10.0
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """
    Exponentially decaying sine: consecutive peaks (of alternating sign) shrink by the factor ``decay``.
    Returns sample times and values. Raises when the final peak would not be below 1e-3 of the first.
    """
    if not (amplitude > 0 and 0 < decay < 1 and rate > 0 and frequency > 0 and cycles >= 0):
        raise ValueError("degaussing parameters must be positive, with 0 < decay < 1")
    if int(cycles) != cycles:
        raise ValueError("cycles must be an integer")
    if cycles == 0:
        return np.empty(0), np.empty(0)
    if decay ** (2 * cycles - 1) >= 1e-3:
        raise ValueError(f"{cycles} cycles at decay {decay} do not bring the amplitude below 1e-3 of the start")
    n = int(round(cycles * rate / frequency))
    t = np.arange(n + 1) / rate
    x = amplitude * decay ** (2.0 * frequency * t - 0.5) * np.sin(2.0 * np.pi * frequency * t)
    return t, x
