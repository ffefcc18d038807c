"""
Six-mode hybrid automaton of a short-stroke reluctance actuator.

Modes 1..3 have the iron field increasing and modes 4..6 decreasing; within each family the armature is held at the
maximum gap, moving, or held at the minimum gap. Continuous flows come from the inversion-free field equation and
Newton's law; jumps are impacts, motion starts, wipe-outs of closed minor loops, and reversals of the field direction.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import Sequence

import numpy as np
import numpy.typing as npt
from scipy.optimize import brentq

from . import _kernels as K
from . import _simkernel as S
from .hysteresis import (
    Direction,
    ExtremaHistory,
    GpmParams,
    _check_bounds,
    demag_history,
    gpm_b,
    history_update,
    mu_gpm,
    push_extremum,
)
from .magnetics import (
    MagneticParams,
    coil_current,
    eddy_current,
    h_field_derivative,
    magnetic_force,
    reluctance,
)

__all__ = [
    "MechParams",
    "Mode",
    "HybridState",
    "ActuatorParams",
    "VoltageWaveform",
    "Transition",
    "Event",
    "SimConfig",
    "Trajectory",
    "SimulationError",
    "net_force",
    "flow",
    "guards",
    "jump",
    "infer_mode",
    "rest_state",
    "simulate",
    "trajectory_outputs",
]


@dataclasses.dataclass(frozen=True)
class MechParams:
    m: float
    """Moving mass [kg]"""
    k_s: float
    """Spring stiffness [N/m]"""
    z_s: float
    """Gap length at which the spring is relaxed [m]"""
    c: float
    """Viscous friction [N*s/m]"""
    z_min: float
    z_max: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(x) for x in dataclasses.astuple(self)):
            raise ValueError(f"non-finite mechanical parameter: {self}")
        if not self.m > 0:
            raise ValueError(f"mass must be positive: {self.m}")
        if not self.k_s > 0:
            raise ValueError(f"spring stiffness must be positive: {self.k_s}")
        if self.c < 0:
            raise ValueError(f"friction must be non-negative: {self.c}")
        if not self.z_min < self.z_max:
            raise ValueError(f"z_min must be below z_max: {self.z_min}, {self.z_max}")


class Mode(enum.IntEnum):
    MAX_INCR = 1
    MOVING_INCR = 2
    MIN_INCR = 3
    MAX_DECR = 4
    MOVING_DECR = 5
    MIN_DECR = 6

    @property
    def direction(self) -> Direction:
        return Direction.INCREASING if self <= 3 else Direction.DECREASING

    @property
    def moving(self) -> bool:
        return self in (Mode.MOVING_INCR, Mode.MOVING_DECR)

    @property
    def at_max(self) -> bool:
        return self in (Mode.MAX_INCR, Mode.MAX_DECR)

    @property
    def at_min(self) -> bool:
        return self in (Mode.MIN_INCR, Mode.MIN_DECR)

    def flipped(self) -> Mode:
        return Mode(self + 3 if self <= 3 else self - 3)

    @staticmethod
    def of(position: str, direction: Direction) -> Mode:
        base = {"max": 1, "moving": 2, "min": 3}[position]
        return Mode(base if direction is Direction.INCREASING else base + 3)


@dataclasses.dataclass(frozen=True, eq=False)
class ActuatorParams:
    magnetic: MagneticParams
    mech: MechParams

    def __post_init__(self) -> None:
        lo, hi = self.magnetic.reluctance.span
        tol = 1e-12 * max(1.0, abs(hi - lo))
        if lo > self.mech.z_min + tol or hi < self.mech.z_max - tol:
            raise ValueError(
                f"the reluctance table [{lo}, {hi}] m does not cover the stroke [{self.mech.z_min}, {self.mech.z_max}] m"
            )

    @property
    def gpm(self) -> GpmParams:
        return self.magnetic.gpm

    def packed(self) -> npt.NDArray[np.float64]:
        c = self.magnetic
        me = self.mech
        out = np.empty(S.N_MECH)
        out[S.M_N] = c.coil.N
        out[S.M_R] = c.coil.R
        out[S.M_L] = c.core.l_iron
        out[S.M_A] = c.core.A_iron
        out[S.M_KEC] = c.eddy.k_ec
        out[S.M_MASS] = me.m
        out[S.M_KS] = me.k_s
        out[S.M_ZS] = me.z_s
        out[S.M_C] = me.c
        out[S.M_ZMIN] = me.z_min
        out[S.M_ZMAX] = me.z_max
        return out


@dataclasses.dataclass(frozen=True)
class HybridState:
    q: Mode
    H: float
    """Iron field intensity [A/m]"""
    z: float
    """Gap length [m]"""
    vz: float
    """Armature velocity [m/s]"""
    hist: ExtremaHistory

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", Mode(self.q))
        if not all(math.isfinite(x) for x in (self.H, self.z, self.vz)):
            raise ValueError(f"non-finite continuous state: {self}")
        self.hist._check(self.q.direction)

    def validate(self, params: ActuatorParams) -> None:
        me = params.mech
        if self.q.at_max and not (self.z == me.z_max and self.vz == 0.0):
            raise ValueError(f"mode {int(self.q)} requires z = z_max and zero velocity")
        if self.q.at_min and not (self.z == me.z_min and self.vz == 0.0):
            raise ValueError(f"mode {int(self.q)} requires z = z_min and zero velocity")
        if not me.z_min <= self.z <= me.z_max:
            raise ValueError(f"gap {self.z} m outside [{me.z_min}, {me.z_max}] m")
        _check_bounds(self.hist, params.gpm)
        gp = params.gpm
        if not gp.beta0 <= self.H <= gp.alpha0:
            raise ValueError(f"initial field {self.H} A/m outside the Preisach bounds")
        h, wiped = history_update(self.hist, self.H, self.q.direction)
        if wiped:
            raise ValueError(f"initial field {self.H} A/m lies beyond the innermost stored extremum")

    @property
    def direction(self) -> Direction:
        return self.q.direction


def infer_mode(z: float, hist: ExtremaHistory, mech: MechParams) -> Mode:
    """Mode from the gap (boundary or interior) and the direction implied by the history cardinalities."""
    if z == mech.z_max:
        pos = "max"
    elif z == mech.z_min:
        pos = "min"
    else:
        pos = "moving"
    return Mode.of(pos, hist.direction)


class VoltageWaveform:
    """
    Sampled coil voltage, held constant between samples (zero-order hold) or interpolated linearly.
    With zero-order hold the last value is held indefinitely; with linear interpolation the samples must cover the
    simulated horizon.
    """

    def __init__(self, t: npt.ArrayLike, v: npt.ArrayLike, hold: str = "zoh") -> None:
        t = np.asarray(t, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if t.ndim != 1 or t.size == 0 or t.shape != v.shape:
            raise ValueError("waveform needs matching non-empty t and v arrays")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("non-finite waveform sample")
        if np.any(np.diff(t) <= 0):
            raise ValueError("waveform times must be strictly increasing")
        if t[0] > 0:
            raise ValueError("waveform must start at or before t = 0")
        if hold not in ("zoh", "linear"):
            raise ValueError(f"unknown hold mode {hold!r}")
        self.t = t
        self.v = v
        self.hold = hold

    @staticmethod
    def constant(v: float) -> VoltageWaveform:
        return VoltageWaveform([0.0], [v])

    @staticmethod
    def pulses(
        levels: Sequence[float], period: float, duty: float = 0.5, delay: float = 0.0
    ) -> VoltageWaveform:
        """Unipolar pulse train: pulse k switches on at delay + k*period, lasts duty*period, at levels[k] volts."""
        if not (period > 0 and 0 < duty < 1 and delay >= 0):
            raise ValueError("invalid pulse timing")
        t = [0.0]
        v = [0.0]
        for k, lv in enumerate(levels):
            on = delay + k * period
            off = on + duty * period
            if on == t[-1]:
                v[-1] = float(lv)
            else:
                t.append(on)
                v.append(float(lv))
            t.append(off)
            v.append(0.0)
        return VoltageWaveform(t, v)

    def __call__(self, t: float) -> float:
        if self.hold == "zoh":
            k = int(np.searchsorted(self.t, t, side="right")) - 1
            return float(self.v[max(k, 0)])
        return float(np.interp(t, self.t, self.v))

    def segments(self, t_end: float) -> list[tuple[float, float, float, float]]:
        """(t_start, t_stop, v_start, v_stop) pieces covering [0, t_end]."""
        if self.hold == "linear" and self.t[-1] < t_end:
            raise ValueError(f"linear waveform ends at {self.t[-1]} s, before t_end = {t_end} s")
        edges = np.concatenate([[0.0], self.t[(self.t > 0) & (self.t < t_end)], [t_end]])
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            if self.hold == "zoh":
                va = vb = self(a)
            else:
                va, vb = self(a), self(b)
            out.append((float(a), float(b), va, vb))
        return out


@dataclasses.dataclass(frozen=True)
class SimConfig:
    t_end: float
    dt: float = 1e-6
    t_tol: float = 1e-9
    """Event localization tolerance [s]"""
    direction_deadband: float = 1e-10
    """Relative size of the field-equation numerator below which a sign change does not reverse the direction"""
    pinned: bool = False
    """Keep the armature at its current boundary: no motion starts. Used when the gap is fixed during a test."""
    max_burst: int = 16
    """Maximum jumps at one instant before the run is declared Zeno"""

    def __post_init__(self) -> None:
        if not (self.t_end >= 0 and self.dt > 0 and 0 < self.t_tol < self.dt):
            raise ValueError(f"invalid simulation settings: {self}")
        if not 0 <= self.direction_deadband < 1e-3:
            raise ValueError(f"direction deadband out of range: {self.direction_deadband}")


JUMP_KINDS = {S.G_IMPACT: "impact", S.G_START: "start", S.G_WIPE: "wipe", S.G_DIR: "reverse"}


@dataclasses.dataclass(frozen=True)
class Transition:
    kind: str
    """One of impact, start, wipe, reverse"""
    target: Mode


@dataclasses.dataclass(frozen=True)
class Event:
    t: float
    kind: str
    q_from: Mode
    q_to: Mode
    pre: tuple[float, float, float]
    """(H, z, vz) before the jump"""
    post: tuple[float, float, float]
    hist: ExtremaHistory
    """History after the jump"""

    def to_json(self) -> dict:
        return {"t": self.t, "kind": self.kind, "q_from": int(self.q_from), "q_to": int(self.q_to)}


class SimulationError(RuntimeError):
    def __init__(self, message: str, trajectory: Trajectory) -> None:
        super().__init__(message)
        self.trajectory = trajectory


@dataclasses.dataclass(frozen=True, eq=False)
class Trajectory:
    records: npt.NDArray[np.float64]
    """One row per record; see COLUMNS"""
    events: list[Event]
    final: HybridState | None
    initial: HybridState
    counters: dict[str, int]

    COLUMNS = (
        "t", "q", "H", "z", "vz", "i", "phi", "F", "iec", "B", "mu", "Hdot", "v", "Fmag", "R_air", "npts",
    )
    CSV_COLUMNS = ("t_s", "q", "H_A_per_m", "z_m", "vz_m_per_s", "i_A", "phi_Wb", "F_N", "iec_A")

    def __getattr__(self, name: str) -> npt.NDArray[np.float64]:
        try:
            k = Trajectory.COLUMNS.index(name)
        except ValueError:
            raise AttributeError(name) from None
        return self.records[:, k]

    def __len__(self) -> int:
        return self.records.shape[0]

    def history_at(self, k: int) -> ExtremaHistory:
        """History in effect at record k: the one left by the last jump at or before that record's time."""
        t = self.records[k, S.R_T]
        h = self.initial_history
        for e in self.events:
            if e.t > t:
                break
            h = e.hist
        return h

    @property
    def initial_history(self) -> ExtremaHistory:
        return self._initial_hist

    def mode_sequence(self) -> list[int]:
        seq = [int(self.initial.q)]
        for e in self.events:
            if int(e.q_to) != seq[-1]:
                seq.append(int(e.q_to))
        return seq


def _vector_state(s: HybridState, p: ActuatorParams) -> tuple:
    pts = s.hist.turning_points()
    cap = max(1024, 4 * pts.size)
    pbuf = np.empty(cap)
    cbuf = np.empty(cap)
    pbuf[: pts.size] = pts
    pk = p.gpm.packed
    K.build_prefix(pbuf, pts.size, cbuf, pk)
    act = K.direct_active(s.H, pbuf, pts.size, pk)
    xs = np.array([0.0, s.H, s.z, s.vz, act])
    ist = np.array([int(s.q), pts.size, 0], dtype=np.int64)
    return xs, ist, pbuf, cbuf


def _history_of(pts: npt.NDArray[np.float64], npts: int, gp: GpmParams) -> ExtremaHistory:
    return ExtremaHistory.from_turning_points(pts[:npts].copy(), gp.alpha0, gp.beta0)


def simulate(
    initial: HybridState, waveform: VoltageWaveform, params: ActuatorParams, config: SimConfig
) -> Trajectory:
    """
    Integrates the hybrid automaton with fixed-step RK4. Guards are checked at the end of every step; a fired guard
    is localized by bisection, the state is integrated up to it, and the jump is applied before resuming.
    Raises SimulationError, carrying the trajectory computed so far, on non-finite states, Zeno behavior, or when
    the gap leaves the reluctance table.
    """
    initial.validate(params)
    gp = params.gpm
    xs, ist, pts, cum = _vector_state(initial, params)
    pk = gp.packed
    m = params.packed()
    tx, cR, cD = params.magnetic.reluctance.packed()
    margin = params.magnetic.reluctance.margin
    cfg = np.zeros(6)
    cfg[S.C_TTOL] = config.t_tol
    cfg[S.C_MERGE] = gp.merge_tolerance
    cfg[S.C_DIRTOL] = config.direction_deadband
    cfg[S.C_PINNED] = 1.0 if config.pinned else 0.0
    cfg[S.C_MAXBURST] = config.max_burst
    cfg[S.C_DT] = config.dt
    rec = np.empty((int(config.t_end / config.dt * 1.02) + 256, S.N_REC))
    nrec = 0
    evt = np.empty(S.N_EVT)
    cnt = np.zeros(S.N_CNT, dtype=np.int64)
    events: list[Event] = []

    def finish(final: HybridState | None) -> Trajectory:
        tr = Trajectory(
            rec[:nrec].copy(),
            events,
            final,
            initial,
            {
                "gpm_b": int(cnt[S.CNT_B]),
                "mu_gpm": int(cnt[S.CNT_MU]),
                "stages": int(cnt[S.CNT_STAGE]),
                "steps": int(cnt[S.CNT_STEP]),
                "bisections": int(cnt[S.CNT_BISECT]),
                "jumps": len(events),
            },
        )
        object.__setattr__(tr, "_initial_hist", initial.hist)
        return tr

    messages = {
        S.ST_NONFINITE: "non-finite state",
        S.ST_ZENO: "too many jumps at one instant",
        S.ST_RANGE: "gap outside the reluctance table",
    }
    for seg in waveform.segments(config.t_end):
        segv = np.array(seg)
        while True:
            status, nrec = S.run_segment(
                xs, ist, seg[1], segv, pts, cum, pk, m, tx, cR, cD, margin, cfg, rec, nrec, evt, cnt
            )
            if status == S.ST_DONE:
                break
            if status == S.ST_FULL:
                rec = np.concatenate([rec, np.empty_like(rec)])
            elif status == S.ST_CAPACITY:
                pts = np.concatenate([pts, np.empty_like(pts)])
                cum = np.concatenate([cum, np.empty_like(cum)])
            elif status == S.ST_EVENT:
                events.append(
                    Event(
                        float(evt[S.E_T]),
                        JUMP_KINDS[int(evt[S.E_KIND])],
                        Mode(int(evt[S.E_QFROM])),
                        Mode(int(evt[S.E_QTO])),
                        (float(evt[S.E_HPRE]), float(evt[S.E_ZPRE]), float(evt[S.E_VPRE])),
                        (float(evt[S.E_HPOST]), float(evt[S.E_ZPOST]), float(evt[S.E_VPOST])),
                        _history_of(pts, int(ist[S.I_NPTS]), gp),
                    )
                )
            else:
                raise SimulationError(f"{messages[status]} at t = {xs[S.X_T]:.9g} s", finish(None))
    final = HybridState(
        Mode(int(ist[S.I_Q])), float(xs[S.X_H]), float(xs[S.X_Z]), float(xs[S.X_V]),
        _history_of(pts, int(ist[S.I_NPTS]), gp),
    )
    return finish(final)


# Single-state evaluation of the automaton, used for inspection and as the reference for the compiled loop.


def net_force(state: HybridState, params: ActuatorParams) -> float:
    me = params.mech
    F = magnetic_force(state.H, state.z, state.hist, state.direction, params.magnetic)
    return F - me.k_s * (state.z - me.z_s) - me.c * state.vz


def flow(state: HybridState, v: float, params: ActuatorParams) -> npt.NDArray[np.float64]:
    """Time derivative of (H, z, vz). The armature is pinned in the static modes."""
    Hdot = h_field_derivative(state.H, state.z, state.hist, state.direction, v, params.magnetic)
    if not state.q.moving:
        return np.array([Hdot, 0.0, 0.0])
    return np.array([Hdot, state.vz, net_force(state, params) / params.mech.m])


def _field_numerator(state: HybridState, v: float, params: ActuatorParams) -> tuple[float, float]:
    c = params.magnetic
    B = gpm_b(state.H, state.hist, state.direction, c.gpm)
    R, _ = reluctance(state.z, c.reluctance)
    drive = c.coil.N * v / c.coil.R
    flux = c.core.A_iron * B * R
    iron = state.H * c.core.l_iron
    return drive - flux - iron, abs(drive) + abs(flux) + abs(iron)


def guards(
    state: HybridState, v: float, params: ActuatorParams, deadband: float = SimConfig.direction_deadband,
    pinned: bool = False,
) -> list[Transition]:
    """Transitions enabled at this state, highest priority first."""
    q = state.q
    me = params.mech
    out = []
    if q.moving:
        if state.z < me.z_min or (state.z == me.z_min and state.vz < 0):
            out.append(Transition("impact", Mode.of("min", q.direction)))
        elif state.z > me.z_max or (state.z == me.z_max and state.vz > 0):
            out.append(Transition("impact", Mode.of("max", q.direction)))
    elif not pinned:
        F = net_force(state, params)
        if (q.at_max and F < 0) or (q.at_min and F > 0):
            out.append(Transition("start", Mode.of("moving", q.direction)))
    h = state.hist
    if q.direction is Direction.INCREASING and h.maxima and state.H >= h.maxima[-1]:
        out.append(Transition("wipe", q))
    elif q.direction is Direction.DECREASING and h.minima and state.H <= h.minima[-1]:
        out.append(Transition("wipe", q))
    num, scale = _field_numerator(state, v, params)
    tol = deadband * scale
    if (q.direction is Direction.INCREASING and num < -tol) or (q.direction is Direction.DECREASING and num > tol):
        out.append(Transition("reverse", q.flipped()))
    return out


def _wipe_pair(hist: ExtremaHistory, direction: Direction) -> ExtremaHistory:
    mx = list(hist.maxima)
    mn = list(hist.minima)
    if direction is Direction.INCREASING:
        if not mx:
            raise ValueError("nothing to wipe out")
        mx.pop()
        mn.pop()
    else:
        if not mn or len(mx) < 2:
            raise ValueError("nothing to wipe out")
        mn.pop()
        mx.pop()
    return ExtremaHistory(tuple(mx), tuple(mn), hist.alpha0, hist.beta0)


def jump(state: HybridState, transition: Transition, params: ActuatorParams, v: float = 0.0) -> HybridState:
    """Applies the reset map of an enabled transition. v is the coil voltage, needed to confirm a reversal."""
    enabled = guards(state, v, params, deadband=0.0)
    if not any(t == transition for t in enabled):
        raise ValueError(f"transition {transition} is not enabled in mode {int(state.q)}")
    me = params.mech
    if transition.kind == "impact":
        z = me.z_min if transition.target.at_min else me.z_max
        return HybridState(transition.target, state.H, z, 0.0, state.hist)
    if transition.kind == "start":
        return HybridState(transition.target, state.H, state.z, 0.0, state.hist)
    if transition.kind == "wipe":
        return HybridState(state.q, state.H, state.z, state.vz, _wipe_pair(state.hist, state.direction))
    hist = push_extremum(state.hist, state.H, state.direction.flipped())
    return HybridState(transition.target, state.H, state.z, state.vz, hist)


def rest_state(
    params: ActuatorParams,
    hist: ExtremaHistory | None = None,
    z: float | None = None,
    v: float = 0.0,
    H0: float = 0.0,
) -> HybridState:
    """
    Equilibrium reached by the magnetic circuit at a fixed gap (default: the maximum) under constant voltage v,
    relaxing monotonically from H0 with history hist (default: the demagnetized staircase).
    A finite staircase leaves some remanence, so with v = 0 the field at rest is generally not exactly zero and the
    relaxation may wipe out a few inner loops on its way.
    """
    gp = params.gpm
    hist = hist if hist is not None else demag_history(100, (gp.beta0, gp.alpha0))
    z = params.mech.z_max if z is None else z
    c = params.magnetic
    R, _ = reluctance(z, c.reluctance)

    def g(H: float, h: ExtremaHistory, d: Direction) -> float:
        # Same sign as dH/dt at fixed gap.
        return c.coil.N * v / c.coil.R - c.core.A_iron * gpm_b(H, h, d, gp) * R - H * c.core.l_iron

    direction = hist.direction
    hist, _ = history_update(hist, H0, direction)
    g0 = g(H0, hist, direction)
    if g0 == 0.0:
        return HybridState(infer_mode(z, hist, params.mech), float(H0), z, 0.0, hist)
    if (g0 > 0) != (direction is Direction.INCREASING):
        direction = direction.flipped()
        hist = push_extremum(hist, H0, direction)
    H = H0
    while True:
        # g decreases along H, so it changes sign at most once per stretch between stored extrema.
        if direction is Direction.INCREASING:
            end = hist.maxima[-1] if hist.maxima else gp.alpha0
        else:
            end = hist.minima[-1] if hist.minima else gp.beta0
        g_end = g(end, hist, direction)
        if (g_end > 0) != (direction is Direction.INCREASING) or g_end == 0.0:
            break
        if end in (gp.alpha0, gp.beta0):
            raise ValueError("no equilibrium inside the Preisach bounds")
        H = end
        hist, _ = history_update(hist, end, direction)
    Hr = brentq(lambda x: g(x, hist, direction), min(H, end), max(H, end), xtol=1e-12, rtol=4 * np.finfo(float).eps)
    return HybridState(infer_mode(z, hist, params.mech), float(Hr), z, 0.0, hist)


def trajectory_outputs(
    traj: Trajectory, params: ActuatorParams, indices: Sequence[int] | None = None
) -> dict[str, npt.NDArray[np.float64]]:
    """
    Current, flux, eddy current and net force per record. With indices, those records are recomputed from the
    state and the history in effect through the single-state model functions, instead of read from the
    compiled loop's output.
    """
    if indices is None:
        return {"i": traj.i.copy(), "phi": traj.phi.copy(), "iec": traj.iec.copy(), "F": traj.F.copy()}
    c = params.magnetic
    out = {k: np.empty(len(indices)) for k in ("i", "phi", "iec", "F")}
    for j, k in enumerate(indices):
        r = traj.records[k]
        q = Mode(int(r[S.R_Q]))
        hist = traj.history_at(k)
        s = HybridState(q, float(r[S.R_H]), float(r[S.R_Z]), float(r[S.R_V]), hist)
        Hdot = h_field_derivative(s.H, s.z, hist, q.direction, float(r[S.R_VOLT]), c)
        phi = c.core.A_iron * gpm_b(s.H, hist, q.direction, c.gpm)
        phidot = c.core.A_iron * mu_gpm(s.H, hist, q.direction, c.gpm) * Hdot
        out["i"][j] = coil_current(s.H, s.z, hist, q.direction, Hdot, c)
        out["phi"][j] = phi
        out["iec"][j] = eddy_current(phidot, c.eddy)
        out["F"][j] = net_force(s, params)
    return out
