"""
Compiled inner loop of the hybrid simulation: fixed-step RK4, guard evaluation, event localization by bisection,
reset maps and record emission. The Python driver in ``hybrid`` owns buffers, waveform segments and error reporting.
"""

import math

import numpy as np

from . import _kernels as K

njit = K.njit

# Layout of the actuator vector
M_N, M_R, M_L, M_A, M_KEC, M_MASS, M_KS, M_ZS, M_C, M_ZMIN, M_ZMAX = range(11)
N_MECH = 11

# Layout of the continuous state vector: time, field, gap, velocity, moving staircase term
X_T, X_H, X_Z, X_V, X_ACT = range(5)
# Layout of the integer state vector: mode, staircase length, events at the current instant
I_Q, I_NPTS, I_BURST = range(3)

# Layout of the configuration vector
C_TTOL, C_MERGE, C_DIRTOL, C_PINNED, C_MAXBURST, C_DT = range(6)

# Guard bits, in priority order
G_IMPACT = 1
G_START = 2
G_WIPE = 4
G_DIR = 8
GUARD_BITS = (G_IMPACT, G_START, G_WIPE, G_DIR)

# Record columns
(
    R_T, R_Q, R_H, R_Z, R_V, R_I, R_PHI, R_F, R_IEC,
    R_B, R_MU, R_HDOT, R_VOLT, R_FMAG, R_RAIR, R_NPTS,
) = range(16)
N_REC = 16

# Event info columns
E_T, E_KIND, E_QFROM, E_QTO, E_HPRE, E_ZPRE, E_VPRE, E_HPOST, E_ZPOST, E_VPOST = range(10)
N_EVT = 10

# Counter slots
CNT_B, CNT_MU, CNT_STAGE, CNT_STEP, CNT_BISECT = range(5)
N_CNT = 5

# Run status
ST_DONE, ST_FULL, ST_EVENT, ST_NONFINITE, ST_ZENO, ST_RANGE, ST_CAPACITY = range(7)


@njit
def reluct(z, tx, cR, cD, margin):
    """(R_air, dR/dz) from the packed piecewise cubics, with linear continuation in the margin. NaN when out of range."""
    n = tx.size
    if not (tx[0] - margin <= z <= tx[n - 1] + margin):
        return np.nan, np.nan
    if z < tx[0]:
        i = 0
        zz = tx[0]
    elif z > tx[n - 1]:
        i = n - 2
        zz = tx[n - 1]
    else:
        i = np.searchsorted(tx, z, side="right") - 1
        if i > n - 2:
            i = n - 2
        zz = z
    s = zz - tx[i]
    R = ((cR[0, i] * s + cR[1, i]) * s + cR[2, i]) * s + cR[3, i]
    D = ((cD[0, i] * s + cD[1, i]) * s + cD[2, i]) * s + cD[3, i]
    if zz != z:
        dz = z - zz
        R += ((3.0 * cR[0, i] * s + 2.0 * cR[1, i]) * s + cR[2, i]) * dz
        D += ((3.0 * cD[0, i] * s + 2.0 * cD[1, i]) * s + cD[2, i]) * dz
    return R, D


@njit
def increasing_mode(q):
    return q <= 3


@njit
def static_mode(q):
    return q != 2 and q != 5


@njit
def voltage(t, seg):
    ta, tb, va, vb = seg[0], seg[1], seg[2], seg[3]
    if vb == va or tb <= ta:
        return va
    return va + (vb - va) * (t - ta) / (tb - ta)


@njit
def stage(H, z, vz, volt, H0, A0, q, pts, npts, cum, p, m, tx, cR, cD, margin, cnt):
    """
    One evaluation of the flow with direction and staircase frozen. Exactly one evaluation of B and one of the
    incremental permeability. Returns (Hdot, zdot, vdot, active, B, mu, R_air, F, num, scale, Fmag).
    """
    incr = increasing_mode(q)
    anchor = pts[npts - 1]
    A = A0 + K.active_increment(H0, H, anchor, incr, p)
    B = K.b_rev(H, p) + p[K.P_BIRR] * K.cpm_value(npts, cum, A) / p[K.P_T0]
    cnt[CNT_B] += 1
    mu = K.mu_rev(H, p)
    if p[K.P_BETA0] <= H <= p[K.P_ALPHA0]:
        mu += p[K.P_BIRR] / p[K.P_T0] * 2.0 * K.edge(H, anchor, incr, p)
    cnt[CNT_MU] += 1
    cnt[CNT_STAGE] += 1
    # RK stages of a step that crosses a stop may overshoot it; the flow is taken at the stop there and the
    # crossing itself is localized by the impact guard.
    z = min(max(z, m[M_ZMIN]), m[M_ZMAX])
    R, dR = reluct(z, tx, cR, cD, margin)
    drive = m[M_N] * volt / m[M_R]
    flux = m[M_A] * B * R
    iron = H * m[M_L]
    num = drive - flux - iron
    scale = abs(drive) + abs(flux) + abs(iron)
    Hdot = num / ((m[M_N] * m[M_N] / m[M_R] + m[M_KEC]) * m[M_A] * mu)
    Fmag = -0.5 * (m[M_A] * B) ** 2 * dR
    F = Fmag - m[M_KS] * (z - m[M_ZS]) - m[M_C] * vz
    if static_mode(q):
        zdot = 0.0
        vdot = 0.0
    else:
        zdot = vz
        vdot = F / m[M_MASS]
    return Hdot, zdot, vdot, A, B, mu, R, F, num, scale, Fmag


@njit
def rk4(t, H, z, vz, A0, h, q, seg, pts, npts, cum, p, m, tx, cR, cD, margin, cnt):
    """Classical RK4 step of length h. Returns (H, z, vz, active) at t + h."""
    k1 = stage(H, z, vz, voltage(t, seg), H, A0, q, pts, npts, cum, p, m, tx, cR, cD, margin, cnt)
    Ha = H + 0.5 * h * k1[0]
    k2 = stage(Ha, z + 0.5 * h * k1[1], vz + 0.5 * h * k1[2], voltage(t + 0.5 * h, seg), H, A0, q, pts, npts, cum,
               p, m, tx, cR, cD, margin, cnt)
    Hb = H + 0.5 * h * k2[0]
    k3 = stage(Hb, z + 0.5 * h * k2[1], vz + 0.5 * h * k2[2], voltage(t + 0.5 * h, seg), H, A0, q, pts, npts, cum,
               p, m, tx, cR, cD, margin, cnt)
    Hc = H + h * k3[0]
    k4 = stage(Hc, z + h * k3[1], vz + h * k3[2], voltage(t + h, seg), H, A0, q, pts, npts, cum, p, m, tx, cR, cD,
               margin, cnt)
    H1 = H + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    z1 = z + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    v1 = vz + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    if static_mode(q):
        z1 = z
        v1 = 0.0
    A1 = A0 + K.active_increment(H, H1, pts[npts - 1], increasing_mode(q), p)
    return H1, z1, v1, A1


@njit
def guard_mask(q, H, z, F, num, scale, pts, npts, m, cfg):
    mask = 0
    incr = increasing_mode(q)
    if static_mode(q):
        if cfg[C_PINNED] == 0.0:
            at_max = q == 1 or q == 4
            if (at_max and F < 0.0) or ((not at_max) and F > 0.0):
                mask |= G_START
    elif z < m[M_ZMIN] or z > m[M_ZMAX]:
        mask |= G_IMPACT
    level = K.wipe_level(pts, npts)
    if not math.isnan(level):
        if (incr and H >= level) or ((not incr) and H <= level):
            mask |= G_WIPE
    tol = cfg[C_DIRTOL] * scale
    if (incr and num < -tol) or ((not incr) and num > tol):
        mask |= G_DIR
    return mask


@njit
def flipped(q):
    return q + 3 if q <= 3 else q - 3


@njit
def write_record(rec, nrec, t, q, H, z, vz, volt, ev, m, npts):
    """ev is a stage() result at this state."""
    Hdot, A_, B, mu, R, F, Fmag = ev[0], ev[3], ev[4], ev[5], ev[6], ev[7], ev[10]
    phi = m[M_A] * B
    phidot = m[M_A] * mu * Hdot
    iec = -m[M_KEC] * phidot
    i = (H * m[M_L] + phi * R - iec) / m[M_N]
    if nrec > 0 and rec[nrec - 1, R_T] == t:
        nrec -= 1
    r = rec[nrec]
    r[R_T] = t
    r[R_Q] = q
    r[R_H] = H
    r[R_Z] = z
    r[R_V] = vz
    r[R_I] = i
    r[R_PHI] = phi
    r[R_F] = F
    r[R_IEC] = iec
    r[R_B] = B
    r[R_MU] = mu
    r[R_HDOT] = Hdot
    r[R_VOLT] = volt
    r[R_FMAG] = Fmag
    r[R_RAIR] = R
    r[R_NPTS] = npts
    return nrec + 1


@njit
def _guard_at(tau, bit, t, H, z, vz, A, q, seg, pts, npts, cum, p, m, tx, cR, cD, margin, cfg, cnt):
    H1, z1, v1, A1 = rk4(t, H, z, vz, A, tau, q, seg, pts, npts, cum, p, m, tx, cR, cD, margin, cnt)
    ev = stage(H1, z1, v1, voltage(t + tau, seg), H1, A1, q, pts, npts, cum, p, m, tx, cR, cD, margin, cnt)
    return (guard_mask(q, H1, z1, ev[7], ev[8], ev[9], pts, npts, m, cfg) & bit) != 0


@njit
def run_segment(xs, ist, t_end, seg, pts, cum, p, m, tx, cR, cD, margin, cfg, rec, nrec, evt, cnt):
    """
    Advances the hybrid state until t_end, an event, or a full buffer. Returns (status, nrec).
    On ST_EVENT the jump has been applied and evt describes it. On any failure the state is left at the last
    accepted point.
    """
    dt = cfg[C_DT]
    t_tol = cfg[C_TTOL]
    while True:
        t, H, z, vz, A = xs[X_T], xs[X_H], xs[X_Z], xs[X_V], xs[X_ACT]
        q, npts = ist[I_Q], ist[I_NPTS]
        if nrec + 2 > rec.shape[0]:
            return ST_FULL, nrec
        ev = stage(H, z, vz, voltage(t, seg), H, A, q, pts, npts, cum, p, m, tx, cR, cD, margin, cnt)
        if math.isnan(ev[6]):
            return ST_RANGE, nrec
        mask = guard_mask(q, H, z, ev[7], ev[8], ev[9], pts, npts, m, cfg)
        if mask != 0:
            if ist[I_BURST] >= cfg[C_MAXBURST]:
                return ST_ZENO, nrec
            bit = G_IMPACT
            while (mask & bit) == 0:
                bit <<= 1
            status = apply_jump(bit, xs, ist, pts, cum, p, m, cfg, evt)
            if status != ST_EVENT:
                return status, nrec
            ist[I_BURST] += 1
            q, npts = ist[I_Q], ist[I_NPTS]
            H, z, vz, A = xs[X_H], xs[X_Z], xs[X_V], xs[X_ACT]
            ev = stage(H, z, vz, voltage(t, seg), H, A, q, pts, npts, cum, p, m, tx, cR, cD, margin, cnt)
            nrec = write_record(rec, nrec, t, q, H, z, vz, voltage(t, seg), ev, m, npts)
            return ST_EVENT, nrec
        # Overwrites an earlier record at the same instant, e.g. the end of the previous waveform segment.
        nrec = write_record(rec, nrec, t, q, H, z, vz, voltage(t, seg), ev, m, npts)
        if t >= t_end:
            return ST_DONE, nrec
        k = math.floor(t / dt + 1e-7) + 1.0
        t_next = k * dt
        if t_next > t_end or t_end - t_next < 1e-7 * dt:
            t_next = t_end
        h = t_next - t
        H1, z1, v1, A1 = rk4(t, H, z, vz, A, h, q, seg, pts, npts, cum, p, m, tx, cR, cD, margin, cnt)
        cnt[CNT_STEP] += 1
        if not (math.isfinite(H1) and math.isfinite(z1) and math.isfinite(v1) and math.isfinite(A1)):
            return ST_NONFINITE, nrec
        ev1 = stage(H1, z1, v1, voltage(t_next, seg), H1, A1, q, pts, npts, cum, p, m, tx, cR, cD, margin, cnt)
        mask = 0
        if not math.isnan(ev1[6]):
            mask = guard_mask(q, H1, z1, ev1[7], ev1[8], ev1[9], pts, npts, m, cfg)
        elif static_mode(q):
            return ST_RANGE, nrec
        else:
            mask = G_IMPACT  # left the table through the gap bounds
        if mask == 0:
            xs[X_T], xs[X_H], xs[X_Z], xs[X_V], xs[X_ACT] = t_next, H1, z1, v1, A1
            ist[I_BURST] = 0
            continue
        # Localize the earliest guard; ties go to the higher priority bit.
        best_tau = 2.0 * h
        best_bit = 0
        for bit in GUARD_BITS:
            if (mask & bit) == 0:
                continue
            lo = 0.0
            hi = h
            while hi - lo > t_tol:
                mid = 0.5 * (lo + hi)
                cnt[CNT_BISECT] += 1
                if _guard_at(mid, bit, t, H, z, vz, A, q, seg, pts, npts, cum, p, m, tx, cR, cD, margin, cfg, cnt):
                    hi = mid
                else:
                    lo = mid
            if hi < best_tau:
                best_tau = hi
                best_bit = bit
        H1, z1, v1, A1 = rk4(t, H, z, vz, A, best_tau, q, seg, pts, npts, cum, p, m, tx, cR, cD, margin, cnt)
        xs[X_T], xs[X_H], xs[X_Z], xs[X_V], xs[X_ACT] = t + best_tau, H1, z1, v1, A1
        ist[I_BURST] = 0
        # The jump itself is applied at the top of the loop, where the guard is now enabled.


@njit
def apply_jump(bit, xs, ist, pts, cum, p, m, cfg, evt):
    q = ist[I_Q]
    npts = ist[I_NPTS]
    H, z, vz = xs[X_H], xs[X_Z], xs[X_V]
    evt[E_T] = xs[X_T]
    evt[E_KIND] = bit
    evt[E_QFROM] = q
    evt[E_HPRE], evt[E_ZPRE], evt[E_VPRE] = H, z, vz
    incr = increasing_mode(q)
    if bit == G_IMPACT:
        if z <= m[M_ZMIN]:
            xs[X_Z] = m[M_ZMIN]
            q = 3 if incr else 6
        else:
            xs[X_Z] = m[M_ZMAX]
            q = 1 if incr else 4
        xs[X_V] = 0.0
    elif bit == G_START:
        q = 2 if incr else 5
        xs[X_V] = 0.0
    elif bit == G_WIPE:
        npts, xs[X_ACT] = K.wipe(H, pts, npts, cum, xs[X_ACT], p)
    else:
        if npts + 1 >= pts.size:
            return ST_CAPACITY
        npts, xs[X_ACT] = K.reverse(H, pts, npts, cum, xs[X_ACT], cfg[C_MERGE], p)
        q = flipped(q)
    ist[I_Q] = q
    ist[I_NPTS] = npts
    evt[E_QTO] = q
    evt[E_HPOST], evt[E_ZPOST], evt[E_VPOST] = xs[X_H], xs[X_Z], xs[X_V]
    return ST_EVENT
