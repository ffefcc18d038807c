"""
Compiled numerical kernels shared by the hysteresis model and the hybrid simulator.

Everything here works on plain floats and float64 arrays so that numba can compile it.
The Preisach parameters travel as a single packed vector, see ``pack_params``.
"""

from __future__ import annotations

import math

import numba
import numpy as np

MU0 = 4e-7 * math.pi

njit = numba.njit(cache=True, nogil=True, fastmath=False)

# Layout of the packed parameter vector.
P_M1 = 0  # coercive-field distribution location
P_S1 = 1  # coercive-field distribution scale
P_M2 = 2  # mean-field distribution location
P_S2 = 3  # mean-field distribution scale
P_ALPHA0 = 4
P_BETA0 = 5
P_T0 = 6  # T(alpha0, beta0)
P_BIRR = 7
P_MU1 = 8
P_H1 = 9
P_MU2 = 10
P_H2 = 11
N_PARAMS = 12

QUAD_RTOL = 1e-9
QUAD_ATOL = 1e-15
QUAD_MAX_INTERVALS = 400

# Gauss-Kronrod 10/21 abscissae and weights (QUADPACK qk21), positive half plus centre.
_XGK = np.array(
    [
        0.995657163025808080735527280689003,
        0.973906528517171720077964012084452,
        0.930157491355708226001207180059508,
        0.865063366688984510732096688423493,
        0.780817726586416897063717578345042,
        0.679409568299024406234327365114874,
        0.562757134668604683339000099272694,
        0.433395394129247190799265943165784,
        0.294392862701460198131126603103866,
        0.148874338981631210884826001129720,
        0.0,
    ]
)
_WGK = np.array(
    [
        0.011694638867371874278064396062192,
        0.032558162307964727478818972459390,
        0.054755896574351996031381300244580,
        0.075039674810919952767043140916190,
        0.093125454583697605535065465083366,
        0.109387158802297641899210590325805,
        0.123491976262065851077208980080340,
        0.134709217311473325928054001771707,
        0.142775938577060080797094273138717,
        0.147739104901338491374841515972068,
        0.149445554002916905664936468389821,
    ]
)
_WG = np.array(
    [
        0.066671344308688137593568809893332,
        0.149451349150580593145776339657697,
        0.219086362515982043995534934228163,
        0.269266719309996355091226921569469,
        0.295524224714752870173892994651338,
    ]
)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)

# Panel width for the Gauss-Legendre increments, as a fraction of the narrower Cauchy scale.
_PANEL_FRACTION = 0.05


# ---------------------------------------------------------------------------------------------------------------------
# Reversible part


@njit
def mu_rev(H, p):
    a = abs(H)
    return MU0 + p[P_MU1] * math.exp(-a / p[P_H1]) + p[P_MU2] * math.exp(-a / p[P_H2])


@njit
def b_rev(H, p):
    a = abs(H)
    s = 1.0 if H > 0 else (-1.0 if H < 0 else 0.0)
    return (
        MU0 * H
        + s * p[P_MU1] * p[P_H1] * -math.expm1(-a / p[P_H1])
        + s * p[P_MU2] * p[P_H2] * -math.expm1(-a / p[P_H2])
    )


# ---------------------------------------------------------------------------------------------------------------------
# Triangle integral by adaptive quadrature of the single-variable form


@njit
def _theta_integrand(theta, alpha, beta, p):
    # h_c = m1 + s1*tan(theta) absorbs the Cauchy density f1 into the measure d(theta)/pi.
    h = p[P_M1] + p[P_S1] * math.tan(theta)
    s2 = p[P_S2]
    m2 = p[P_M2]
    return math.atan((alpha - h - m2) / s2) - math.atan((beta + h - m2) / s2)


@njit
def _gk21(a, b, alpha, beta, p):
    c = 0.5 * (a + b)
    hw = 0.5 * (b - a)
    fc = _theta_integrand(c, alpha, beta, p)
    res_k = fc * _WGK[10]
    res_g = 0.0
    for j in range(10):
        dx = hw * _XGK[j]
        f1 = _theta_integrand(c - dx, alpha, beta, p)
        f2 = _theta_integrand(c + dx, alpha, beta, p)
        res_k += _WGK[j] * (f1 + f2)
        if j % 2 == 1:
            res_g += _WG[j // 2] * (f1 + f2)
    return res_k * hw, abs((res_k - res_g) * hw)


@njit
def triangle(alpha, beta, p):
    """
    Returns (value, error_estimate, status). Status 0 is success, 1 means the interval budget was exhausted.
    Scaled so that the value is the Preisach mass of the triangle, i.e. the result already includes 2/pi^2.
    """
    L = 0.5 * (alpha - beta)
    if L <= 0.0:
        return 0.0, 0.0, 0
    m1 = p[P_M1]
    s1 = p[P_S1]
    ta = math.atan((0.0 - m1) / s1)
    tb = math.atan((L - m1) / s1)
    scale = 2.0 / (math.pi * math.pi)
    lo = np.empty(QUAD_MAX_INTERVALS)
    hi = np.empty(QUAD_MAX_INTERVALS)
    val = np.empty(QUAD_MAX_INTERVALS)
    err = np.empty(QUAD_MAX_INTERVALS)
    lo[0] = ta
    hi[0] = tb
    val[0], err[0] = _gk21(ta, tb, alpha, beta, p)
    n = 1
    while True:
        total = 0.0
        total_err = 0.0
        worst = 0
        for k in range(n):
            total += val[k]
            total_err += err[k]
            if err[k] > err[worst]:
                worst = k
        if total_err * scale <= max(QUAD_ATOL, QUAD_RTOL * abs(total) * scale):
            return total * scale, total_err * scale, 0
        if n >= QUAD_MAX_INTERVALS:
            return total * scale, total_err * scale, 1
        mid = 0.5 * (lo[worst] + hi[worst])
        lo[n] = mid
        hi[n] = hi[worst]
        hi[worst] = mid
        val[worst], err[worst] = _gk21(lo[worst], mid, alpha, beta, p)
        val[n], err[n] = _gk21(mid, hi[n], alpha, beta, p)
        n += 1


@njit
def triangle_value(alpha, beta, p):
    v, e, status = triangle(alpha, beta, p)
    if status != 0:
        raise RuntimeError("triangle integral quadrature did not converge")
    return v


# ---------------------------------------------------------------------------------------------------------------------
# Closed-form line integrals along the staircase edge


@njit
def _clog_ratio(b, a, c):
    # log((b - c) / (a - c)) for real a, b and complex c off the real axis, accurate when b is close to a.
    u = (b - a) / (a - c)
    if abs(u) < 1e-4:
        return u * (1.0 - u * (0.5 - u * (1.0 / 3.0 - u * 0.25)))
    return np.log(1.0 + u)


@njit
def _phi(a, b, c, e):
    # Integral over [a, b] of 1 / ((h - c) (h - e)).
    diff = c - e
    if abs(diff) < 1e-7 * (abs(c.imag) + abs(e.imag)):
        dc = 1.0 / (a - c) - 1.0 / (b - c)
        de = 1.0 / (a - e) - 1.0 / (b - e)
        return 0.5 * (dc + de)
    return (_clog_ratio(b, a, c) - _clog_ratio(b, a, e)) / diff


@njit
def cauchy_product_integral(a, b, x0, sigma, p):
    """Integral over h in [a, b] of f1(h) * f2(x0 + sigma*h), sigma = +/-1, both factors Cauchy densities."""
    c1 = complex(p[P_M1], p[P_S1])
    c2 = complex(p[P_M2], p[P_S2])
    d = sigma * (c2 - x0)
    r = _phi(a, b, c1, d.conjugate()) - _phi(a, b, c1, d)
    return sigma * r.real / (2.0 * math.pi * math.pi)


@njit
def edge(H, anchor, increasing, p):
    """
    Line integral of the Preisach density along the moving edge of the staircase.
    Increasing: integral over beta in [anchor, H] of P(H, beta). Decreasing: over alpha in [H, anchor] of P(alpha, H).
    """
    if increasing:
        L = 0.5 * (H - anchor)
        if L <= 0.0:
            return 0.0
        return 2.0 * cauchy_product_integral(0.0, L, H, -1.0, p)
    L = 0.5 * (anchor - H)
    if L <= 0.0:
        return 0.0
    return 2.0 * cauchy_product_integral(0.0, L, H, 1.0, p)


@njit
def clamp(H, p):
    if H > p[P_ALPHA0]:
        return p[P_ALPHA0]
    if H < p[P_BETA0]:
        return p[P_BETA0]
    return H


@njit
def active_increment(H0, H1, anchor, increasing, p):
    """
    Change of the moving triangle term between H0 and H1 on the current branch:
    T(H, anchor) when increasing, T(anchor, H) when decreasing. Inputs are clamped to the Preisach bounds.
    """
    a = clamp(H0, p)
    b = clamp(H1, p)
    span = b - a
    if span == 0.0:
        return 0.0
    width = _PANEL_FRACTION * min(p[P_S1], p[P_S2])
    n = int(math.ceil(abs(span) / width))
    if n < 1:
        n = 1
    h = span / n
    total = 0.0
    for k in range(n):
        c = a + (k + 0.5) * h
        acc = 0.0
        for j in range(_GL_X.size):
            acc += _GL_W[j] * edge(c + 0.5 * h * _GL_X[j], anchor, increasing, p)
        total += acc
    total *= 0.5 * h
    return total if increasing else -total


# ---------------------------------------------------------------------------------------------------------------------
# Staircase memory: interleaved turning points [beta0, a1, b1, a2, b2, ...] with prefix sums of the triangle terms.
# An odd count means the input is increasing (last point is a minimum), an even count means decreasing.


@njit
def term(pts, j, p):
    if j % 2 == 1:
        return 2.0 * triangle_value(pts[j], pts[j - 1], p)
    return -2.0 * triangle_value(pts[j - 1], pts[j], p)


@njit
def build_prefix(pts, npts, cum, p):
    cum[0] = -p[P_T0]
    for j in range(1, npts):
        cum[j] = cum[j - 1] + term(pts, j, p)


@njit
def direct_active(H, pts, npts, p):
    Hc = clamp(H, p)
    last = pts[npts - 1]
    if npts % 2 == 1:
        return triangle_value(Hc, last, p) if Hc > last else 0.0
    return triangle_value(last, Hc, p) if last > Hc else 0.0


@njit
def cpm_value(npts, cum, active):
    if npts % 2 == 1:
        return cum[npts - 1] + 2.0 * active
    return cum[npts - 1] - 2.0 * active


@njit
def wipe_level(pts, npts):
    """Input level at which the innermost loop is wiped out, or NaN if none can be."""
    if npts % 2 == 1:
        if npts >= 3:
            return pts[npts - 2]
        return math.nan
    if npts >= 4:
        return pts[npts - 2]
    return math.nan


@njit
def wipe(H, pts, npts, cum, active, p):
    """
    Removes the innermost max/min pair. The new moving term is continued from the stored triangle value of the
    removed corner, so no quadrature is needed. Returns (npts, active).
    """
    increasing = npts % 2 == 1
    corner = pts[npts - 2]
    npts -= 2
    anchor = pts[npts - 1]
    if increasing:
        # corner was alpha_n; T(alpha_n, beta_{n-1}) is stored in the prefix sums.
        base = 0.5 * (cum[npts] - cum[npts - 1])
    else:
        # corner was beta_{n-1}; T(alpha_{n-1}, beta_{n-1}) likewise.
        base = -0.5 * (cum[npts] - cum[npts - 1])
    active = base + active_increment(corner, H, anchor, increasing, p)
    return npts, active


@njit
def reverse(H, pts, npts, cum, active, merge_tol, p):
    """
    Records the current input as a new extremum and flips the direction. Returns (npts, active).
    A reversal closer than ``merge_tol`` to the previous one cancels it instead of nesting a vanishing loop.
    """
    increasing = npts % 2 == 1
    if increasing:
        if npts == 1 and H >= p[P_ALPHA0]:
            pts[1] = p[P_ALPHA0]
            cum[1] = cum[0] + 2.0 * p[P_T0]
            return 2, 0.0
        if npts >= 2 and abs(H - pts[npts - 1]) <= merge_tol:
            npts -= 1
            base = -0.5 * (cum[npts] - cum[npts - 1])  # T(alpha_n, beta_n) of the cancelled corner
            return npts, base + active_increment(pts[npts], H, pts[npts - 1], False, p)
    else:
        if H <= p[P_BETA0]:
            return 1, 0.0
        if abs(H - pts[npts - 1]) <= merge_tol:
            npts -= 1
            base = 0.5 * (cum[npts] - cum[npts - 1])  # T(alpha_n, beta_{n-1}) of the cancelled corner
            return npts, base + active_increment(pts[npts], H, pts[npts - 1], True, p)
    Hc = clamp(H, p)
    pts[npts] = Hc
    cum[npts] = cpm_value(npts, cum, active)
    # cum now holds -T0 + ... + the completed triangle term; the new moving term starts at zero.
    return npts + 1, 0.0
