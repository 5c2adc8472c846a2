"""Compiled inner loops: trap force, Dormand-Prince 5(4) stepping, timing searches.

Everything here works in the dimensionless convention m = omega = v_B = R = 1.
The state vector of one packet is ``[x, y, z, vx, vy, vz, S]`` where ``S`` is
the accumulated action.  Public wrappers live in :mod:`sagnacsim.dynamics` and
:mod:`sagnacsim.protocol`; nothing in this module validates its inputs.
"""

import math

import numba as nb
import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

# status codes returned by the integrator
OK = 0
STEP_UNDERFLOW = 1
TOO_MANY_STEPS = 2
NO_BRACKET = 3

MAX_STEPS = 2_000_000
NO_TRACE = np.empty((0, 8))

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


@nb.njit(cache=True, nogil=True)
def potential(r, zeta2, coeffs, exps):
    x, y, z = r[0], r[1], r[2]
    px = np.empty(5)
    py = np.empty(5)
    pz = np.empty(5)
    px[0] = py[0] = pz[0] = 1.0
    for p in range(1, 5):
        px[p] = px[p - 1] * x
        py[p] = py[p - 1] * y
        pz[p] = pz[p - 1] * z
    v = 0.5 * (x * x + y * y + zeta2 * z * z)
    s = 0.0
    for k in range(coeffs.shape[0]):
        ck = coeffs[k]
        if ck != 0.0:
            s += ck * px[exps[k, 0]] * py[exps[k, 1]] * pz[exps[k, 2]]
    return v + 0.5 * s


@nb.njit(cache=True, nogil=True)
def _rhs(y, zeta2, coeffs, exps, out):
    x, yy, z = y[0], y[1], y[2]
    vx, vy, vz = y[3], y[4], y[5]
    px = np.empty(5)
    py = np.empty(5)
    pz = np.empty(5)
    px[0] = py[0] = pz[0] = 1.0
    for p in range(1, 5):
        px[p] = px[p - 1] * x
        py[p] = py[p - 1] * yy
        pz[p] = pz[p - 1] * z
    ax = -x
    ay = -yy
    az = -zeta2 * z
    vpot = 0.5 * (x * x + yy * yy + zeta2 * z * z)
    for k in range(coeffs.shape[0]):
        ck = coeffs[k]
        if ck == 0.0:
            continue
        l, m, n = exps[k, 0], exps[k, 1], exps[k, 2]
        vpot += 0.5 * ck * px[l] * py[m] * pz[n]
        if l > 0:
            ax -= 0.5 * ck * l * px[l - 1] * py[m] * pz[n]
        if m > 0:
            ay -= 0.5 * ck * m * px[l] * py[m - 1] * pz[n]
        if n > 0:
            az -= 0.5 * ck * n * px[l] * py[m] * pz[n - 1]
    out[0] = vx
    out[1] = vy
    out[2] = vz
    out[3] = ax
    out[4] = ay
    out[5] = az
    out[6] = 0.5 * (vx * vx + vy * vy + vz * vz) - vpot


@nb.njit(cache=True, nogil=True)
def force(r, zeta2, coeffs, exps):
    y = np.zeros(7)
    y[0], y[1], y[2] = r[0], r[1], r[2]
    out = np.empty(7)
    _rhs(y, zeta2, coeffs, exps, out)
    return out[3:6].copy()


@nb.njit(cache=True, nogil=True)
def _rms(v, y0, y1, rtol, atol):
    s = 0.0
    for i in range(v.shape[0]):
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        q = v[i] / sc
        s += q * q
    return math.sqrt(s / v.shape[0])


@nb.njit(cache=True, nogil=True)
def _initial_step(y, f, zeta2, coeffs, exps, rtol, atol, span):
    n = y.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (f[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y + h0 * f
    f1 = np.empty(n)
    _rhs(y1, zeta2, coeffs, exps, f1)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d2 += ((f1[i] - f[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1)


@nb.njit(cache=True, nogil=True)
def integrate(y, duration, zeta2, coeffs, exps, rtol, atol, max_step, trace=NO_TRACE):
    """Advance ``y`` in place by ``duration``.  Returns (status, n_accepted).

    If ``trace`` has rows, accepted steps are written there as (t, *y) until
    it is full.
    """
    if trace.shape[0] > 0:
        trace[0, 0] = 0.0
        trace[0, 1:] = y
    if duration <= 0.0:
        return OK, 0
    n = y.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    yt = np.empty(n)
    ynew = np.empty(n)
    err = np.empty(n)
    _rhs(y, zeta2, coeffs, exps, k1)
    h = min(_initial_step(y, k1, zeta2, coeffs, exps, rtol, atol, duration), max_step)
    t = 0.0
    steps = 0
    while t < duration:
        if steps > MAX_STEPS:
            return TOO_MANY_STEPS, steps
        if h < 1e-14 * max(1.0, duration):
            return STEP_UNDERFLOW, steps
        last = False
        if t + h >= duration:
            h = duration - t
            last = True
        for i in range(n):
            yt[i] = y[i] + h * A21 * k1[i]
        _rhs(yt, zeta2, coeffs, exps, k2)
        for i in range(n):
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        _rhs(yt, zeta2, coeffs, exps, k3)
        for i in range(n):
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        _rhs(yt, zeta2, coeffs, exps, k4)
        for i in range(n):
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        _rhs(yt, zeta2, coeffs, exps, k5)
        for i in range(n):
            yt[i] = y[i] + h * (
                A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]
            )
        _rhs(yt, zeta2, coeffs, exps, k6)
        for i in range(n):
            ynew[i] = y[i] + h * (
                B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]
            )
        _rhs(ynew, zeta2, coeffs, exps, k7)
        for i in range(n):
            err[i] = h * (
                E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]
            )
        en = _rms(err, y, ynew, rtol, atol)
        if en <= 1.0:
            if last:
                t = duration
            else:
                t += h
            for i in range(n):
                y[i] = ynew[i]
                k1[i] = k7[i]
            steps += 1
            if steps < trace.shape[0]:
                trace[steps, 0] = t
                trace[steps, 1:] = y
            if en == 0.0:
                fac = 10.0
            else:
                fac = min(10.0, 0.9 * en ** -0.2)
            if not last:
                h = min(h * fac, max_step)
        else:
            h = h * max(0.2, 0.9 * en ** -0.2)
    return OK, steps


# ---------------------------------------------------------------------------
# interferometer sequence
#
# Packets are stored as rows of an (P, 7) array.  Pairs whose separation is
# tracked sit in consecutive rows: (R, L) before the x split and
# (R+, R-, L+, L-) after it.


@nb.njit(cache=True, nogil=True)
def _pair_at(t, r0, v0, ky, zeta2, coeffs, exps, rtol, atol, max_step, out):
    """States of the R and L packets a time ``t`` after the y split."""
    status = OK
    for s in range(2):
        sign = 1.0 if s == 0 else -1.0
        for i in range(3):
            out[s, i] = r0[i]
            out[s, 3 + i] = v0[i] + sign * ky[i]
        out[s, 6] = 0.0
        st, _ = integrate(out[s], t, zeta2, coeffs, exps, rtol, atol, max_step)
        if st != OK:
            status = st
    return status


@nb.njit(cache=True, nogil=True)
def _advance_all(states, dt, zeta2, coeffs, exps, rtol, atol, max_step):
    status = OK
    for p in range(states.shape[0]):
        st, _ = integrate(states[p], dt, zeta2, coeffs, exps, rtol, atol, max_step)
        if st != OK:
            status = st
    return status


@nb.njit(cache=True, nogil=True)
def split_x(pair, kx, out):
    """Four packets R+, R-, L+, L- from the R, L pair, action reset to zero."""
    for s in range(2):
        for k in range(2):
            sign = 1.0 if k == 0 else -1.0
            p = 2 * s + k
            for i in range(3):
                out[p, i] = pair[s, i]
                out[p, 3 + i] = pair[s, 3 + i] + sign * kx[i]
            out[p, 6] = 0.0


@nb.njit(cache=True, nogil=True)
def gap2(states):
    """Sum of squared separations over consecutive packet pairs."""
    s = 0.0
    for a in range(0, states.shape[0], 2):
        for i in range(3):
            d = states[a, i] - states[a + 1, i]
            s += d * d
    return s


@nb.njit(cache=True, nogil=True)
def _gap_slope(states, zeta2, coeffs, exps):
    """First and second time derivatives of :func:`gap2`."""
    f = np.empty(7)
    acc = np.empty((states.shape[0], 3))
    for p in range(states.shape[0]):
        _rhs(states[p], zeta2, coeffs, exps, f)
        for i in range(3):
            acc[p, i] = f[3 + i]
    g = 0.0
    gp = 0.0
    for a in range(0, states.shape[0], 2):
        b = a + 1
        for i in range(3):
            dr = states[a, i] - states[b, i]
            dv = states[a, 3 + i] - states[b, 3 + i]
            da = acc[a, i] - acc[b, i]
            g += 2.0 * dr * dv
            gp += 2.0 * (dv * dv + dr * da)
    return g, gp


@nb.njit(cache=True, nogil=True)
def _objective(base, dt, sign, zeta2, coeffs, exps, rtol, atol, max_step, work):
    work[:, :] = base
    st = _advance_all(work, dt, zeta2, coeffs, exps, rtol, atol, max_step)
    return sign * gap2(work), st


@nb.njit(cache=True, nogil=True)
def golden_search(base, lo, hi, sign, tol, polish, zeta2, coeffs, exps, rtol, atol, max_step):
    """Golden-section search of ``sign * gap2`` over elapsed time [lo, hi].

    ``base`` holds the packets already advanced to time ``lo``.  With
    ``polish`` the final bracket midpoint is refined by Newton steps on the
    time derivative of the gap, which stays well conditioned where gap2 is
    flat.  Returns (t, status).
    """
    work = np.empty_like(base)
    span = hi - lo
    f_lo = sign * gap2(base)
    f_hi, st = _objective(base, span, sign, zeta2, coeffs, exps, rtol, atol, max_step, work)
    if st != OK:
        return lo, st
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, st = _objective(base, c - lo, sign, zeta2, coeffs, exps, rtol, atol, max_step, work)
    fd, st2 = _objective(base, d - lo, sign, zeta2, coeffs, exps, rtol, atol, max_step, work)
    if st != OK or st2 != OK:
        return lo, max(st, st2)
    if min(fc, fd) >= f_lo or min(fc, fd) >= f_hi:
        return 0.5 * (lo + hi), NO_BRACKET
    while b - a > tol:
        if fc < fd:
            b = d
            d = c
            fd = fc
            c = b - INV_PHI * (b - a)
            fc, st = _objective(base, c - lo, sign, zeta2, coeffs, exps, rtol, atol, max_step, work)
        else:
            a = c
            c = d
            fc = fd
            d = a + INV_PHI * (b - a)
            fd, st = _objective(base, d - lo, sign, zeta2, coeffs, exps, rtol, atol, max_step, work)
        if st != OK:
            return 0.5 * (a + b), st
    mid = 0.5 * (a + b)
    if mid - lo < 1e-3 * span or hi - mid < 1e-3 * span:
        return mid, NO_BRACKET
    t = mid
    if polish:
        width = max(b - a, 1e-6)
        for _ in range(6):
            work[:, :] = base
            _advance_all(work, t - lo, zeta2, coeffs, exps, rtol, atol, max_step)
            g, gp = _gap_slope(work, zeta2, coeffs, exps)
            if sign * gp <= 0.0:
                break
            step = -g / gp
            if abs(t + step - mid) > 2.0 * width:
                break
            t += step
            if abs(step) < 1e-15 * max(1.0, abs(t)):
                break
    return t, OK


@nb.njit(cache=True, nogil=True)
def find_t1o(r0, v0, ky, zeta2, coeffs, exps, rtol, atol, max_step, lo, hi, tol, polish):
    """Time of maximal R/L separation after the y split.  Returns (t, status)."""
    base = np.empty((2, 7))
    st = _pair_at(lo, r0, v0, ky, zeta2, coeffs, exps, rtol, atol, max_step, base)
    if st != OK:
        return lo, st
    return golden_search(base, lo, hi, -1.0, tol, polish, zeta2, coeffs, exps, rtol, atol, max_step)


@nb.njit(cache=True, nogil=True)
def find_t2o(quad0, zeta2, coeffs, exps, rtol, atol, max_step, lo, hi, tol, polish):
    """Orbit time minimising the packet gap; ``quad0`` is the state right after the x split.

    Returns (t2o, gap2 at t2o, status).
    """
    base = quad0.copy()
    st = _advance_all(base, lo, zeta2, coeffs, exps, rtol, atol, max_step)
    if st != OK:
        return lo, 0.0, st
    t, st = golden_search(base, lo, hi, 1.0, tol, polish, zeta2, coeffs, exps, rtol, atol, max_step)
    if st != OK:
        return t, 0.0, st
    work = base.copy()
    _advance_all(work, t - lo, zeta2, coeffs, exps, rtol, atol, max_step)
    return t, gap2(work), OK


@nb.njit(cache=True, nogil=True)
def run_sequence(r0, v0, kx, ky, zeta2, coeffs, exps, t1, t2, rtol, atol, max_step):
    """Full pulse sequence with fixed times.

    Returns (pair at t1, quad at t1 + t2, status).  Action in the quad is
    accumulated from the x split only.
    """
    pair = np.empty((2, 7))
    st = _pair_at(t1, r0, v0, ky, zeta2, coeffs, exps, rtol, atol, max_step, pair)
    quad = np.empty((4, 7))
    split_x(pair, kx, quad)
    st2 = _advance_all(quad, t2, zeta2, coeffs, exps, rtol, atol, max_step)
    if st == OK:
        st = st2
    return pair, quad, st


@nb.njit(cache=True, nogil=True)
def locate_and_run(
    r0, v0, kx, ky, zeta2, coeffs, exps, delta1, delta2, n_orbits,
    rtol, atol, max_step, tol, polish,
):
    """Locate t1o and t2o the way the experiment would, then run with the offsets.

    Returns (t1o, t2o, pair, quad, status).
    """
    half = 0.5 * math.pi
    empty2 = np.zeros((2, 7))
    empty4 = np.zeros((4, 7))
    t1o, st = find_t1o(
        r0, v0, ky, zeta2, coeffs, exps, rtol, atol, max_step,
        0.6 * half, 1.4 * half, tol, polish,
    )
    if st != OK:
        return t1o, 0.0, empty2, empty4, st
    t1 = t1o + delta1
    pair = np.empty((2, 7))
    st = _pair_at(t1, r0, v0, ky, zeta2, coeffs, exps, rtol, atol, max_step, pair)
    if st != OK:
        return t1o, 0.0, empty2, empty4, st
    quad0 = np.empty((4, 7))
    split_x(pair, kx, quad0)
    centre = 2.0 * math.pi * n_orbits
    t2o, _, st = find_t2o(
        quad0, zeta2, coeffs, exps, rtol, atol, max_step,
        centre - half, centre + half, tol, polish,
    )
    if st != OK:
        return t1o, t2o, pair, empty4, st
    quad = quad0.copy()
    st = _advance_all(quad, t2o + delta2, zeta2, coeffs, exps, rtol, atol, max_step)
    return t1o, t2o, pair, quad, st
