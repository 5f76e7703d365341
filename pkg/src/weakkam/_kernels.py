"""Compiled inner loops.

Every built-in Lagrangian has the form ``L(x, v) = kinetic(v) - V(x)`` with
``V`` a finite cosine sum, so the kernels take the family as an integer code
plus parameter arrays. Public wrappers live in the ``lagrangian``,
``envelope`` and ``aiming`` modules.
"""

import math

import numpy as np
from numba import njit

MECHANICAL = 0
KINKED = 1
ANISOTROPIC = 2
PIECEWISE_POWER = 3

TWO_PI = 2.0 * math.pi
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
GOLDEN_TOL = 1e-8


@njit(cache=True)
def _tie(a, b):
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= 1e-13 * (1.0 + abs(b))


@njit(cache=True)
def potential(x, modes, coeffs):
    s = 0.0
    for m in range(coeffs.shape[0]):
        arg = 0.0
        for j in range(x.shape[0]):
            arg += modes[m, j] * x[j]
        s += coeffs[m] * math.cos(TWO_PI * arg)
    return s


@njit(cache=True)
def kinetic(v, family, lam):
    nrm2 = 0.0
    for j in range(v.shape[0]):
        nrm2 += v[j] * v[j]
    if family == MECHANICAL:
        return 0.5 * nrm2
    nrm = math.sqrt(nrm2)
    if family == KINKED:
        return 0.5 * nrm2 + lam[0] * nrm
    if family == ANISOTROPIC:
        s = 0.5 * nrm2
        for j in range(v.shape[0]):
            s += lam[j] * abs(v[j])
        return s
    return max(nrm * math.sqrt(nrm), 0.5 * nrm2)


@njit(cache=True)
def _conj_obj(p, v, family, lam):
    s = 0.0
    for j in range(v.shape[0]):
        s += p[j] * v[j]
    return s - kinetic(v, family, lam)


@njit(cache=True)
def _golden_max_line(p, base, u, a, b, family, lam, v):
    """Golden-section maximization of the conjugate objective on ``base + t u``, t in [a, b]."""
    d = base.shape[0]
    c = b - INV_PHI * (b - a)
    e = a + INV_PHI * (b - a)
    for k in range(d):
        v[k] = base[k] + c * u[k]
    fc = _conj_obj(p, v, family, lam)
    for k in range(d):
        v[k] = base[k] + e * u[k]
    fe = _conj_obj(p, v, family, lam)
    while b - a > GOLDEN_TOL:
        if fc > fe:
            b = e
            e = c
            fe = fc
            c = b - INV_PHI * (b - a)
            for k in range(d):
                v[k] = base[k] + c * u[k]
            fc = _conj_obj(p, v, family, lam)
        else:
            a = c
            c = e
            fc = fe
            e = a + INV_PHI * (b - a)
            for k in range(d):
                v[k] = base[k] + e * u[k]
            fe = _conj_obj(p, v, family, lam)
    t = 0.5 * (a + b)
    for k in range(d):
        v[k] = base[k] + t * u[k]
    return t


@njit(cache=True)
def conjugate_argmax(p, family, lam, radius, m_v, out):
    """Maximize ``p.v - kinetic(v)`` over the ball of given radius.

    Lattice scan with spacing ``2 radius / m_v`` (ties: smallest norm, then
    lexicographic), then repeated golden-section line searches through the
    lattice argmax, each over +-1.5 lattice spacings. Writes the maximizer to ``out``
    and returns the maximal value.
    """
    d = p.shape[0]
    hv = 2.0 * radius / m_v
    half = m_v // 2
    r2 = radius * radius * (1.0 + 1e-12)
    v = np.zeros(d)
    best = -np.inf
    best_nrm = np.inf
    if d == 1:
        for i in range(m_v + 1):
            v[0] = (i - half) * hv
            g = _conj_obj(p, v, family, lam)
            nrm = abs(v[0])
            if g > best and not _tie(g, best):
                best, best_nrm, out[0] = g, nrm, v[0]
            elif _tie(g, best) and nrm < best_nrm:
                best, best_nrm, out[0] = max(g, best), nrm, v[0]
    else:
        for i in range(m_v + 1):
            for k in range(m_v + 1):
                v[0] = (i - half) * hv
                v[1] = (k - half) * hv
                nrm2 = v[0] * v[0] + v[1] * v[1]
                if nrm2 > r2:
                    continue
                g = _conj_obj(p, v, family, lam)
                nrm = math.sqrt(nrm2)
                if g > best and not _tie(g, best):
                    best, best_nrm = g, nrm
                    out[0], out[1] = v[0], v[1]
                elif _tie(g, best) and nrm < best_nrm:
                    best, best_nrm = max(g, best), nrm
                    out[0], out[1] = v[0], v[1]
    # Line refinement around the lattice argmax. In 2-D the axes alone can
    # stall on a nonsmooth ring, so radial, tangential and p directions are
    # searched too.
    dirs = np.zeros((5, d))
    base = np.empty(d)
    cand = np.empty(d)
    passes = 1 if d == 1 else 8
    for _ in range(passes):
        ndir = d
        for j in range(d):
            for k in range(d):
                dirs[j, k] = 0.0
            dirs[j, j] = 1.0
        if d == 2:
            nrm = math.sqrt(out[0] * out[0] + out[1] * out[1])
            if nrm > 0.0:
                dirs[2, 0], dirs[2, 1] = out[0] / nrm, out[1] / nrm
                dirs[3, 0], dirs[3, 1] = -out[1] / nrm, out[0] / nrm
                ndir = 4
            pn = math.sqrt(p[0] * p[0] + p[1] * p[1])
            if pn > 0.0:
                dirs[ndir, 0], dirs[ndir, 1] = p[0] / pn, p[1] / pn
                ndir += 1
        moved = False
        for j in range(ndir):
            for k in range(d):
                base[k] = out[k]
            _golden_max_line(p, base, dirs[j], -1.5 * hv, 1.5 * hv, family, lam, cand)
            if d == 2 and cand[0] * cand[0] + cand[1] * cand[1] > r2:
                continue
            if d == 1 and abs(cand[0]) > radius:
                continue
            g = _conj_obj(p, cand, family, lam)
            if g > best and not _tie(g, best):
                for k in range(d):
                    if abs(cand[k] - out[k]) > GOLDEN_TOL:
                        moved = True
                    out[k] = cand[k]
                best = g
        if not moved:
            break
    return best


@njit(cache=True)
def conjugate_many(ps, family, lam, radius, m_v):
    n, d = ps.shape
    vals = np.empty(n)
    vs = np.empty((n, d))
    buf = np.empty(d)
    for i in range(n):
        vals[i] = conjugate_argmax(ps[i], family, lam, radius, m_v, buf)
        for j in range(d):
            vs[i, j] = buf[j]
    return vals, vs


@njit(cache=True)
def potential_many(xs, modes, coeffs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = potential(xs[i], modes, coeffs)
    return out


@njit(cache=True)
def kinetic_many(vs, family, lam):
    out = np.empty(vs.shape[0])
    for i in range(vs.shape[0]):
        out[i] = kinetic(vs[i], family, lam)
    return out


# --------------------------------------------------------------------------
# periodic interpolation


@njit(cache=True)
def interp1(vals, u):
    n = vals.shape[0]
    s = u * n
    fl = math.floor(s)
    f = s - fl
    i = int(fl) % n
    return (1.0 - f) * vals[i] + f * vals[(i + 1) % n]


@njit(cache=True)
def interp2(vals, u0, u1):
    n = vals.shape[0]
    s0 = u0 * n
    s1 = u1 * n
    fl0 = math.floor(s0)
    fl1 = math.floor(s1)
    f0 = s0 - fl0
    f1 = s1 - fl1
    i0 = int(fl0) % n
    i1 = int(fl1) % n
    j0 = (i0 + 1) % n
    j1 = (i1 + 1) % n
    return ((1 - f0) * (1 - f1) * vals[i0, i1] + f0 * (1 - f1) * vals[j0, i1]
            + (1 - f0) * f1 * vals[i0, j1] + f0 * f1 * vals[j0, j1])


# --------------------------------------------------------------------------
# Moreau-Yosida envelopes


@njit(cache=True)
def _better(val, w_nrm, w_lex0, w_lex1, best, b_nrm, b_lex0, b_lex1):
    if val < best and not _tie(val, best):
        return True
    if not _tie(val, best):
        return False
    if w_nrm < b_nrm and not _tie(w_nrm, b_nrm):
        return True
    if not _tie(w_nrm, b_nrm):
        return False
    # numerically equal points keep the incumbent
    if not _tie(w_lex0, b_lex0):
        return w_lex0 < b_lex0
    return w_lex1 < b_lex1 and not _tie(w_lex1, b_lex1)


@njit(cache=True)
def lower_env_1d(vals, x, kappa, radius):
    """Exact minimum of ``interp(x + w) + w**2 / (2 kappa**2)`` over |w| <= radius.

    The interpolant is affine on each cell, so the cell-wise minimizer is the
    clamped vertex of a parabola.
    """
    n = vals.shape[0]
    h = 1.0 / n
    k2 = kappa * kappa
    inv = 0.5 / k2
    lo = x - radius
    hi = x + radius
    j0 = int(math.floor(lo * n))
    j1 = int(math.floor(hi * n))
    best = np.inf
    bw = 0.0
    for j in range(j0, j1 + 1):
        a = max(j * h, lo)
        b = min((j + 1) * h, hi)
        if b < a:
            continue
        jm = j % n
        y0 = vals[jm]
        s = (vals[(jm + 1) % n] - y0) * n
        u = x - s * k2
        if u < a:
            u = a
        elif u > b:
            u = b
        w = u - x
        val = y0 + s * (u - j * h) + w * w * inv
        if _better(val, abs(w), w, 0.0, best, abs(bw), bw, 0.0):
            best = val
            bw = w
    return best, bw


@njit(cache=True)
def _env2_cell_candidate(A, B, C, D, p0, p1, h, inv, s, t, best, b0, b1):
    """Evaluate the cell objective at local coordinates (s, t); keep it if better."""
    w0 = p0 + h * s
    w1 = p1 + h * t
    val = A + B * s + C * t + D * s * t + (w0 * w0 + w1 * w1) * inv
    if _better(val, math.sqrt(w0 * w0 + w1 * w1), w0, w1, best, math.sqrt(b0 * b0 + b1 * b1), b0, b1):
        return val, w0, w1
    return best, b0, b1


@njit(cache=True)
def _clamp(u, lo, hi):
    return lo if u < lo else (hi if u > hi else u)


@njit(cache=True)
def lower_env_2d(vals, x0, x1, kappa, radius):
    """Exact minimum of ``interp(x + w) + |w|**2 / (2 kappa**2)`` over the square ``|w|_inf <= radius``.

    The square contains the disc holding every minimizer, so this is the
    envelope. On each grid cell the objective is bilinear plus an isotropic
    quadratic: its minimum is the interior stationary point when that is a
    local minimum inside the cell, otherwise it lies on an edge, where the
    objective is a one-variable quadratic.
    """
    n = vals.shape[0]
    h = 1.0 / n
    inv = 0.5 / (kappa * kappa)
    a = 2.0 * inv * h * h
    i_lo = int(math.floor((x0 - radius) * n))
    i_hi = int(math.floor((x0 + radius) * n))
    j_lo = int(math.floor((x1 - radius) * n))
    j_hi = int(math.floor((x1 + radius) * n))
    # w = 0 first, so round-off in the cell formulas cannot beat an exact tie
    best = interp2(vals, x0, x1)
    b0 = 0.0
    b1 = 0.0
    for i in range(i_lo, i_hi + 1):
        p0 = i * h - x0
        sa = max(0.0, (-radius - p0) / h)
        sb = min(1.0, (radius - p0) / h)
        if sb < sa:
            continue
        im = i % n
        ip = (im + 1) % n
        for j in range(j_lo, j_hi + 1):
            p1 = j * h - x1
            ta = max(0.0, (-radius - p1) / h)
            tb = min(1.0, (radius - p1) / h)
            if tb < ta:
                continue
            jm = j % n
            jp = (jm + 1) % n
            A = vals[im, jm]
            B = vals[ip, jm] - A
            C = vals[im, jp] - A
            D = vals[ip, jp] - vals[ip, jm] - vals[im, jp] + A
            r0 = -(B + 2.0 * inv * h * p0)
            r1 = -(C + 2.0 * inv * h * p1)
            det = a * a - D * D
            if det > 0.0:
                s = (a * r0 - D * r1) / det
                t = (a * r1 - D * r0) / det
                if sa <= s <= sb and ta <= t <= tb:
                    best, b0, b1 = _env2_cell_candidate(A, B, C, D, p0, p1, h, inv, s, t, best, b0, b1)
            for t in (ta, tb):
                s = _clamp((r0 - D * t) / a, sa, sb)
                best, b0, b1 = _env2_cell_candidate(A, B, C, D, p0, p1, h, inv, s, t, best, b0, b1)
            for s in (sa, sb):
                t = _clamp((r1 - D * s) / a, ta, tb)
                best, b0, b1 = _env2_cell_candidate(A, B, C, D, p0, p1, h, inv, s, t, best, b0, b1)
    return best, b0, b1


@njit(cache=True)
def lower_env_1d_many(vals, xs, kappa, radius):
    n = xs.shape[0]
    out = np.empty(n)
    bs = np.empty(n)
    for i in range(n):
        out[i], bs[i] = lower_env_1d(vals, xs[i], kappa, radius)
    return out, bs


@njit(cache=True)
def lower_env_2d_many(vals, xs, kappa, radius):
    n = xs.shape[0]
    out = np.empty(n)
    bs = np.empty((n, 2))
    for i in range(n):
        out[i], bs[i, 0], bs[i, 1] = lower_env_2d(vals, xs[i, 0], xs[i, 1], kappa, radius)
    return out, bs


# --------------------------------------------------------------------------
# Krasovskii-Subbotin rollout of the proximal-aiming feedback


@njit(cache=True)
def quadrature_pieces(speed, dt, kmax):
    """Sub-intervals needed so each covers at most a quarter period of the fastest mode."""
    return max(1, int(math.ceil(4.0 * kmax * speed * dt)))


@njit(cache=True)
def _segment_potential_integral(x, v, dt, modes, coeffs, kmax, gl_nodes, gl_weights):
    d = x.shape[0]
    pos = np.empty(d)
    speed = 0.0
    for j in range(d):
        speed += v[j] * v[j]
    pieces = quadrature_pieces(math.sqrt(speed), dt, kmax)
    h = dt / pieces
    acc = 0.0
    for m in range(pieces):
        for g in range(gl_nodes.shape[0]):
            s = h * (m + 0.5 * (gl_nodes[g] + 1.0))
            for j in range(d):
                pos[j] = x[j] + s * v[j]
            acc += gl_weights[g] * potential(pos, modes, coeffs)
    return 0.5 * h * acc


@njit(cache=True)
def _wrap_inplace(x):
    for j in range(x.shape[0]):
        y = x[j] - math.floor(x[j])
        if y >= 1.0:
            y = 0.0
        x[j] = y


@njit(cache=True)
def rollout(vals1, vals2, d, y, times, kappa, env_radius,
            family, lam, modes, coeffs, v_radius, m_v, gl_nodes, gl_weights):
    """Step-by-step scheme: velocity frozen at the feedback value of each partition node.

    Returns positions at partition times, segment velocities, cumulative
    running cost and per-segment ``|b|`` (proximal shift norms).
    """
    nseg = times.shape[0] - 1
    xs = np.empty((nseg + 1, d))
    vs = np.empty((nseg, d))
    cost = np.empty(nseg + 1)
    shifts = np.empty(nseg)
    x = y.copy()
    q = np.empty(d)
    v = np.empty(d)
    inv_k2 = 1.0 / (kappa * kappa)
    kmax = 0.0
    for m in range(modes.shape[0]):
        kk = 0.0
        for j in range(modes.shape[1]):
            kk += modes[m, j] * modes[m, j]
        kmax = max(kmax, math.sqrt(kk))
    cost[0] = 0.0
    for j in range(d):
        xs[0, j] = x[j]
    for i in range(nseg):
        if d == 1:
            _, b0 = lower_env_1d(vals1, x[0], kappa, env_radius)
            q[0] = b0 * inv_k2
            shifts[i] = abs(b0)
        else:
            _, b0, b1 = lower_env_2d(vals2, x[0], x[1], kappa, env_radius)
            q[0] = b0 * inv_k2
            q[1] = b1 * inv_k2
            shifts[i] = math.sqrt(b0 * b0 + b1 * b1)
        # argmax of -p.v - L(x+b, v) with p = -b/kappa^2; V(x+b) does not depend on v
        conjugate_argmax(q, family, lam, v_radius, m_v, v)
        dt = times[i + 1] - times[i]
        seg = dt * kinetic(v, family, lam) - _segment_potential_integral(
            x, v, dt, modes, coeffs, kmax, gl_nodes, gl_weights)
        cost[i + 1] = cost[i] + seg
        for j in range(d):
            vs[i, j] = v[j]
            x[j] = x[j] + dt * v[j]
        _wrap_inplace(x)
        for j in range(d):
            xs[i + 1, j] = x[j]
    return xs, vs, cost, shifts
