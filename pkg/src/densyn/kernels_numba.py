"""Numba kernel implementations (default backend).

Scalar per-node twins of ``kernels_numpy``; node loops are ``prange``
parallel.  Dimensions 1-3 have hand-unrolled interpolation, higher
dimensions fall back to a generic corner-buffer path.
"""

import numpy as np
from numba import njit, prange

NAME = "numba"

SYS_TOY = 0
SYS_ACC = 1

FLAG_OK = 0
FLAG_BLOWUP = 1
FLAG_NONFINITE = 2


@njit(cache=True, inline="always")
def _lerp(v0, v1, w):
    if w == 0.0:
        return v0
    if w == 1.0:
        return v1
    return v0 + w * (v1 - v0)


@njit(cache=True, inline="always")
def _loc(x, lo_k, h_k, count_k):
    t = (x - lo_k) / h_k
    top = count_k - 1.0
    if t < 0.0:
        t = 0.0
    elif t > top:
        t = top
    i0 = int(t)
    if i0 > count_k - 2:
        i0 = count_k - 2
    return i0, t - i0


@njit(cache=True)
def _interp_one(vals, x, lo, h, count, strides):
    n = lo.shape[0]
    if n == 1:
        i0, w0 = _loc(x[0], lo[0], h[0], count[0])
        b = i0 * strides[0]
        return _lerp(vals[b], vals[b + strides[0]], w0)
    if n == 2:
        i0, w0 = _loc(x[0], lo[0], h[0], count[0])
        i1, w1 = _loc(x[1], lo[1], h[1], count[1])
        b = i0 * strides[0] + i1 * strides[1]
        s0 = strides[0]
        s1 = strides[1]
        c0 = _lerp(vals[b], vals[b + s1], w1)
        c1 = _lerp(vals[b + s0], vals[b + s0 + s1], w1)
        return _lerp(c0, c1, w0)
    if n == 3:
        i0, w0 = _loc(x[0], lo[0], h[0], count[0])
        i1, w1 = _loc(x[1], lo[1], h[1], count[1])
        i2, w2 = _loc(x[2], lo[2], h[2], count[2])
        s0 = strides[0]
        s1 = strides[1]
        s2 = strides[2]
        b = i0 * s0 + i1 * s1 + i2 * s2
        c00 = _lerp(vals[b], vals[b + s2], w2)
        c01 = _lerp(vals[b + s1], vals[b + s1 + s2], w2)
        c10 = _lerp(vals[b + s0], vals[b + s0 + s2], w2)
        c11 = _lerp(vals[b + s0 + s1], vals[b + s0 + s1 + s2], w2)
        return _lerp(_lerp(c00, c01, w1), _lerp(c10, c11, w1), w0)
    # generic dimension: gather 2^n corners then fold, last axis first
    nc = 1 << n
    corners = np.empty(nc)
    wbuf = np.empty(n)
    base = 0
    for k in range(n):
        ik, wk = _loc(x[k], lo[k], h[k], count[k])
        base += ik * strides[k]
        wbuf[k] = wk
    for c in range(nc):
        off = 0
        for k in range(n):
            if (c >> (n - 1 - k)) & 1:
                off += strides[k]
        corners[c] = vals[base + off]
    size = nc
    for ax in range(n - 1, -1, -1):
        half = size // 2
        for idx in range(half):
            corners[idx] = _lerp(corners[2 * idx], corners[2 * idx + 1], wbuf[ax])
        size = half
    return corners[0]


@njit(cache=True, parallel=True)
def interp_many(vals, pts, lo, h, count, strides):
    N = pts.shape[0]
    out = np.empty(N)
    for i in prange(N):
        out[i] = _interp_one(vals, pts[i], lo, h, count, strides)
    return out


@njit(cache=True, parallel=True)
def sl_sweep(vals, lo, h, count, strides, adv, cost, uvals0, gamma, cost_w,
             maximize, group=1):
    S = cost.shape[0]
    N = cost.shape[1]
    n_groups = S // group
    out = np.empty(N)
    bestj = np.empty(N, dtype=np.int64)
    for i in prange(N):
        bv = 0.0
        bu = 0.0
        bj = 0
        for g in range(n_groups):
            val = -np.inf
            for l in range(group):
                j = g * group + l
                vi = _interp_one(vals, adv[j, i], lo, h, count, strides)
                vj = cost_w * cost[j, i] + gamma * vi
                if vj > val:
                    val = vj
            uv = uvals0[g * group, i]
            if g == 0:
                bv = val
                bu = uv
                continue
            if maximize:
                better = val > bv or (val == bv and uv < bu)
            else:
                better = val < bv or (val == bv and uv < bu)
            if better:
                bv = val
                bu = uv
                bj = g
        out[i] = bv
        bestj[i] = bj
    return out, bestj


@njit(cache=True)
def _clf_one(kind, y, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode, d_const,
             d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h, count, strides, f_out):
    for c in range(u_tables.shape[0]):
        u = _interp_one(u_tables[c], y, lo, h, count, strides)
        if u < u_lo[c]:
            u = u_lo[c]
        elif u > u_hi[c]:
            u = u_hi[c]
        u_buf[c] = u
    if d_mode == 1:
        for c in range(d_const.shape[0]):
            d_buf[c] = d_const[c]
    elif d_mode == 2:
        for c in range(d_tables.shape[0]):
            d = _interp_one(d_tables[c], y, lo, h, count, strides)
            if d < d_lo[c]:
                d = d_lo[c]
            elif d > d_hi[c]:
                d = d_hi[c]
            d_buf[c] = d
    if kind == SYS_TOY:
        f_out[0] = u_buf[0]
    else:  # SYS_ACC
        f_out[0] = d_buf[0]
        f_out[1] = u_buf[0]
        f_out[2] = y[0] - y[1]
    for k in range(f_out.shape[0]):
        if y[k] <= sb_lo[k] and f_out[k] < 0.0:
            f_out[k] = 0.0
        elif y[k] >= sb_hi[k] and f_out[k] > 0.0:
            f_out[k] = 0.0


@njit(cache=True, parallel=True)
def closed_loop_many(kind, pts, u_tables, u_lo, u_hi, d_mode, d_const, d_tables,
                     d_lo, d_hi, sb_lo, sb_hi, lo, h, count, strides):
    N = pts.shape[0]
    n = pts.shape[1]
    out = np.empty((N, n))
    for i in prange(N):
        u_buf = np.empty(u_tables.shape[0])
        d_buf = np.empty(max(d_const.shape[0], d_tables.shape[0]))
        _clf_one(kind, pts[i], u_buf, d_buf, u_tables, u_lo, u_hi, d_mode,
                 d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h, count,
                 strides, out[i])
    return out


@njit(cache=True, inline="always")
def _phi_one(y, phi_kind, phi_lo, phi_hi, phi_amp, phi_table, lo, h, count, strides):
    if phi_kind == 0:
        for k in range(phi_lo.shape[0]):
            if y[k] < phi_lo[k] or y[k] > phi_hi[k]:
                return 0.0
        return phi_amp
    return _interp_one(phi_table, y, lo, h, count, strides)


@njit(cache=True)
def _div_one(kind, y, yp, ym, fp, fm, u_buf, d_buf, u_tables, u_lo, u_hi,
             d_mode, d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi,
             lo, h, count, strides, div_mode, div_table, h_div):
    if div_mode == 0:
        return _interp_one(div_table, y, lo, h, count, strides)
    n = y.shape[0]
    total = 0.0
    for k in range(n):
        for q in range(n):
            yp[q] = y[q]
            ym[q] = y[q]
        yp[k] = y[k] + h_div[k]
        ym[k] = y[k] - h_div[k]
        _clf_one(kind, yp, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode, d_const,
                 d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h, count, strides, fp)
        _clf_one(kind, ym, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode, d_const,
                 d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h, count, strides, fm)
        total += (fp[k] - fm[k]) / (2.0 * h_div[k])
    return total


@njit(cache=True, parallel=True)
def density_backward(nodes, kind, u_tables, u_lo, u_hi, d_mode, d_const,
                     d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h, count, strides,
                     div_mode, div_table, h_div, phi_kind, phi_lo, phi_hi,
                     phi_amp, phi_table, kappa, dt, t_max, exp_cap):
    N = nodes.shape[0]
    n = nodes.shape[1]
    rho = np.zeros(N)
    flags = np.zeros(N, dtype=np.uint8)
    n_steps = int(np.ceil(t_max / dt))
    for i in prange(N):
        y = nodes[i].copy()
        y2 = np.empty(n)
        f1 = np.empty(n)
        f2 = np.empty(n)
        f3 = np.empty(n)
        f4 = np.empty(n)
        yp = np.empty(n)
        ym = np.empty(n)
        fp = np.empty(n)
        fm = np.empty(n)
        u_buf = np.empty(u_tables.shape[0])
        d_buf = np.empty(max(d_const.shape[0], d_tables.shape[0]))
        a = 0.0
        acc = 0.0
        t = 0.0
        flag = 0
        for step in range(n_steps):
            hstep = dt
            if t + hstep > t_max:
                hstep = t_max - t
            # stage 1 (also hosts the exit checks)
            _clf_one(kind, y, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode,
                     d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h,
                     count, strides, f1)
            ph1 = _phi_one(y, phi_kind, phi_lo, phi_hi, phi_amp, phi_table,
                           lo, h, count, strides)
            expo1 = -kappa * t - a
            if ph1 > 0.0 and expo1 > exp_cap:
                flag = FLAG_BLOWUP
                break
            mx = 0.0
            for k in range(n):
                af = abs(f1[k])
                if af > mx:
                    mx = af
            if mx == 0.0 and ph1 == 0.0:
                break
            d1 = _div_one(kind, y, yp, ym, fp, fm, u_buf, d_buf, u_tables,
                          u_lo, u_hi, d_mode, d_const, d_tables, d_lo, d_hi,
                          sb_lo, sb_hi, lo, h, count, strides, div_mode,
                          div_table, h_div)
            e1 = expo1
            if e1 > exp_cap:
                e1 = exp_cap
            i1 = ph1 * np.exp(e1) if ph1 > 0.0 else 0.0
            # stage 2
            for k in range(n):
                y2[k] = y[k] - 0.5 * hstep * f1[k]
            a2 = a + 0.5 * hstep * d1
            t2 = t + 0.5 * hstep
            _clf_one(kind, y2, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode,
                     d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h,
                     count, strides, f2)
            ph2 = _phi_one(y2, phi_kind, phi_lo, phi_hi, phi_amp, phi_table,
                           lo, h, count, strides)
            d2 = _div_one(kind, y2, yp, ym, fp, fm, u_buf, d_buf, u_tables,
                          u_lo, u_hi, d_mode, d_const, d_tables, d_lo, d_hi,
                          sb_lo, sb_hi, lo, h, count, strides, div_mode,
                          div_table, h_div)
            e2 = -kappa * t2 - a2
            if e2 > exp_cap:
                e2 = exp_cap
            i2 = ph2 * np.exp(e2) if ph2 > 0.0 else 0.0
            # stage 3
            for k in range(n):
                y2[k] = y[k] - 0.5 * hstep * f2[k]
            a3 = a + 0.5 * hstep * d2
            _clf_one(kind, y2, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode,
                     d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h,
                     count, strides, f3)
            ph3 = _phi_one(y2, phi_kind, phi_lo, phi_hi, phi_amp, phi_table,
                           lo, h, count, strides)
            d3 = _div_one(kind, y2, yp, ym, fp, fm, u_buf, d_buf, u_tables,
                          u_lo, u_hi, d_mode, d_const, d_tables, d_lo, d_hi,
                          sb_lo, sb_hi, lo, h, count, strides, div_mode,
                          div_table, h_div)
            e3 = -kappa * t2 - a3
            if e3 > exp_cap:
                e3 = exp_cap
            i3 = ph3 * np.exp(e3) if ph3 > 0.0 else 0.0
            # stage 4
            for k in range(n):
                y2[k] = y[k] - hstep * f3[k]
            a4 = a + hstep * d3
            t4 = t + hstep
            _clf_one(kind, y2, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode,
                     d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h,
                     count, strides, f4)
            ph4 = _phi_one(y2, phi_kind, phi_lo, phi_hi, phi_amp, phi_table,
                           lo, h, count, strides)
            d4 = _div_one(kind, y2, yp, ym, fp, fm, u_buf, d_buf, u_tables,
                          u_lo, u_hi, d_mode, d_const, d_tables, d_lo, d_hi,
                          sb_lo, sb_hi, lo, h, count, strides, div_mode,
                          div_table, h_div)
            e4 = -kappa * t4 - a4
            if e4 > exp_cap:
                e4 = exp_cap
            i4 = ph4 * np.exp(e4) if ph4 > 0.0 else 0.0
            ok = True
            for k in range(n):
                y[k] = y[k] - (hstep / 6.0) * (f1[k] + 2.0 * f2[k] + 2.0 * f3[k] + f4[k])
                if not np.isfinite(y[k]):
                    ok = False
            a = a + (hstep / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            acc = acc + (hstep / 6.0) * (i1 + 2.0 * i2 + 2.0 * i3 + i4)
            if not (ok and np.isfinite(a) and np.isfinite(acc)):
                flag = FLAG_NONFINITE
                acc = 0.0
                break
            t = t + hstep
        rho[i] = acc
        flags[i] = flag
    return rho, flags


def warmup():
    """Force-compile the kernels on tiny inputs (amortized by cache=True)."""
    lo = np.zeros(1)
    h = np.ones(1)
    count = np.array([2], dtype=np.int64)
    strides = np.array([1], dtype=np.int64)
    vals = np.array([0.0, 1.0])
    pts = np.array([[0.5]])
    interp_many(vals, pts, lo, h, count, strides)
    adv = np.zeros((2, 1, 1))
    cost = np.zeros((2, 1))
    uv = np.zeros((2, 1))
    sl_sweep(vals, lo, h, count, strides, adv, cost, uv, 0.9, 0.1, False)
    sl_sweep(vals, lo, h, count, strides, adv, cost, uv, 0.9, 0.1, True)
    u_tab = np.zeros((1, 2))
    box = np.array([-1.0]), np.array([1.0])
    dnone = np.zeros(0)
    dtab = np.zeros((0, 2))
    closed_loop_many(SYS_TOY, pts, u_tab, box[0], box[1], 0, dnone, dtab,
                     dnone, dnone, np.array([-10.0]), np.array([10.0]),
                     lo, h, count, strides)
    density_backward(pts, SYS_TOY, u_tab, box[0], box[1], 0, dnone, dtab,
                     dnone, dnone, np.array([-10.0]), np.array([10.0]),
                     lo, h, count, strides, 0, vals, h * 0.5,
                     0, np.array([-1.0]), np.array([1.0]), 1.0, vals,
                     1.0, 0.5, 1.0, 600.0)


@njit(cache=True)
def _cic_one(out, y, w, lo, h, count, strides):
    n = y.shape[0]
    nc = 1 << n
    for c in range(nc):
        ww = w
        off = 0
        for k in range(n):
            ik, wk = _loc(y[k], lo[k], h[k], count[k])
            if (c >> (n - 1 - k)) & 1:
                off += (ik + 1) * strides[k]
                ww *= wk
            else:
                off += ik * strides[k]
                ww *= 1.0 - wk
        out[off] += ww


@njit(cache=True)
def splat_forward(parts, weights, kind, u_tables, u_lo, u_hi, d_mode, d_const,
                  d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h, count, strides,
                  kappa, dt, t_max):
    """Serial twin of kernels_numpy.splat_forward (deposits race under prange)."""
    total = 1
    for k in range(count.shape[0]):
        total *= count[k]
    out = np.zeros(total)
    P = parts.shape[0]
    n = parts.shape[1]
    n_steps = int(np.ceil(t_max / dt))
    y = np.empty(n)
    y2 = np.empty(n)
    f1 = np.empty(n)
    f2 = np.empty(n)
    f3 = np.empty(n)
    f4 = np.empty(n)
    u_buf = np.empty(u_tables.shape[0])
    d_buf = np.empty(max(d_const.shape[0], d_tables.shape[0]))
    for pidx in range(P):
        for k in range(n):
            y[k] = parts[pidx, k]
        w = weights[pidx]
        t = 0.0
        for step in range(n_steps):
            hstep = dt
            if t + hstep > t_max:
                hstep = t_max - t
            _clf_one(kind, y, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode,
                     d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h,
                     count, strides, f1)
            mx = 0.0
            for k in range(n):
                af = abs(f1[k])
                if af > mx:
                    mx = af
            if mx == 0.0:
                tail = w * (np.exp(-kappa * t) - np.exp(-kappa * t_max)) / kappa
                _cic_one(out, y, tail, lo, h, count, strides)
                break
            _cic_one(out, y, w * np.exp(-kappa * t) * hstep, lo, h, count, strides)
            for k in range(n):
                y2[k] = y[k] + 0.5 * hstep * f1[k]
            _clf_one(kind, y2, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode,
                     d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h,
                     count, strides, f2)
            for k in range(n):
                y2[k] = y[k] + 0.5 * hstep * f2[k]
            _clf_one(kind, y2, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode,
                     d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h,
                     count, strides, f3)
            for k in range(n):
                y2[k] = y[k] + hstep * f3[k]
            _clf_one(kind, y2, u_buf, d_buf, u_tables, u_lo, u_hi, d_mode,
                     d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h,
                     count, strides, f4)
            for k in range(n):
                y[k] = y[k] + (hstep / 6.0) * (f1[k] + 2.0 * f2[k] + 2.0 * f3[k] + f4[k])
            t = t + hstep
    return out
