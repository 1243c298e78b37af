"""Pure-numpy kernel implementations (fallback backend).

Vectorized twins of the numba kernels in ``kernels_numba``: multilinear
interpolation, the semi-Lagrangian sweep, and backward characteristic
integration of the stationary density.  Same arithmetic, array-at-a-time.
"""

import numpy as np

NAME = "numpy"

# dynamics kinds understood by the kernels
SYS_TOY = 0  # 1-d single integrator: xdot = u
SYS_ACC = 1  # (v_l, v, D): xdot = (a_l, a, v_l - v)

# density node status flags
FLAG_OK = 0
FLAG_BLOWUP = 1
FLAG_NONFINITE = 2


def warmup():
    """No-op; exists for API parity with the numba backend."""


# ---------------------------------------------------------------------------
# interpolation


def _locate(pts, lo, h, count):
    t = (pts - lo) / h
    t = np.clip(t, 0.0, (count - 1).astype(np.float64))
    i0 = np.minimum(t.astype(np.int64), count - 2)
    return i0, t - i0


def _lerp(v0, v1, w):
    # exact at w==0 / w==1 so node queries and constant fields reproduce
    return np.where(w == 0.0, v0, np.where(w == 1.0, v1, v0 + w * (v1 - v0)))


def interp_many(vals, pts, lo, h, count, strides):
    """Multilinear interpolation of a flat C-order table at (N, n) points."""
    n = pts.shape[1]
    i0, w = _locate(pts, lo, h, count)
    flat0 = i0 @ strides
    offsets = np.zeros(1 << n, dtype=np.int64)
    for c in range(1 << n):
        off = 0
        for k in range(n):
            if (c >> (n - 1 - k)) & 1:
                off += strides[k]
        offsets[c] = off
    corners = vals[flat0[:, None] + offsets[None, :]]
    for ax in range(n - 1, -1, -1):
        corners = corners.reshape(pts.shape[0], -1, 2)
        corners = _lerp(corners[:, :, 0], corners[:, :, 1], w[:, ax, None])
    return corners[:, 0]


# ---------------------------------------------------------------------------
# semi-Lagrangian sweep


def sl_sweep(vals, lo, h, count, strides, adv, cost, uvals0, gamma, cost_w,
             maximize, group=1):
    """One Jacobi sweep of the discounted semi-Lagrangian update.

    adv:    (S, N, n) pre-advanced (and box-clamped) states per input sample
    cost:   (S, N) running cost (already includes any multiplier term)
    uvals0: (S, N) first input channel per sample, for tie-breaking
    group:  consecutive rows maximized over before the outer min/max; used
            for the robust (minimax) solve where each input sample carries
            one row per disturbance-box vertex
    Returns (new values (N,), argbest group index (N,) int64).
    """
    S, N = cost.shape
    n_groups = S // group
    best = np.empty(N)
    best_u = np.empty(N)
    best_j = np.zeros(N, dtype=np.int64)
    for g in range(n_groups):
        val = None
        for l in range(group):
            j = g * group + l
            vi = interp_many(vals, adv[j], lo, h, count, strides)
            vj = cost_w * cost[j] + gamma * vi
            val = vj if val is None else np.maximum(val, vj)
        if g == 0:
            best[:] = val
            best_u[:] = uvals0[0]
            continue
        uv = uvals0[g * group]
        if maximize:
            better = (val > best) | ((val == best) & (uv < best_u))
        else:
            better = (val < best) | ((val == best) & (uv < best_u))
        best = np.where(better, val, best)
        best_u = np.where(better, uv, best_u)
        best_j = np.where(better, g, best_j)
    return best, best_j


# ---------------------------------------------------------------------------
# closed-loop field pieces shared by the density integrator


def _eval_policy(tables, box_lo, box_hi, pts, lo, h, count, strides):
    m = tables.shape[0]
    out = np.empty((pts.shape[0], m))
    for c in range(m):
        out[:, c] = np.clip(
            interp_many(tables[c], pts, lo, h, count, strides), box_lo[c], box_hi[c]
        )
    return out


def _dynamics(kind, pts, u, d):
    f = np.empty_like(pts)
    if kind == SYS_TOY:
        f[:, 0] = u[:, 0]
    elif kind == SYS_ACC:
        f[:, 0] = d[:, 0]
        f[:, 1] = u[:, 0]
        f[:, 2] = pts[:, 0] - pts[:, 1]
    else:
        raise ValueError(f"unknown kernel system kind {kind}")
    return f


def _saturate(f, pts, sb_lo, sb_hi):
    f[(pts <= sb_lo) & (f < 0.0)] = 0.0
    f[(pts >= sb_hi) & (f > 0.0)] = 0.0
    return f


def closed_loop_many(
    kind, pts, u_tables, u_lo, u_hi, d_mode, d_const, d_tables, d_lo, d_hi,
    sb_lo, sb_hi, lo, h, count, strides,
):
    """Saturated closed-loop field F(x, u(x), d(x)) at (N, n) points."""
    u = _eval_policy(u_tables, u_lo, u_hi, pts, lo, h, count, strides)
    if d_mode == 0:
        d = np.zeros((pts.shape[0], 0))
    elif d_mode == 1:
        d = np.broadcast_to(d_const, (pts.shape[0], d_const.shape[0]))
    else:
        d = _eval_policy(d_tables, d_lo, d_hi, pts, lo, h, count, strides)
    f = _dynamics(kind, pts, u, d)
    return _saturate(f, pts, sb_lo, sb_hi)


def _phi_many(pts, phi_kind, phi_lo, phi_hi, phi_amp, phi_table, lo, h, count, strides):
    if phi_kind == 0:
        inside = np.all((pts >= phi_lo) & (pts <= phi_hi), axis=1)
        return np.where(inside, phi_amp, 0.0)
    return interp_many(phi_table, pts, lo, h, count, strides)


def density_backward(
    nodes, kind, u_tables, u_lo, u_hi, d_mode, d_const, d_tables, d_lo, d_hi,
    sb_lo, sb_hi, lo, h, count, strides, div_mode, div_table, h_div,
    phi_kind, phi_lo, phi_hi, phi_amp, phi_table, kappa, dt, t_max, exp_cap,
):
    """Stationary density by backward characteristic integration, per node.

    Integrates the augmented system (y, a, I) with RK4:
        y' = -f(y),  a' = div f(y),  I' = phi(y) * exp(-kappa*t - a)
    from t=0 to t_max, lockstep over all nodes with an active mask.
    Returns (rho (N,), flags (N,) uint8).
    """
    N = nodes.shape[0]
    rho = np.zeros(N)
    flags = np.zeros(N, dtype=np.uint8)
    idx = np.arange(N)
    y = nodes.copy()
    a = np.zeros(N)
    acc = np.zeros(N)

    def clf(pts):
        return closed_loop_many(
            kind, pts, u_tables, u_lo, u_hi, d_mode, d_const, d_tables,
            d_lo, d_hi, sb_lo, sb_hi, lo, h, count, strides,
        )

    def div_of(pts):
        if div_mode == 0:
            return interp_many(div_table, pts, lo, h, count, strides)
        out = np.zeros(pts.shape[0])
        for k in range(pts.shape[1]):
            dp = pts.copy()
            dm = pts.copy()
            dp[:, k] += h_div[k]
            dm[:, k] -= h_div[k]
            out += (clf(dp)[:, k] - clf(dm)[:, k]) / (2.0 * h_div[k])
        return out

    def phi_of(pts):
        return _phi_many(pts, phi_kind, phi_lo, phi_hi, phi_amp, phi_table,
                         lo, h, count, strides)

    def deriv(t, ys, as_):
        f = clf(ys)
        dy = -f
        da = div_of(ys)
        expo = -kappa * t - as_
        ph = phi_of(ys)
        dI = np.where(ph > 0.0, ph * np.exp(np.minimum(expo, exp_cap)), 0.0)
        blow = (expo > exp_cap) & (ph > 0.0)
        return dy, da, dI, f, ph, blow

    n_steps = int(np.ceil(t_max / dt))
    t = 0.0
    for _ in range(n_steps):
        if idx.size == 0:
            break
        hstep = min(dt, t_max - t)
        k1y, k1a, k1i, f0, ph0, blow = deriv(t, y, a)
        # blow-up and early-exit checks use the step-start state
        if blow.any():
            flags[idx[blow]] = FLAG_BLOWUP
        parked = (np.abs(f0).max(axis=1) == 0.0) & (ph0 == 0.0)
        done = blow | parked
        if done.any():
            keep = ~done
            rho[idx[done]] = acc[done]
            idx, y, a, acc = idx[keep], y[keep], a[keep], acc[keep]
            k1y, k1a, k1i = k1y[keep], k1a[keep], k1i[keep]
            if idx.size == 0:
                break
        k2y, k2a, k2i, _, _, _ = deriv(t + 0.5 * hstep, y + 0.5 * hstep * k1y,
                                       a + 0.5 * hstep * k1a)
        k3y, k3a, k3i, _, _, _ = deriv(t + 0.5 * hstep, y + 0.5 * hstep * k2y,
                                       a + 0.5 * hstep * k2a)
        k4y, k4a, k4i, _, _, _ = deriv(t + hstep, y + hstep * k3y,
                                       a + hstep * k3a)
        y = y + (hstep / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        a = a + (hstep / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        acc = acc + (hstep / 6.0) * (k1i + 2.0 * k2i + 2.0 * k3i + k4i)
        bad = ~(np.isfinite(y).all(axis=1) & np.isfinite(a) & np.isfinite(acc))
        if bad.any():
            flags[idx[bad]] = FLAG_NONFINITE
            keep = ~bad
            idx, y, a, acc = idx[keep], y[keep], a[keep], acc[keep]
        t += hstep
    if idx.size:
        rho[idx] = acc
    return rho, flags


def _cic_deposit(out, pts, w, lo, h, count, strides):
    """Scatter weights onto the 2^n surrounding nodes (linear shape)."""
    n = pts.shape[1]
    i0, frac = _locate(pts, lo, h, count)
    flat0 = i0 @ strides
    for c in range(1 << n):
        ww = w.copy()
        off = 0
        for k in range(n):
            if (c >> (n - 1 - k)) & 1:
                off += strides[k]
                ww = ww * frac[:, k]
            else:
                ww = ww * (1.0 - frac[:, k])
        np.add.at(out, flat0 + off, ww)


def splat_forward(parts, weights, kind, u_tables, u_lo, u_hi, d_mode, d_const,
                  d_tables, d_lo, d_hi, sb_lo, sb_hi, lo, h, count, strides,
                  kappa, dt, t_max):
    """Discounted forward push-forward of source particles onto the grid.

    Each particle carries weight w = phi * dV; at every RK4 step it deposits
    w * exp(-kappa t) * dt onto the surrounding nodes, so the accumulated
    node values divided by the dual-cell volumes estimate the stationary
    density conservatively (face- and attractor-concentrated mass shows up
    as finite cell averages instead of being missed pointwise).  Particles
    with an exactly zero field deposit their discounted tail in closed form
    and stop.
    """
    out = np.zeros(int(np.prod(count)))
    y = parts.copy()
    w = weights.copy()
    idx = np.arange(y.shape[0])

    def clf(pts):
        return closed_loop_many(
            kind, pts, u_tables, u_lo, u_hi, d_mode, d_const, d_tables,
            d_lo, d_hi, sb_lo, sb_hi, lo, h, count, strides,
        )

    n_steps = int(np.ceil(t_max / dt))
    t = 0.0
    for _ in range(n_steps):
        if idx.size == 0:
            break
        hstep = min(dt, t_max - t)
        k1 = clf(y)
        parked = np.abs(k1).max(axis=1) == 0.0
        if parked.any():
            # closed-form discounted tail for mass frozen at y
            tail = w[parked] * (np.exp(-kappa * t) - np.exp(-kappa * t_max)) / kappa
            _cic_deposit(out, y[parked], tail, lo, h, count, strides)
            keep = ~parked
            idx, y, w = idx[keep], y[keep], w[keep]
            k1 = k1[keep]
            if idx.size == 0:
                break
        _cic_deposit(out, y, w * (np.exp(-kappa * t) * hstep), lo, h, count, strides)
        k2 = clf(y + 0.5 * hstep * k1)
        k3 = clf(y + 0.5 * hstep * k2)
        k4 = clf(y + hstep * k3)
        y = y + (hstep / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += hstep
    return out


def interp_stencil(pts, lo, h, count, strides):
    """(corner flat indices (N, 2^n), product weights (N, 2^n)) at points.

    Product-form multilinear weights; rows sum to 1 up to rounding.  Used to
    assemble sparse interpolation operators for policy-evaluation solves.
    """
    n = pts.shape[1]
    i0, w = _locate(pts, lo, h, count)
    flat0 = i0 @ strides
    nc = 1 << n
    idx = np.empty((pts.shape[0], nc), dtype=np.int64)
    wgt = np.ones((pts.shape[0], nc))
    for c in range(nc):
        off = 0
        ww = np.ones(pts.shape[0])
        for k in range(n):
            if (c >> (n - 1 - k)) & 1:
                off += strides[k]
                ww = ww * w[:, k]
            else:
                ww = ww * (1.0 - w[:, k])
        idx[:, c] = flat0 + off
        wgt[:, c] = ww
    return idx, wgt
