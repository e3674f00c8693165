"""Compiled pair loops.

Every parallel loop writes one partial per outer index; callers reduce the
partials in index order, so results do not depend on the thread count.
"""
import math

import numpy as np
from numba import njit, prange

GAUGE_ID = 0
BOX_ID = 1


@njit(cache=True, inline="always")
def _kernel(a, b, n, norm_id, expo):
    """norm(b^{-1} o a)^(-expo)."""
    z2 = 0.0
    symp = 0.0
    for j in range(n):
        dx = a[j] - b[j]
        dy = a[n + j] - b[n + j]
        z2 += dx * dx + dy * dy
        symp += b[n + j] * a[j] - b[j] * a[n + j]
    t = a[2 * n] - b[2 * n] - 2.0 * symp
    if norm_id == GAUGE_ID:
        return (z2 * z2 + t * t) ** (-0.25 * expo)
    r = max(math.sqrt(z2), math.sqrt(abs(t)))
    return r ** (-expo)


@njit(cache=True)
def _pair_weight(centers, index, i, j, n, norm_id, expo, offsets):
    d = 2 * n + 1
    adjacent = True
    for k in range(d):
        if abs(index[i, k] - index[j, k]) > 1:
            adjacent = False
            break
    if not adjacent or offsets.shape[0] <= 1:
        return _kernel(centers[i], centers[j], n, norm_id, expo)
    S = offsets.shape[0]
    pa = np.empty(d)
    pb = np.empty(d)
    acc = 0.0
    for u in range(S):
        for k in range(d):
            pa[k] = centers[i, k] + offsets[u, k]
        for v in range(S):
            for k in range(d):
                pb[k] = centers[j, k] + offsets[v, k]
            acc += _kernel(pa, pb, n, norm_id, expo)
    return acc / (S * S)


@njit(cache=True, parallel=True)
def weight_block(centers, index, rows, cols, n, norm_id, expo, offsets):
    """W[r, c] = cell-pair kernel weight between rows[r] and cols[c]; 0 on the diagonal."""
    out = np.zeros((rows.size, cols.size))
    for r in prange(rows.size):
        i = rows[r]
        for c in range(cols.size):
            j = cols[c]
            if i != j:
                out[r, c] = _pair_weight(centers, index, i, j, n, norm_id, expo, offsets)
    return out


@njit(cache=True, parallel=True)
def point_weights(sources, targets, n, norm_id, expo):
    """K[r, q] = norm(target_q^{-1} o source_r)^(-expo) without refinement."""
    out = np.empty((sources.shape[0], targets.shape[0]))
    for r in prange(sources.shape[0]):
        for q in range(targets.shape[0]):
            out[r, q] = _kernel(sources[r], targets[q], n, norm_id, expo)
    return out


@njit(cache=True, inline="always")
def abs_pow(w, p):
    a = abs(w)
    if a == 0.0:
        return 0.0
    if p == 2.0:
        return a * a
    if p == 3.0:
        return a * a * a
    if p == 1.5:
        return a * math.sqrt(a)
    return math.exp(p * math.log(a))


@njit(cache=True, inline="always")
def phi_p(w, p):
    """|w|^{p-2} w with phi(0) = 0."""
    if w == 0.0:
        return 0.0
    if p == 2.0:
        return w
    a = abs(w)
    if p == 3.0:
        return w * a
    if p == 1.5:
        return w / math.sqrt(a)
    return math.copysign(math.exp((p - 1.0) * math.log(a)), w)


@njit(cache=True, inline="always")
def pow_delta(w, e, p):
    """|w + e|^p - |w|^p evaluated without cancellation for small e."""
    if e == 0.0:
        return 0.0
    if p == 2.0:
        return e * (2.0 * w + e)
    x = abs(w + e)
    y = abs(w)
    if (w + e) * w > 0.0:
        dxy = e if w > 0.0 else -e  # exact x - y when no sign change
    else:
        dxy = x - y
    if p == 3.0:
        return dxy * (x * x + x * y + y * y)
    if p == 1.5:
        sx = math.sqrt(x)
        sy = math.sqrt(y)
        if sx + sy == 0.0:
            return 0.0
        return dxy * (x + sx * sy + y) / (sx + sy)
    if y != 0.0:
        r = e / w
        if abs(r) < 0.5:
            return abs_pow(w, p) * math.expm1(p * math.log1p(r))
    return abs_pow(w + e, p) - abs_pow(w, p)


@njit(cache=True, inline="always")
def curv_p(w, p, floor):
    """(p-1)|w|^{p-2} with |w| bounded below by floor."""
    if p == 2.0:
        return 1.0
    a = max(abs(w), floor)
    if p == 3.0:
        return 2.0 * a
    if p == 1.5:
        return 0.5 / math.sqrt(a)
    return (p - 1.0) * math.exp((p - 2.0) * math.log(a))


@njit(cache=True, parallel=True)
def hessian_diagonal(u, Wmm, B, v, p, inner_scale, floor):
    m = u.size
    out = np.zeros(m)
    for a in prange(m):
        ua = u[a]
        acc = 0.0
        for b in range(m):
            if b != a:
                acc += Wmm[a, b] * curv_p(ua - u[b], p, floor)
        acc2 = 0.0
        for j in range(v.size):
            acc2 += B[a, j] * curv_p(ua - v[j], p, floor)
        out[a] = inner_scale * acc + acc2
    return out


@njit(cache=True, parallel=True)
def seminorm_partials(centers, index, sel, vals, n, norm_id, expo, offsets, p):
    """partial[i] = sum_{j > i} |v_i - v_j|^p W(sel_i, sel_j)."""
    m = sel.size
    out = np.zeros(m)
    for i in prange(m):
        acc = 0.0
        vi = vals[i]
        for j in range(i + 1, m):
            dv = vi - vals[j]
            if dv != 0.0:
                acc += abs_pow(dv, p) * _pair_weight(centers, index, sel[i], sel[j], n, norm_id, expo, offsets)
        out[i] = acc
    return out


@njit(cache=True, parallel=True)
def energy_partials(u, Wmm, B, v, p):
    """Row partials of sum_ab Wmm|u_a-u_b|^p and sum_aj B|u_a-v_j|^p."""
    m = u.size
    inner = np.zeros(m)
    outer = np.zeros(m)
    for a in prange(m):
        ua = u[a]
        acc = 0.0
        for b in range(m):
            acc += Wmm[a, b] * abs_pow(ua - u[b], p)
        inner[a] = acc
        acc = 0.0
        for j in range(v.size):
            acc += B[a, j] * abs_pow(ua - v[j], p)
        outer[a] = acc
    return inner, outer


@njit(cache=True, parallel=True)
def energy_gradient(u, Wmm, B, v, p, inner_scale):
    """g_a = inner_scale * sum_b Wmm phi(u_a-u_b) + sum_j B phi(u_a-v_j)."""
    m = u.size
    g = np.zeros(m)
    for a in prange(m):
        ua = u[a]
        acc = 0.0
        for b in range(m):
            acc += Wmm[a, b] * phi_p(ua - u[b], p)
        acc2 = 0.0
        for j in range(v.size):
            acc2 += B[a, j] * phi_p(ua - v[j], p)
        g[a] = inner_scale * acc + acc2
    return g


@njit(cache=True, parallel=True)
def energy_delta_partials(u, d, alpha, Wmm, B, v, p):
    """Row partials of the energy change along u + alpha d (before the 1/p factor)."""
    m = u.size
    inner = np.zeros(m)
    outer = np.zeros(m)
    for a in prange(m):
        ua = u[a]
        da = alpha * d[a]
        acc = 0.0
        for b in range(m):
            acc += Wmm[a, b] * pow_delta(ua - u[b], da - alpha * d[b], p)
        inner[a] = acc
        acc = 0.0
        for j in range(v.size):
            acc += B[a, j] * pow_delta(ua - v[j], da, p)
        outer[a] = acc
    return inner, outer


@njit(cache=True, parallel=True)
def operator_rows(uvals, rows, W, far_w, far_vals, p, h):
    """L u at the given cells: sum_b phi(u_a - u_b) W h + sum_q Wf phi(u_a - g_q)."""
    out = np.zeros(rows.size)
    for r in prange(rows.size):
        ua = uvals[rows[r]]
        acc = 0.0
        for b in range(uvals.size):
            acc += W[r, b] * phi_p(ua - uvals[b], p)
        acc2 = 0.0
        for q in range(far_vals.size):
            acc2 += far_w[r, q] * phi_p(ua - far_vals[q], p)
        out[r] = acc * h + acc2
    return out


@njit(cache=True, parallel=True)
def far_sums(src, src_vals, pts, vals, wts, n, norm_id, expo, p, mode):
    """sum_q K(src_r, pts_q) wts_q F(src_vals_r - vals_q); F = |.|^p (mode 0) or phi_p (mode 1)."""
    out = np.zeros(src.shape[0])
    for r in prange(src.shape[0]):
        acc = 0.0
        ur = src_vals[r]
        for q in range(pts.shape[0]):
            dv = ur - vals[q]
            if dv == 0.0:
                continue
            k = _kernel(src[r], pts[q], n, norm_id, expo) * wts[q]
            if mode == 0:
                acc += k * abs_pow(dv, p)
            else:
                acc += k * phi_p(dv, p)
        out[r] = acc
    return out
