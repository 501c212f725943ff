"""Compiled O(N^2) pair sums.

Each output row is accumulated sequentially over j = 0..N-1, so results do
not depend on the thread count; parallelism is across rows only.
"""

import math

import numpy as np
from numba import njit, prange

KERNEL_COULOMB = 0
KERNEL_TORUS = 1
KERNEL_SPHERE = 2

CONF_ZERO = 0
CONF_GAUSSIAN = 1
CONF_SPHERE = 2


@njit(cache=True)
def _torus_unit(wx, wy, coef, need_value):
    """Value and gradient of the unit-torus Green's function at a wrapped point.

    The nearest 3x3 lattice images enter through their product
    P(z) = z (z^4 - 1)(z^4 + 4). What remains is ``(pi/2)|w|^2`` plus a
    harmonic function with the square's symmetry, ``Re sum_k c_k z^(4k)``.
    """
    ar = wx * wx - wy * wy
    ai = 2.0 * wx * wy
    qr = ar * ar - ai * ai
    qi = 2.0 * ar * ai
    # P = z * (z4 (z4 + 3) - 4),  P' = z4 (9 z4 + 15) - 4
    tr = qr * (qr + 3.0) - qi * qi - 4.0
    ti = qr * qi + qi * (qr + 3.0)
    pr = wx * tr - wy * ti
    pi_ = wx * ti + wy * tr
    dr = qr * (9.0 * qr + 15.0) - 9.0 * qi * qi - 4.0
    di = qr * 9.0 * qi + qi * (9.0 * qr + 15.0)
    p2 = pr * pr + pi_ * pi_
    # P'/P
    rr = (dr * pr + di * pi_) / p2
    ri = (di * pr - dr * pi_) / p2
    m = coef.shape[0]
    # Horner in z^4 for F = sum c_k z^(4k) and H = sum_{k>=1} 4k c_k z^(4k-4)
    fr = coef[m - 1]
    fi = 0.0
    hr = 4.0 * (m - 1) * coef[m - 1]
    hi = 0.0
    for k in range(m - 2, -1, -1):
        fr, fi = fr * qr - fi * qi + coef[k], fr * qi + fi * qr
        if k > 0:
            hr, hi = hr * qr - hi * qi + 4.0 * k * coef[k], hr * qi + hi * qr
    # F'(z) = z^3 H
    br = ar * wx - ai * wy
    bi = ar * wy + ai * wx
    fdr = br * hr - bi * hi
    fdi = br * hi + bi * hr
    value = 0.0
    if need_value:
        value = -0.5 * math.log(p2) + 0.5 * math.pi * (wx * wx + wy * wy) + fr
    return value, -rr + math.pi * wx + fdr, ri + math.pi * wy - fdi


@njit(cache=True)
def _torus_pair(zx, zy, amp, length, coef, need_value=True):
    # z and -z are mapped to the same canonical point before wrapping, so
    # the force is exactly odd even on the half-period lines where the
    # wrap breaks ties one way
    flip = zx < 0.0 or (zx == 0.0 and zy < 0.0)
    sign = -1.0 if flip else 1.0
    inv = 1.0 / length
    wx = sign * zx * inv
    wy = sign * zy * inv
    wx -= math.floor(wx + 0.5)
    wy -= math.floor(wy + 0.5)
    v, gx, gy = _torus_unit(wx, wy, coef, need_value)
    scale = sign * amp / length
    return amp * v, scale * gx, scale * gy


@njit(cache=True)
def torus_values(w, coef):
    """Vectorised unit-torus Green's function (value, gradient) for testing."""
    n = w.shape[0]
    val = np.empty(n)
    grad = np.empty((n, 2))
    for i in range(n):
        v, gx, gy = _torus_pair(w[i, 0], w[i, 1], 1.0, 1.0, coef)
        val[i] = v
        grad[i, 0] = gx
        grad[i, 1] = gy
    return val, grad


@njit(cache=True)
def _confinement(x, kind, a, b, grad_out):
    """Write grad Phi(x) into grad_out and return Phi(x)."""
    d = x.shape[0]
    if kind == CONF_GAUSSIAN:
        r2 = 0.0
        for k in range(d):
            r2 += x[k] * x[k]
            grad_out[k] = 2.0 * a * x[k]
        return a * r2
    if kind == CONF_SPHERE:
        r2 = 0.0
        for k in range(d):
            r2 += (x[k] / b) ** 2
        base = (1.0 + r2) ** (d - 1) / 2.0**d
        for k in range(d):
            grad_out[k] = a / b * d * base * 2.0 * x[k] / b
        return a * base * (1.0 + r2)
    for k in range(d):
        grad_out[k] = 0.0
    return 0.0


@njit(cache=True)
def _torus_row(pos, i, amp, length, coef, gx0, gy0, with_energy):
    # scalar accumulators keep the inner loop free of stores
    n = pos.shape[0]
    xi = pos[i, 0]
    yi = pos[i, 1]
    gxs = gx0
    gys = gy0
    e = 0.0
    status = 0
    for j in range(n):
        if j == i:
            continue
        zx = xi - pos[j, 0]
        zy = yi - pos[j, 1]
        if zx * zx + zy * zy == 0.0:
            status = 1
            continue
        need = with_energy and j > i
        v, gx, gy = _torus_pair(zx, zy, amp, length, coef, need)
        gxs += gx
        gys += gy
        if need:
            e += v
    return gxs, gys, e, status


@njit(cache=True)
def _row(pos, i, kind, amp, length, conf_kind, conf_a, conf_b, coef, grad_row, tmp, with_energy):
    """Accumulate grad_x of the Hamiltonian for particle i.

    Returns (energy share, status): energy share is Phi(x_i) plus the pair
    energies with j > i; status is 1 if a coincident pair was met.
    """
    n, d = pos.shape
    e = _confinement(pos[i], conf_kind, conf_a, conf_b, tmp)
    for k in range(d):
        grad_row[k] = tmp[k]
    if kind == KERNEL_TORUS:
        gx, gy, ep, status = _torus_row(pos, i, amp, length, coef, tmp[0], tmp[1], with_energy)
        grad_row[0] = gx
        grad_row[1] = gy
        return e + ep, status
    status = 0
    for j in range(n):
        if j == i:
            continue
        r2 = 0.0
        for k in range(d):
            z = pos[i, k] - pos[j, k]
            r2 += z * z
        if r2 == 0.0:
            status = 1
            continue
        if kind == KERNEL_SPHERE:
            w2 = r2 / (length * length)
            u2 = 0.0
            v2 = 0.0
            for k in range(d):
                u2 += (pos[i, k] / length) ** 2
                v2 += (pos[j, k] / length) ** 2
            for k in range(d):
                wk = (pos[i, k] - pos[j, k]) / length
                grad_row[k] += amp / length * (-wk / w2 + (pos[i, k] / length) / (1.0 + u2))
            if with_energy and j > i:
                e += -0.5 * amp * math.log(4.0 * w2 / ((1.0 + u2) * (1.0 + v2)))
        else:
            w2 = r2 / (length * length)
            if d == 2:
                inv = 1.0 / w2
            else:
                inv = w2 ** (-0.5 * d)
            for k in range(d):
                grad_row[k] -= amp / length * ((pos[i, k] - pos[j, k]) / length) * inv
            if with_energy and j > i:
                if d == 2:
                    e += -0.5 * amp * math.log(w2)
                else:
                    e += amp * w2 ** (-0.5 * (d - 2)) / (d - 2)
    return e, status


@njit(cache=True, parallel=True)
def hamiltonian_rows(pos, rows, kind, amp, length, conf_kind, conf_a, conf_b, coef,
                     with_energy=True):
    """Per-row Hamiltonian gradient and energy shares for the listed rows.

    With ``with_energy`` false only the gradient is computed (shares are Phi only).
    """
    n, d = pos.shape
    m = rows.shape[0]
    grad = np.zeros((m, d))
    energy = np.zeros(m)
    status = np.zeros(m, dtype=np.int64)
    for r in prange(m):
        tmp = np.empty(d)
        e, s = _row(pos, rows[r], kind, amp, length, conf_kind, conf_a, conf_b, coef,
                    grad[r], tmp, with_energy)
        energy[r] = e
        status[r] = s
    return grad, energy, status


@njit(cache=True)
def ordered_sum(values):
    total = 0.0
    for v in values:
        total += v
    return total


@njit(cache=True, parallel=True)
def min_pair_distance(pos, period=0.0):
    """Smallest pair distance; minimum-image distance when period > 0."""
    n, d = pos.shape
    best = np.full(n, np.inf)
    for i in prange(n):
        b = np.inf
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(d):
                z = pos[i, k] - pos[j, k]
                if period > 0.0:
                    z -= period * math.floor(z / period + 0.5)
                r2 += z * z
            if r2 < b:
                b = r2
        best[i] = b
    m = np.inf
    for i in range(n):
        if best[i] < m:
            m = best[i]
    return math.sqrt(m)


@njit(cache=True, parallel=True)
def truncated_coulomb_rows(pos, rows, centers, radius, d):
    """sum_j (x_i - x_j)/|x_i - x_j|^d over j != i with |x_j - center_i| <= radius."""
    n = pos.shape[0]
    m = rows.shape[0]
    out = np.zeros((m, d))
    r2max = radius * radius
    for r in prange(m):
        i = rows[r]
        for j in range(n):
            if j == i:
                continue
            c2 = 0.0
            for k in range(d):
                t = pos[j, k] - centers[r, k]
                c2 += t * t
            if c2 > r2max:
                continue
            z2 = 0.0
            for k in range(d):
                t = pos[i, k] - pos[j, k]
                z2 += t * t
            if d == 2:
                inv = 1.0 / z2
            else:
                inv = z2 ** (-0.5 * d)
            for k in range(d):
                out[r, k] += (pos[i, k] - pos[j, k]) * inv
    return out


@njit(cache=True, parallel=True)
def coulomb_field(targets, sources):
    """sum_j (x - y_j)/|x - y_j|^d at each target, summed over j in order.

    Returns the field and a per-target flag set when a source coincides
    with the target.
    """
    m, d = targets.shape
    n = sources.shape[0]
    out = np.zeros((m, d))
    hit = np.zeros(m, dtype=np.int64)
    for r in prange(m):
        for j in range(n):
            z2 = 0.0
            for k in range(d):
                t = targets[r, k] - sources[j, k]
                z2 += t * t
            if z2 == 0.0:
                hit[r] = 1
                continue
            if d == 2:
                inv = 1.0 / z2
            else:
                inv = z2 ** (-0.5 * d)
            for k in range(d):
                out[r, k] += (targets[r, k] - sources[j, k]) * inv
    return out, hit


@njit(cache=True, parallel=True)
def min_distance_rows(pos, rows, period=0.0):
    """Smallest distance over pairs that involve at least one listed row."""
    n, d = pos.shape
    m = rows.shape[0]
    best = np.full(m, np.inf)
    for r in prange(m):
        i = rows[r]
        b = np.inf
        for j in range(n):
            if j == i:
                continue
            r2 = 0.0
            for k in range(d):
                z = pos[i, k] - pos[j, k]
                if period > 0.0:
                    z -= period * math.floor(z / period + 0.5)
                r2 += z * z
            if r2 < b:
                b = r2
        best[r] = b
    out = np.inf
    for r in range(m):
        if best[r] < out:
            out = best[r]
    return math.sqrt(out)
