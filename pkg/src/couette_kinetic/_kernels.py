"""Compiled inner loops for collision quadrature and interpolation."""

import math

import numpy as np
from numba import njit, prange

MU_NORM = (2.0 * math.pi) ** -1.5


@njit(cache=True, inline="always")
def _frame(ux, uy, uz):
    # orthonormal pair spanning the plane normal to the unit vector u
    if abs(ux) < 0.9:
        ax, ay, az = 1.0, 0.0, 0.0
    else:
        ax, ay, az = 0.0, 1.0, 0.0
    d = ax * ux + ay * uy + az * uz
    e1x = ax - d * ux
    e1y = ay - d * uy
    e1z = az - d * uz
    nrm = math.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    e1x /= nrm
    e1y /= nrm
    e1z /= nrm
    e2x = uy * e1z - uz * e1y
    e2y = uz * e1x - ux * e1z
    e2z = ux * e1y - uy * e1x
    return e1x, e1y, e1z, e2x, e2y, e2z


@njit(cache=True, inline="always")
def _frame_sym(ux, uy, uz, perm, sign):
    # frame of the representative direction, mapped back by the inverse
    # signed permutation; keeps the quadrature equivariant under grid symmetries
    w = np.empty(3)
    u = (ux, uy, uz)
    for d in range(3):
        w[d] = sign[d] * u[perm[d]]
    a1, a2, a3, b1, b2, b3 = _frame(w[0], w[1], w[2])
    e1 = np.empty(3)
    e2 = np.empty(3)
    e1[perm[0]] = sign[0] * a1
    e1[perm[1]] = sign[1] * a2
    e1[perm[2]] = sign[2] * a3
    e2[perm[0]] = sign[0] * b1
    e2[perm[1]] = sign[1] * b2
    e2[perm[2]] = sign[2] * b3
    return e1[0], e1[1], e1[2], e2[0], e2[1], e2[2]


@njit(cache=True, inline="always")
def _locate(p, x0, h, n):
    s = (p - x0) / h
    i0 = int(math.floor(s))
    return i0, s - i0


@njit(cache=True)
def _stencil(px, py, pz, x0, h, n, idx, wts):
    """Trilinear stencil of p: fills idx/wts (8 entries, idx=-1 outside); returns 1 if clipped."""
    ix, tx = _locate(px, x0, h, n)
    iy, ty = _locate(py, x0, h, n)
    iz, tz = _locate(pz, x0, h, n)
    clipped = 0
    m = 0
    for a in range(2):
        jx = ix + a
        wx = tx if a else 1.0 - tx
        for b in range(2):
            jy = iy + b
            wy = ty if b else 1.0 - ty
            for c in range(2):
                jz = iz + c
                wz = tz if c else 1.0 - tz
                w = wx * wy * wz
                if jx < 0 or jx >= n or jy < 0 or jy >= n or jz < 0 or jz >= n:
                    idx[m] = -1
                    wts[m] = 0.0
                    if w > 0.0:
                        clipped = 1
                else:
                    idx[m] = (jx * n + jy) * n + jz
                    wts[m] = w
                m += 1
    return clipped


@njit(cache=True)
def _scatter(row, px, py, pz, val, colscale, x0, h, n, idx, wts):
    """Add val * colscale[k] * (trilinear weight of node k at p) into row."""
    clipped = _stencil(px, py, pz, x0, h, n, idx, wts)
    for m in range(8):
        k = idx[m]
        if k >= 0:
            row[k] += val * wts[m] * colscale[k]
    return clipped


@njit(cache=True)
def _gather(vals, px, py, pz, x0, h, n, out):
    """out[:] = trilinear interpolation of vals[:, m] at p (zero outside)."""
    ix, tx = _locate(px, x0, h, n)
    iy, ty = _locate(py, x0, h, n)
    iz, tz = _locate(pz, x0, h, n)
    m = vals.shape[1]
    for k in range(m):
        out[k] = 0.0
    for a in range(2):
        jx = ix + a
        if jx < 0 or jx >= n:
            continue
        wx = tx if a else 1.0 - tx
        for b in range(2):
            jy = iy + b
            if jy < 0 or jy >= n:
                continue
            wy = ty if b else 1.0 - ty
            for c in range(2):
                jz = iz + c
                if jz < 0 or jz >= n:
                    continue
                w = wx * wy * (tz if c else 1.0 - tz)
                idx = (jx * n + jy) * n + jz
                for k in range(m):
                    out[k] += w * vals[idx, k]


@njit(cache=True, parallel=True)
def assemble_kcal_rows(rows, nodes, mu, inv_mu, ratio, x0, h, n, ct, st, cp, sp, wang, cell):
    """Rows of the absolute-density linearized gain-minus-loss operator.

    wang holds the hemisphere angular weights already multiplied by the
    kernel value and by 2 (for the mirrored hemisphere).  With ratio=True
    the density is interpolated as F/mu and the factor mu(v')mu(v*') is
    restored through the identity mu(v')mu(v*') = mu(v)mu(v*).
    """
    nv = nodes.shape[0]
    nr = rows.shape[0]
    out = np.zeros((nr, nv))
    clipped = np.zeros(nr, dtype=np.int64)
    ones = np.ones(nv)
    total_ang = 0.0
    for k in range(ct.shape[0]):
        for l in range(cp.shape[0]):
            total_ang += wang[k, l]
    for r in prange(nr):
        i = rows[r]
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        mu_i = mu[i]
        row = out[r]
        idx = np.empty(8, dtype=np.int64)
        wts = np.empty(8)
        nclip = 0
        for j in range(nv):
            wx = nodes[j, 0]
            wy = nodes[j, 1]
            wz = nodes[j, 2]
            ux = wx - vx
            uy = wy - vy
            uz = wz - vz
            un = math.sqrt(ux * ux + uy * uy + uz * uz)
            if un == 0.0:
                # every direction gives v' = v*' = v: gain twice, loss once
                row[j] += cell * total_ang * mu_i
                continue
            row[j] -= cell * total_ang * mu_i
            ux /= un
            uy /= un
            uz /= un
            e1x, e1y, e1z, e2x, e2y, e2z = _frame(ux, uy, uz)
            pair = mu_i * mu[j]
            for k in range(ct.shape[0]):
                d = un * ct[k]
                for l in range(cp.shape[0]):
                    ox = ct[k] * ux + st[k] * (cp[l] * e1x + sp[l] * e2x)
                    oy = ct[k] * uy + st[k] * (cp[l] * e1y + sp[l] * e2y)
                    oz = ct[k] * uz + st[k] * (cp[l] * e1z + sp[l] * e2z)
                    px = vx + d * ox
                    py = vy + d * oy
                    pz = vz + d * oz
                    qx = wx - d * ox
                    qy = wy - d * oy
                    qz = wz - d * oz
                    c = cell * wang[k, l]
                    if ratio:
                        nclip += _scatter(row, qx, qy, qz, c * pair, inv_mu, x0, h, n, idx, wts)
                        nclip += _scatter(row, px, py, pz, c * pair, inv_mu, x0, h, n, idx, wts)
                    else:
                        mu_p = MU_NORM * math.exp(-0.5 * (px * px + py * py + pz * pz))
                        mu_q = MU_NORM * math.exp(-0.5 * (qx * qx + qy * qy + qz * qz))
                        nclip += _scatter(row, qx, qy, qz, c * mu_p, ones, x0, h, n, idx, wts)
                        nclip += _scatter(row, px, py, pz, c * mu_q, ones, x0, h, n, idx, wts)
        clipped[r] = nclip
    return out, clipped


@njit(cache=True, parallel=True)
def q_gain_direct(F1, F2, scale, perm, sign, nodes, x0, h, n, ct, st, cp, sp, wang, cell):
    """Gain part of Q for a batch of fields (velocity-major, batch last).

    F1 is interpolated at v*' and F2 at v'; each pair (v, v*) carries the
    factor scale(v) * scale(v*).  perm/sign give, per node, the signed axis
    permutation used to orient the angular frame (see _frame_sym).
    """
    nv = nodes.shape[0]
    m = F1.shape[1]
    out = np.zeros((nv, m))
    tot = 0.0
    for k in range(ct.shape[0]):
        for l in range(cp.shape[0]):
            tot += wang[k, l]
    for i in prange(nv):
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        pi = perm[i]
        si = sign[i]
        b1 = np.empty(m)
        b2 = np.empty(m)
        acc = np.zeros(m)
        for j in range(nv):
            wx = nodes[j, 0]
            wy = nodes[j, 1]
            wz = nodes[j, 2]
            ux = wx - vx
            uy = wy - vy
            uz = wz - vz
            un = math.sqrt(ux * ux + uy * uy + uz * uz)
            if un == 0.0:
                c0 = cell * tot * scale[i] * scale[j]
                for s in range(m):
                    acc[s] += c0 * F1[j, s] * F2[i, s]
                continue
            ux /= un
            uy /= un
            uz /= un
            e1x, e1y, e1z, e2x, e2y, e2z = _frame_sym(ux, uy, uz, pi, si)
            for k in range(ct.shape[0]):
                d = un * ct[k]
                for l in range(cp.shape[0]):
                    ox = ct[k] * ux + st[k] * (cp[l] * e1x + sp[l] * e2x)
                    oy = ct[k] * uy + st[k] * (cp[l] * e1y + sp[l] * e2y)
                    oz = ct[k] * uz + st[k] * (cp[l] * e1z + sp[l] * e2z)
                    _gather(F2, vx + d * ox, vy + d * oy, vz + d * oz, x0, h, n, b2)
                    _gather(F1, wx - d * ox, wy - d * oy, wz - d * oz, x0, h, n, b1)
                    c = cell * wang[k, l] * scale[i] * scale[j]
                    for s in range(m):
                        acc[s] += c * b1[s] * b2[s]
        for s in range(m):
            out[i, s] = acc[s]
    return out


@njit(cache=True, inline="always")
def _pack(a, b, nv):
    if a > b:
        a, b = b, a
    return a * nv - (a * (a - 1)) // 2 + (b - a)


@njit(cache=True, parallel=True)
def assemble_gain_tensor_rows(rows, nodes, colscale, rowscale, x0, h, n, ct, st, cp, sp, wang, cell):
    """Packed symmetric gain coefficients T[r, pack(a, b)] for the given rows.

    Q_gain(F, F)(v_i) = sum_{a<=b} T[i, pack(a, b)] F_a F_b.  Interpolation
    acts on F * colscale and each pair (v, v*) carries rowscale(v) rowscale(v*).
    """
    nv = nodes.shape[0]
    npair = nv * (nv + 1) // 2
    nr = rows.shape[0]
    out = np.zeros((nr, npair))
    tot = 0.0
    for k in range(ct.shape[0]):
        for l in range(cp.shape[0]):
            tot += wang[k, l]
    for r in prange(nr):
        i = rows[r]
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        row = out[r]
        ia = np.empty(8, dtype=np.int64)
        wa = np.empty(8)
        ib = np.empty(8, dtype=np.int64)
        wb = np.empty(8)
        for j in range(nv):
            wx = nodes[j, 0]
            wy = nodes[j, 1]
            wz = nodes[j, 2]
            ux = wx - vx
            uy = wy - vy
            uz = wz - vz
            un = math.sqrt(ux * ux + uy * uy + uz * uz)
            pair = rowscale[i] * rowscale[j]
            if un == 0.0:
                row[_pack(i, i, nv)] += cell * tot * pair * colscale[i] * colscale[i]
                continue
            ux /= un
            uy /= un
            uz /= un
            e1x, e1y, e1z, e2x, e2y, e2z = _frame(ux, uy, uz)
            for k in range(ct.shape[0]):
                d = un * ct[k]
                for l in range(cp.shape[0]):
                    ox = ct[k] * ux + st[k] * (cp[l] * e1x + sp[l] * e2x)
                    oy = ct[k] * uy + st[k] * (cp[l] * e1y + sp[l] * e2y)
                    oz = ct[k] * uz + st[k] * (cp[l] * e1z + sp[l] * e2z)
                    _stencil(wx - d * ox, wy - d * oy, wz - d * oz, x0, h, n, ia, wa)
                    _stencil(vx + d * ox, vy + d * oy, vz + d * oz, x0, h, n, ib, wb)
                    c = cell * wang[k, l] * pair
                    for p in range(8):
                        a = ia[p]
                        if a < 0:
                            continue
                        ca = c * wa[p] * colscale[a]
                        for q in range(8):
                            b = ib[q]
                            if b < 0:
                                continue
                            row[_pack(a, b, nv)] += ca * wb[q] * colscale[b]
    return out


@njit(cache=True)
def _mapped_indices(n, pm, fl, out):
    # flat index of S v_j for every j, S the signed permutation (pm, fl)
    t = np.empty(3, dtype=np.int64)
    for jx in range(n):
        for jy in range(n):
            for jz in range(n):
                t[0] = jx
                t[1] = jy
                t[2] = jz
                k = 0
                for d in range(3):
                    c = t[pm[d]]
                    if fl[d]:
                        c = n - 1 - c
                    k = k * n + c
                out[(jx * n + jy) * n + jz] = k


@njit(cache=True, parallel=True)
def fill_from_representatives(rep_rows, rep_of, perm, flip, n, out):
    """out[i, j] = rep_rows[rep_of[i], S_i j] for a dense matrix."""
    nv = out.shape[0]
    for i in prange(nv):
        mp = np.empty(nv, dtype=np.int64)
        _mapped_indices(n, perm[i], flip[i], mp)
        src = rep_rows[rep_of[i]]
        for j in range(nv):
            out[i, j] = src[mp[j]]


@njit(cache=True, parallel=True)
def fill_tensor_from_representatives(rep_rows, rep_of, perm, flip, n, out):
    """Packed-pair analogue of fill_from_representatives."""
    nv = out.shape[0]
    for i in prange(nv):
        mp = np.empty(nv, dtype=np.int64)
        _mapped_indices(n, perm[i], flip[i], mp)
        src = rep_rows[rep_of[i]]
        for a in range(nv):
            ma = mp[a]
            base = a * nv - (a * (a - 1)) // 2 - a
            for b in range(a, nv):
                out[i, base + b] = src[_pack(ma, mp[b], nv)]


@njit(cache=True, parallel=True)
def pair_products(F1, F2, nv):
    """Packed symmetrized products P[s, pack(a, b)] = (F1_a F2_b + F1_b F2_a) / 2 (a<b), F1_a F2_a (a=b)."""
    ns = F1.shape[0]
    npair = nv * (nv + 1) // 2
    out = np.empty((ns, npair))
    for s in prange(ns):
        f1 = F1[s]
        f2 = F2[s]
        row = out[s]
        for a in range(nv):
            base = a * nv - (a * (a - 1)) // 2 - a
            row[base + a] = f1[a] * f2[a]
            for b in range(a + 1, nv):
                row[base + b] = 0.5 * (f1[a] * f2[b] + f1[b] * f2[a])
    return out
