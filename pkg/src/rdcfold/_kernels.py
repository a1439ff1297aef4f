"""Compiled inner loops: chain construction, order-tensor fitting, sorting.

Every score in the package is produced by the functions in this module so that
single evaluations, batched evaluations and parallel chunks are bitwise
identical. No fastmath: results must not depend on chunk boundaries.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# atom slots within a residue record
N, H, CA, HA, C, O = 0, 1, 2, 3, 4, 5
N_ATOMS = 6

# vector type codes
NH, CAHA, CN, CAC = 0, 1, 2, 3

# geometry parameter vector layout
G_NCA, G_CAC, G_CN, G_NH, G_CAHA, G_CO, A_NCAC, A_CACN, A_CNCA, A_OMEGA = range(10)

SV_THRESHOLD = 1e-10
WORST_SCORE = np.finfo(np.float64).max
TETRA_HALF = math.radians(109.4712206 / 2.0)
DEG = math.pi / 180.0


@njit(cache=True, nogil=True)
def _place(xyz, dr, da, ar, aa, br, ba, cr, ca, bond, theta, tau):
    # NeRF: put atom d so |cd| = bond, angle(b, c, d) = theta, dihedral(a, b, c, d) = tau
    bcx = xyz[cr, ca, 0] - xyz[br, ba, 0]
    bcy = xyz[cr, ca, 1] - xyz[br, ba, 1]
    bcz = xyz[cr, ca, 2] - xyz[br, ba, 2]
    inv = 1.0 / math.sqrt(bcx * bcx + bcy * bcy + bcz * bcz)
    bcx *= inv
    bcy *= inv
    bcz *= inv
    abx = xyz[br, ba, 0] - xyz[ar, aa, 0]
    aby = xyz[br, ba, 1] - xyz[ar, aa, 1]
    abz = xyz[br, ba, 2] - xyz[ar, aa, 2]
    nx = aby * bcz - abz * bcy
    ny = abz * bcx - abx * bcz
    nz = abx * bcy - aby * bcx
    inv = 1.0 / math.sqrt(nx * nx + ny * ny + nz * nz)
    nx *= inv
    ny *= inv
    nz *= inv
    mx = ny * bcz - nz * bcy
    my = nz * bcx - nx * bcz
    mz = nx * bcy - ny * bcx
    d0 = -bond * math.cos(theta)
    st = bond * math.sin(theta)
    d1 = st * math.cos(tau)
    d2 = st * math.sin(tau)
    xyz[dr, da, 0] = xyz[cr, ca, 0] + d0 * bcx + d1 * mx + d2 * nx
    xyz[dr, da, 1] = xyz[cr, ca, 1] + d0 * bcy + d1 * my + d2 * ny
    xyz[dr, da, 2] = xyz[cr, ca, 2] + d0 * bcz + d1 * mz + d2 * nz


@njit(cache=True, nogil=True)
def _bisect_out(xyz, dr, da, cr, ca, ar, aa, br, ba, bond):
    # d on the external bisector of angle a-c-b, at distance bond from c
    ux = xyz[ar, aa, 0] - xyz[cr, ca, 0]
    uy = xyz[ar, aa, 1] - xyz[cr, ca, 1]
    uz = xyz[ar, aa, 2] - xyz[cr, ca, 2]
    inv = 1.0 / math.sqrt(ux * ux + uy * uy + uz * uz)
    wx = xyz[br, ba, 0] - xyz[cr, ca, 0]
    wy = xyz[br, ba, 1] - xyz[cr, ca, 1]
    wz = xyz[br, ba, 2] - xyz[cr, ca, 2]
    inw = 1.0 / math.sqrt(wx * wx + wy * wy + wz * wz)
    sx = -(ux * inv + wx * inw)
    sy = -(uy * inv + wy * inw)
    sz = -(uz * inv + wz * inw)
    ins = bond / math.sqrt(sx * sx + sy * sy + sz * sz)
    xyz[dr, da, 0] = xyz[cr, ca, 0] + sx * ins
    xyz[dr, da, 1] = xyz[cr, ca, 1] + sy * ins
    xyz[dr, da, 2] = xyz[cr, ca, 2] + sz * ins


@njit(cache=True, nogil=True)
def _place_ha(xyz, r, bond):
    ux = xyz[r, N, 0] - xyz[r, CA, 0]
    uy = xyz[r, N, 1] - xyz[r, CA, 1]
    uz = xyz[r, N, 2] - xyz[r, CA, 2]
    inv = 1.0 / math.sqrt(ux * ux + uy * uy + uz * uz)
    ux *= inv
    uy *= inv
    uz *= inv
    wx = xyz[r, C, 0] - xyz[r, CA, 0]
    wy = xyz[r, C, 1] - xyz[r, CA, 1]
    wz = xyz[r, C, 2] - xyz[r, CA, 2]
    inv = 1.0 / math.sqrt(wx * wx + wy * wy + wz * wz)
    wx *= inv
    wy *= inv
    wz *= inv
    bx = -(ux + wx)
    by = -(uy + wy)
    bz = -(uz + wz)
    inv = 1.0 / math.sqrt(bx * bx + by * by + bz * bz)
    bx *= inv
    by *= inv
    bz *= inv
    px = uy * wz - uz * wy
    py = uz * wx - ux * wz
    pz = ux * wy - uy * wx
    inv = 1.0 / math.sqrt(px * px + py * py + pz * pz)
    px *= inv
    py *= inv
    pz *= inv
    # L-chirality: the C-beta slot is on +p, H-alpha takes -p
    cb = math.cos(TETRA_HALF) * bond
    sb = math.sin(TETRA_HALF) * bond
    xyz[r, HA, 0] = xyz[r, CA, 0] + cb * bx - sb * px
    xyz[r, HA, 1] = xyz[r, CA, 1] + cb * by - sb * py
    xyz[r, HA, 2] = xyz[r, CA, 2] + cb * bz - sb * pz


@njit(cache=True, nogil=True)
def first_residue(xyz, geo):
    """Canonical frame: N at origin, CA on +x, C' in the xy-plane (y > 0)."""
    for a in range(N_ATOMS):
        for k in range(3):
            xyz[0, a, k] = 0.0
    xyz[0, CA, 0] = geo[G_NCA]
    theta = geo[A_NCAC]
    xyz[0, C, 0] = geo[G_NCA] - geo[G_CAC] * math.cos(theta)
    xyz[0, C, 1] = geo[G_CAC] * math.sin(theta)
    # amide H: external bisector direction of an ideal C'(prev)-N-CA angle, trans to C'
    h_angle = math.pi - 0.5 * geo[A_CNCA]
    xyz[0, H, 0] = geo[G_NH] * math.cos(h_angle)
    xyz[0, H, 1] = -geo[G_NH] * math.sin(h_angle)
    _place_ha(xyz, 0, geo[G_CAHA])
    for k in range(3):
        xyz[0, O, k] = np.nan


@njit(cache=True, nogil=True)
def extend(xyz, r, phi_deg, psi_prev_deg, geo):
    """Place residue r from residue r-1 given psi(r-1) and phi(r), in degrees."""
    p = r - 1
    _place(xyz, r, N, p, N, p, CA, p, C, geo[G_CN], geo[A_CACN], psi_prev_deg * DEG)
    _place(xyz, r, CA, p, CA, p, C, r, N, geo[G_NCA], geo[A_CNCA], geo[A_OMEGA])
    _place(xyz, r, C, p, C, r, N, r, CA, geo[G_CAC], geo[A_NCAC], phi_deg * DEG)
    _bisect_out(xyz, r, H, r, N, p, C, r, CA, geo[G_NH])
    _place_ha(xyz, r, geo[G_CAHA])
    _bisect_out(xyz, p, O, p, C, p, CA, r, N, geo[G_CO])
    for k in range(3):
        xyz[r, O, k] = np.nan


@njit(cache=True, nogil=True)
def build_chain(angles, geo, xyz):
    """Fill xyz[: len(angles) + 1] from (phi, psi) rows; row k joins residues k, k+1."""
    first_residue(xyz, geo)
    for k in range(angles.shape[0]):
        extend(xyz, k + 1, angles[k, 0], angles[k, 1], geo)


@njit(cache=True, nogil=True)
def _vector(xyz, r, t, out):
    if t == NH:
        r1, a1, r2, a2 = r, N, r, H
    elif t == CAHA:
        r1, a1, r2, a2 = r, CA, r, HA
    elif t == CN:
        r1, a1, r2, a2 = r, C, r + 1, N
    else:
        r1, a1, r2, a2 = r, CA, r, C
    x = xyz[r2, a2, 0] - xyz[r1, a1, 0]
    y = xyz[r2, a2, 1] - xyz[r1, a1, 1]
    z = xyz[r2, a2, 2] - xyz[r1, a1, 2]
    norm = math.sqrt(x * x + y * y + z * z)
    out[0] = x / norm
    out[1] = y / norm
    out[2] = z / norm
    return norm


@njit(cache=True, nogil=True)
def saupe_row_into(v, scale, row):
    x, y, z = v[0], v[1], v[2]
    row[0] = scale * (x * x - z * z)
    row[1] = scale * (y * y - z * z)
    row[2] = scale * (2.0 * x * y)
    row[3] = scale * (2.0 * x * z)
    row[4] = scale * (2.0 * y * z)


@njit(cache=True, nogil=True)
def lstsq_svd(A, b, m, s_out, R, V, c):
    """Least squares A[:m] s = b[:m] through QR followed by a Jacobi SVD of R.

    A and b are overwritten. Singular values below SV_THRESHOLD * max are
    dropped (minimum-norm solution). Returns the effective rank.
    """
    ncol = 5
    # Householder QR, applying reflections to b as we go
    for j in range(ncol):
        norm = 0.0
        for i in range(j, m):
            norm += A[i, j] * A[i, j]
        norm = math.sqrt(norm)
        if norm == 0.0:
            continue
        alpha = -norm if A[j, j] >= 0.0 else norm
        v0 = A[j, j] - alpha
        vnorm2 = v0 * v0
        for i in range(j + 1, m):
            vnorm2 += A[i, j] * A[i, j]
        if vnorm2 == 0.0:
            continue
        A[j, j] = v0
        for k in range(j + 1, ncol):
            dot = 0.0
            for i in range(j, m):
                dot += A[i, j] * A[i, k]
            f = 2.0 * dot / vnorm2
            for i in range(j, m):
                A[i, k] -= f * A[i, j]
        dot = 0.0
        for i in range(j, m):
            dot += A[i, j] * b[i]
        f = 2.0 * dot / vnorm2
        for i in range(j, m):
            b[i] -= f * A[i, j]
        A[j, j] = alpha
    for i in range(ncol):
        c[i] = b[i]
        for k in range(ncol):
            R[i, k] = A[i, k] if k >= i else 0.0
            V[i, k] = 1.0 if i == k else 0.0
    # one-sided Jacobi on the columns of R
    for sweep in range(60):
        rotated = False
        for p in range(ncol - 1):
            for q in range(p + 1, ncol):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(ncol):
                    alpha += R[i, p] * R[i, p]
                    beta += R[i, q] * R[i, q]
                    gamma += R[i, p] * R[i, q]
                if gamma == 0.0 or abs(gamma) <= 1e-15 * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / math.sqrt(1.0 + t * t)
                sn = cs * t
                for i in range(ncol):
                    rp = R[i, p]
                    rq = R[i, q]
                    R[i, p] = cs * rp - sn * rq
                    R[i, q] = sn * rp + cs * rq
                    vp = V[i, p]
                    vq = V[i, q]
                    V[i, p] = cs * vp - sn * vq
                    V[i, q] = sn * vp + cs * vq
        if not rotated:
            break
    smax = 0.0
    for j in range(ncol):
        s_out[j] = 0.0
        sig = 0.0
        for i in range(ncol):
            sig += R[i, j] * R[i, j]
        sig = math.sqrt(sig)
        if sig > smax:
            smax = sig
    rank = 0
    for j in range(ncol):
        sig2 = 0.0
        for i in range(ncol):
            sig2 += R[i, j] * R[i, j]
        sig = math.sqrt(sig2)
        if sig == 0.0 or sig < SV_THRESHOLD * smax:
            continue
        rank += 1
        # (u_j . c) / sigma_j with u_j = R[:, j] / sigma_j
        proj = 0.0
        for i in range(ncol):
            proj += R[i, j] * c[i]
        coef = proj / sig2
        for i in range(ncol):
            s_out[i] += coef * V[i, j]
    return rank


@njit(cache=True, nogil=True)
def medium_design(xyz, rec_res, rec_type, rec_val, rec_dmax, lo, hi, A, b, vecs):
    """Unit vectors, design rows and right-hand side for records [lo, hi)."""
    for i in range(hi - lo):
        k = lo + i
        _vector(xyz, rec_res[k], rec_type[k], vecs[i])
        saupe_row_into(vecs[i], rec_dmax[k], A[i])
        b[i] = rec_val[k]


@njit(cache=True, nogil=True)
def medium_residuals(vecs, rec_val, rec_w, rec_dmax, lo, hi, s, A, resid, num, den):
    """Back-calculate records [lo, hi) and accumulate weighted squared residuals."""
    for i in range(hi - lo):
        k = lo + i
        saupe_row_into(vecs[i], rec_dmax[k], A[i])
        back = 0.0
        for j in range(5):
            back += A[i, j] * s[j]
        r = back - rec_val[k]
        resid[k] = r
        num += rec_w[k] * r * r
        den += rec_w[k]
    return num, den


@njit(cache=True, nogil=True)
def finish_score(num, den):
    score = math.sqrt(num / den)
    if not math.isfinite(score):
        return WORST_SCORE
    return score


@njit(cache=True, nogil=True)
def fit_media(xyz, rec_res, rec_type, rec_val, rec_w, rec_dmax, med_ptr,
              tensors, resid, ranks, A, b, R, V, c, vecs):
    """Fit one tensor per medium and return the weighted RMSD over all records."""
    n_media = med_ptr.shape[0] - 1
    num = 0.0
    den = 0.0
    for m in range(n_media):
        lo = med_ptr[m]
        hi = med_ptr[m + 1]
        medium_design(xyz, rec_res, rec_type, rec_val, rec_dmax, lo, hi, A, b, vecs)
        ranks[m] = lstsq_svd(A, b, hi - lo, tensors[m], R, V, c)
        num, den = medium_residuals(vecs, rec_val, rec_w, rec_dmax, lo, hi, tensors[m], A,
                                    resid, num, den)
    return finish_score(num, den)


@njit(cache=True, nogil=True)
def score_combinations(prefix, cand, start, stop, geo,
                       rec_res, rec_type, rec_val, rec_w, rec_dmax, med_ptr, out):
    """Score flat combinations [start, stop) of prefix (m1, k, 2) x cand (m2, 2).

    Combination c extends prefix[c // m2] with cand[c % m2]; out[c - start] gets
    its fitness. The prefix chain is rebuilt only when c // m2 changes.
    """
    m2 = cand.shape[0]
    k = prefix.shape[1]
    n_res = k + 2
    n_media = med_ptr.shape[0] - 1
    n_rec = rec_res.shape[0]
    max_rows = 1
    for m in range(n_media):
        rows = med_ptr[m + 1] - med_ptr[m]
        if rows > max_rows:
            max_rows = rows
    xyz = np.empty((n_res, N_ATOMS, 3))
    tensors = np.empty((n_media, 5))
    resid = np.empty(n_rec)
    ranks = np.empty(n_media, dtype=np.int64)
    A = np.empty((max_rows, 5))
    b = np.empty(max_rows)
    R = np.empty((5, 5))
    V = np.empty((5, 5))
    c = np.empty(5)
    vecs = np.empty((max_rows, 3))
    last = -1
    for flat in range(start, stop):
        i = flat // m2
        j = flat - i * m2
        if i != last:
            first_residue(xyz, geo)
            for p in range(k):
                extend(xyz, p + 1, prefix[i, p, 0], prefix[i, p, 1], geo)
            last = i
        extend(xyz, k + 1, cand[j, 0], cand[j, 1], geo)
        out[flat - start] = fit_media(xyz, rec_res, rec_type, rec_val, rec_w, rec_dmax,
                                      med_ptr, tensors, resid, ranks, A, b, R, V, c, vecs)


@njit(cache=True, nogil=True)
def _before(sa, ia, sb, ib, prefix, cand):
    # total order: score, then lexicographic dihedral sequence
    if sa < sb:
        return True
    if sa > sb:
        return False
    m2 = cand.shape[0]
    pa = ia // m2
    pb = ib // m2
    if pa != pb:
        for p in range(prefix.shape[1]):
            for q in range(2):
                x = prefix[pa, p, q]
                y = prefix[pb, p, q]
                if x < y:
                    return True
                if x > y:
                    return False
    ja = ia - pa * m2
    jb = ib - pb * m2
    for q in range(2):
        x = cand[ja, q]
        y = cand[jb, q]
        if x < y:
            return True
        if x > y:
            return False
    return ia < ib


@njit(cache=True, nogil=True)
def sort_block(scores, index, prefix, cand):
    """Return (scores, index) reordered by the total order."""
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ix = index[order]
    n = s.shape[0]
    lo = 0
    while lo < n:
        hi = lo + 1
        while hi < n and s[hi] == s[lo]:
            hi += 1
        if hi - lo > 1:
            # insertion sort on the tie run
            for a in range(lo + 1, hi):
                key = ix[a]
                b = a - 1
                while b >= lo and _before(s[lo], key, s[lo], ix[b], prefix, cand):
                    ix[b + 1] = ix[b]
                    b -= 1
                ix[b + 1] = key
        lo = hi
    return s, ix


@njit(cache=True, nogil=True)
def merge_blocks(sa, ia, sb, ib, prefix, cand):
    """Linear merge of two blocks already in total order."""
    na = sa.shape[0]
    nb = sb.shape[0]
    s = np.empty(na + nb)
    ix = np.empty(na + nb, dtype=np.int64)
    a = 0
    b = 0
    k = 0
    while a < na and b < nb:
        if _before(sb[b], ib[b], sa[a], ia[a], prefix, cand):
            s[k] = sb[b]
            ix[k] = ib[b]
            b += 1
        else:
            s[k] = sa[a]
            ix[k] = ia[a]
            a += 1
        k += 1
    while a < na:
        s[k] = sa[a]
        ix[k] = ia[a]
        a += 1
        k += 1
    while b < nb:
        s[k] = sb[b]
        ix[k] = ib[b]
        b += 1
        k += 1
    return s, ix
