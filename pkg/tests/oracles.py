"""Independent reference implementations used only by the tests.

Nothing here imports the compiled kernels: geometry is plain-Python vector
algebra, fits use numpy's own least squares, and searches are exhaustive.
"""

import itertools
import math

import numpy as np

# ideal geometry, restated here on purpose
B_NCA, B_CAC, B_CN, B_NH, B_CAHA, B_CO = 1.458, 1.525, 1.329, 1.01, 1.09, 1.231
T_NCAC, T_CACN, T_CNCA = 111.2, 116.2, 121.7
TETRA = 109.4712206


def sub(a, b):
    return [a[0] - b[0], a[1] - b[1], a[2] - b[2]]


def add(a, b):
    return [a[0] + b[0], a[1] + b[1], a[2] + b[2]]


def scale(a, k):
    return [a[0] * k, a[1] * k, a[2] * k]


def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def cross(a, b):
    return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]


def unit(a):
    n = math.sqrt(dot(a, a))
    return [a[0] / n, a[1] / n, a[2] / n]


def place(a, b, c, bond, angle_deg, torsion_deg):
    """Atom d with |cd| = bond, angle bcd = angle, dihedral abcd = torsion."""
    bc = unit(sub(c, b))
    n = unit(cross(sub(b, a), bc))
    m = cross(n, bc)
    th = math.radians(angle_deg)
    tau = math.radians(torsion_deg)
    d2 = [-bond * math.cos(th), bond * math.sin(th) * math.cos(tau),
          bond * math.sin(th) * math.sin(tau)]
    return add(c, add(scale(bc, d2[0]), add(scale(m, d2[1]), scale(n, d2[2]))))


def external_bisector(center, a, b, bond):
    u = unit(sub(a, center))
    w = unit(sub(b, center))
    return add(center, scale(unit(scale(add(u, w), -1.0)), bond))


def place_ha(n, ca, c):
    u = unit(sub(n, ca))
    w = unit(sub(c, ca))
    bis = unit(scale(add(u, w), -1.0))
    perp = unit(cross(u, w))
    half = math.radians(TETRA / 2)
    return add(ca, add(scale(bis, B_CAHA * math.cos(half)), scale(perp, -B_CAHA * math.sin(half))))


def nerf_chain(pairs):
    """List of residue dicts {N, H, CA, HA, C, O}; pairs[k] = (phi(k+2), psi(k+1))."""
    n1 = [0.0, 0.0, 0.0]
    ca1 = [B_NCA, 0.0, 0.0]
    t = math.radians(T_NCAC)
    c1 = [B_NCA - B_CAC * math.cos(t), B_CAC * math.sin(t), 0.0]
    h_dir = math.radians(180.0 - T_CNCA / 2)
    h1 = [B_NH * math.cos(h_dir), -B_NH * math.sin(h_dir), 0.0]
    res = [{"N": n1, "CA": ca1, "C": c1, "H": h1, "HA": place_ha(n1, ca1, c1), "O": None}]
    for phi, psi in pairs:
        p = res[-1]
        n = place(p["N"], p["CA"], p["C"], B_CN, T_CACN, psi)
        ca = place(p["CA"], p["C"], n, B_NCA, T_CNCA, 180.0)
        c = place(p["C"], n, ca, B_CAC, T_NCAC, phi)
        p["O"] = external_bisector(p["C"], p["CA"], n, B_CO)
        res.append({"N": n, "CA": ca, "C": c, "H": external_bisector(n, p["C"], ca, B_NH),
                    "HA": place_ha(n, ca, c), "O": None})
    return res


def oracle_vector(chain, residue, vtype):
    r = chain[residue - 1]
    if vtype == "NH":
        a, b = r["N"], r["H"]
    elif vtype == "CAHA":
        a, b = r["CA"], r["HA"]
    elif vtype == "CAC":
        a, b = r["CA"], r["C"]
    else:
        a, b = r["C"], chain[residue]["N"]
    return np.array(unit(sub(b, a)))


def rama_count_bruteforce(R, rects):
    """Count lattice points inside any half-open rectangle by direct scan."""
    count = 0
    steps = int(round(360 / R))
    for i in range(steps):
        phi = -180 + i * R
        for j in range(steps):
            psi = -180 + j * R
            if any(p0 <= phi < p1 and s0 <= psi < s1 for p0, p1, s0, s1 in rects):
                count += 1
    return count


def saupe_matrix(s):
    sxx, syy, sxy, sxz, syz = s
    return np.array([[sxx, sxy, sxz], [sxy, syy, syz], [sxz, syz, -sxx - syy]])


def lstsq_tensor(vectors, rdcs, dmax):
    """Order tensor through numpy's pseudo-inverse on the full 3x3 parameterization."""
    rows = []
    for v, d in zip(vectors, np.broadcast_to(dmax, len(rdcs))):
        x, y, z = v
        rows.append(d * np.array([x * x - z * z, y * y - z * z, 2 * x * y, 2 * x * z, 2 * y * z]))
    A = np.array(rows)
    s = np.linalg.pinv(A, rcond=1e-10) @ np.asarray(rdcs)
    rmsd = math.sqrt(np.mean((A @ s - rdcs) ** 2))
    return s, rmsd


def oracle_fitness(pairs, records, dmax_map, first_residue=1):
    """Weighted RMSD over media using the plain-Python chain and numpy lstsq."""
    chain = nerf_chain(pairs)
    n = len(chain)
    by_medium = {}
    for r in records:
        idx = r.residue_index - first_residue
        if not 0 <= idx < n:
            continue
        if r.vector_type == "CN" and idx + 1 >= n:
            continue
        if r.vector_type == "NH" and idx == 0 and first_residue != 1:
            continue
        by_medium.setdefault(r.medium_id, []).append(r)
    num = den = 0.0
    for recs in by_medium.values():
        vecs = [oracle_vector(chain, r.residue_index - first_residue + 1, r.vector_type)
                for r in recs]
        dm = np.array([dmax_map[r.vector_type] for r in recs])
        vals = np.array([r.value for r in recs])
        w = np.array([1.0 / r.error ** 2 for r in recs])
        s, _ = lstsq_tensor(vecs, vals, dm)
        back = np.array([d * (v @ saupe_matrix(s) @ v) for v, d in zip(vecs, dm)])
        num += float(np.sum(w * (back - vals) ** 2))
        den += float(np.sum(w))
    return math.sqrt(num / den)


def exhaustive_best(lists, score_fn):
    """Minimum of score_fn over every path through the candidate lists.

    Ties are broken by the flattened angle sequence, matching the contract.
    """
    best = None
    for path in itertools.product(*lists):
        score = score_fn(path)
        key = (score, tuple(a for pair in path for a in pair))
        if best is None or key < best[0]:
            best = (key, path)
    return best[1], best[0][0]
