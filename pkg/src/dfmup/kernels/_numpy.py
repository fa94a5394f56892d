"""Pure-numpy versions of the loop kernels (same signatures and results as ``_numba``)."""
import numpy as np

NEUMANN = 0
DIRICHLET = 1
_VOIGT = np.array([[0, 5, 4], [5, 1, 3], [4, 3, 2]], dtype=np.int64)


def _clip(poly, axis, value, keep_upper):
    d = poly[:, axis] - value
    if not keep_upper:
        d = -d
    dn = np.roll(d, -1)
    nxt = np.roll(poly, -1, axis=0)
    inside = d >= 0.0
    crossing = ((d > 0.0) & (dn < 0.0)) | ((d < 0.0) & (dn > 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(crossing, d / (d - dn), 0.0)
    cut = poly + t[:, None] * (nxt - poly)
    pts = np.stack([poly, cut], axis=1).reshape(-1, 3)
    keep = np.stack([inside, crossing], axis=1).reshape(-1)
    return pts[keep]


def _area(p):
    if len(p) < 3:
        return 0.0
    rel = p - p[0]
    s = np.cross(rel[1:-1], rel[2:]).sum(axis=0)
    return 0.5 * float(np.sqrt(s @ s))


def _index_range(p, axis, origin, cell, dim):
    lo, hi = p[:, axis].min(), p[:, axis].max()
    # half-open cells [lo, hi); a polygon on the top grid face belongs to the last cell
    i0 = int(np.floor((lo - origin) / cell))
    i1 = int(np.floor((hi - origin) / cell)) + 1
    return min(max(i0, 0), dim - 1), min(i1, dim)


def rasterize_polygon(poly, origin, cell, dims):
    nx, ny, nz = (int(v) for v in dims)
    idx, area = [], []
    x0, x1 = _index_range(poly, 0, origin[0], cell, nx)
    for ix in range(x0, x1):
        xl = origin[0] + ix * cell
        p1 = _clip(_clip(poly, 0, xl, True), 0, xl + cell, False)
        if len(p1) < 3:
            continue
        y0, y1 = _index_range(p1, 1, origin[1], cell, ny)
        for iy in range(y0, y1):
            yl = origin[1] + iy * cell
            p2 = _clip(_clip(p1, 1, yl, True), 1, yl + cell, False)
            if len(p2) < 3:
                continue
            z0, z1 = _index_range(p2, 2, origin[2], cell, nz)
            for iz in range(z0, z1):
                zl = origin[2] + iz * cell
                a = _area(_clip(_clip(p2, 2, zl, True), 2, zl + cell, False))
                if a > 0.0:
                    idx.append((ix * ny + iy) * nz + iz)
                    area.append(a)
    return np.array(idx, dtype=np.int64), np.array(area, dtype=float)


def _gamma(ijk, t, dims, origin, cell, bc_type, bc_coef):
    """Vectorized tangential gradient along t for cells ijk (N, 3).

    Returns weights (N, 3) for cells at offsets -1, 0, +1 along t, and constants (N,).
    """
    pos = ijk[:, t]
    n_t = int(dims[t])
    w = np.zeros((len(ijk), 3))
    const = np.zeros(len(ijk))
    centers = origin + (ijk + 0.5) * cell
    for upper in (False, True):
        face = 2 * t + int(upper)
        sgn = 1.0 / cell if upper else -1.0 / cell
        nb = 2 if upper else 0
        inner = pos < n_t - 1 if upper else pos > 0
        w[inner, 1] += 0.5 * sgn
        w[inner, nb] += 0.5 * sgn
        edge = ~inner
        if bc_type[face] == DIRICHLET:
            fc = centers[edge].copy()
            fc[:, t] = origin[t] + (n_t if upper else 0) * cell
            const[edge] += sgn * (bc_coef[face, 0] + fc @ bc_coef[face, 1:])
        elif n_t > 1:
            other = 0 if upper else 2
            w[edge, 1] += 1.5 * sgn
            w[edge, other] -= 0.5 * sgn
        else:
            w[edge, 1] += sgn
    return w, const


def face_flux_coo(chan, origin, cell, bc_type, bc_coef):
    chan = np.asarray(chan, dtype=float)
    origin = np.asarray(origin, dtype=float)
    dims = np.array(chan.shape[1:], dtype=np.int64)
    nx, ny, nz = (int(v) for v in dims)
    area = cell * cell
    flat = lambda ijk: (ijk[:, 0] * ny + ijk[:, 1]) * nz + ijk[:, 2]
    rows, cols, vals, consts = [], [], [], []
    off = 0
    for a in range(3):
        fdims = dims.copy()
        fdims[a] += 1
        nfa = int(np.prod(fdims))
        const = np.zeros(nfa)
        fijk = np.stack(np.unravel_index(np.arange(nfa), tuple(fdims)), axis=1)
        fid = np.arange(nfa) + off
        # interior faces
        m = (fijk[:, a] > 0) & (fijk[:, a] < dims[a])
        q = fijk[m]
        p = q.copy()
        p[:, a] -= 1
        f = fid[m]
        kp = chan[_VOIGT[a, a]][tuple(p.T)]
        kq = chan[_VOIGT[a, a]][tuple(q.T)]
        kh = 2.0 * kp * kq / (kp + kq)
        rows += [f, f]
        cols += [flat(p), flat(q)]
        vals += [area * kh / cell, -area * kh / cell]
        for t in ((a + 1) % 3, (a + 2) % 3):
            v = _VOIGT[a, t]
            kt = 0.5 * (chan[v][tuple(p.T)] + chan[v][tuple(q.T)])
            nz_mask = kt != 0.0
            if not nz_mask.any():
                continue
            scale = -area * kt * 0.5
            for cells in (p, q):
                w, c = _gamma(cells, t, dims, origin, cell, bc_type, bc_coef)
                const[m] += scale * c
                for s in range(3):
                    sel = nz_mask & (w[:, s] != 0.0)
                    nb = cells[sel].copy()
                    nb[:, t] += s - 1
                    rows.append(f[sel])
                    cols.append(flat(nb))
                    vals.append(scale[sel] * w[sel, s])
        # boundary faces
        for upper in (False, True):
            face = 2 * a + int(upper)
            if bc_type[face] != DIRICHLET:
                continue
            bm = fijk[:, a] == (dims[a] if upper else 0)
            c_ijk = fijk[bm].copy()
            if upper:
                c_ijk[:, a] -= 1
            fc = origin + (c_ijk + 0.5) * cell
            fc[:, a] = origin[a] + (dims[a] if upper else 0) * cell
            hd = bc_coef[face, 0] + fc @ bc_coef[face, 1:]
            kaa = chan[_VOIGT[a, a]][tuple(c_ijk.T)]
            tk = 2.0 * area * kaa / cell
            sgn = -1.0 if upper else 1.0
            cross = np.zeros(len(c_ijk))
            for t in ((a + 1) % 3, (a + 2) % 3):
                cross += chan[_VOIGT[a, t]][tuple(c_ijk.T)] * bc_coef[face, 1 + t]
            rows.append(fid[bm])
            cols.append(flat(c_ijk))
            vals.append(-tk * sgn)
            const[bm] += tk * sgn * hd - area * cross
        consts.append(const)
        off += nfa
    return (np.concatenate(rows).astype(np.int64), np.concatenate(cols).astype(np.int64),
            np.concatenate(vals), np.concatenate(consts), off)
