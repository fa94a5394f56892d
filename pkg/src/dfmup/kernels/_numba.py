"""Loop kernels compiled with numba."""
import numpy as np
from numba import njit

NEUMANN = 0
DIRICHLET = 1
# Voigt channel of the (a, t) tensor entry
_VOIGT = np.array([[0, 5, 4], [5, 1, 3], [4, 3, 2]], dtype=np.int64)


@njit(cache=True)
def _clip(src, n, axis, value, keep_upper, dst):
    m = 0
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        di = src[i, axis] - value
        dj = src[j, axis] - value
        if not keep_upper:
            di = -di
            dj = -dj
        if di >= 0.0:
            dst[m, 0] = src[i, 0]
            dst[m, 1] = src[i, 1]
            dst[m, 2] = src[i, 2]
            m += 1
        if (di > 0.0 and dj < 0.0) or (di < 0.0 and dj > 0.0):
            t = di / (di - dj)
            for c in range(3):
                dst[m, c] = src[i, c] + t * (src[j, c] - src[i, c])
            m += 1
    return m


@njit(cache=True)
def _area(p, n):
    if n < 3:
        return 0.0
    sx = 0.0
    sy = 0.0
    sz = 0.0
    for i in range(1, n - 1):
        ax = p[i, 0] - p[0, 0]
        ay = p[i, 1] - p[0, 1]
        az = p[i, 2] - p[0, 2]
        bx = p[i + 1, 0] - p[0, 0]
        by = p[i + 1, 1] - p[0, 1]
        bz = p[i + 1, 2] - p[0, 2]
        sx += ay * bz - az * by
        sy += az * bx - ax * bz
        sz += ax * by - ay * bx
    return 0.5 * np.sqrt(sx * sx + sy * sy + sz * sz)


@njit(cache=True)
def _index_range(p, n, axis, origin, cell, dim):
    lo = p[0, axis]
    hi = p[0, axis]
    for i in range(1, n):
        lo = min(lo, p[i, axis])
        hi = max(hi, p[i, axis])
    # half-open cells [lo, hi); a polygon on the top grid face belongs to the last cell
    i0 = int(np.floor((lo - origin) / cell))
    i1 = int(np.floor((hi - origin) / cell)) + 1
    return min(max(i0, 0), dim - 1), min(i1, dim)


@njit(cache=True)
def rasterize_polygon(poly, origin, cell, dims):
    """Area of a planar convex polygon inside every voxel of a regular grid.

    Returns (flat C-order voxel indices, areas) for voxels with positive area.
    """
    nv = poly.shape[0]
    cap = nv + 8
    b1 = np.empty((cap, 3))
    b2 = np.empty((cap, 3))
    b3 = np.empty((cap, 3))
    b4 = np.empty((cap, 3))
    b5 = np.empty((cap, 3))
    b6 = np.empty((cap, 3))
    nx, ny, nz = dims[0], dims[1], dims[2]
    x0, x1 = _index_range(poly, nv, 0, origin[0], cell, nx)
    size = 16
    idx = np.empty(size, dtype=np.int64)
    area = np.empty(size)
    count = 0
    for ix in range(x0, x1):
        xl = origin[0] + ix * cell
        n1 = _clip(poly, nv, 0, xl, True, b1)
        n1 = _clip(b1, n1, 0, xl + cell, False, b2)
        if n1 < 3:
            continue
        y0, y1 = _index_range(b2, n1, 1, origin[1], cell, ny)
        for iy in range(y0, y1):
            yl = origin[1] + iy * cell
            n2 = _clip(b2, n1, 1, yl, True, b3)
            n2 = _clip(b3, n2, 1, yl + cell, False, b4)
            if n2 < 3:
                continue
            z0, z1 = _index_range(b4, n2, 2, origin[2], cell, nz)
            for iz in range(z0, z1):
                zl = origin[2] + iz * cell
                n3 = _clip(b4, n2, 2, zl, True, b5)
                n3 = _clip(b5, n3, 2, zl + cell, False, b6)
                a = _area(b6, n3)
                if a <= 0.0:
                    continue
                if count == size:
                    size *= 2
                    idx2 = np.empty(size, dtype=np.int64)
                    area2 = np.empty(size)
                    idx2[:count] = idx[:count]
                    area2[:count] = area[:count]
                    idx = idx2
                    area = area2
                idx[count] = (ix * ny + iy) * nz + iz
                area[count] = a
                count += 1
    return idx[:count], area[:count]


@njit(cache=True)
def _face_value(pos, n_t, upper, is_dirichlet, hd, out_w, slot_self, slot_nb, w_scale):
    """Accumulate the linear form of a cell-face head value into out_w; returns the constant part."""
    # slots: out_w[0] -> cell p-1, out_w[1] -> cell p, out_w[2] -> cell p+1
    inner = pos < n_t - 1 if upper else pos > 0
    if inner:
        out_w[slot_self] += 0.5 * w_scale
        out_w[slot_nb] += 0.5 * w_scale
        return 0.0
    if is_dirichlet:
        return hd * w_scale
    if n_t > 1:
        # linear extrapolation from inside: 1.5 h_p - 0.5 h_(p-+1)
        other = 0 if upper else 2
        out_w[slot_self] += 1.5 * w_scale
        out_w[other] -= 0.5 * w_scale
        return 0.0
    out_w[slot_self] += w_scale
    return 0.0


@njit(cache=True)
def _gamma(i, j, k, t, dims, origin, cell, bc_type, bc_coef, w):
    """Tangential head gradient of cell (i, j, k) along axis t; weights into w, returns constant."""
    w[0] = 0.0
    w[1] = 0.0
    w[2] = 0.0
    pos = i if t == 0 else (j if t == 1 else k)
    n_t = dims[t]
    cx = origin[0] + (i + 0.5) * cell
    cy = origin[1] + (j + 0.5) * cell
    cz = origin[2] + (k + 0.5) * cell
    const = 0.0
    for side in range(2):
        face = 2 * t + side
        upper = side == 1
        fx, fy, fz = cx, cy, cz
        edge = origin[t] + (dims[t] if upper else 0) * cell
        if t == 0:
            fx = edge
        elif t == 1:
            fy = edge
        else:
            fz = edge
        hd = bc_coef[face, 0] + bc_coef[face, 1] * fx + bc_coef[face, 2] * fy + bc_coef[face, 3] * fz
        sgn = 1.0 / cell if upper else -1.0 / cell
        nb = 2 if upper else 0
        const += _face_value(pos, n_t, upper, bc_type[face] == DIRICHLET, hd, w, 1, nb, sgn)
    return const


@njit(cache=True)
def face_flux_coo(chan, origin, cell, bc_type, bc_coef):
    """Linear face-flux operator F = M h + f of the cell-centered scheme.

    Faces of axis a are numbered in C order over (n_a + 1) x ... and
    concatenated x, y, z.  Fluxes are positive along +a.
    Returns (rows, cols, vals, const, n_faces).
    """
    nx, ny, nz = chan.shape[1], chan.shape[2], chan.shape[3]
    dims = np.array([nx, ny, nz], dtype=np.int64)
    area = cell * cell
    nfa = np.array([(nx + 1) * ny * nz, nx * (ny + 1) * nz, nx * ny * (nz + 1)], dtype=np.int64)
    n_faces = nfa[0] + nfa[1] + nfa[2]
    cap = 14 * n_faces
    rows = np.empty(cap, dtype=np.int64)
    cols = np.empty(cap, dtype=np.int64)
    vals = np.empty(cap)
    const = np.zeros(n_faces)
    wp = np.zeros(3)
    wq = np.zeros(3)
    cnt = 0
    off = 0
    for a in range(3):
        fdims = dims.copy()
        fdims[a] += 1
        t1 = (a + 1) % 3
        t2 = (a + 2) % 3
        for fi in range(fdims[0]):
            for fj in range(fdims[1]):
                for fk in range(fdims[2]):
                    f = off + (fi * fdims[1] + fj) * fdims[2] + fk
                    p_a = fi if a == 0 else (fj if a == 1 else fk)
                    # cell below (index p_a - 1) and above (index p_a) along a
                    lo_i, lo_j, lo_k = fi, fj, fk
                    if a == 0:
                        lo_i -= 1
                    elif a == 1:
                        lo_j -= 1
                    else:
                        lo_k -= 1
                    has_lo = p_a > 0
                    has_hi = p_a < dims[a]
                    if has_lo and has_hi:
                        P = (lo_i * ny + lo_j) * nz + lo_k
                        Q = (fi * ny + fj) * nz + fk
                        kp = chan[_VOIGT[a, a], lo_i, lo_j, lo_k]
                        kq = chan[_VOIGT[a, a], fi, fj, fk]
                        kh = 2.0 * kp * kq / (kp + kq)
                        rows[cnt] = f
                        cols[cnt] = P
                        vals[cnt] = area * kh / cell
                        rows[cnt + 1] = f
                        cols[cnt + 1] = Q
                        vals[cnt + 1] = -area * kh / cell
                        cnt += 2
                        for t in (t1, t2):
                            v = _VOIGT[a, t]
                            kt = 0.5 * (chan[v, lo_i, lo_j, lo_k] + chan[v, fi, fj, fk])
                            if kt == 0.0:
                                continue
                            scale = -area * kt * 0.5
                            cpn = _gamma(lo_i, lo_j, lo_k, t, dims, origin, cell, bc_type, bc_coef, wp)
                            cqn = _gamma(fi, fj, fk, t, dims, origin, cell, bc_type, bc_coef, wq)
                            const[f] += scale * (cpn + cqn)
                            for s in range(3):
                                d = s - 1
                                for which in range(2):
                                    ci, cj, ck = (lo_i, lo_j, lo_k) if which == 0 else (fi, fj, fk)
                                    ww = wp[s] if which == 0 else wq[s]
                                    if ww == 0.0:
                                        continue
                                    if t == 0:
                                        ci += d
                                    elif t == 1:
                                        cj += d
                                    else:
                                        ck += d
                                    rows[cnt] = f
                                    cols[cnt] = (ci * ny + cj) * nz + ck
                                    vals[cnt] = scale * ww
                                    cnt += 1
                    else:
                        face = 2 * a + (0 if has_hi else 1)
                        if bc_type[face] != DIRICHLET:
                            continue
                        ci, cj, ck = (fi, fj, fk) if has_hi else (lo_i, lo_j, lo_k)
                        C = (ci * ny + cj) * nz + ck
                        x = origin[0] + (ci + 0.5) * cell
                        y = origin[1] + (cj + 0.5) * cell
                        z = origin[2] + (ck + 0.5) * cell
                        edge = origin[a] + p_a * cell
                        if a == 0:
                            x = edge
                        elif a == 1:
                            y = edge
                        else:
                            z = edge
                        hd = bc_coef[face, 0] + bc_coef[face, 1] * x + bc_coef[face, 2] * y + bc_coef[face, 3] * z
                        kaa = chan[_VOIGT[a, a], ci, cj, ck]
                        tk = 2.0 * area * kaa / cell
                        # lower face: F = -tk (h_C - hd); upper face: F = -tk (hd - h_C)
                        sgn = 1.0 if has_hi else -1.0
                        rows[cnt] = f
                        cols[cnt] = C
                        vals[cnt] = -tk * sgn
                        cnt += 1
                        cross = 0.0
                        for t in (t1, t2):
                            cross += chan[_VOIGT[a, t], ci, cj, ck] * bc_coef[face, 1 + t]
                        const[f] += tk * sgn * hd - area * cross
        off += nfa[a]
    return rows[:cnt], cols[:cnt], vals[:cnt], const, n_faces
