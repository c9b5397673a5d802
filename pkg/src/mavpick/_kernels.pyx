# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-pixel kernels. Must stay output-identical to ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cbrt

cnp.import_array()

# clockwise in image coordinates (row grows downward), starting east
cdef int DR[8]
cdef int DC[8]
DR[:] = [0, 1, 1, 1, 0, -1, -1, -1]
DC[:] = [1, 1, 0, -1, -1, -1, 0, 1]

cdef double EPS_LAB = 216.0 / 24389.0
cdef double KAPPA_LAB = 24389.0 / 27.0


cdef inline double _f(double t) noexcept nogil:
    if t > EPS_LAB:
        return cbrt(t)
    return (KAPPA_LAB * t + 16.0) / 116.0


def lab_image(cnp.uint8_t[:, :, ::1] rgb, double[::1] lut, double[:, ::1] m, double[::1] white):
    cdef Py_ssize_t h = rgb.shape[0], w = rgb.shape[1], i, j
    out = np.empty((h, w, 3), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double r, g, b, fx, fy, fz
    with nogil:
        for i in range(h):
            for j in range(w):
                r = lut[rgb[i, j, 0]]
                g = lut[rgb[i, j, 1]]
                b = lut[rgb[i, j, 2]]
                fx = _f((m[0, 0] * r + m[0, 1] * g + m[0, 2] * b) / white[0])
                fy = _f((m[1, 0] * r + m[1, 1] * g + m[1, 2] * b) / white[1])
                fz = _f((m[2, 0] * r + m[2, 1] * g + m[2, 2] * b) / white[2])
                o[i, j, 0] = 116.0 * fy - 16.0
                o[i, j, 1] = 500.0 * (fx - fy)
                o[i, j, 2] = 200.0 * (fy - fz)
    return out


def lab_box_masks(cnp.uint8_t[:, :, ::1] rgb, double[::1] lut, double[:, ::1] m,
                  double[::1] white, double[:, ::1] bounds):
    """Fused RGB->Lab conversion and per-class box test; one mask per class."""
    cdef Py_ssize_t h = rgb.shape[0], w = rgb.shape[1], nk = bounds.shape[0], i, j, c
    out = np.zeros((nk, h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] o = out
    cdef double r, g, b, fx, fy, fz, L = 0.0, A = 0.0, B = 0.0
    cdef int pr = -1, pg = -1, pb = -1
    with nogil:
        for i in range(h):
            for j in range(w):
                if rgb[i, j, 0] == pr and rgb[i, j, 1] == pg and rgb[i, j, 2] == pb:
                    # same colour as the previous pixel: reuse L, A, B
                    for c in range(nk):
                        if (bounds[c, 0] <= L <= bounds[c, 3] and bounds[c, 1] <= A <= bounds[c, 4]
                                and bounds[c, 2] <= B <= bounds[c, 5]):
                            o[c, i, j] = 1
                    continue
                pr = rgb[i, j, 0]
                pg = rgb[i, j, 1]
                pb = rgb[i, j, 2]
                r = lut[rgb[i, j, 0]]
                g = lut[rgb[i, j, 1]]
                b = lut[rgb[i, j, 2]]
                fx = _f((m[0, 0] * r + m[0, 1] * g + m[0, 2] * b) / white[0])
                fy = _f((m[1, 0] * r + m[1, 1] * g + m[1, 2] * b) / white[1])
                fz = _f((m[2, 0] * r + m[2, 1] * g + m[2, 2] * b) / white[2])
                L = 116.0 * fy - 16.0
                A = 500.0 * (fx - fy)
                B = 200.0 * (fy - fz)
                for c in range(nk):
                    if (bounds[c, 0] <= L <= bounds[c, 3] and bounds[c, 1] <= A <= bounds[c, 4]
                            and bounds[c, 2] <= B <= bounds[c, 5]):
                        o[c, i, j] = 1
    return out


cdef inline int _find(int[::1] parent, int x) noexcept nogil:
    cdef int root = x, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


cdef inline void _union(int[::1] parent, int a, int b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label8(cnp.uint8_t[:, ::1] mask):
    """8-connected labels 1..n, numbered by each component's first raster pixel."""
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1], i, j
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] lab = labels_arr
    parent_arr = np.zeros(h * w + 2, dtype=np.int32)
    cdef int[::1] parent = parent_arr
    cdef int nxt = 1, cur, k
    with nogil:
        for i in range(h):
            for j in range(w):
                if not mask[i, j]:
                    continue
                cur = 0
                # already-visited neighbours: W, NW, N, NE
                if j > 0 and lab[i, j - 1]:
                    cur = lab[i, j - 1]
                if i > 0:
                    if j > 0 and lab[i - 1, j - 1]:
                        if cur:
                            _union(parent, cur, lab[i - 1, j - 1])
                        else:
                            cur = lab[i - 1, j - 1]
                    if lab[i - 1, j]:
                        if cur:
                            _union(parent, cur, lab[i - 1, j])
                        else:
                            cur = lab[i - 1, j]
                    if j + 1 < w and lab[i - 1, j + 1]:
                        if cur:
                            _union(parent, cur, lab[i - 1, j + 1])
                        else:
                            cur = lab[i - 1, j + 1]
                if not cur:
                    cur = nxt
                    parent[nxt] = nxt
                    nxt += 1
                lab[i, j] = cur
    # provisional labels are issued in raster order, so the root (minimum)
    # label of each set belongs to its first raster pixel
    final_arr = np.zeros(nxt, dtype=np.int32)
    cdef int[::1] final = final_arr
    cdef int count = 0
    for k in range(1, nxt):
        cur = _find(parent, k)
        if cur == k:
            count += 1
            final[k] = count
    for k in range(1, nxt):
        final[k] = final[_find(parent, k)]
    with nogil:
        for i in range(h):
            for j in range(w):
                if lab[i, j]:
                    lab[i, j] = final[lab[i, j]]
    return labels_arr, count


def trace_contour(int[:, ::1] labels, int label, int r0, int c0):
    """Moore-neighbour boundary trace from the component's first raster pixel.

    Returns an (n, 2) int array of (row, col) boundary pixels in clockwise order.
    Stops when the walk is back at the start about to repeat its first move.
    """
    cdef Py_ssize_t h = labels.shape[0], w = labels.shape[1]
    cdef int r = r0, c = c0, back = 4, d, k, nr = 0, nc = 0, pr, pc, dr, dc
    cdef int found, steps = 0, limit = 4 * h * w + 8
    cdef int r1 = -1, c1 = -1
    pts = [(r0, c0)]
    while steps < limit:
        steps += 1
        found = -1
        for k in range(1, 9):
            d = (back + k) % 8
            nr = r + DR[d]
            nc = c + DC[d]
            if 0 <= nr < h and 0 <= nc < w and labels[nr, nc] == label:
                found = d
                break
        if found < 0:
            break
        if steps == 1:
            r1 = nr
            c1 = nc
        elif r == r0 and c == c0 and nr == r1 and nc == c1:
            break
        d = (found + 7) % 8
        pr = r + DR[d]
        pc = c + DC[d]
        r = nr
        c = nc
        dr = pr - r
        dc = pc - c
        for k in range(8):
            if DR[k] == dr and DC[k] == dc:
                back = k
                break
        pts.append((r, c))
    if len(pts) > 1 and pts[len(pts) - 1] == pts[0]:
        pts.pop()
    return np.asarray(pts, dtype=np.int64).reshape(-1, 2)
