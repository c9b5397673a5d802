"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Outputs match the compiled versions element for element (labels, contours)
and to the last ulp or so for Lab values.
"""
from collections import deque

import numpy as np

DR = (0, 1, 1, 1, 0, -1, -1, -1)
DC = (1, 1, 0, -1, -1, -1, 0, 1)
_DIR_INDEX = {(DR[k], DC[k]): k for k in range(8)}

EPS_LAB = 216.0 / 24389.0
KAPPA_LAB = 24389.0 / 27.0


def _f(t):
    return np.where(t > EPS_LAB, np.cbrt(t), (KAPPA_LAB * t + 16.0) / 116.0)


def lab_image(rgb, lut, m, white):
    lin = lut[rgb]  # (h, w, 3)
    xyz = lin @ m.T / white
    fx, fy, fz = _f(xyz[..., 0]), _f(xyz[..., 1]), _f(xyz[..., 2])
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_box_masks(rgb, lut, m, white, bounds):
    lab = lab_image(rgb, lut, m, white)
    out = np.zeros((bounds.shape[0],) + rgb.shape[:2], dtype=np.uint8)
    for c, bd in enumerate(bounds):
        inside = np.all((lab >= bd[:3]) & (lab <= bd[3:]), axis=-1)
        out[c] = inside
    return out


def label8(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    fg = set(np.flatnonzero(mask).tolist())
    count = 0
    for idx in sorted(fg):
        r, c = divmod(idx, w)
        if labels[r, c]:
            continue
        count += 1
        labels[r, c] = count
        queue = deque([(r, c)])
        while queue:
            i, j = queue.popleft()
            for k in range(8):
                ni, nj = i + DR[k], j + DC[k]
                if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not labels[ni, nj]:
                    labels[ni, nj] = count
                    queue.append((ni, nj))
    return labels, count


def trace_contour(labels, label, r0, c0):
    h, w = labels.shape
    r, c, back = r0, c0, 4
    first = None
    pts = [(r0, c0)]
    for step in range(1, 4 * h * w + 9):
        found = -1
        for k in range(1, 9):
            d = (back + k) % 8
            nr, nc = r + DR[d], c + DC[d]
            if 0 <= nr < h and 0 <= nc < w and labels[nr, nc] == label:
                found = d
                break
        if found < 0:
            break
        if step == 1:
            first = (nr, nc)
        elif (r, c) == (r0, c0) and (nr, nc) == first:
            break
        d = (found + 7) % 8
        pr, pc = r + DR[d], c + DC[d]
        r, c = nr, nc
        back = _DIR_INDEX[(pr - r, pc - c)]
        pts.append((r, c))
    if len(pts) > 1 and pts[-1] == pts[0]:
        pts.pop()
    return np.asarray(pts, dtype=np.int64).reshape(-1, 2)
