"""Pixel kernels for skeletonisation, in numba and numpy flavours.

Neighbour order used throughout (clockwise from north)::

    P9 P2 P3
    P8 P1 P4
    P7 P6 P5
"""
from __future__ import annotations

import numpy as np

from ._jit import HAVE_NUMBA, backend, njit

# (drow, dcol) for P2..P9
RING = np.array([(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)], dtype=np.int64)


def _ring_components_lut() -> np.ndarray:
    """Number of 8-connected groups among the set ring pixels, for all 256 patterns."""
    lut = np.zeros(256, dtype=np.int64)
    for code in range(256):
        on = [i for i in range(8) if code >> i & 1]
        parent = {i: i for i in on}

        def find(i):
            while parent[i] != i:
                i = parent[i]
            return i

        for a in on:
            for b in on:
                if a < b:
                    da = RING[a]
                    db = RING[b]
                    if max(abs(da[0] - db[0]), abs(da[1] - db[1])) == 1:
                        parent[find(a)] = find(b)
        lut[code] = len({find(i) for i in on})
    return lut


RING_COMPONENTS = _ring_components_lut()


# ---------------------------------------------------------------------------
# Zhang-Suen thinning
# ---------------------------------------------------------------------------
@njit
def _zs_numba(img):
    h, w = img.shape
    rr = np.array([-1, -1, 0, 1, 1, 1, 0, -1])
    cc = np.array([0, 1, 1, 1, 0, -1, -1, -1])
    p = np.zeros(8, dtype=np.uint8)
    marker = np.zeros((h, w), dtype=np.uint8)
    changed = True
    while changed:
        changed = False
        for step in range(2):
            n_del = 0
            for i in range(h):
                for j in range(w):
                    if img[i, j] == 0:
                        continue
                    for k in range(8):
                        y = min(max(i + rr[k], 0), h - 1)
                        x = min(max(j + cc[k], 0), w - 1)
                        p[k] = img[y, x]
                    b = 0
                    for k in range(8):
                        b += p[k]
                    if b < 2 or b > 6:
                        continue
                    a = 0
                    for k in range(8):
                        if p[k] == 0 and p[(k + 1) % 8] == 1:
                            a += 1
                    if a != 1:
                        continue
                    if step == 0:
                        if p[0] * p[2] * p[4] != 0 or p[2] * p[4] * p[6] != 0:
                            continue
                    else:
                        if p[0] * p[2] * p[6] != 0 or p[0] * p[4] * p[6] != 0:
                            continue
                    marker[i, j] = 1
                    n_del += 1
            if n_del:
                changed = True
                for i in range(h):
                    for j in range(w):
                        if marker[i, j]:
                            img[i, j] = 0
                            marker[i, j] = 0
    return img


def _zs_numpy(img: np.ndarray) -> np.ndarray:
    img = img.copy()
    h, w = img.shape
    while True:
        changed = False
        for step in range(2):
            pad = np.pad(img, 1, mode="edge")
            p = [pad[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] for dr, dc in RING]
            b = sum(x.astype(np.int64) for x in p)
            a = sum(((p[k] == 0) & (p[(k + 1) % 8] == 1)).astype(np.int64) for k in range(8))
            cond = (img == 1) & (b >= 2) & (b <= 6) & (a == 1)
            if step == 0:
                cond &= (p[0] * p[2] * p[4] == 0) & (p[2] * p[4] * p[6] == 0)
            else:
                cond &= (p[0] * p[2] * p[6] == 0) & (p[0] * p[4] * p[6] == 0)
            if cond.any():
                img[cond] = 0
                changed = True
        if not changed:
            return img


def zhang_suen(mask: np.ndarray) -> np.ndarray:
    """Two-subiteration thinning; out-of-field neighbours replicate the border."""
    img = (np.asarray(mask) > 0).astype(np.uint8)
    if backend() == "numba":
        return _zs_numba(img.copy())
    return _zs_numpy(img)


# ---------------------------------------------------------------------------
# staircase cleanup: drop pixels whose neighbours stay 8-connected without them
#
# One pass marks candidates (>= 2 neighbours forming a single 8-connected
# group), then revisits the candidates in raster order and deletes each one
# that still qualifies. Passes repeat until nothing changes. Both backends
# implement exactly this order, so their outputs are identical.
# ---------------------------------------------------------------------------
@njit
def _cleanup_numba(img, lut):
    h, w = img.shape
    rr = np.array([-1, -1, 0, 1, 1, 1, 0, -1])
    cc = np.array([0, 1, 1, 1, 0, -1, -1, -1])
    cand = np.zeros((h, w), dtype=np.uint8)
    changed = True
    while changed:
        changed = False
        for phase in range(2):
            for i in range(h):
                for j in range(w):
                    if img[i, j] == 0 or (phase == 1 and cand[i, j] == 0):
                        continue
                    code = 0
                    cnt = 0
                    for k in range(8):
                        y = i + rr[k]
                        x = j + cc[k]
                        if 0 <= y < h and 0 <= x < w and img[y, x]:
                            code |= 1 << k
                            cnt += 1
                    ok = cnt >= 2 and lut[code] == 1
                    if phase == 0:
                        cand[i, j] = 1 if ok else 0
                    elif ok:
                        img[i, j] = 0
                        changed = True
            if phase == 1:
                cand[:, :] = 0
    return img


def _cleanup_numpy(img: np.ndarray) -> np.ndarray:
    img = img.copy()
    h, w = img.shape
    while True:
        pad = np.pad(img, 1)
        codes = np.zeros((h, w), dtype=np.int64)
        cnt = np.zeros((h, w), dtype=np.int64)
        for k, (dr, dc) in enumerate(RING):
            nb = pad[1 + dr:1 + dr + h, 1 + dc:1 + dc + w].astype(np.int64)
            codes |= nb << k
            cnt += nb
        cand = (img == 1) & (cnt >= 2) & (RING_COMPONENTS[codes] == 1)
        changed = False
        for i, j in zip(*np.nonzero(cand)):
            code = 0
            n = 0
            for k, (dr, dc) in enumerate(RING):
                if pad[i + 1 + dr, j + 1 + dc]:
                    code |= 1 << k
                    n += 1
            if n >= 2 and RING_COMPONENTS[code] == 1:
                img[i, j] = 0
                pad[i + 1, j + 1] = 0
                changed = True
        if not changed:
            return img


def cleanup(skel: np.ndarray) -> np.ndarray:
    img = (np.asarray(skel) > 0).astype(np.uint8)
    if backend() == "numba":
        return _cleanup_numba(img.copy(), RING_COMPONENTS)
    return _cleanup_numpy(img)


def neighbour_counts(img: np.ndarray) -> np.ndarray:
    """8-neighbour counts with zero padding."""
    img = (np.asarray(img) > 0).astype(np.int64)
    h, w = img.shape
    pad = np.pad(img, 1)
    out = np.zeros((h, w), dtype=np.int64)
    for dr, dc in RING:
        out += pad[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return out * img


__all__ = ["zhang_suen", "cleanup", "neighbour_counts", "HAVE_NUMBA", "RING", "RING_COMPONENTS"]
