"""Contrast-limited adaptive histogram equalization for 8-bit images."""

from __future__ import annotations

import math

import numpy as np

NBINS = 256


def _equalize_lut(hist: np.ndarray, degenerate: bool) -> np.ndarray:
    """round((cdf(v) - cdf_min) / (N - cdf_min) * 255). A tile holding a single
    grey level maps every value to itself."""
    if degenerate:
        return np.arange(NBINS, dtype=np.float64)
    cdf = np.cumsum(hist)
    cdf_min = cdf[np.flatnonzero(hist)[0]]
    denom = cdf[-1] - cdf_min
    if denom <= 0:
        return np.arange(NBINS, dtype=np.float64)
    return np.clip(np.floor((cdf - cdf_min) * 255.0 / denom + 0.5), 0, 255)


def equalize_hist(image: np.ndarray) -> np.ndarray:
    """Global histogram equalization with the same mapping convention as
    :func:`clahe`, written independently for use as a reference."""
    img = np.asarray(image, dtype=np.uint8)
    values, counts = np.unique(img, return_counts=True)
    if len(values) == 1:
        return img.copy()
    cdf = np.cumsum(counts)
    mapped = np.floor((cdf - cdf[0]) * 255.0 / (cdf[-1] - cdf[0]) + 0.5)
    out = np.empty_like(img)
    for v, m in zip(values, mapped):
        out[img == v] = int(m)
    return out


def clip_histogram(hist: np.ndarray, limit: int) -> np.ndarray:
    """Clip bins at ``limit`` and spread the excess evenly over all bins."""
    hist = hist.astype(np.int64).copy()
    excess = int(np.maximum(hist - limit, 0).sum())
    if excess == 0:
        return hist
    np.minimum(hist, limit, out=hist)
    hist += excess // NBINS
    rem = excess % NBINS
    if rem:
        step = max(NBINS // rem, 1)
        hist[np.arange(0, NBINS, step)[:rem]] += 1
    return hist


def clahe(image: np.ndarray, clip_limit: float = 2.0, tiles: tuple[int, int] = (8, 8)) -> np.ndarray:
    """CLAHE with per-tile clipped equalization and bilinear blending of tile
    mappings between tile centres.

    ``clip_limit`` is relative to a uniform histogram: a bin may hold at most
    ``clip_limit * tile_pixels / 256`` counts (at least 1). ``math.inf``
    disables clipping. Images whose sides are not multiples of the tile grid
    are reflect-padded for the histograms; the output keeps the input shape.
    """
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(img, 0, 255).astype(np.uint8)
    h, w = img.shape
    ty, tx = tiles
    th, tw = math.ceil(h / ty), math.ceil(w / tx)
    ph, pw = th * ty - h, tw * tx - w
    padded = np.pad(img, ((0, ph), (0, pw)), mode="reflect") if (ph or pw) else img
    area = th * tw
    limit = None if math.isinf(clip_limit) else max(int(clip_limit * area / NBINS), 1)

    blocks = padded.reshape(ty, th, tx, tw).transpose(0, 2, 1, 3).reshape(ty * tx, area)
    luts = np.empty((ty * tx, NBINS))
    for t in range(ty * tx):
        hist = np.bincount(blocks[t], minlength=NBINS)
        degenerate = np.count_nonzero(hist) == 1
        if limit is not None:
            hist = clip_histogram(hist, limit)
        luts[t] = _equalize_lut(hist, degenerate)
    luts = luts.reshape(ty, tx, NBINS)

    # Position of each pixel relative to tile centres.
    def axis_weights(n: int, tsize: int, count: int):
        pos = (np.arange(n) + 0.5) / tsize - 0.5
        lo = np.floor(pos).astype(int)
        frac = pos - lo
        lo_c = np.clip(lo, 0, count - 1)
        hi_c = np.clip(lo + 1, 0, count - 1)
        return lo_c, hi_c, frac

    y0, y1, fy = axis_weights(h, th, ty)
    x0, x1, fx = axis_weights(w, tw, tx)
    v = img.astype(np.int64)
    fy = fy[:, None]
    fx = fx[None, :]
    top = (1 - fx) * luts[y0[:, None], x0[None, :], v] + fx * luts[y0[:, None], x1[None, :], v]
    bot = (1 - fx) * luts[y1[:, None], x0[None, :], v] + fx * luts[y1[:, None], x1[None, :], v]
    out = (1 - fy) * top + fy * bot
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
