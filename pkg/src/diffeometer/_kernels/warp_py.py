"""Pure-numpy warp kernels (fallback when the Cython extension is absent).

Both implementations enumerate interpolation taps in the same order and use
the same expression trees, so they agree to the last ulp for bilinear and to
vectorized-exp rounding for Gaussian.
"""

import numpy as np


def warp_bilinear(image, src_u, src_v):
    """Resample channels-first ``image`` at source pixel coords (src_u, src_v).

    src_u indexes axis 1 of each channel (first spatial axis), src_v axis 2.
    Out-of-grid sources clamp to the edge. Returns float64 (C, n, n).
    """
    n = image.shape[1]
    su = np.clip(src_u, 0.0, n - 1.0)
    sv = np.clip(src_v, 0.0, n - 1.0)
    i0f = np.minimum(np.floor(su), n - 2.0)
    j0f = np.minimum(np.floor(sv), n - 2.0)
    fu = su - i0f
    fv = sv - j0f
    i0 = i0f.astype(np.intp)
    j0 = j0f.astype(np.intp)
    x00 = image[:, i0, j0]
    x10 = image[:, i0 + 1, j0]
    x01 = image[:, i0, j0 + 1]
    x11 = image[:, i0 + 1, j0 + 1]
    return (
        x00 * ((1.0 - fu) * (1.0 - fv))
        + x10 * (fu * (1.0 - fv))
        + x01 * ((1.0 - fu) * fv)
        + x11 * (fu * fv)
    )


def warp_gaussian(image, src_u, src_v, sigma, radius):
    """Normalized Gaussian gather over grid points within ``radius`` cells.

    x(s) = sum_i x(s_i) G(s - s_i) / sum_i G(s - s_i), taps outside the grid
    simply do not contribute (the normalization absorbs the deficit).
    """
    n = image.shape[1]
    su = np.clip(src_u, 0.0, n - 1.0)
    sv = np.clip(src_v, 0.0, n - 1.0)
    ci = np.floor(su).astype(np.intp)
    cj = np.floor(sv).astype(np.intp)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)

    acc = np.zeros_like(image)
    wsum = np.zeros(su.shape)
    for di in range(-radius, radius + 2):
        gi = ci + di
        vi = (gi >= 0) & (gi <= n - 1)
        du = su - gi
        gic = np.clip(gi, 0, n - 1)
        for dj in range(-radius, radius + 2):
            gj = cj + dj
            valid = vi & (gj >= 0) & (gj <= n - 1)
            dv = sv - gj
            w = np.where(valid, np.exp(-(du * du + dv * dv) * inv2s2), 0.0)
            gjc = np.clip(gj, 0, n - 1)
            wsum += w
            acc += w * image[:, gic, gjc]
    return acc / wsum
