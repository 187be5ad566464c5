"""Pure-numpy ray marcher, used when the compiled extension is unavailable.

Sampling scheme shared with the compiled kernel: ray r is cut into segments
[t_near + i*step, min(t_near + (i+1)*step, t_far)] and each segment is one
sample at its midpoint with delta equal to the segment length.

`blocks` flags macro blocks of block_size^3 cells that contain any non-zero
corner and occupied_lo/hi bound the flagged blocks. Both kernels march only
inside that box; the compiled one additionally jumps over empty blocks. The
skips are exact because trilinear density is identically zero there.
"""
import numpy as np

from .camera import box_intersect
from .grid import sh_basis


def march(density, sh, extent, blocks, block_size, origins, dirs, t_near, t_far,
          occupied_lo, occupied_hi, step, background, sigma_threshold, stop_transmittance):
    m = origins.shape[0]
    n = density.shape[0]
    n_coef = sh.shape[3] // 3
    inv_h = (n - 1) / (2.0 * extent)
    t_base = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)

    ta, tb = box_intersect(origins, dirs, occupied_lo, occupied_hi)
    ta = np.maximum(ta, t_base)
    t_end = np.minimum(tb, t_far)
    with np.errstate(invalid="ignore"):
        i_start = np.floor(np.where(ta < t_end, (ta - t_base) / step, 0.0))
    i_start = np.maximum(i_start, 0).astype(np.int64)
    t_end = np.where((t_base < t_far) & (ta < t_end), t_end, -np.inf)
    basis = sh_basis(dirs)[:, :n_coef]
    sh = sh.reshape(n, n, n, 3, n_coef)

    T = np.ones(m)
    acc = np.zeros((m, 3))
    acc_w = np.zeros(m)
    count = np.zeros(m, dtype=np.int64)
    i = i_start
    live = np.flatnonzero(t_base + i * step < t_end)

    while live.size:
        s0 = t_base[live] + i[live] * step
        s1 = np.minimum(t_base[live] + (i[live] + 1) * step, t_far[live])
        i[live] += 1
        keep = (s0 < t_end[live]) & (s1 - s0 > 0.0)
        live, s0, s1 = live[keep], s0[keep], s1[keep]
        count[live] += 1
        if not live.size:
            break
        delta = s1 - s0
        mid = 0.5 * (s0 + s1)
        g = (origins[live] + mid[:, None] * dirs[live] + extent) * inv_h
        inside = np.all((g >= 0.0) & (g <= n - 1), axis=-1)
        idx = np.minimum(np.floor(g).astype(np.int64), n - 2)
        idx = np.maximum(idx, 0)
        f = g - idx

        sigma = np.zeros(live.size)
        coef = np.zeros((live.size, 3, n_coef))
        for corner in range(8):
            oz, oy, ox = (corner >> 2) & 1, (corner >> 1) & 1, corner & 1
            w = ((f[:, 2] if oz else 1.0 - f[:, 2])
                 * (f[:, 1] if oy else 1.0 - f[:, 1])
                 * (f[:, 0] if ox else 1.0 - f[:, 0]))
            iz, iy, ix = idx[:, 2] + oz, idx[:, 1] + oy, idx[:, 0] + ox
            sigma += w * density[iz, iy, ix]
            coef += w[:, None, None] * sh[iz, iy, ix]

        hit = inside & (sigma > sigma_threshold)
        rows = live[hit]
        col = np.clip(np.einsum("rck,rk->rc", coef[hit], basis[rows]), 0.0, 1.0)
        att = np.exp(-sigma[hit] * delta[hit])
        weight = T[rows] * (1.0 - att)
        acc[rows] += weight[:, None] * col
        acc_w[rows] += weight
        T[rows] *= att

        done = np.zeros(live.size, dtype=bool)
        done[hit] = T[rows] < stop_transmittance
        live = live[~done]

    rgb = acc + T[:, None] * np.asarray(background)[None, :]
    return rgb, T, acc_w, count
