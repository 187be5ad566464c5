# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled emission-absorption ray marcher.

Mirrors voxpose._march_py.march exactly; see that module for the sampling
scheme. Each ray is independent, so the loop releases the GIL.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor

cnp.import_array()

cdef double SH_C0 = 0.28209479177387814
cdef double SH_C1 = 0.4886025119029199
cdef double SH_C2_0 = 1.0925484305920792
cdef double SH_C2_1 = -1.0925484305920792
cdef double SH_C2_2 = 0.31539156525252005
cdef double SH_C2_3 = -1.0925484305920792
cdef double SH_C2_4 = 0.5462742152960396


def march(const float[:, :, ::1] density,
          const float[:, :, :, ::1] sh,
          double extent,
          const unsigned char[:, :, ::1] blocks,
          int block_size,
          const double[:, ::1] origins,
          const double[:, ::1] dirs,
          const double[::1] t_near,
          const double[::1] t_far,
          const double[::1] occupied_lo,
          const double[::1] occupied_hi,
          double step,
          const double[::1] background,
          double sigma_threshold,
          double stop_transmittance):
    cdef Py_ssize_t m = origins.shape[0]
    cdef int n = density.shape[0]
    cdef int n_coef = sh.shape[3] // 3
    rgb_arr = np.empty((m, 3), dtype=np.float64)
    trans_arr = np.empty(m, dtype=np.float64)
    wsum_arr = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] rgb = rgb_arr
    cdef double[::1] trans = trans_arr
    cdef double[::1] wsum = wsum_arr
    count_arr = np.zeros(m, dtype=np.int64)
    cdef long long[::1] count = count_arr

    cdef double inv_h = (n - 1) / (2.0 * extent)
    cdef double upper = n - 1
    cdef Py_ssize_t r
    cdef long long i, jump
    cdef int c, k, ix, iy, iz, corner
    cdef double ox, oy, oz, dx, dy, dz, s0, s1, delta, mid, gx, gy, gz
    cdef double fx, fy, fz, wx, wy, wz, w, sigma, att, alpha, weight, T, acc_w, v
    cdef int bx, by, bz
    cdef double lo, hi, t_exit, tt, inv_d, tn, tf, t_lo, t_hi, t_end
    cdef double box_lo[3]
    cdef double box_hi[3]
    cdef double ycoef[9]
    cdef double acc[3]
    cdef double col[3]
    cdef double cw[8]
    cdef Py_ssize_t offs[8]
    cdef Py_ssize_t base
    cdef int j
    cdef const float* dptr = &density[0, 0, 0]
    cdef const float* shptr = &sh[0, 0, 0, 0]
    cdef const float* cptr
    cdef int block_shift = 0
    while (1 << block_shift) < block_size:
        block_shift += 1
    if (1 << block_shift) != block_size:
        raise ValueError("block_size must be a power of two")
    for c in range(3):
        box_lo[c] = occupied_lo[c]
        box_hi[c] = occupied_hi[c]
    for k in range(8):
        offs[k] = ((k >> 2) & 1) * n * n + ((k >> 1) & 1) * n + (k & 1)

    with nogil:
        for r in range(m):
            T = 1.0
            acc_w = 0.0
            acc[0] = 0.0
            acc[1] = 0.0
            acc[2] = 0.0
            ox = origins[r, 0]
            oy = origins[r, 1]
            oz = origins[r, 2]
            dx = dirs[r, 0]
            dy = dirs[r, 1]
            dz = dirs[r, 2]
            ycoef[0] = SH_C0
            ycoef[1] = -SH_C1 * dy
            ycoef[2] = SH_C1 * dz
            ycoef[3] = -SH_C1 * dx
            ycoef[4] = SH_C2_0 * dx * dy
            ycoef[5] = SH_C2_1 * dy * dz
            ycoef[6] = SH_C2_2 * (2.0 * dz * dz - dx * dx - dy * dy)
            ycoef[7] = SH_C2_3 * dx * dz
            ycoef[8] = SH_C2_4 * (dx * dx - dy * dy)

            tn = t_near[r]
            tf = t_far[r]
            # clip to the box of occupied blocks; everything outside it is empty
            t_lo = tn
            t_hi = tf
            for c in range(3):
                if c == 0:
                    tt = dx
                    v = ox
                elif c == 1:
                    tt = dy
                    v = oy
                else:
                    tt = dz
                    v = oz
                if tt == 0.0:
                    if v < box_lo[c] or v > box_hi[c]:
                        t_hi = -1.0
                    continue
                inv_d = 1.0 / tt
                lo = (box_lo[c] - v) * inv_d
                hi = (box_hi[c] - v) * inv_d
                if lo > hi:
                    lo, hi = hi, lo
                if lo > t_lo:
                    t_lo = lo
                if hi < t_hi:
                    t_hi = hi
            if t_hi <= t_lo:
                tf = tn
            else:
                i = <long long>floor((t_lo - tn) / step)
                if i < 0:
                    i = 0
            if t_hi < tf:
                t_end = t_hi
            else:
                t_end = tf
            if tn >= tf:
                i = 0
                t_end = tn
            while True:
                s0 = tn + i * step
                if s0 >= t_end:
                    break
                s1 = tn + (i + 1) * step
                if s1 > tf:
                    s1 = tf
                i = i + 1
                count[r] += 1
                delta = s1 - s0
                mid = 0.5 * (s0 + s1)
                gx = (ox + mid * dx + extent) * inv_h
                gy = (oy + mid * dy + extent) * inv_h
                gz = (oz + mid * dz + extent) * inv_h
                if gx < 0.0 or gy < 0.0 or gz < 0.0 or gx > upper or gy > upper or gz > upper:
                    continue
                ix = <int>gx  # gx >= 0 here, truncation is floor
                iy = <int>gy
                iz = <int>gz
                if ix > n - 2:
                    ix = n - 2
                if iy > n - 2:
                    iy = n - 2
                if iz > n - 2:
                    iz = n - 2

                bx = ix >> block_shift
                by = iy >> block_shift
                bz = iz >> block_shift
                if blocks[bz, by, bx] == 0:
                    # whole block has zero density: jump to the last segment whose
                    # midpoint is not past the block exit
                    t_exit = tf
                    for c in range(3):
                        if c == 0:
                            tt = dx
                            lo = bx
                            v = ox
                        elif c == 1:
                            tt = dy
                            lo = by
                            v = oy
                        else:
                            tt = dz
                            lo = bz
                            v = oz
                        if tt == 0.0:
                            continue
                        lo = lo * block_size / inv_h - extent
                        hi = lo + block_size / inv_h
                        inv_d = 1.0 / tt
                        if tt > 0.0:
                            tt = (hi - v) * inv_d
                        else:
                            tt = (lo - v) * inv_d
                        if tt < t_exit:
                            t_exit = tt
                    jump = <long long>floor((t_exit - tn) / step - 0.5)
                    if jump > i:
                        i = jump
                    continue
                fx = gx - ix
                fy = gy - iy
                fz = gz - iz

                base = (<Py_ssize_t>iz * n + iy) * n + ix
                gx = 1.0 - fx
                gy = 1.0 - fy
                gz = 1.0 - fz
                cw[0] = gz * gy * gx
                cw[1] = gz * gy * fx
                cw[2] = gz * fy * gx
                cw[3] = gz * fy * fx
                cw[4] = fz * gy * gx
                cw[5] = fz * gy * fx
                cw[6] = fz * fy * gx
                cw[7] = fz * fy * fx
                sigma = 0.0
                for k in range(8):
                    sigma = sigma + cw[k] * dptr[base + offs[k]]
                if sigma <= sigma_threshold:
                    continue

                col[0] = 0.0
                col[1] = 0.0
                col[2] = 0.0
                if n_coef == 1:
                    for k in range(8):
                        cptr = shptr + (base + offs[k]) * 3
                        col[0] = col[0] + cw[k] * (cptr[0] * ycoef[0])
                        col[1] = col[1] + cw[k] * (cptr[1] * ycoef[0])
                        col[2] = col[2] + cw[k] * (cptr[2] * ycoef[0])
                else:
                    for k in range(8):
                        cptr = shptr + (base + offs[k]) * 27
                        for c in range(3):
                            v = 0.0
                            for j in range(9):
                                v = v + cptr[c * 9 + j] * ycoef[j]
                            col[c] = col[c] + cw[k] * v
                for c in range(3):
                    if col[c] < 0.0:
                        col[c] = 0.0
                    elif col[c] > 1.0:
                        col[c] = 1.0

                att = exp(-sigma * delta)
                alpha = 1.0 - att
                weight = T * alpha
                acc[0] = acc[0] + weight * col[0]
                acc[1] = acc[1] + weight * col[1]
                acc[2] = acc[2] + weight * col[2]
                acc_w = acc_w + weight
                T = T * att
                if T < stop_transmittance:
                    break

            rgb[r, 0] = acc[0] + T * background[0]
            rgb[r, 1] = acc[1] + T * background[1]
            rgb[r, 2] = acc[2] + T * background[2]
            trans[r] = T
            wsum[r] = acc_w
    return rgb_arr, trans_arr, wsum_arr, count_arr
