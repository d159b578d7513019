# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled raster kernels; same semantics as ``_fallback`` to the bit."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, NAN
from libc.stdint cimport uint64_t, int64_t, uint8_t
from libc.stdlib cimport malloc, free
from libc.string cimport memset

cnp.import_array()

NAME = "cython"

cdef enum:
    P_CX, P_CY, P_A, P_B, P_COS, P_SIN, I_CX, I_CY, I_A, I_B, I_COS, I_SIN, C_CX, C_CY, C_R, BG
NPARAM = 16

cdef inline uint64_t _splitmix(uint64_t z) noexcept nogil:
    z = z + <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _noise(uint64_t key, uint64_t frame, uint64_t row, uint64_t col, double scale) noexcept nogil:
    cdef uint64_t idx = (frame << 32) | (row << 16) | col
    cdef uint64_t h = _splitmix(key ^ _splitmix(idx))
    cdef uint64_t m = 0xFFFF
    cdef double s = <double>((h & m) + ((h >> 16) & m) + ((h >> 32) & m) + ((h >> 48) & m))
    return ((s + 2.0) / 65536.0 - 2.0) * scale


cdef inline double _clip01(double v) noexcept nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


cdef inline double _ellipse_cover(double x, double y, double cx, double cy, double a, double b,
                                  double c, double s) noexcept nogil:
    cdef double dx, dy, xp, yp, ia2, ib2, q, gx, gy, g, sd, m2
    if a <= 0.0 or b <= 0.0:
        return 0.0
    dx = x - cx
    dy = y - cy
    xp = dx * c + dy * s
    yp = dy * c - dx * s
    ia2 = 1.0 / (a * a)
    ib2 = 1.0 / (b * b)
    q = xp * xp * ia2 + yp * yp * ib2
    # |grad| <= 2 sqrt(q) / min(a, b), so these pixels clip to exactly 1 or 0;
    # the 2 % margin dwarfs rounding, keeping the result equal to the full formula
    m2 = (a if a < b else b) * (a if a < b else b) * 0.98
    if q < 1.0 and q <= m2 * (1.0 - q) * (1.0 - q):
        return 1.0
    if q > 1.0 and q <= m2 * (q - 1.0) * (q - 1.0):
        return 0.0
    gx = xp * ia2
    gy = yp * ib2
    g = 2.0 * sqrt(gx * gx + gy * gy)
    if g > 0.0:
        sd = (q - 1.0) / g
    else:
        sd = -1.0e300
    return _clip01(0.5 - sd)


cdef inline double _disk_cover(double x, double y, double cx, double cy, double r) noexcept nogil:
    cdef double dx, dy, sd
    if r <= 0.0:
        return 0.0
    dx = x - cx
    dy = y - cy
    if dx * dx + dy * dy >= (r + 1.0) * (r + 1.0):
        return 0.0
    if r > 1.0 and dx * dx + dy * dy <= (r - 1.0) * (r - 1.0):
        return 1.0
    sd = sqrt(dx * dx + dy * dy) - r
    return _clip01(0.5 - sd)


cdef void _render(const double[::1] p, int x0, int y0, int w, int h, uint64_t key, uint64_t frame,
                  double sigma, double pupil_gray, double iris_gray, uint8_t* out) noexcept nogil:
    cdef int i, j
    cdef double x, y, v, ci, cp, cc
    cdef double scale = sigma * sqrt(3.0)
    cdef double icx = p[I_CX], icy = p[I_CY], ia = p[I_A], ib = p[I_B], ic = p[I_COS], is_ = p[I_SIN]
    cdef double pcx = p[P_CX], pcy = p[P_CY], pa = p[P_A], pb = p[P_B], pc = p[P_COS], ps = p[P_SIN]
    cdef double ccx = p[C_CX], ccy = p[C_CY], cr = p[C_R], bg = p[BG]
    for i in range(h):
        y = <double>(y0 + i)
        for j in range(w):
            x = <double>(x0 + j)
            ci = _ellipse_cover(x, y, icx, icy, ia, ib, ic, is_)
            cp = _ellipse_cover(x, y, pcx, pcy, pa, pb, pc, ps)
            cc = _disk_cover(x, y, ccx, ccy, cr)
            v = bg
            v = v + ci * (iris_gray - v)
            v = v + cp * (pupil_gray - v)
            v = v + cc * (255.0 - v)
            if sigma > 0.0:
                v = v + _noise(key, frame, <uint64_t>(y0 + i), <uint64_t>(x0 + j), scale)
            v = floor(v + 0.5)
            if v < 0.0:
                v = 0.0
            elif v > 255.0:
                v = 255.0
            out[i * w + j] = <uint8_t>v


cdef void _detect(const uint8_t* img, int w, int h, int thr_dark, int thr_bright, int dilate,
                  int min_area, uint8_t* excl, int* first, int* last, int* cfirst, int* clast,
                  double* res) noexcept nogil:
    cdef int i, j, di, dj, i0, i1, j0, j1
    cdef int64_t n_cr = 0, n = 0, sx = 0, sy = 0
    cdef int64_t bg = 0, wt, sw = 0, swx = 0, swy = 0
    cdef int bi0 = h, bi1 = -1, bj0 = w, bj1 = -1, m = dilate if dilate > 0 else 1
    cdef uint8_t g
    memset(excl, 0, w * h)
    for i in range(h):
        for j in range(w):
            if img[i * w + j] >= thr_bright:
                n_cr += 1
                if i < bi0:
                    bi0 = i
                if i > bi1:
                    bi1 = i
                if j < bj0:
                    bj0 = j
                if j > bj1:
                    bj1 = j
                i0 = i - dilate if i - dilate > 0 else 0
                i1 = i + dilate if i + dilate < h - 1 else h - 1
                j0 = j - dilate if j - dilate > 0 else 0
                j1 = j + dilate if j + dilate < w - 1 else w - 1
                for di in range(i0, i1 + 1):
                    for dj in range(j0, j1 + 1):
                        excl[di * w + dj] = 1
    for j in range(w):
        cfirst[j] = h
        clast[j] = -1
    for i in range(h):
        first[i] = w
        last[i] = -1
        for j in range(w):
            if img[i * w + j] <= thr_dark:
                if first[i] == w:
                    first[i] = j
                last[i] = j
                if cfirst[j] == h:
                    cfirst[j] = i
                clast[j] = i
    for i in range(h):
        for j in range(w):
            g = img[i * w + j]
            if g <= thr_dark or (excl[i * w + j] and ((j > first[i] and j < last[i])
                                                     or (i > cfirst[j] and i < clast[j]))):
                n += 1
                sx += j
                sy += i
    if n < (min_area if min_area > 1 else 1):
        res[0] = NAN
        res[1] = NAN
    else:
        res[0] = <double>sx / <double>n
        res[1] = <double>sy / <double>n
    res[2] = <double>n
    if n_cr > 0:
        # glint window: bright bbox grown by m; background = brightest pixel of its border
        bi0 = bi0 - m if bi0 - m > 0 else 0
        bi1 = bi1 + m if bi1 + m < h - 1 else h - 1
        bj0 = bj0 - m if bj0 - m > 0 else 0
        bj1 = bj1 + m if bj1 + m < w - 1 else w - 1
        for i in range(bi0, bi1 + 1):
            for j in range(bj0, bj1 + 1):
                if (i == bi0 or i == bi1 or j == bj0 or j == bj1) and img[i * w + j] > bg:
                    bg = img[i * w + j]
        for i in range(bi0, bi1 + 1):
            for j in range(bj0, bj1 + 1):
                wt = <int64_t>img[i * w + j] - bg
                if wt > 0:
                    sw += wt
                    swx += wt * j
                    swy += wt * i
        res[3] = <double>swx / <double>sw
        res[4] = <double>swy / <double>sw
    else:
        res[3] = NAN
        res[4] = NAN
    res[5] = <double>n_cr


def render_roi(params, int x0, int y0, int w, int h, key, frame, double sigma,
               double pupil_gray, double iris_gray):
    cdef const double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    out = np.empty((h, w), dtype=np.uint8)
    cdef uint8_t[:, ::1] ov = out
    cdef uint64_t k = <uint64_t>int(key)
    cdef uint64_t f = <uint64_t>int(frame)
    with nogil:
        _render(p, x0, y0, w, h, k, f, sigma, pupil_gray, iris_gray, &ov[0, 0])
    return out


def detect(img, int thr_dark, int thr_bright, int dilate, int min_area):
    cdef const uint8_t[:, ::1] im = np.ascontiguousarray(img, dtype=np.uint8)
    cdef int h = im.shape[0], w = im.shape[1]
    cdef double res[6]
    cdef uint8_t* excl = <uint8_t*>malloc(w * h)
    cdef int* first = <int*>malloc(h * sizeof(int))
    cdef int* last = <int*>malloc(h * sizeof(int))
    cdef int* cfirst = <int*>malloc(w * sizeof(int))
    cdef int* clast = <int*>malloc(w * sizeof(int))
    try:
        with nogil:
            _detect(&im[0, 0], w, h, thr_dark, thr_bright, dilate, min_area, excl, first, last, cfirst, clast, res)
    finally:
        free(excl)
        free(first)
        free(last)
        free(cfirst)
        free(clast)
    return res[0], res[1], res[2], res[3], res[4], res[5]


def measure_batch(params, rois, key, frames, double sigma, double pupil_gray, double iris_gray,
                  int thr_dark, int thr_bright, int dilate, int min_area):
    cdef const double[:, ::1] P = np.ascontiguousarray(params, dtype=np.float64)
    cdef const int64_t[:, ::1] R = np.ascontiguousarray(rois, dtype=np.int64)
    cdef const int64_t[::1] F = np.ascontiguousarray(frames, dtype=np.int64)
    cdef Py_ssize_t n = P.shape[0], i
    out = np.empty((n, 6), dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef uint64_t k = <uint64_t>int(key)
    cdef int64_t max_px = 1, max_h = 1, max_w = 1
    for i in range(n):
        if R[i, 2] * R[i, 3] > max_px:
            max_px = R[i, 2] * R[i, 3]
        if R[i, 3] > max_h:
            max_h = R[i, 3]
        if R[i, 2] > max_w:
            max_w = R[i, 2]
    cdef uint8_t* img = <uint8_t*>malloc(max_px)
    cdef uint8_t* excl = <uint8_t*>malloc(max_px)
    cdef int* first = <int*>malloc(max_h * sizeof(int))
    cdef int* last = <int*>malloc(max_h * sizeof(int))
    cdef int* cfirst = <int*>malloc(max_w * sizeof(int))
    cdef int* clast = <int*>malloc(max_w * sizeof(int))
    cdef double res[6]
    cdef int x0, y0, w, h
    try:
        with nogil:
            for i in range(n):
                x0 = <int>R[i, 0]
                y0 = <int>R[i, 1]
                w = <int>R[i, 2]
                h = <int>R[i, 3]
                _render(P[i], x0, y0, w, h, k, <uint64_t>F[i], sigma, pupil_gray, iris_gray, img)
                _detect(img, w, h, thr_dark, thr_bright, dilate, min_area, excl, first, last, cfirst, clast, res)
                O[i, 0] = res[0] + x0
                O[i, 1] = res[1] + y0
                O[i, 2] = res[2]
                O[i, 3] = res[3] + x0
                O[i, 4] = res[4] + y0
                O[i, 5] = res[5]
    finally:
        free(img)
        free(excl)
        free(first)
        free(last)
        free(cfirst)
        free(clast)
    return out
