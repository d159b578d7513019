"""Pure numpy implementation of the raster kernels.

Reference semantics for ``_kernels.pyx``: both produce bit-identical images
and detector outputs for the same inputs.
"""

import numpy as np

NAME = "numpy"

(P_CX, P_CY, P_A, P_B, P_COS, P_SIN,
 I_CX, I_CY, I_A, I_B, I_COS, I_SIN,
 C_CX, C_CY, C_R, BG) = range(16)
NPARAM = 16

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK16 = np.uint64(0xFFFF)


def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def pixel_noise(key, frame, rows, cols, scale):
    """Irwin-Hall(4) noise in ``(-2, 2) * scale`` from a counter hash."""
    idx = (np.uint64(frame) << np.uint64(32)) | (rows.astype(np.uint64) << np.uint64(16)) | cols.astype(np.uint64)
    h = _splitmix(np.uint64(key) ^ _splitmix(idx))
    s = ((h & _MASK16) + ((h >> np.uint64(16)) & _MASK16)
         + ((h >> np.uint64(32)) & _MASK16) + ((h >> np.uint64(48)) & _MASK16)).astype(np.float64)
    return ((s + 2.0) / 65536.0 - 2.0) * scale


def _ellipse_cover(x, y, cx, cy, a, b, c, s):
    if a <= 0.0 or b <= 0.0:
        return np.zeros(np.broadcast(x, y).shape)
    dx = x - cx
    dy = y - cy
    xp = dx * c + dy * s
    yp = dy * c - dx * s
    ia2 = 1.0 / (a * a)
    ib2 = 1.0 / (b * b)
    q = xp * xp * ia2 + yp * yp * ib2
    gx = xp * ia2
    gy = yp * ib2
    g = 2.0 * np.sqrt(gx * gx + gy * gy)
    with np.errstate(divide="ignore", invalid="ignore"):
        sd = np.where(g > 0.0, (q - 1.0) / g, -1.0e300)
    return np.clip(0.5 - sd, 0.0, 1.0)


def _disk_cover(x, y, cx, cy, r):
    if r <= 0.0:
        return np.zeros(np.broadcast(x, y).shape)
    dx = x - cx
    dy = y - cy
    sd = np.sqrt(dx * dx + dy * dy) - r
    return np.clip(0.5 - sd, 0.0, 1.0)


def render_roi(params, x0, y0, w, h, key, frame, sigma, pupil_gray, iris_gray):
    """Render the window ``[y0:y0+h, x0:x0+w]`` of one camera frame as uint8."""
    p = params
    rows = np.arange(y0, y0 + h, dtype=np.int64)[:, None]
    cols = np.arange(x0, x0 + w, dtype=np.int64)[None, :]
    x = cols.astype(np.float64)
    y = rows.astype(np.float64)
    ci = _ellipse_cover(x, y, p[I_CX], p[I_CY], p[I_A], p[I_B], p[I_COS], p[I_SIN])
    cp = _ellipse_cover(x, y, p[P_CX], p[P_CY], p[P_A], p[P_B], p[P_COS], p[P_SIN])
    cc = _disk_cover(x, y, p[C_CX], p[C_CY], p[C_R])
    v = np.full((h, w), p[BG])
    v = v + ci * (iris_gray - v)
    v = v + cp * (pupil_gray - v)
    v = v + cc * (255.0 - v)
    if sigma > 0.0:
        rr, cc_ = np.broadcast_arrays(rows, cols)
        v = v + pixel_noise(key, frame, rr, cc_, sigma * np.sqrt(3.0))
    return np.clip(np.floor(v + 0.5), 0.0, 255.0).astype(np.uint8)


def _glint_center(img, bright, m):
    """Background-subtracted intensity centroid around the bright pixels.

    The window is the bounding box of ``bright`` grown by ``m``; the brightest
    pixel on its border sets the background level, which keeps pupil/iris
    boundaries under the window from pulling the centre.  Integer sums keep
    the result identical to the compiled kernel.
    """
    h, w = img.shape
    rows = np.flatnonzero(bright.any(axis=1))
    cols = np.flatnonzero(bright.any(axis=0))
    i0, i1 = max(rows[0] - m, 0), min(rows[-1] + m, h - 1)
    j0, j1 = max(cols[0] - m, 0), min(cols[-1] + m, w - 1)
    win = img[i0:i1 + 1, j0:j1 + 1].astype(np.int64)
    ring = np.ones(win.shape, dtype=bool)
    ring[1:-1, 1:-1] = False
    bg = int(win[ring].max())
    wt = np.maximum(win - bg, 0)
    ii, jj = np.indices(win.shape)
    sw = int(wt.sum())
    return int((wt * (jj + j0)).sum()) / sw, int((wt * (ii + i0)).sum()) / sw


def detect(img, thr_dark, thr_bright, dilate, min_area):
    """Pupil and CR centroids of one frame.

    Returns ``(pupil_x, pupil_y, pupil_count, cr_x, cr_y, cr_count)`` in the
    image's own pixel frame; centroids are NaN when nothing was found.
    Every dark pixel counts towards the pupil.  Pixels under the (dilated)
    glint mask that are not dark are filled back in when they lie between
    dark pixels of the same row or of the same column.  The glint is located by
    its bright pixels and centred on its background-subtracted intensity.
    """
    img = np.asarray(img)
    h, w = img.shape
    ys, xs = np.indices((h, w))
    cr = img >= thr_bright
    n_cr = int(cr.sum())
    if n_cr:
        cr_x, cr_y = _glint_center(img, cr, max(dilate, 1))
        # square (Chebyshev) dilation by ``dilate`` pixels
        excl = np.zeros((h + 2 * dilate, w + 2 * dilate), dtype=bool)
        for dy in range(2 * dilate + 1):
            for dx in range(2 * dilate + 1):
                excl[dy:dy + h, dx:dx + w] |= cr
        excl = excl[dilate:dilate + h, dilate:dilate + w]
    else:
        cr_x = cr_y = np.nan
        excl = np.zeros((h, w), dtype=bool)
    dark = img <= thr_dark
    has = dark.any(axis=1)
    first = np.where(has, dark.argmax(axis=1), w)
    last = np.where(has, w - 1 - dark[:, ::-1].argmax(axis=1), -1)
    hasc = dark.any(axis=0)
    cfirst = np.where(hasc, dark.argmax(axis=0), h)
    clast = np.where(hasc, h - 1 - dark[::-1, :].argmax(axis=0), -1)
    fill = excl & (((xs > first[:, None]) & (xs < last[:, None])) | ((ys > cfirst[None, :]) & (ys < clast[None, :])))
    mask = dark | fill
    n = int(mask.sum())
    if n < max(min_area, 1):
        return np.nan, np.nan, float(n), float(cr_x), float(cr_y), float(n_cr)
    return xs[mask].sum() / n, ys[mask].sum() / n, float(n), float(cr_x), float(cr_y), float(n_cr)


def measure_batch(params, rois, key, frames, sigma, pupil_gray, iris_gray, thr_dark, thr_bright, dilate, min_area):
    """Render and measure many frames; returns (N, 6) in full-image pixels."""
    n = params.shape[0]
    out = np.empty((n, 6))
    for i in range(n):
        x0, y0, w, h = (int(v) for v in rois[i])
        img = render_roi(params[i], x0, y0, w, h, key, int(frames[i]), sigma, pupil_gray, iris_gray)
        px, py, pn, cx, cy, cn = detect(img, thr_dark, thr_bright, dilate, min_area)
        out[i] = (px + x0, py + y0, pn, cx + x0, cy + y0, cn)
    return out
