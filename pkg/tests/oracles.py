"""Slow reference implementations used only by the tests."""
import numpy as np


def _footprint_offsets(fp):
    r = fp.shape[0] // 2
    return [(y - r, x - r) for y in range(fp.shape[0]) for x in range(fp.shape[1]) if fp[y, x]]


def _read(m, y, x):
    h, w = m.shape
    return m[y, x] if 0 <= y < h and 0 <= x < w else 0


def dilate_ref(m, fp):
    """Minkowski sum: p is set iff p = a + o for some set pixel a and offset o."""
    h, w = m.shape
    out = np.zeros((h, w), dtype=np.uint8)
    offs = _footprint_offsets(fp)
    for y in range(h):
        for x in range(w):
            if m[y, x]:
                for dy, dx in offs:
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        out[yy, xx] = 1
    return out


def erode_ref(m, fp):
    h, w = m.shape
    out = np.zeros((h, w), dtype=np.uint8)
    offs = _footprint_offsets(fp)
    for y in range(h):
        for x in range(w):
            out[y, x] = all(_read(m, y + dy, x + dx) for dy, dx in offs)
    return out


def open_ref(m, fp):
    return dilate_ref(erode_ref(m, fp), fp)


def close_ref(m, fp):
    return erode_ref(dilate_ref(m, fp), fp)


def catmull_rom(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def resample_1d_ref(signal, n_out, a=-0.5):
    """Scalar-loop cubic resampling of a 1-D signal with the kernel widened by the scale."""
    n_in = len(signal)
    scale = n_in / n_out
    s = max(scale, 1.0)
    out = []
    for i in range(n_out):
        c = (i + 0.5) * scale
        ws = [(j, catmull_rom((j + 0.5 - c) / s, a)) for j in range(n_in) if abs(j + 0.5 - c) < 2 * s]
        tot = sum(w for _, w in ws)
        out.append(sum(signal[j] * w for j, w in ws) / tot)
    return np.array(out)


def box_blur_1d_ref(row, radius):
    """Box blur with edge replication."""
    n = len(row)
    return np.array([
        np.mean([row[min(max(k, 0), n - 1)] for k in range(i - radius, i + radius + 1)])
        for i in range(n)
    ])
