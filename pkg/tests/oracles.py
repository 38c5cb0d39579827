"""Slow, obviously-correct reference implementations used only by tests."""

import math

import numpy as np


def conv2d_direct(x, w, b):
    """Quadruple loop over outputs, explicit c-u-v summation, zero padding."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    y = np.zeros((n, o, h, wd), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for i in range(h):
                for j in range(wd):
                    acc = float(b[oi])
                    for ci in range(c):
                        for u in range(k):
                            for v in range(k):
                                ii, jj = i + u - p, j + v - p
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += float(w[oi, ci, u, v]) * float(x[ni, ci, ii, jj])
                    y[ni, oi, i, j] = acc
    return y


def conv2d_backward_direct(x, w, gy):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    gx = np.zeros(x.shape)
    gw = np.zeros(w.shape)
    gb = np.zeros(o)
    for ni in range(n):
        for oi in range(o):
            for i in range(h):
                for j in range(wd):
                    g = float(gy[ni, oi, i, j])
                    gb[oi] += g
                    for ci in range(c):
                        for u in range(k):
                            for v in range(k):
                                ii, jj = i + u - p, j + v - p
                                if 0 <= ii < h and 0 <= jj < wd:
                                    gw[oi, ci, u, v] += g * float(x[ni, ci, ii, jj])
                                    gx[ni, ci, ii, jj] += g * float(w[oi, ci, u, v])
    return gx, gw, gb


def pixel_shuffle_direct(x, r):
    n, c, h, w = x.shape
    oc = c // (r * r)
    out = np.empty((n, oc, h * r, w * r), dtype=x.dtype)
    for ni in range(n):
        for ci in range(oc):
            for i in range(h):
                for j in range(w):
                    for di in range(r):
                        for dj in range(r):
                            out[ni, ci, r * i + di, r * j + dj] = x[ni, ci * r * r + di * r + dj, i, j]
    return out


def relu_direct(x):
    out = x.copy()
    flat = out.reshape(-1)
    for i in range(flat.size):
        if flat[i] < 0:
            flat[i] = 0
    return out


def add_direct(a, b):
    out = np.empty_like(a)
    fa, fb, fo = a.reshape(-1), b.reshape(-1), out.reshape(-1)
    for i in range(fa.size):
        fo[i] = fa[i] + fb[i]
    return out


def central_difference(f, x, eps):
    """Gradient of scalar f at array x (modified in place and restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2 * eps)
    return g


def max_rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def ssim_direct(a, b, peak=255.0):
    """Sliding 11x11 gaussian-window SSIM with per-window explicit sums."""
    size, sigma = 11, 1.5
    coords = np.arange(size) - 5
    g1 = np.array([math.exp(-(t * t) / (2 * sigma * sigma)) for t in coords])
    g1 /= g1.sum()
    win = np.outer(g1, g1)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            pa = a[i:i + size, j:j + size]
            pb = b[i:i + size, j:j + size]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va = (win * (pa - ma) ** 2).sum()
            vb = (win * (pb - mb) ** 2).sum()
            cov = (win * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def lesrcnn_x2_layer_table(c=64):
    """Hand-listed (name, c_in, c_out, k, resolution factor, uses) for LESRCNN x2, standard convention."""
    rows = [("ieeb.1", 3, c, 3, 1, 1)]
    for i in range(2, 18):
        rows.append((f"ieeb.{i}", c, c, 3 if i % 2 else 1, 1, 1))
    rows.append(("rb.x2", c, 4 * c, 3, 1, 2))
    rows += [("irb.1", c, c, 3, 2, 1), ("irb.2", c, c, 3, 2, 1), ("irb.3", c, c, 3, 2, 1),
             ("irb.4", c, c, 3, 2, 1), ("irb.5", c, 3, 3, 2, 1)]
    return rows


def spreadsheet_macs(rows, h, w):
    total = 0
    for _, cin, cout, k, f, uses in rows:
        total += (h * f) * (w * f) * cout * cin * k * k * uses
    return total
