"""Independent scalar implementations used as test oracles."""

import math

import numpy as np


def naive_cubic(img, out_h, out_w, a=-0.5):
    """Direct per-pixel cubic convolution; widened kernel when shrinking."""
    def weights(n_in, n_out):
        scale = n_out / n_in
        support = 2.0 / min(scale, 1.0)
        m = np.zeros((n_out, n_in))
        for i in range(n_out):
            centre = (i + 0.5) / scale - 0.5
            for j in range(int(np.floor(centre - support)), int(np.ceil(centre + support)) + 1):
                x = abs(centre - j) * min(scale, 1.0)
                if x < 1:
                    k = (a + 2) * x**3 - (a + 3) * x**2 + 1
                elif x < 2:
                    k = a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
                else:
                    continue
                jj = j
                while jj < 0 or jj >= n_in:  # half-sample mirror
                    jj = -jj - 1 if jj < 0 else 2 * n_in - jj - 1
                m[i, jj] += k
        return m / m.sum(axis=1, keepdims=True)

    return weights(img.shape[0], out_h) @ img @ weights(img.shape[1], out_w).T


def naive_blur(img, sigma, size=7):
    """Direct 2-D Gaussian convolution with half-sample mirrored borders."""
    r = size // 2
    k = np.array([[math.exp(-(i * i + j * j) / (2 * sigma * sigma)) for j in range(-r, r + 1)]
                  for i in range(-r, r + 1)])
    k /= k.sum()
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(-r, r + 1):
                for j in range(-r, r + 1):
                    yy, xx = y + i, x + j
                    yy = -yy - 1 if yy < 0 else (2 * h - yy - 1 if yy >= h else yy)
                    xx = -xx - 1 if xx < 0 else (2 * w - xx - 1 if xx >= w else xx)
                    acc += k[i + r, j + r] * img[yy, xx]
            out[y, x] = acc
    return out
