"""Independent naive reference implementations used as test oracles.

Everything here is written with plain Python loops and scalar math on
purpose: these functions share no code with the package and serve as the
second route for dual-route checks. Keep them slow and obvious.
"""

import math

import numpy as np


# -- plain 2-D convolution (zero padding, stride) -------------------------------

def naive_conv2d(x, w, b=None, stride=1, padding=0):
    cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (wid + 2 * padding - kw) // stride + 1
    xp = np.zeros((cin, h + 2 * padding, wid + 2 * padding))
    xp[:, padding:padding + h, padding:padding + wid] = x
    out = np.zeros((cout, out_h, out_w))
    for co in range(cout):
        for oy in range(out_h):
            for ox in range(out_w):
                acc = 0.0
                for ci in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            acc += w[co, ci, i, j] * xp[ci, oy * stride + i, ox * stride + j]
                out[co, oy, ox] = acc + (b[co] if b is not None else 0.0)
    return out


# -- naive Canny ------------------------------------------------------------------

def _naive_blur(img, sigma):
    radius = int(math.ceil(3.0 * sigma))
    taps = [math.exp(-(i * i) / (2.0 * sigma * sigma))
            for i in range(-radius, radius + 1)]
    total = 0.0
    for t in taps:
        total += t
    taps = [t / total for t in taps]
    h, w = img.shape

    def clampx(v, n):
        return min(max(v, 0), n - 1)

    tmp = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i, t in enumerate(taps):
                acc += t * img[y, clampx(x + i - radius, w)]
            tmp[y, x] = acc
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i, t in enumerate(taps):
                acc += t * tmp[clampx(y + i - radius, h), x]
            out[y, x] = acc
    return out


def naive_canny(gray, sigma=1.0, low_ratio=0.1, high_ratio=0.3):
    """Loop-based Canny: blur, Sobel, 4-bin NMS, hysteresis. Returns uint8."""
    img = np.asarray(gray, dtype=np.float64)
    h, w = img.shape
    blurred = _naive_blur(img, sigma)

    def at(y, x):
        return blurred[min(max(y, 0), h - 1), min(max(x, 0), w - 1)]

    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            tl, tc, tr = at(y - 1, x - 1), at(y - 1, x), at(y - 1, x + 1)
            ml, mr = at(y, x - 1), at(y, x + 1)
            bl, bc, br = at(y + 1, x - 1), at(y + 1, x), at(y + 1, x + 1)
            gx[y, x] = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl)
            gy[y, x] = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr)
    mag = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            mag[y, x] = math.sqrt(gx[y, x] * gx[y, x] + gy[y, x] * gy[y, x])
    max_mag = mag.max()
    if max_mag <= 0.0:
        return np.zeros((h, w), dtype=np.uint8)

    tan225 = math.sqrt(2.0) - 1.0
    keep = np.zeros((h, w), dtype=bool)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            m = mag[y, x]
            if m <= 0:
                continue
            ax, ay = abs(gx[y, x]), abs(gy[y, x])
            if ay <= tan225 * ax:
                dy, dx = 0, 1
            elif ax <= tan225 * ay:
                dy, dx = 1, 0
            elif gx[y, x] * gy[y, x] >= 0:
                dy, dx = 1, 1
            else:
                dy, dx = 1, -1
            nxt = mag[y + dy, x + dx]
            prv = mag[y - dy, x - dx]
            if m > nxt and m >= prv:
                keep[y, x] = True

    low_t = low_ratio * max_mag
    high_t = high_ratio * max_mag
    edges = np.zeros((h, w), dtype=bool)
    stack = []
    for y in range(h):
        for x in range(w):
            if keep[y, x] and mag[y, x] >= high_t:
                edges[y, x] = True
                stack.append((y, x))
    while stack:
        y, x = stack.pop()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and not edges[ny, nx]:
                    if keep[ny, nx] and mag[ny, nx] >= low_t:
                        edges[ny, nx] = True
                        stack.append((ny, nx))
    return edges.astype(np.uint8)


# -- edge-detection oracle battery ----------------------------------------------------

def oracle_image_battery():
    """20 deterministic synthetic images: a constant, steps, ramps, nested
    shapes, diagonals, and textured noise."""
    from icmlab.rng import mix, random_floats

    images = []
    for case in range(20):
        if case == 0:
            img = np.full((16, 16), 0.4)
        elif case < 5:  # vertical/horizontal steps at varied positions
            img = np.zeros((16, 16))
            if case % 2:
                img[:, 4 + case:] = 1.0
            else:
                img[4 + case:, :] = 1.0
        elif case < 9:  # ramps of varied slope and orientation
            ramp = np.linspace(0, 1, 16)
            img = np.tile(ramp, (16, 1))
            if case % 2:
                img = img.T.copy()
            if case >= 7:
                img = img * 0.5 + 0.25
        elif case < 13:  # nested rectangles
            img = np.zeros((20, 20))
            img[3:17, 3:17] = 0.4
            k = case - 8
            img[5 + k:15 - k, 5 + k:15 - k] = 0.9
        elif case < 16:  # diagonal edges
            img = np.fromfunction(
                lambda y, x: (x + y * (case - 12) > 18) * 1.0, (16, 16))
        else:  # textured random scenes
            img = random_floats(mix(0xCA44, case), 18 * 18).reshape(18, 18)
        images.append(img)
    return images


# -- naive two-pass SSIM -------------------------------------------------------------

def naive_ssim_plane(x, y, window=11, sigma=1.5, c1=0.01 ** 2, c2=0.03 ** 2):
    """Two-pass windowed SSIM over valid positions of one (H, W) plane."""
    h, w = x.shape
    half = (window - 1) / 2.0
    taps = np.array([[math.exp(-((i - half) ** 2 + (j - half) ** 2)
                               / (2.0 * sigma * sigma))
                      for j in range(window)] for i in range(window)])
    taps = taps / taps.sum()
    values = []
    for oy in range(h - window + 1):
        for ox in range(w - window + 1):
            mu_x = mu_y = 0.0
            for i in range(window):
                for j in range(window):
                    mu_x += taps[i, j] * x[oy + i, ox + j]
                    mu_y += taps[i, j] * y[oy + i, ox + j]
            var_x = var_y = cov = 0.0
            for i in range(window):
                for j in range(window):
                    dx = x[oy + i, ox + j] - mu_x
                    dy = y[oy + i, ox + j] - mu_y
                    var_x += taps[i, j] * dx * dx
                    var_y += taps[i, j] * dy * dy
                    cov += taps[i, j] * dx * dy
            num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
            den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
            values.append(num / den)
    return sum(values) / len(values)


def naive_ssim(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 2:
        return naive_ssim_plane(x, y)
    return sum(naive_ssim_plane(x[c], y[c]) for c in range(x.shape[0])) / x.shape[0]


# -- scalar normal CDF ---------------------------------------------------------------

def naive_normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
