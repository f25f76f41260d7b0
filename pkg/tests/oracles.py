"""Brute-force metric oracles written as plain loops, shared by several test modules."""

import math

import numpy as np


def si_rmse_oracle(P, G):
    grid = np.linspace(0, 4, 40_001)
    cost = [np.sum((a * P - G) ** 2) for a in grid]
    a0 = grid[int(np.argmin(cost))]
    fine = np.linspace(a0 - 1e-4, a0 + 1e-4, 2001)
    a = fine[int(np.argmin([np.sum((f * P - G) ** 2) for f in fine]))]
    return math.sqrt(np.sum((a * P - G) ** 2) / P.size)


def lmse_oracle(P, G, window, stride):
    c, h, w = G.shape
    ssq = total = 0.0
    for i in range(0, h - window + 1, stride):
        for j in range(0, w - window + 1, stride):
            p = P[:, i:i + window, j:j + window]
            g = G[:, i:i + window, j:j + window]
            pp = sum(float(v) * float(v) for v in p.ravel())
            pg = sum(float(a) * float(b) for a, b in zip(p.ravel(), g.ravel()))
            alpha = pg / pp if pp > 1e-5 else 0.0
            ssq += sum((alpha * float(a) - float(b)) ** 2 for a, b in zip(p.ravel(), g.ravel()))
            total += sum(float(b) ** 2 for b in g.ravel())
    return ssq / total


def ssim_oracle(P, G, win=11, sigma=1.5):
    c, h, w = G.shape
    L = G.max() - G.min() or 1.0
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    r = (win - 1) / 2
    wts = np.array([[math.exp(-((y - r) ** 2 + (x - r) ** 2) / (2 * sigma**2)) for x in range(win)]
                    for y in range(win)])
    wts /= wts.sum()
    vals = []
    for ch in range(c):
        for i in range(h - win + 1):
            for j in range(w - win + 1):
                p = P[ch, i:i + win, j:j + win]
                g = G[ch, i:i + win, j:j + win]
                mp, mg = np.sum(wts * p), np.sum(wts * g)
                vp = np.sum(wts * (p - mp) ** 2)
                vg = np.sum(wts * (g - mg) ** 2)
                cov = np.sum(wts * (p - mp) * (g - mg))
                vals.append((2 * mp * mg + c1) * (2 * cov + c2) / ((mp**2 + mg**2 + c1) * (vp + vg + c2)))
    return float(np.mean(vals))


def lum(rgb):
    return 0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]


def intensity_chroma_oracle(P, G, masks):
    union = np.zeros(G.shape[1:], dtype=bool)
    for m in masks:
        union |= m
    num = den = 0.0
    for ch in range(3):
        for y, x in zip(*np.nonzero(union)):
            num += P[ch, y, x] * G[ch, y, x]
            den += P[ch, y, x] ** 2
    a = num / den
    inten, ang = [], []
    for m in masks:
        ys, xs = np.nonzero(m)
        mp = [np.mean([a * P[ch, y, x] for y, x in zip(ys, xs)]) for ch in range(3)]
        mg = [np.mean([G[ch, y, x] for y, x in zip(ys, xs)]) for ch in range(3)]
        lp = np.mean([lum(a * P[:, y, x]) for y, x in zip(ys, xs)])
        lg = np.mean([lum(G[:, y, x]) for y, x in zip(ys, xs)])
        inten.append((lp - lg) ** 2)
        dot = sum(u * v for u, v in zip(mp, mg))
        cos = dot / (math.sqrt(sum(u * u for u in mp)) * math.sqrt(sum(v * v for v in mg)))
        ang.append(math.degrees(math.acos(min(1.0, max(-1.0, cos)))))
    return 100 * float(np.mean(inten)), float(np.mean(ang))


def random_pair(rng):
    G = rng.uniform(0.05, 1, (3, 16, 16))
    P = np.clip(G * rng.uniform(0.5, 1.5) + rng.normal(0, 0.1, G.shape), 0.01, None)
    return P, G
