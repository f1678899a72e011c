"""Independent brute-force references shared by the unit and acceptance tests.

Plain Python loops on purpose: none of these reuse the vectorized code they check.
"""

import math
from fractions import Fraction

import numpy as np


def entropy_oracle(img, bins=64, eps=1e-12):
    counts = [0] * bins
    for v in np.asarray(img, dtype=np.float64).ravel():
        counts[min(int(math.floor(v * bins)), bins - 1)] += 1
    n = sum(counts)
    return max(0.0, -sum(c / n * math.log(c / n + eps) for c in counts))


def grad_oracle(img):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            gx = 0.5 * (img[i, min(j + 1, w - 1)] - img[i, max(j - 1, 0)])
            gy = 0.5 * (img[min(i + 1, h - 1), j] - img[max(i - 1, 0), j])
            total += math.sqrt(gx * gx + gy * gy)
    return total / (h * w)


def variance_oracle(img):
    vals = [float(v) for v in np.asarray(img, dtype=np.float64).ravel()]
    mean = sum(vals) / len(vals)
    return sum((v - mean) ** 2 for v in vals) / len(vals)


def topk_oracle(scores, k):
    """``scores`` maps slice index -> score."""
    ranked = sorted(scores, key=lambda z: (-scores[z], z))
    return sorted(ranked[:k])


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = Fraction(0)
    for p in pos:
        for n in neg:
            total += 1 if p > n else Fraction(1, 2) if p == n else 0
    return float(total / (len(pos) * len(neg)))


def scalar_adamw(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=1e-4):
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * theta)
        out.append(theta)
    return out
