"""Informativeness scoring of axial slices and Top-k selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .volume import Volume

DEFAULT_BINS = 64
DEFAULT_EPS = 1e-12


@dataclass(frozen=True)
class SelectionConfig:
    zeta0: float = 0.2
    zeta1: float = 0.8
    k: int = 4
    bins: int = DEFAULT_BINS
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not 0.0 <= self.zeta0 < self.zeta1 <= 1.0:
            raise ContractError(f"crop ratios must satisfy 0 <= zeta0 < zeta1 <= 1, got "
                                f"({self.zeta0}, {self.zeta1})")
        if self.k < 1 or self.bins < 1 or self.eps <= 0:
            raise ContractError("k and bins must be positive and eps > 0")


@dataclass(frozen=True)
class SliceScores:
    """Per-slice scores over the cropped range ``indices``."""

    indices: np.ndarray
    entropy: np.ndarray
    gradient: np.ndarray
    variance: np.ndarray
    score: np.ndarray


def crop_range(depth: int, zeta0: float, zeta1: float) -> range:
    if depth < 1:
        raise ContractError("volume depth must be >= 1")
    z0, z1 = math.floor(zeta0 * depth), math.floor(zeta1 * depth)
    if z1 <= z0:
        raise ContractError(f"crop ({zeta0}, {zeta1}) of depth {depth} is empty")
    return range(z0, z1)


def hist_entropy(image: np.ndarray, bins: int = DEFAULT_BINS, eps: float = DEFAULT_EPS) -> float:
    """-sum h_b log(h_b + eps) over ``bins`` equal-width bins on [0, 1] (natural log)."""
    counts, _ = np.histogram(image, bins=bins, range=(0.0, 1.0))
    h = counts / counts.sum()
    return float(max(0.0, -np.sum(h * np.log(h + eps))))


def gradient_field(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with replicate padding: returns (d/dj, d/di)."""
    padded = np.pad(np.asarray(image, dtype=np.float64), 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return gx, gy


def grad_mag_mean(image: np.ndarray) -> float:
    gx, gy = gradient_field(image)
    return float(np.mean(np.sqrt(gx * gx + gy * gy)))


def variance(image: np.ndarray) -> float:
    x = np.asarray(image, dtype=np.float64)
    return float(np.mean((x - x.mean()) ** 2))


def score_slices(volume: Volume, cfg: SelectionConfig) -> SliceScores:
    idx = crop_range(volume.depth, cfg.zeta0, cfg.zeta1)
    h, g, v = [], [], []
    for z in idx:
        image = volume.voxels[z].astype(np.float64)
        h.append(hist_entropy(image, cfg.bins, cfg.eps))
        g.append(grad_mag_mean(image))
        v.append(variance(image))
    h, g, v = np.array(h), np.array(g), np.array(v)
    return SliceScores(np.arange(idx.start, idx.stop), h, g, v, (h + g + v) / 3.0)


def topk_indices(indices: np.ndarray, score: np.ndarray, k: int) -> list[int]:
    """k highest scores, ties toward the lower index, returned ascending."""
    if k > len(indices):
        raise ContractError(f"k={k} exceeds the {len(indices)} slices in the cropped range")
    order = np.lexsort((indices, -score))
    return sorted(int(i) for i in indices[order[:k]])


def select_topk(volume: Volume, cfg: SelectionConfig) -> list[int]:
    scores = score_slices(volume, cfg)
    return topk_indices(scores.indices, scores.score, cfg.k)


def score_table(volume: Volume, cfg: SelectionConfig) -> str:
    """CSV rows ``z,H,G,V,s,selected`` for every slice of the cropped range."""
    scores = score_slices(volume, cfg)
    chosen = set(topk_indices(scores.indices, scores.score, cfg.k))
    lines = ["z,H,G,V,s,selected"]
    for row in zip(scores.indices, scores.entropy, scores.gradient, scores.variance, scores.score):
        z = int(row[0])
        lines.append(f"{z},{row[1]:.10g},{row[2]:.10g},{row[3]:.10g},{row[4]:.10g},"
                     f"{int(z in chosen)}")
    return "\n".join(lines) + "\n"
