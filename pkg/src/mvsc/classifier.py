"""Frozen feature extractors, the MLP classification head and pooling baselines."""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import _binio, seeding
from . import tensor as T
from .errors import ContractError, PairingError, ShapeError
from .nn import BatchNorm1d, Linear, Module
from .tensor import Tensor
from .volume import Volume

FEATURE_MAGIC = b"MVSCFTR1"


class StubExtractor:
    """Fixed random conv (kernel = stride = 8) -> GELU -> global mean pool -> linear.

    Stands in for a large frozen 2D backbone. Its tensors never require grad
    and are never handed to an optimizer, yet gradients flow through it to the
    surrogate.
    """

    frozen = True

    def __init__(self, seed: int = 0, n_feat: int = 128, channels: int = 32, kernel: int = 8):
        rng = seeding.stage_rng(seed, seeding.EXTRACTOR)
        self.seed = seed
        self.n_feat = n_feat
        self.kernel = kernel
        self.conv_weight = Tensor(rng.normal(0.0, 1.0 / np.sqrt(3 * kernel * kernel),
                                             size=(channels, 3, kernel, kernel)))
        self.conv_bias = Tensor(rng.normal(0.0, 0.1, size=channels))
        self.proj = Tensor(rng.normal(0.0, 1.0 / np.sqrt(channels), size=(channels, n_feat)))

    def tensors(self) -> list[Tensor]:
        return [self.conv_weight, self.conv_bias, self.proj]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for t in self.tensors():
            h.update(t.data.tobytes())
        return h.hexdigest()

    def extract(self, surrogate) -> Tensor:
        """(..., 3, H, W) -> (..., n_feat)."""
        feat = T.gelu(T.conv2d(surrogate, self.conv_weight, self.conv_bias))
        pooled = T.mean(feat, axis=(-2, -1))
        return T.matmul(T.reshape(pooled, (-1, pooled.shape[-1])), self.proj).reshape(
            pooled.shape[:-1] + (self.n_feat,))

    __call__ = extract


class SidecarExtractor:
    """Precomputed per-surrogate features read from an ``MVSCFTR1`` file.

    Rows pair with manifest rows by position. Nothing upstream of the features
    can be trained through this extractor.
    """

    frozen = True

    def __init__(self, features: np.ndarray):
        self.features = np.asarray(features, dtype=np.float64)
        self.n_feat = self.features.shape[1]

    @classmethod
    def load(cls, path) -> "SidecarExtractor":
        return cls(load_features(path))

    def checksum(self) -> str:
        return hashlib.sha256(self.features.tobytes()).hexdigest()

    def rows(self, indices: Sequence[int]) -> Tensor:
        return Tensor(self.features[list(indices)])


def write_features(path, features: np.ndarray) -> None:
    """``MVSCFTR1``, u32 count, u32 n_feat, float32 row-major payload."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError(f"features must be 2D, got {features.shape}")
    with open(path, "wb") as fh:
        _binio.write_magic(fh, FEATURE_MAGIC)
        _binio.write_u32(fh, *features.shape)
        _binio.write_f32(fh, features)


def load_features(path, expected_count: int | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        _binio.read_magic(fh, FEATURE_MAGIC, path)
        count, n_feat = _binio.read_u32(fh, 2, path)
        data = _binio.read_f32(fh, count * n_feat, path)
    if expected_count is not None and count != expected_count:
        raise PairingError(f"{path}: {count} feature rows for {expected_count} manifest rows")
    return data.astype(np.float64).reshape(count, n_feat)


class ClassifierHead(Module):
    """Three linear layers n_feat -> 512 -> 256 -> C, batch norm + ReLU between them."""

    hidden = (512, 256)

    def __init__(self, n_feat: int, n_classes: int, rng: np.random.Generator,
                 zero_final: bool = False):
        h1, h2 = self.hidden
        self.n_feat = n_feat
        self.fc1 = Linear(n_feat, h1, rng)
        self.bn1 = BatchNorm1d(h1)
        self.fc2 = Linear(h1, h2, rng)
        self.bn2 = BatchNorm1d(h2)
        self.fc3 = Linear(h2, n_classes, rng, zero_init=zero_final)

    def __call__(self, feature: Tensor) -> Tensor:
        feature = T.as_tensor(feature)
        if feature.shape[-1] != self.n_feat:
            raise ShapeError(f"feature dim {feature.shape[-1]} != head input {self.n_feat}")
        x = T.relu(self.bn1(self.fc1(feature)))
        x = T.relu(self.bn2(self.fc2(x)))
        return self.fc3(x)


def classify(feature, head: ClassifierHead) -> Tensor:
    return head(feature)


def resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the last two axes."""
    h, w = image.shape[-2:]
    if (h, w) == tuple(size):
        return image
    factors = (1,) * (image.ndim - 2) + (size[0] / h, size[1] / w)
    return ndimage.zoom(image, factors, order=1, grid_mode=True, mode="nearest")


def baseline_compress(volume: Volume, mode: str, slice_indices: Sequence[int],
                      size: tuple[int, int] | None = None) -> np.ndarray:
    """Voxel-wise mean or max over the selected slices, repeated into three channels."""
    if len(slice_indices) == 0:
        raise ContractError("baseline compression needs at least one slice")
    slices = volume.voxels[list(slice_indices)].astype(np.float64)
    if mode == "mean":
        image = slices.mean(axis=0)
    elif mode == "max":
        image = slices.max(axis=0)
    else:
        raise ContractError(f"unknown baseline mode {mode!r}")
    if size is not None:
        image = resize_image(image, size)
    return np.repeat(image[None], 3, axis=0)
