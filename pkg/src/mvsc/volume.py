"""Volumes, intensity normalization, three-channel stacking and synthetic data."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _binio, seeding
from .errors import BoundsError, ContractError, CorruptionError, FormatError

VOLUME_MAGIC = b"MVSCVOL1"
MASK_THRESHOLD = 0.05
CLASS_NAMES = ("CN", "MCI", "AD")


@dataclass(frozen=True)
class Volume:
    """A read-only float32 scalar field indexed ``[z, i, j]``."""

    voxels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.voxels, dtype=np.float32)
        if arr.ndim != 3 or 0 in arr.shape:
            raise ContractError(f"a volume needs three positive dims, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractError("volume contains non-finite voxels")
        arr.setflags(write=False)
        object.__setattr__(self, "voxels", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    @property
    def depth(self) -> int:
        return self.voxels.shape[0]

    def __eq__(self, other):
        return isinstance(other, Volume) and np.array_equal(self.voxels, other.voxels)

    __hash__ = None


@dataclass(frozen=True)
class LabeledVolume:
    volume: Volume
    label: int
    subject_id: str


def write_volume(path, volume: Volume | np.ndarray) -> None:
    """Write ``MVSCVOL1``: magic, u32 Z, H, W, then Z*H*W float32 voxels."""
    voxels = volume.voxels if isinstance(volume, Volume) else np.asarray(volume, dtype=np.float32)
    if voxels.ndim != 3:
        raise ContractError(f"expected a 3D array, got shape {voxels.shape}")
    with open(path, "wb") as fh:
        _binio.write_magic(fh, VOLUME_MAGIC)
        _binio.write_u32(fh, *voxels.shape)
        _binio.write_f32(fh, voxels)


def read_volume_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _binio.read_magic(fh, VOLUME_MAGIC, path)
        z, h, w = _binio.read_u32(fh, 3, path)
        if 0 in (z, h, w):
            raise CorruptionError(f"{path}: zero dimension in header {(z, h, w)}")
        data = _binio.read_f32(fh, z * h * w, path)
    return data.reshape(z, h, w)


def load_volume(path) -> Volume:
    return Volume(read_volume_array(path))


def normalize_intensity(volume: Volume) -> Volume:
    """Min-max map onto [0, 1]; a constant volume maps to all zeros."""
    x = volume.voxels.astype(np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return Volume(np.zeros_like(x))
    out = (x - lo) / (hi - lo)
    return Volume(np.clip(out, 0.0, 1.0))


def quantile_boundaries(values: np.ndarray) -> np.ndarray:
    """Quartile cut points (25/50/75 %, linear interpolation) of ``values``."""
    return np.quantile(np.asarray(values, dtype=np.float64), [0.25, 0.5, 0.75])


def segment_slice(intensity: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Quartile code of masked intensities: quartile q becomes q/3, outside mask 0."""
    seg = np.zeros(intensity.shape, dtype=np.float64)
    inside = mask > 0
    if not inside.any():
        return seg
    cuts = quantile_boundaries(intensity[inside])
    level = np.searchsorted(cuts, intensity[inside], side="right")
    seg[inside] = level / 3.0
    return seg


def stack_channels(volume: Volume, slice_indices: Sequence[int],
                   mask_threshold: float = MASK_THRESHOLD) -> np.ndarray:
    """Return an (N, 3, H, W) float64 array: intensity, brain mask, segmentation."""
    z = volume.depth
    out = np.empty((len(slice_indices), 3) + volume.shape[1:], dtype=np.float64)
    for n, idx in enumerate(slice_indices):
        if not 0 <= idx < z:
            raise BoundsError(f"slice index {idx} outside [0, {z})")
        intensity = volume.voxels[idx].astype(np.float64)
        mask = (intensity > mask_threshold).astype(np.float64)
        out[n, 0] = intensity
        out[n, 1] = mask
        out[n, 2] = segment_slice(intensity, mask)
    return out


# ------------------------------------------------------------------ synthetic


@dataclass(frozen=True)
class SynthSpec:
    """Geometry of the class-conditional phantom.

    Class ``c`` gets a central cavity of radius ``r0 + c * dr`` (in units of
    the half-extent of each axis). The outer shell radius grows with the
    cavity so the bright shell keeps the same volume across classes; global
    mean intensity therefore carries almost no label information.
    """

    n_classes: int = 2
    per_class: int = 40
    shape: tuple[int, int, int] = (32, 64, 64)
    r0: float = 0.25
    dr: float = 0.12
    outer0: float = 0.8
    shell_level: float = 1.0
    cavity_level: float = 0.2
    sigma: float = 0.12
    center_jitter: float = 0.04
    radius_jitter: float = 0.03
    gain_jitter: float = 0.1


def phantom(spec: SynthSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    zdim, hdim, wdim = spec.shape
    offset = rng.uniform(-spec.center_jitter, spec.center_jitter, size=3)
    axes = [(np.arange(n) + 0.5) / n * 2.0 - 1.0 - o for n, o in zip(spec.shape, offset)]
    zz, ii, jj = np.meshgrid(*axes, indexing="ij")
    rho = np.sqrt(zz**2 + ii**2 + jj**2)
    inner = spec.r0 + label * spec.dr + rng.uniform(-spec.radius_jitter, spec.radius_jitter)
    outer = (spec.outer0**3 - spec.r0**3 + inner**3) ** (1.0 / 3.0)
    gain = 1.0 + rng.uniform(-spec.gain_jitter, spec.gain_jitter)
    field = np.zeros(spec.shape)
    field[rho < inner] = spec.cavity_level
    field[(rho >= inner) & (rho < outer)] = spec.shell_level
    field *= gain
    head = rho < outer
    field[head] += rng.normal(0.0, spec.sigma, size=int(head.sum()))
    return np.clip(field, 0.0, None)


def synth_dataset(spec: SynthSpec, seed: int, offset: int = 0) -> list[LabeledVolume]:
    """Deterministic labeled phantoms; volume ``i`` of class ``c`` uses stream (c, offset + i).

    ``offset`` lets a held-out split draw fresh subjects from the same seed.
    """
    if spec.n_classes < 1 or spec.per_class < 1 or min(spec.shape) < 1:
        raise ContractError("class count, volumes per class and dims must be positive")
    out = []
    for c in range(spec.n_classes):
        for i in range(spec.per_class):
            rng = seeding.stage_rng(seed, seeding.DATA, c, offset + i)
            vol = normalize_intensity(Volume(phantom(spec, c, rng)))
            out.append(LabeledVolume(vol, c, f"sub-c{c}-{offset + i:04d}"))
    return out


# ------------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestRecord:
    path: Path
    label: int
    subject_id: str


def write_manifest(path, records: Sequence[ManifestRecord]) -> None:
    """One ``<path>,<label>,<subject_id>`` line per record; paths relative to the manifest."""
    base = Path(path).parent
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for rec in records:
            rel = os.path.relpath(rec.path, base)
            writer.writerow([Path(rel).as_posix(), rec.label, rec.subject_id])


def read_manifest(path) -> list[ManifestRecord]:
    base = Path(path).parent
    records = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected <path>,<label>,<subject_id>")
            file, label, subject = row
            p = Path(file)
            records.append(ManifestRecord(p if p.is_absolute() else base / p, int(label), subject))
    return records
