"""Slice- and volume-level text embedding matrices.

Row order is fixed: one row per selected slice in ascending slice-index
order, then one volume row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _binio, seeding
from .errors import ContractError, PairingError

TEXT_MAGIC = b"MVSCTXT1"


@dataclass(frozen=True)
class TextEmbeddings:
    matrix: np.ndarray  # (k + 1, d_t)
    slice_indices: tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return self.matrix.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def slice_rows(self) -> np.ndarray:
        return self.matrix[:-1]

    @property
    def volume_row(self) -> np.ndarray:
        return self.matrix[-1]


def l2_normalize(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    return np.divide(rows, norms, out=np.zeros_like(rows), where=norms > 0)


def write_embeddings(path, emb: TextEmbeddings) -> None:
    """``MVSCTXT1``, u32 rows, u32 d_t, u32 k_indices, k u32 indices, rows*d_t float32."""
    rows, dim = emb.matrix.shape
    with open(path, "wb") as fh:
        _binio.write_magic(fh, TEXT_MAGIC)
        _binio.write_u32(fh, rows, dim, len(emb.slice_indices))
        if emb.slice_indices:
            _binio.write_u32(fh, *emb.slice_indices)
        _binio.write_f32(fh, emb.matrix)


def load_embeddings(path, expected_k: int | None = None) -> TextEmbeddings:
    with open(path, "rb") as fh:
        _binio.read_magic(fh, TEXT_MAGIC, path)
        rows, dim, n_idx = _binio.read_u32(fh, 3, path)
        indices = _binio.read_u32(fh, n_idx, path) if n_idx else ()
        data = _binio.read_f32(fh, rows * dim, path)
    if expected_k is not None and rows != expected_k + 1:
        raise PairingError(f"{path}: {rows} rows but {expected_k} slices + 1 volume row expected")
    if n_idx and n_idx != rows - 1:
        raise PairingError(f"{path}: {n_idx} slice indices for {rows - 1} slice rows")
    return TextEmbeddings(l2_normalize(data.reshape(rows, dim)), tuple(indices))


def check_pairing(emb: TextEmbeddings, slice_indices: Sequence[int]) -> None:
    if emb.k != len(slice_indices):
        raise PairingError(f"{emb.k} slice embeddings for {len(slice_indices)} slices")
    if emb.slice_indices and tuple(emb.slice_indices) != tuple(slice_indices):
        raise PairingError(f"embeddings were made for slices {emb.slice_indices}, "
                           f"selection gave {tuple(slice_indices)}")


def _finish(slices: np.ndarray, indices: Sequence[int]) -> TextEmbeddings:
    slices = l2_normalize(slices)
    volume = l2_normalize(slices.mean(axis=0))
    return TextEmbeddings(np.vstack([slices, volume]), tuple(int(i) for i in indices))


def synth_embeddings(seed: int, k: int, d_t: int, slice_indices: Sequence[int] = ()) -> TextEmbeddings:
    """Pseudo-random unit slice rows; the volume row is their normalized mean."""
    if k < 1 or d_t < 2:
        raise ContractError("synthetic embeddings need k >= 1 and d_t >= 2")
    rng = seeding.stage_rng(seed, seeding.TEXT)
    return _finish(rng.standard_normal((k, d_t)), slice_indices)


def label_direction(label: int, d_t: int, direction_seed: int = 0) -> np.ndarray:
    rng = seeding.stage_rng(direction_seed, seeding.TEXT_DIRECTIONS, label)
    return l2_normalize(rng.standard_normal(d_t))


def label_conditioned_embeddings(seed: int, k: int, d_t: int, label: int,
                                 slice_indices: Sequence[int] = (), noise: float = 1.0,
                                 direction_seed: int = 0) -> TextEmbeddings:
    """Slice rows scatter around a class direction shared by every subject of ``label``.

    ``noise`` is the expected norm of the per-row perturbation relative to the
    unit class direction.
    """
    if k < 1 or d_t < 2:
        raise ContractError("synthetic embeddings need k >= 1 and d_t >= 2")
    direction = label_direction(label, d_t, direction_seed)
    rng = seeding.stage_rng(seed, seeding.TEXT, label)
    jitter = rng.standard_normal((k, d_t)) * (noise / np.sqrt(d_t))
    return _finish(direction + jitter, slice_indices)


def zero_embeddings(k: int, d_t: int, slice_indices: Sequence[int] = ()) -> TextEmbeddings:
    """All-zero rows; used to switch text guidance off."""
    return TextEmbeddings(np.zeros((k + 1, d_t)), tuple(int(i) for i in slice_indices))
