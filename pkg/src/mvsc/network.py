"""Text-guided volume-to-surrogate compression network.

Data flow for one volume (leading batch axes are carried through untouched):

    stacks (N, 3, H, W)
      -> patch tokens (N, P, d)            non-overlapping conv, kernel = stride = s
      -> + alpha * proj(channel means)     residual volume summary
      -> per-slice self-attention  X'      (N, P, d)
      -> global context C                  K learnable queries + projected volume text,
                                           cross-attending over all N*P augmented tokens
      -> X~ = X' + psi(slice text)         one shift per slice
      -> S_p = (X~[:, p], C)               (P, N + K, d)
      -> r_p = mean_n X'[n, p], FiLM(r_p; g)
      -> z_p = attend(r'_p over S_p)       (P, d)
      -> transposed conv decode -> (3, sqrt(P) s, sqrt(P) s)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _binio
from . import tensor as T
from .errors import CorruptionError, FormatError, PairingError, ShapeError
from .nn import Linear, Module, MultiHeadAttention, Parameter, uniform_fan_in
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MVSCMDL1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    d: int = 32
    K: int = 4
    patch: int = 16
    d_t: int = 32
    heads: int = 0  # 0 selects d // 32 (at least 1)

    @property
    def n_heads(self) -> int:
        return self.heads if self.heads > 0 else max(1, self.d // 32)


class SurrogateNet(Module):
    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        d, s = cfg.d, cfg.patch
        self.cfg = cfg
        heads = cfg.n_heads
        if d % heads:
            raise ShapeError(f"d={d} not divisible by {heads} heads")
        self.encoder_weight = Parameter(uniform_fan_in(rng, 3 * s * s, (d, 3, s, s)))
        self.encoder_bias = Parameter(np.zeros(d))
        self.residual_proj = Linear(3, d, rng)
        self.residual_alpha = Parameter(np.zeros(1))
        # Text projections start at zero so text is inert at initialization.
        self.global_text_proj = Linear(cfg.d_t, d, zero_init=True)
        self.slice_text_proj = Linear(cfg.d_t, d, zero_init=True)
        if cfg.K > 0:
            self.queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.K, d)))
            self.voce_attn = MultiHeadAttention(d, heads, rng, cross=True)
        self.slice_attn = MultiHeadAttention(d, heads, rng, residual=True)
        self.film_scale = Linear(d, d, zero_init=True)
        self.film_shift = Linear(d, d, zero_init=True)
        self.fusion_attn = MultiHeadAttention(d, heads, rng, cross=True)
        self.decoder_weight = Parameter(uniform_fan_in(rng, d, (d, 3, s, s)))
        self.decoder_bias = Parameter(np.zeros(3))

    @property
    def uses_context(self) -> bool:
        return self.cfg.K > 0

    def encode_patches(self, stacks) -> Tensor:
        """(..., N, 3, H, W) -> (..., N, P, d), tokens in row-major grid order."""
        stacks = T.as_tensor(stacks)
        H, W = stacks.shape[-2:]
        s = self.cfg.patch
        if H % s or W % s:
            raise ShapeError(f"slice size {H}x{W} not divisible by patch size {s}")
        if H != W:
            raise ShapeError(f"slices must be square, got {H}x{W}")
        feat = T.conv2d(stacks, self.encoder_weight, self.encoder_bias)
        lead = feat.shape[:-3]
        n = len(lead)
        feat = T.reshape(feat, lead + (self.cfg.d, -1))
        return T.swapaxes(feat, n, n + 1)

    def residual_augment(self, grid: Tensor, stacks) -> Tensor:
        summary = T.mean(T.as_tensor(stacks), axis=(-4, -2, -1))  # (..., 3)
        shift = self.residual_proj(summary) * self.residual_alpha
        return grid + T.reshape(shift, shift.shape[:-1] + (1, 1, self.cfg.d))

    def global_text(self, e_global) -> Tensor:
        return self.global_text_proj(e_global)

    def voce(self, grid: Tensor, g: Tensor) -> Tensor:
        """K context rows from text-guided queries over every token of every slice."""
        g = T.as_tensor(g)
        queries = self.queries + T.reshape(g, g.shape[:-1] + (1, self.cfg.d))
        lead = grid.shape[:-3]
        tokens = T.reshape(grid, lead + (-1, self.cfg.d))
        return self.voce_attn(queries, tokens)

    def self_attend(self, grid: Tensor) -> Tensor:
        return self.slice_attn(grid)

    def inject_slice_text(self, x_prime: Tensor, slice_text) -> Tensor:
        slice_text = T.as_tensor(slice_text)
        if slice_text.shape[-2] != x_prime.shape[-3]:
            raise PairingError(f"{slice_text.shape[-2]} slice embeddings for "
                               f"{x_prime.shape[-3]} slices")
        shift = self.slice_text_proj(slice_text)
        return x_prime + T.reshape(shift, shift.shape[:-1] + (1, self.cfg.d))

    @staticmethod
    def build_slice_sets(x_tilde: Tensor, context: Tensor | None) -> Tensor:
        """(..., N, P, d) and (..., K, d) -> (..., P, N + K, d): slice tokens first."""
        n = x_tilde.ndim
        per_patch = T.swapaxes(x_tilde, n - 3, n - 2)
        if context is None:
            return per_patch
        P = per_patch.shape[-3]
        ctx = T.as_tensor(context)
        ctx = T.reshape(ctx, ctx.shape[:-2] + (1,) + ctx.shape[-2:])
        ctx = T.broadcast_to(ctx, ctx.shape[:-3] + (P,) + ctx.shape[-2:])
        return T.concat([per_patch, ctx], axis=-2)

    @staticmethod
    def reference_tokens(x_prime: Tensor) -> Tensor:
        return T.mean(x_prime, axis=-3)

    def film(self, ref: Tensor, g) -> Tensor:
        g = T.as_tensor(g)
        scale = self.film_scale(g) + 1.0
        shift = self.film_shift(g)
        expand = g.shape[:-1] + (1, self.cfg.d)
        return ref * T.reshape(scale, expand) + T.reshape(shift, expand)

    def fuse(self, ref_mod: Tensor, sets: Tensor) -> Tensor:
        query = T.reshape(ref_mod, ref_mod.shape[:-1] + (1, self.cfg.d))
        out = self.fusion_attn(query, sets)
        return T.reshape(out, ref_mod.shape)

    def decode(self, fused: Tensor) -> Tensor:
        """(..., P, d) -> (..., 3, sqrt(P) s, sqrt(P) s)."""
        P = fused.shape[-2]
        side = math.isqrt(P)
        if side * side != P:
            raise ShapeError(f"P={P} tokens do not form a square grid")
        lead = fused.shape[:-2]
        n = len(lead)
        grid = T.reshape(fused, lead + (side, side, self.cfg.d))
        grid = T.transpose(grid, tuple(range(n)) + (n + 2, n, n + 1))
        return T.conv_transpose2d(grid, self.decoder_weight, self.decoder_bias)

    def __call__(self, stacks, slice_text, global_text) -> Tensor:
        """Map (..., N, 3, H, W) stacks plus (..., N, d_t) / (..., d_t) text to surrogates."""
        stacks = T.as_tensor(stacks)
        grid = self.residual_augment(self.encode_patches(stacks), stacks)
        x_prime = self.self_attend(grid)
        g = self.global_text(global_text)
        context = self.voce(grid, g) if self.uses_context else None
        x_tilde = self.inject_slice_text(x_prime, slice_text)
        sets = self.build_slice_sets(x_tilde, context)
        ref = self.film(self.reference_tokens(x_prime), g)
        return self.decode(self.fuse(ref, sets))


def mvsc_forward(stacks: np.ndarray, emb, model: SurrogateNet) -> Tensor:
    """Surrogate for one volume from its channel stacks and paired embeddings."""
    if emb.k != stacks.shape[0]:
        raise PairingError(f"{emb.k} slice embeddings for {stacks.shape[0]} slices")
    return model(stacks, emb.slice_rows, emb.volume_row)


# ----------------------------------------------------------------- checkpoint


def save_checkpoint(path, cfg: NetConfig, state: dict[str, np.ndarray],
                    extras: dict[str, str] | None = None) -> None:
    """Write ``MVSCMDL1``.

    Layout: magic, u32 version, u32 d, K, patch, d_t, heads, u32 extras byte
    length + UTF-8 ``key=value`` lines, u32 tensor count, then per tensor
    u32 name length, name, u32 ndim, u32 dims, float32 payload.
    """
    extra_blob = "".join(f"{k}={v}\n" for k, v in sorted((extras or {}).items())).encode()
    with open(path, "wb") as fh:
        _binio.write_magic(fh, CHECKPOINT_MAGIC)
        _binio.write_u32(fh, CHECKPOINT_VERSION, cfg.d, cfg.K, cfg.patch, cfg.d_t, cfg.n_heads)
        _binio.write_u32(fh, len(extra_blob))
        fh.write(extra_blob)
        _binio.write_u32(fh, len(state))
        for name, value in state.items():
            value = np.asarray(value)
            encoded = name.encode()
            _binio.write_u32(fh, len(encoded))
            fh.write(encoded)
            _binio.write_u32(fh, value.ndim, *value.shape)
            _binio.write_f32(fh, value)


def load_checkpoint(path) -> tuple[NetConfig, dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        _binio.read_magic(fh, CHECKPOINT_MAGIC, path)
        version, d, K, patch, d_t, heads = _binio.read_u32(fh, 6, path)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = _binio.read_u32(fh, 1, path)
        blob = fh.read(blob_len)
        if len(blob) != blob_len:
            raise CorruptionError(f"{path}: truncated config block")
        extras = dict(line.split("=", 1) for line in blob.decode().splitlines() if line)
        (count,) = _binio.read_u32(fh, 1, path)
        state = {}
        for i in range(count):
            (name_len,) = _binio.read_u32(fh, 1, path)
            name = fh.read(name_len).decode()
            (ndim,) = _binio.read_u32(fh, 1, path)
            shape = _binio.read_u32(fh, ndim, path) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            last = i == count - 1
            state[name] = _binio.read_f32(fh, size, path, exact_end=last).astype(np.float64).reshape(shape)
    return NetConfig(d=d, K=K, patch=patch, d_t=d_t, heads=heads), state, extras
