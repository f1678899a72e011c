"""Glue between volumes, slice selection, text providers and the trainable model."""

from __future__ import annotations

import zlib
from typing import Mapping, Sequence

from . import seeding
from .classifier import ClassifierHead, baseline_compress
from .network import NetConfig, SurrogateNet
from .selection import SelectionConfig, select_topk
from .text import (TextEmbeddings, check_pairing, label_conditioned_embeddings,
                   synth_embeddings, zero_embeddings)
from .train import Sample, SurrogateClassifier
from .volume import LabeledVolume, stack_channels

TEXT_MODES = ("synthetic", "label", "zero", "file")


def subject_seed(seed: int, subject_id: str) -> int:
    return seeding.derive(seed, seeding.TEXT, zlib.crc32(subject_id.encode()))


def make_embeddings(mode: str, seed: int, lv: LabeledVolume, indices: Sequence[int],
                    d_t: int) -> TextEmbeddings:
    k = len(indices)
    if mode == "synthetic":
        return synth_embeddings(subject_seed(seed, lv.subject_id), k, d_t, indices)
    if mode == "label":
        return label_conditioned_embeddings(subject_seed(seed, lv.subject_id), k, d_t, lv.label,
                                            indices, direction_seed=seed)
    if mode == "zero":
        return zero_embeddings(k, d_t, indices)
    raise ValueError(f"unknown text mode {mode!r}")


def prepare_samples(volumes: Sequence[LabeledVolume], sel: SelectionConfig, d_t: int,
                    text: str = "synthetic", seed: int = 0,
                    embeddings: Mapping[str, TextEmbeddings] | None = None) -> list[Sample]:
    """Select slices, stack channels and pair each volume with its embeddings.

    With ``text="file"`` embeddings come from ``embeddings`` keyed by subject id.
    """
    out = []
    for lv in volumes:
        indices = select_topk(lv.volume, sel)
        if text == "file":
            emb = embeddings[lv.subject_id]
        else:
            emb = make_embeddings(text, seed, lv, indices, d_t)
        check_pairing(emb, indices)
        out.append(Sample(lv.label, lv.subject_id, stacks=stack_channels(lv.volume, indices),
                          slice_text=emb.slice_rows, global_text=emb.volume_row))
    return out


def baseline_samples(volumes: Sequence[LabeledVolume], sel: SelectionConfig,
                     mode: str) -> list[Sample]:
    out = []
    for lv in volumes:
        indices = select_topk(lv.volume, sel)
        out.append(Sample(lv.label, lv.subject_id,
                          surrogate=baseline_compress(lv.volume, mode, indices)))
    return out


def build_model(net_cfg: NetConfig | None, n_feat: int, n_classes: int,
                seed: int) -> SurrogateClassifier:
    net = SurrogateNet(net_cfg, seeding.stage_rng(seed, seeding.MODEL)) if net_cfg else None
    head = ClassifierHead(n_feat, n_classes, seeding.stage_rng(seed, seeding.HEAD))
    return SurrogateClassifier(net, head)
