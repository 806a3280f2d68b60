"""Gated attention neighborhood encoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kg import KnowledgeGraph, neighbors
from .params import ParamRegistry

NEG_INF = -1e9


@dataclass
class EncoderParams:
    W_r: Tensor  # (2d, d)
    b_r: Tensor  # (d,)
    W: Tensor  # (2d,)
    W_g: Tensor  # (d, d)
    b_g: Tensor  # (d,)
    leaky_slope: float = 0.2

    @property
    def dim(self) -> int:
        return self.b_r.shape[0]


def layer_prefix(layer: int) -> str:
    return "encoder." if layer == 0 else f"encoder.l{layer}."


def register_encoder(registry: ParamRegistry, dim: int, rng: np.random.Generator, layers: int = 1) -> None:
    for layer in range(layers):
        p = layer_prefix(layer)
        registry.add(p + "W_r", (2 * dim, dim), rng)
        registry.add(p + "b_r", (dim,), rng)
        registry.add(p + "W", (2 * dim,), rng, init="xavier")
        registry.add(p + "W_g", (dim, dim), rng)
        registry.add(p + "b_g", (dim,), rng)


def encoder_params(registry: ParamRegistry, layer: int = 0, leaky_slope: float = 0.2) -> EncoderParams:
    p = layer_prefix(layer)
    return EncoderParams(registry[p + "W_r"], registry[p + "b_r"], registry[p + "W"],
                         registry[p + "W_g"], registry[p + "b_g"], leaky_slope)


def neighbor_message(e_i, r_i, params: EncoderParams) -> Tensor:
    """m_i = W_r [e_i; r_i] + b_r, over the last axis."""
    e_i, r_i = ad.as_tensor(e_i), ad.as_tensor(r_i)
    if e_i.shape[-1] != params.dim or r_i.shape[-1] != params.dim:
        raise ad.ShapeError(f"neighbor_message: embeddings {e_i.shape} and {r_i.shape} do not match d={params.dim}")
    return ad.concat([e_i, r_i], axis=-1) @ params.W_r + params.b_r


def attend_aggregate(h, messages, params: EncoderParams, mask=None) -> tuple:
    """Attention over neighbor messages.

    ``h`` is ``(..., d)`` and ``messages`` ``(..., M, d)`` (or a list of
    d-vectors).  ``mask`` marks real neighbors when rows are padded; masked
    slots get zero weight.  Returns ``(alphas, h_agg)``.
    """
    h = ad.as_tensor(h)
    d = params.dim
    if isinstance(messages, (list, tuple)):
        if not messages:
            return ad.zeros((0,)), ad.zeros(h.shape)
        messages = ad.stack(messages, axis=0)
    if messages.shape[-2] == 0:
        return ad.zeros(messages.shape[:-1]), ad.zeros(h.shape)
    w_h = params.W[:d]
    w_m = params.W[d:]
    logits = ad.expand_dims(h @ w_h, -1) + messages @ w_m
    logits = ad.leaky_relu(logits, params.leaky_slope)
    if mask is not None:
        mask = np.asarray(mask, dtype=logits.dtype)
        logits = logits + (1.0 - mask) * NEG_INF
        alphas = ad.softmax(logits, axis=-1) * mask
    else:
        alphas = ad.softmax(logits, axis=-1)
    h_agg = (ad.expand_dims(alphas, -1) * messages).sum(axis=-2)
    return alphas, h_agg


def gated_fuse(h, h_agg, params: EncoderParams) -> Tensor:
    """h' = g * h_agg + (1 - g) * h with g = sigmoid(W_g h_agg + b_g)."""
    h, h_agg = ad.as_tensor(h), ad.as_tensor(h_agg)
    if h.shape != h_agg.shape:
        raise ad.ShapeError(f"gated_fuse: shapes {h.shape} and {h_agg.shape} differ")
    g = ad.sigmoid(h_agg @ params.W_g + params.b_g)
    return g * h_agg + (1.0 - g) * h


def gate_values(h_agg, params: EncoderParams) -> Tensor:
    return ad.sigmoid(ad.as_tensor(h_agg) @ params.W_g + params.b_g)


def neighbor_arrays(graph: KnowledgeGraph, entity_ids: Sequence[int], max_neighbors: int | None = None,
                    exclude_relation: int | None = None) -> tuple:
    """Padded ``(rel_ids, ent_ids, mask)`` arrays of shape ``(B, M)``."""
    lists = [neighbors(graph, int(e), max_neighbors, exclude_relation) for e in entity_ids]
    M = max((len(x) for x in lists), default=0)
    B = len(lists)
    rel = np.zeros((B, M), dtype=np.int64)
    ent = np.zeros((B, M), dtype=np.int64)
    mask = np.zeros((B, M), dtype=bool)
    for i, lst in enumerate(lists):
        if lst:
            arr = np.asarray(lst, dtype=np.int64)
            rel[i, :len(lst)] = arr[:, 0]
            ent[i, :len(lst)] = arr[:, 1]
            mask[i, :len(lst)] = True
    return rel, ent, mask


def encode_entities(graph: KnowledgeGraph, entity_emb: Tensor, relation_emb: Tensor, entity_ids,
                    layers: Sequence[EncoderParams], use_gate: bool = True,
                    exclude_relation: int | None = None, max_neighbors: int | None = None) -> Tensor:
    """Encode a batch of entities; returns ``(B, d)``.

    The first layer attends with the raw embedding as query, later layers
    with the previous layer's output.  Without the gate the output is the
    aggregate itself.  Entities with no neighbors keep their raw embedding
    in both modes, so a row never depends on what else is in the batch.
    """
    ids = np.asarray(entity_ids, dtype=np.int64)
    rel, ent, mask = neighbor_arrays(graph, ids, max_neighbors, exclude_relation)
    h = entity_emb[ids]
    if mask.shape[1] == 0:
        return h
    e_nb = entity_emb[ent]
    r_nb = relation_emb[rel]
    has_nb = mask.any(axis=1, keepdims=True).astype(h.dtype)
    for params in layers:
        messages = neighbor_message(e_nb, r_nb, params)
        _, h_agg = attend_aggregate(h, messages, params, mask)
        fused = gated_fuse(h, h_agg, params) if use_gate else h_agg
        h = fused * has_nb + h * (1.0 - has_nb)
    return h


def encode_entity(graph: KnowledgeGraph, entity_emb: Tensor, relation_emb: Tensor, entity: int,
                  layers: Sequence[EncoderParams], **kwargs) -> Tensor:
    return encode_entities(graph, entity_emb, relation_emb, [entity], layers, **kwargs)[0]
