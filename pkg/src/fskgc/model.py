"""End-to-end model: encoder -> conjugate relation learner -> decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .decoder import conjugate_relation, margin_loss, register_decoder, score, threshold, total_loss
from .encoder import encode_entities, encoder_params, register_encoder
from .kg import Episode, KnowledgeGraph
from .learner import (
    DiffusionSchedule, ScoreNet, attention_pool, icdr_loss, mlp, np_condition, register_attention_pool,
    register_mlp, register_np, register_stable_relation, reverse_sample, stable_relation, weak_features,
)
from .params import ParamRegistry


@dataclass
class RelationEpisodeState:
    r_s: Tensor
    z: Tensor
    c: Tensor
    r_conj: Tensor
    d_z: Tensor | None
    x0: Tensor
    prior: object = None
    scale: Tensor | None = None


@dataclass
class EpisodeLoss:
    total: Tensor
    l_tri: Tensor
    l_rel: Tensor
    pos_scores: Tensor
    neg_scores: Tensor


def data_scale(x0: Tensor) -> Tensor:
    """RMS of the weak features; diffusion runs on ``x0 / scale``."""
    return ad.sqrt(ad.square(x0).mean() + 1e-12)


class ConjugateModel:
    """Holds the parameter registry and runs episodes through the pipeline."""

    def __init__(self, cfg: TrainConfig, num_entities: int, num_relations: int,
                 rng: np.random.Generator | None = None, registry: ParamRegistry | None = None):
        self.cfg = cfg
        self.dtype = np.float64 if cfg.precision == 64 else np.float32
        d = cfg.dim
        self.schedule = DiffusionSchedule(cfg.diffusion_kind, cfg.beta_min, cfg.beta_max,
                                          cfg.diffusion_steps, cfg.t_eps)
        if registry is None:
            rng = rng if rng is not None else np.random.default_rng(cfg.seed)
            registry = ParamRegistry(self.dtype)
            registry.add("emb.entity", (num_entities, d), rng, init="embedding")
            registry.add("emb.relation", (num_relations, d), rng, init="embedding")
            register_encoder(registry, d, rng, cfg.encoder_layers)
            register_np(registry, d, cfg.latent_dim, cfg.cond_dim, cfg.np_hidden, rng)
            register_mlp(registry, "cond.mlp", (d + 1, cfg.np_hidden, cfg.cond_dim), rng)
            ScoreNet.register(registry, d, cfg.cond_dim, cfg.score_hidden or 4 * d, cfg.score_blocks,
                              cfg.time_dim, rng)
            register_attention_pool(registry, d, cfg.attn_dim or d, rng)
            register_stable_relation(registry, d, cfg.sr_hidden or d, rng)
            register_decoder(registry, d, cfg.cond_dim, cfg.thresh_hidden or cfg.cond_dim, rng)
        elif registry.dtype != self.dtype:
            registry.astype(self.dtype)
        self.registry = registry
        self.score_net = ScoreNet(registry, cfg.score_blocks, cfg.time_dim)

    # -- pieces ------------------------------------------------------------
    def encoder_layers(self):
        return [encoder_params(self.registry, i, self.cfg.leaky_slope) for i in range(self.cfg.encoder_layers)]

    def encode(self, graph: KnowledgeGraph, entity_ids, exclude_relation: int | None = None) -> Tensor:
        return encode_entities(graph, self.registry["emb.entity"], self.registry["emb.relation"], entity_ids,
                               self.encoder_layers(), use_gate=self.cfg.use_gate,
                               exclude_relation=exclude_relation, max_neighbors=self.cfg.max_neighbors)

    def relation_state(self, heads: Tensor, tails: Tensor, neg_tails: Tensor, rng: np.random.Generator,
                       deterministic: bool = False, sampler: str | None = None) -> RelationEpisodeState:
        cfg, reg = self.cfg, self.registry
        K = heads.shape[0]
        x0 = weak_features(heads, tails)
        context = ad.concat([x0, neg_tails - heads], axis=0)
        labels = [1] * K + [0] * K
        prior = None
        if cfg.use_condition:
            prior = np_condition(context, labels, reg, rng, deterministic=deterministic)
            c = prior.c
        else:
            lab = Tensor(np.asarray(labels, dtype=self.dtype)[:, None])
            c = mlp(reg, "cond.mlp", ad.concat([context, lab], axis=-1).mean(axis=0))
        scale = data_scale(x0)
        if cfg.use_icdr:
            x_T = ad.sample_gaussian(x0.shape, rng)
            x0_hat = reverse_sample(x_T, c, self.schedule, self.score_net, rng, kind=sampler,
                                    clip=cfg.diffusion_clip or None)
            _, z = attention_pool(x0_hat * scale, reg)
        else:
            z = ad.zeros((cfg.dim,))
        r_s = stable_relation(heads, tails, reg) if cfg.use_sr else x0.mean(axis=0)
        r_conj = conjugate_relation(r_s, z, reg)
        d_z = threshold(c, reg) if cfg.use_macone else None
        return RelationEpisodeState(r_s, z, c, r_conj, d_z, x0, prior, scale)

    # -- training objective --------------------------------------------------
    def episode_loss(self, graph: KnowledgeGraph, ep: Episode, rng: np.random.Generator,
                     t: float | None = None) -> EpisodeLoss:
        cfg, reg = self.cfg, self.registry
        sh = np.array([h for h, _ in ep.support])
        st = np.array([t_ for _, t_ in ep.support])
        sn = np.array(ep.support_neg)
        qh = np.array([h for h, _ in ep.query_pos])
        qt = np.array([t_ for _, t_ in ep.query_pos])
        qn = np.array(ep.query_neg)
        ids, inverse = np.unique(np.concatenate([sh, st, sn, qh, qt, qn.ravel()]), return_inverse=True)
        enc = self.encode(graph, ids, exclude_relation=ep.relation)
        parts = np.split(inverse, np.cumsum([len(sh), len(st), len(sn), len(qh), len(qt)]))
        H, T, TN, QH, QT = (enc[p] for p in parts[:5])
        QN = enc[parts[5].reshape(qn.shape)]

        state = self.relation_state(H, T, TN, rng, deterministic=False)
        pos = score(QH, state.r_conj, QT, state.d_z)
        neg = score(ad.expand_dims(QH, 1), state.r_conj, QN, state.d_z)
        l_tri = margin_loss(pos, neg, cfg.margin)

        if cfg.use_icdr:
            posterior = None
            if cfg.use_condition:
                n_neg = qn.shape[1]
                q_ctx = ad.concat([QT - QH, (QN - ad.expand_dims(QH, 1)).reshape(-1, cfg.dim)], axis=0)
                ctx = ad.concat([state.x0, TN - H, q_ctx], axis=0)
                labels = [1] * ep.K + [0] * ep.K + [1] * len(qh) + [0] * (len(qh) * n_neg)
                posterior = np_condition(ctx, labels, reg, deterministic=True)
            l_rel, _, _ = icdr_loss(state.x0 / state.scale, self.schedule, self.score_net, state.c, posterior,
                                    state.prior, rng, t=t)
        else:
            l_rel = ad.zeros(())
        return EpisodeLoss(total_loss(l_tri, l_rel), l_tri, l_rel, pos, neg)

    # -- inference -------------------------------------------------------------
    def eval_state(self, graph: KnowledgeGraph, relation: int, support: list, support_neg: list,
                   rng: np.random.Generator) -> RelationEpisodeState:
        cfg = self.cfg
        sampler = cfg.diffusion_kind if (cfg.stochastic_eval or cfg.eval_sampler == "train") else cfg.eval_sampler
        sh = np.array([h for h, _ in support])
        st = np.array([t for _, t in support])
        sn = np.array(support_neg)
        with ad.no_grad():
            enc = self.encode(graph, np.concatenate([sh, st, sn]), exclude_relation=relation)
            K = len(sh)
            return self.relation_state(enc[:K], enc[K:2 * K], enc[2 * K:], rng,
                                       deterministic=not cfg.stochastic_eval, sampler=sampler)

    def encode_numpy(self, graph: KnowledgeGraph, entity_ids, exclude_relation: int | None = None,
                     chunk: int = 1024) -> np.ndarray:
        ids = np.asarray(entity_ids, dtype=np.int64)
        out = np.empty((len(ids), self.cfg.dim), dtype=self.dtype)
        with ad.no_grad():
            for start in range(0, len(ids), chunk):
                sl = slice(start, start + chunk)
                out[sl] = self.encode(graph, ids[sl], exclude_relation).data
        return out
