"""Episodic training, filtered-rank evaluation, ablations and diffusion sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .config import ABLATIONS, ConfigError, TrainConfig
from .decoder import scores_numpy
from .kg import (
    IngestionConfig, KnowledgeGraph, _corrupt_tail, build_candidates, load_candidates, load_dataset,
    sample_valid_episode,
)
from .learner import SamplerError
from .metrics import EvalReport, filter_candidates, gold_rank
from .model import ConjugateModel
from .params import adam_step, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


def _streams(seed: int) -> tuple:
    init_ss, train_ss, eval_ss = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init_ss), np.random.default_rng(train_ss), int(eval_ss.generate_state(1)[0])


def load_data(cfg: TrainConfig) -> tuple:
    if not cfg.dataset:
        raise ConfigError("data.dir is not set")
    ing = IngestionConfig(max_neighbors=cfg.max_neighbors, add_inverse=cfg.add_inverse)
    return load_dataset(cfg.dataset, ing)


class Trainer:
    """Owns the model, optimizer state and the training RNG stream."""

    def __init__(self, cfg: TrainConfig, graph: KnowledgeGraph, tasks: dict, model: ConjugateModel | None = None):
        self.cfg = cfg.validate()
        self.graph = graph
        self.tasks = tasks
        init_rng, self.rng, self.eval_seed = _streams(cfg.seed)
        with ad.precision(np.float64 if cfg.precision == 64 else np.float32):
            self.model = model or ConjugateModel(cfg, graph.num_entities, graph.num_relations, rng=init_rng)
        self.episode = 0
        self.best_mrr = -1.0
        self.history: list = []

    @property
    def dtype(self):
        return self.model.dtype

    def train_episode(self) -> dict:
        cfg = self.cfg
        reg = self.model.registry
        start = time.perf_counter()
        with ad.precision(self.dtype):
            ep = sample_valid_episode(self.tasks["train"], self.graph, cfg.K, cfg.n_query, cfg.n_neg, self.rng)
            reg.zero_grad()
            try:
                loss = self.model.episode_loss(self.graph, ep, self.rng)
            except SamplerError as exc:
                raise TrainingDiverged(self._dump(ep, None, reason=str(exc))) from exc
            value = float(loss.total.data)
            if not math.isfinite(value):
                raise TrainingDiverged(self._dump(ep, loss))
            loss.total.backward()
            grad_norm = reg.grad_norm()
            if not math.isfinite(grad_norm):
                raise TrainingDiverged(self._dump(ep, loss, grad_norm))
            adam_step(reg, self.learning_rate(), (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.clip_norm)
        self.episode += 1
        rec = {"episode": self.episode, "relation": ep.name, "L_tri": float(loss.l_tri.data),
               "L_rel": float(loss.l_rel.data), "L": value, "grad_norm": grad_norm,
               "wall_time": time.perf_counter() - start}
        self.history.append(rec)
        return rec

    def learning_rate(self) -> float:
        """Rate for the upcoming step; cosine decay spans ``train.episodes``."""
        cfg = self.cfg
        if cfg.lr_schedule == "constant":
            return cfg.lr
        frac = min(self.episode / max(cfg.episodes_max - 1, 1), 1.0)
        return cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))

    def _dump(self, ep, loss, grad_norm=None, reason: str = "") -> str:
        info = {"episode": self.episode + 1, "relation": ep.name, "support": ep.support, "query": ep.query_pos,
                "grad_norm": grad_norm}
        if loss is not None:
            info.update(L_tri=float(loss.l_tri.data), L_rel=float(loss.l_rel.data))
        if reason:
            info["reason"] = reason
        return "non-finite training signal: " + json.dumps(info, default=str)

    def run(self, episodes: int | None = None, log_file=None, validate: bool = True) -> list:
        cfg = self.cfg
        target = cfg.episodes_max if episodes is None else self.episode + episodes
        fh = open(log_file, "a", encoding="utf-8") if log_file else None
        try:
            while self.episode < target:
                rec = self.train_episode()
                if fh:
                    fh.write(json.dumps(rec) + "\n")
                if validate and cfg.eval_every and self.episode % cfg.eval_every == 0:
                    self.checkpoint_and_validate()
        finally:
            if fh:
                fh.close()
        return self.history

    def checkpoint_and_validate(self) -> EvalReport | None:
        """Validate, keep the best-MRR copy and write the latest state.

        An empty ``out.checkpoint`` disables writing.
        """
        report = None
        path = Path(self.cfg.checkpoint) if self.cfg.checkpoint else None
        if "valid" in self.tasks:
            report = evaluate_model(self.model, self.graph, self.tasks["valid"], self.cfg, eval_seed=self.eval_seed)
            log.info("episode %d valid MRR %.4f", self.episode, report.mrr)
            if report.mrr > self.best_mrr:
                self.best_mrr = report.mrr
                if path:
                    self.save(best_path(path))
        if path:
            self.save(path)
        return report

    # -- persistence --------------------------------------------------------
    def metadata(self) -> dict:
        return {"config": self.cfg.to_dict(), "episode": self.episode, "best_mrr": self.best_mrr,
                "rng_state": self.rng.bit_generator.state, "num_entities": self.graph.num_entities,
                "num_relations": self.graph.num_relations}

    def save(self, path) -> None:
        save_checkpoint(path, self.model.registry, self.metadata())

    @classmethod
    def resume(cls, path, graph: KnowledgeGraph, tasks: dict, cfg: TrainConfig | None = None) -> "Trainer":
        registry, meta = load_checkpoint(path)
        cfg = cfg or TrainConfig.from_dict(meta["config"])
        model = ConjugateModel(cfg, graph.num_entities, graph.num_relations, registry=registry)
        trainer = cls(cfg, graph, tasks, model=model)
        trainer.episode = meta["episode"]
        trainer.best_mrr = meta["best_mrr"]
        trainer.rng.bit_generator.state = meta["rng_state"]
        return trainer


def best_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".best" + path.suffix)


def train(cfg: TrainConfig, graph: KnowledgeGraph | None = None, tasks: dict | None = None) -> Trainer:
    """Train from scratch; writes the checkpoint (and best-validation copy)."""
    cfg.validate()
    if graph is None:
        graph, tasks = load_data(cfg)
    trainer = Trainer(cfg, graph, tasks)
    if cfg.metrics_log:
        Path(cfg.metrics_log).parent.mkdir(parents=True, exist_ok=True)
    trainer.run(log_file=cfg.metrics_log or None)
    if not cfg.eval_every or trainer.episode % cfg.eval_every:
        trainer.checkpoint_and_validate()
    if trainer.best_mrr < 0 and cfg.checkpoint:
        trainer.save(best_path(Path(cfg.checkpoint)))
    return trainer


# -- evaluation ------------------------------------------------------------------
def evaluate_model(model: ConjugateModel, graph: KnowledgeGraph, split_tasks: dict, cfg: TrainConfig,
                   candidate_map: dict | None = None, eval_seed: int = 0) -> EvalReport:
    """Rank every query of every relation in ``split_tasks`` against its candidates.

    Each relation's first K triples form the support; the rest are queries.
    """
    start = time.perf_counter()
    all_ranks, per_relation = [], {}
    with ad.precision(model.dtype):
        for name in sorted(split_tasks):
            rows = split_tasks[name]
            if len(rows) < cfg.K + 1:
                continue
            support, queries = rows[:cfg.K], rows[cfg.K:]
            if cfg.eval_max_queries:
                queries = queries[:cfg.eval_max_queries]
            rid = support[0][1]
            rng = np.random.default_rng([eval_seed, rid])
            support_neg = [_corrupt_tail(graph, h, rid, rng) for h, _, _ in support]
            state = model.eval_state(graph, rid, [(h, t) for h, _, t in support], support_neg, rng)
            r_conj = state.r_conj.data
            d_z = float(state.d_z.data) if state.d_z is not None else None
            cands = build_candidates(graph, queries, candidate_map)
            needed = sorted({e for lst in cands.candidates.values() for e in lst} | {h for h, _, _ in queries})
            enc = model.encode_numpy(graph, needed, exclude_relation=rid)
            row_of = {e: i for i, e in enumerate(needed)}
            ranks = []
            for h, r, t in queries:
                key = (r, h)
                if t not in set(cands.candidates[key]):
                    raise KeyError(f"gold tail {graph.entities[t]!r} missing from candidates of query "
                                   f"({graph.entities[h]!r}, {name!r}, ?)")
                cand = filter_candidates(cands.candidates[key], t, cands.filtered_truths[key])
                idx = np.array([row_of[e] for e in cand])
                s = scores_numpy(enc[row_of[h]], r_conj, enc[idx], d_z)
                ranks.append(gold_rank(s, cand, t))
            per_relation[name] = EvalReport.from_ranks(ranks).summary()
            all_ranks.extend(ranks)
    return EvalReport.from_ranks(all_ranks, per_relation, time.perf_counter() - start)


def evaluate(checkpoint, split: str = "test", candidates=None, cfg: TrainConfig | None = None,
             graph: KnowledgeGraph | None = None, tasks: dict | None = None) -> EvalReport:
    registry, meta = load_checkpoint(checkpoint)
    cfg = cfg or TrainConfig.from_dict(meta["config"])
    if graph is None:
        graph, tasks = load_data(cfg)
    if split not in tasks:
        raise KeyError(f"split {split!r} not in dataset (have {sorted(tasks)})")
    model = ConjugateModel(cfg, graph.num_entities, graph.num_relations, registry=registry)
    cand_file = candidates or cfg.candidates
    candidate_map = load_candidates(cand_file, graph) if cand_file else None
    _, _, eval_seed = _streams(cfg.seed)
    return evaluate_model(model, graph, tasks[split], cfg, candidate_map, eval_seed)


def train_and_evaluate(cfg: TrainConfig, split: str = "test", graph=None, tasks=None) -> tuple:
    if graph is None:
        graph, tasks = load_data(cfg)
    trainer = train(cfg, graph, tasks)
    report = evaluate_model(trainer.model, graph, tasks[split], cfg, eval_seed=trainer.eval_seed)
    return trainer, report


def ablate(cfg: TrainConfig, variant: str, split: str = "test", graph=None, tasks=None) -> EvalReport:
    """Train and evaluate with one component removed."""
    if variant not in ABLATIONS:
        raise ConfigError(f"unknown ablation {variant!r}; valid: {', '.join(ABLATIONS)}")
    return train_and_evaluate(cfg.ablated(variant), split, graph, tasks)[1]


SWEEP_HEADER = ("kind", "steps", "mrr", "hits1", "hits5", "hits10")


def sweep_diffusion(cfg: TrainConfig, kinds: Sequence[str], steps: Iterable[int], split: str = "test",
                    graph=None, tasks=None) -> str:
    """Train/evaluate every (kind, steps) cell; returns the CSV table."""
    kinds, steps = list(kinds), list(steps)
    if not kinds or not steps:
        raise ValueError("sweep needs at least one kind and one step count")
    if any(n < 1 for n in steps):
        raise ValueError(f"diffusion steps must be >= 1, got {steps}")
    if graph is None:
        graph, tasks = load_data(cfg)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for kind in kinds:
        for n in steps:
            cell = cfg.replace(diffusion_kind=kind, diffusion_steps=n)
            _, rep = train_and_evaluate(cell, split, graph, tasks)
            writer.writerow([kind, n, f"{rep.mrr:.6f}", f"{rep.hits_at[1]:.6f}", f"{rep.hits_at[5]:.6f}",
                             f"{rep.hits_at[10]:.6f}"])
    return buf.getvalue()
