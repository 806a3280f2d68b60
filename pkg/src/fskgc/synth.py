"""Synthetic planted-pattern knowledge graphs for desk-scale experiments.

Entities get hidden positions in a low-dimensional space.  Each relation
is a planted rule on those positions: a *translation* relation links ``h``
to the entity nearest ``pos[h] + offset``; a *pairing* relation links the
two members of fixed entity pairs in both directions (symmetric, so no
single translation fits it).  The first relations form the background
graph and the rest become few-shot tasks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import IngestionConfig, KnowledgeGraph, build_graph, save_graph


@dataclass
class SynthSpec:
    entities: int = 50
    relations: int = 8
    seed: int = 0
    latent_dim: int = 4
    heads_per_relation: int = 20
    background_relations: int = 2
    valid_relations: int = 1
    test_relations: int = 1
    pairing_every: int = 3  # every n-th task relation is a pairing relation (0 = none)


def _translation_triples(pos: np.ndarray, offset: np.ndarray, heads: np.ndarray) -> list:
    out = []
    for h in heads:
        target = pos[h] + offset
        dist = np.sum((pos - target) ** 2, axis=1)
        dist[h] = np.inf
        out.append((int(h), int(np.argmin(dist))))
    return out


def _pairing_triples(rng: np.random.Generator, n_entities: int, n_pairs: int) -> list:
    order = rng.permutation(n_entities)[: 2 * n_pairs]
    out = []
    for a, b in zip(order[0::2], order[1::2]):
        out.append((int(a), int(b)))
        out.append((int(b), int(a)))
    return out


def generate(spec: SynthSpec | None = None, config: IngestionConfig | None = None) -> tuple:
    """Return ``(graph, tasks)`` with task splits ``train``/``valid``/``test``."""
    spec = spec or SynthSpec()
    n_task = spec.relations - spec.background_relations
    if n_task < 1 + spec.valid_relations + spec.test_relations - 1 or n_task < 1:
        raise ValueError("not enough relations for the requested splits")
    rng = np.random.default_rng(spec.seed)
    pos = rng.standard_normal((spec.entities, spec.latent_dim))
    ent_names = [f"e{i:03d}" for i in range(spec.entities)]
    rel_names = [f"rel{j}" for j in range(spec.relations)]

    per_relation = []
    for j in range(spec.relations):
        task_index = j - spec.background_relations
        pairing = spec.pairing_every and task_index >= 0 and task_index % spec.pairing_every == spec.pairing_every - 1
        if pairing:
            pairs = _pairing_triples(rng, spec.entities, spec.heads_per_relation // 2)
        else:
            offset = rng.standard_normal(spec.latent_dim) * 1.5
            heads = rng.choice(spec.entities, size=spec.heads_per_relation, replace=False)
            pairs = _translation_triples(pos, offset, heads)
        perm = rng.permutation(len(pairs))
        per_relation.append([(pairs[i][0], j, pairs[i][1]) for i in perm])

    n_train = n_task - spec.valid_relations - spec.test_relations
    background, tasks = [], {"train": {}, "valid": {}, "test": {}}
    for j, rows in enumerate(per_relation):
        named = [(ent_names[h], rel_names[r], ent_names[t]) for h, r, t in rows]
        k = j - spec.background_relations
        if k < 0:
            background.extend(named)
        elif k < n_train:
            tasks["train"][rel_names[j]] = named
        elif k < n_train + spec.valid_relations:
            tasks["valid"][rel_names[j]] = named
        else:
            tasks["test"][rel_names[j]] = named
    tasks = {s: v for s, v in tasks.items() if v}

    config = config or IngestionConfig()
    indexed = [tr for s in config.neighbor_splits if s in tasks for rows in tasks[s].values() for tr in rows]
    others = [tr for s, rels in tasks.items() if s not in config.neighbor_splits
              for rows in rels.values() for tr in rows]
    graph = build_graph(background, entities=ent_names, relations=rel_names, extra_triples=others,
                        indexed_extra=indexed, config=config)
    id_tasks = {
        split: {rel: list(dict.fromkeys((graph.ent2id[h], graph.rel2id[r], graph.ent2id[t]) for h, r, t in rows))
                for rel, rows in rels.items()}
        for split, rels in tasks.items()
    }
    return graph, id_tasks


def write_synthetic(directory, spec: SynthSpec | None = None) -> tuple:
    graph, tasks = generate(spec)
    save_graph(graph, tasks, directory)
    return graph, tasks
