"""Knowledge-graph ingestion, neighbor index and few-shot episode sampling.

Layout follows the public one-shot/few-shot KG releases: a background
triple file (``head<TAB>relation<TAB>tail``) plus JSON task files mapping
each few-shot relation to its ``[h, r, t]`` triples.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class IngestionError(ValueError):
    pass


class InsufficientTriples(Exception):
    """Relation has fewer than K+1 triples; the caller should resample."""


class NegativeSamplingError(RuntimeError):
    pass


@dataclass
class IngestionConfig:
    max_neighbors: int = 50
    add_inverse: bool = False
    # task splits whose triples also feed the neighbor index
    neighbor_splits: tuple = ("train",)
    shuffle_neighbors: bool = False
    shuffle_seed: int = 0


@dataclass
class KnowledgeGraph:
    entities: list
    relations: list
    triples: frozenset
    neighbor_index: list
    max_neighbors: int = 50
    ent2id: dict = field(default_factory=dict)
    rel2id: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.ent2id:
            self.ent2id = {e: i for i, e in enumerate(self.entities)}
        if not self.rel2id:
            self.rel2id = {r: i for i, r in enumerate(self.relations)}
        self._tails = None

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def true_tails(self, head: int, relation: int) -> set:
        if self._tails is None:
            index: dict = {}
            for h, r, t in self.triples:
                index.setdefault((h, r), set()).add(t)
            self._tails = index
        return self._tails.get((head, relation), set())


# task table: split -> relation name -> list of (h, r, t) id triples
TaskTable = dict


def _read_triple_file(path: Path) -> list:
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise IngestionError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        rows.append(tuple(p.strip() for p in parts))
    if not rows:
        raise IngestionError(f"{path}: empty triple file")
    return rows


def _read_task_file(path: Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict) or not raw:
        raise IngestionError(f"{path}: empty or non-object task file")
    out = {}
    for rel, triples in raw.items():
        rows = []
        for i, tr in enumerate(triples):
            if len(tr) != 3:
                raise IngestionError(f"{path}: relation {rel!r} entry {i} has {len(tr)} fields, expected 3")
            rows.append(tuple(str(x) for x in tr))
        out[rel] = rows
    return out


def build_graph(background: Sequence, entities: Sequence = (), relations: Sequence = (),
                extra_triples: Sequence = (), indexed_extra: Sequence = (),
                config: IngestionConfig | None = None) -> KnowledgeGraph:
    """Build vocabularies (first-appearance order) and the neighbor index.

    ``background`` and ``indexed_extra`` triples feed the neighbor index;
    ``extra_triples`` only join the triple set (used to filter negatives).
    """
    config = config or IngestionConfig()
    ent2id = {e: i for i, e in enumerate(entities)}
    rel2id = {r: i for i, r in enumerate(relations)}

    def eid(name):
        if name not in ent2id:
            ent2id[name] = len(ent2id)
        return ent2id[name]

    def rid(name):
        if name not in rel2id:
            rel2id[name] = len(rel2id)
        return rel2id[name]

    indexed = []
    for h, r, t in background:
        indexed.append((eid(h), rid(r), eid(t)))
    for h, r, t in indexed_extra:
        indexed.append((eid(h), rid(r), eid(t)))
    others = [(eid(h), rid(r), eid(t)) for h, r, t in extra_triples]
    if config.add_inverse:
        names = list(rel2id)
        indexed.extend([(t, rid(names[r] + "_inv"), h) for h, r, t in indexed])

    index: list = [[] for _ in range(len(ent2id))]
    seen = set()
    for h, r, t in indexed:
        if (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        index[h].append((r, t))
    if config.shuffle_neighbors:
        rng = np.random.default_rng(config.shuffle_seed)
        for lst in index:
            rng.shuffle(lst)
    triples = frozenset(seen) | frozenset(others)
    return KnowledgeGraph(
        entities=list(ent2id), relations=list(rel2id), triples=triples,
        neighbor_index=index, max_neighbors=config.max_neighbors,
        ent2id=dict(ent2id), rel2id=dict(rel2id),
    )


def load_graph(triple_file, task_file, config: IngestionConfig | None = None,
               entity_vocab: Sequence = ()) -> tuple:
    """Load background triples and task splits.

    ``task_file`` is a single JSON path (treated as the ``train`` split) or a
    mapping ``split -> path``.  Entities of task triples must already appear
    in the background file or ``entity_vocab``.
    """
    config = config or IngestionConfig()
    background = _read_triple_file(Path(triple_file))
    if isinstance(task_file, (str, Path)):
        task_files = {"train": task_file}
    else:
        task_files = dict(task_file)
    raw_tasks = {split: _read_task_file(Path(p)) for split, p in task_files.items()}

    known = set(entity_vocab)
    for h, _, t in background:
        known.add(h)
        known.add(t)
    for split, rels in raw_tasks.items():
        missing = sorted({x for rows in rels.values() for h, _, t in rows for x in (h, t)} - known)
        if missing:
            shown = ", ".join(missing[:10])
            raise IngestionError(f"{task_files[split]}: unknown entities in task triples: {shown}"
                                 + (f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""))

    indexed_extra = [tr for split in config.neighbor_splits if split in raw_tasks
                     for rows in raw_tasks[split].values() for tr in rows]
    others = [tr for split, rels in raw_tasks.items() if split not in config.neighbor_splits
              for rows in rels.values() for tr in rows]
    # task relations get ids after background relations, in split order
    task_rel_names = []
    for rels in raw_tasks.values():
        for r in rels:
            task_rel_names.append(r)
    graph = build_graph(background, entities=entity_vocab, extra_triples=others,
                        indexed_extra=indexed_extra, config=config,
                        relations=_first_appearance([r for _, r, _ in background] + task_rel_names))
    tasks: TaskTable = {}
    for split, rels in raw_tasks.items():
        tasks[split] = {}
        for rel, rows in rels.items():
            ids, seen = [], set()
            for h, r, t in rows:
                key = (graph.ent2id[h], graph.rel2id[r], graph.ent2id[t])
                if key not in seen:
                    seen.add(key)
                    ids.append(key)
            tasks[split][rel] = ids
    return graph, tasks


def _first_appearance(names: Sequence) -> list:
    return list(dict.fromkeys(names))


def load_dataset(directory, config: IngestionConfig | None = None) -> tuple:
    """Load a dataset directory in the one-shot release layout.

    Recognized files: ``path_graph`` or ``background.tsv``; ``train_tasks.json``,
    ``dev_tasks.json``/``valid_tasks.json``, ``test_tasks.json``; optional
    ``ent2ids`` (JSON name -> id) seeding the entity vocabulary.
    """
    d = Path(directory)
    triple_file = next((d / n for n in ("path_graph", "background.tsv") if (d / n).exists()), None)
    if triple_file is None:
        raise IngestionError(f"{d}: no background triple file (path_graph or background.tsv)")
    splits = {}
    for split, names in (("train", ["train_tasks.json"]), ("valid", ["dev_tasks.json", "valid_tasks.json"]),
                         ("test", ["test_tasks.json"])):
        for n in names:
            if (d / n).exists():
                splits[split] = d / n
                break
    if "train" not in splits:
        raise IngestionError(f"{d}: missing train_tasks.json")
    vocab: list = []
    if (d / "ent2ids").exists():
        ent2ids = json.loads((d / "ent2ids").read_text(encoding="utf-8"))
        vocab = [name for name, _ in sorted(ent2ids.items(), key=lambda kv: kv[1])]
    return load_graph(triple_file, splits, config, entity_vocab=vocab)


def save_graph(graph: KnowledgeGraph, tasks: TaskTable, directory) -> None:
    """Write the background triples and task splits in the loadable layout."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    task_keys = {tr for rels in tasks.values() for rows in rels.values() for tr in rows}
    background = sorted(tr for tr in graph.triples if tr not in task_keys)
    with open(d / "background.tsv", "w", encoding="utf-8") as fh:
        for h, r, t in background:
            fh.write(f"{graph.entities[h]}\t{graph.relations[r]}\t{graph.entities[t]}\n")
    names = {"train": "train_tasks.json", "valid": "dev_tasks.json", "test": "test_tasks.json"}
    for split, rels in tasks.items():
        payload = {rel: [[graph.entities[h], graph.relations[r], graph.entities[t]] for h, r, t in rows]
                   for rel, rows in rels.items()}
        (d / names.get(split, f"{split}_tasks.json")).write_text(json.dumps(payload, indent=1), encoding="utf-8")
    ent2ids = {e: i for i, e in enumerate(graph.entities)}
    (d / "ent2ids").write_text(json.dumps(ent2ids), encoding="utf-8")


def neighbors(graph: KnowledgeGraph, entity: int, max_neighbors: int | None = None,
              exclude_relation: int | None = None) -> list:
    """Deterministic (relation, neighbor) list of ``entity``, keep-first truncation."""
    if not 0 <= entity < graph.num_entities:
        raise IndexError(f"entity id {entity} out of range [0, {graph.num_entities})")
    limit = graph.max_neighbors if max_neighbors is None else max_neighbors
    out = []
    for r, t in graph.neighbor_index[entity]:
        if r == exclude_relation:
            continue
        if len(out) >= limit:
            break
        out.append((r, t))
    return out


# -- episodes ------------------------------------------------------------
@dataclass
class Episode:
    relation: int
    support: list
    query_pos: list
    query_neg: list
    support_neg: list
    np_labels: list
    name: str = ""

    @property
    def K(self) -> int:
        return len(self.support)


def _corrupt_tail(graph: KnowledgeGraph, head: int, relation: int, rng: np.random.Generator,
                  max_tries: int = 1000) -> int:
    n = graph.num_entities
    for _ in range(max_tries):
        t = int(rng.integers(n))
        if (head, relation, t) not in graph.triples:
            return t
    raise NegativeSamplingError(f"no valid negative tail for head {head}, relation {relation} "
                                f"after {max_tries} draws")


def sample_episode(tasks: Mapping, graph: KnowledgeGraph, K: int, n_query: int, n_neg: int,
                   rng: np.random.Generator, relation: str | None = None) -> Episode:
    """Sample one few-shot task.  ``tasks`` maps relation name -> triples."""
    if relation is None:
        names = sorted(tasks)
        relation = names[int(rng.integers(len(names)))]
    rows = tasks[relation]
    if len(rows) < K + 1:
        raise InsufficientTriples(f"relation {relation!r} has {len(rows)} triples, need at least {K + 1}")
    order = rng.permutation(len(rows))
    support = [rows[i] for i in order[:K]]
    query = [rows[i] for i in order[K:K + n_query]]
    rid = support[0][1]
    support_neg = [_corrupt_tail(graph, h, rid, rng) for h, _, _ in support]
    query_neg = [[_corrupt_tail(graph, h, rid, rng) for _ in range(n_neg)] for h, _, _ in query]
    return Episode(
        relation=rid,
        support=[(h, t) for h, _, t in support],
        query_pos=[(h, t) for h, _, t in query],
        query_neg=query_neg,
        support_neg=support_neg,
        np_labels=[1] * K + [0] * K,
        name=relation,
    )


def sample_valid_episode(tasks: Mapping, graph: KnowledgeGraph, K: int, n_query: int, n_neg: int,
                         rng: np.random.Generator, max_tries: int = 100) -> Episode:
    """Resample relations until one has enough triples."""
    eligible = [r for r in sorted(tasks) if len(tasks[r]) >= K + 1]
    if not eligible:
        raise InsufficientTriples(f"no task relation has at least {K + 1} triples")
    relation = eligible[int(rng.integers(len(eligible)))]
    return sample_episode(tasks, graph, K, n_query, n_neg, rng, relation=relation)


# -- evaluation candidates -------------------------------------------------
@dataclass
class CandidateSet:
    candidates: dict  # (relation-id, head-id) -> list of tail ids
    filtered_truths: dict  # (relation-id, head-id) -> set of tail ids


def load_candidates(path, graph: KnowledgeGraph) -> dict:
    """Candidate file: JSON map ``relation -> [tails]`` or ``"relation\\thead" -> [tails]``.

    Returns a map keyed by ``(relation-id, head-id or None)``.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    out = {}
    for key, tails in raw.items():
        rel, _, head = key.partition("\t")
        if rel not in graph.rel2id:
            continue
        hid = graph.ent2id[head] if head else None
        out[(graph.rel2id[rel], hid)] = [graph.ent2id[t] for t in tails if t in graph.ent2id]
    return out


def build_candidates(graph: KnowledgeGraph, queries: Sequence, candidate_map: dict | None = None) -> CandidateSet:
    """Candidates per ``(relation, head)``; filtered truths are the other known tails."""
    cands, filt = {}, {}
    for h, r, t in queries:
        key = (r, h)
        if candidate_map is None:
            lst = list(range(graph.num_entities))
        else:
            lst = candidate_map.get((r, h), candidate_map.get((r, None)))
            if lst is None:
                lst = list(range(graph.num_entities))
        cands[key] = lst
        truths = graph.true_tails(h, r)
        in_cands = set(lst)
        filt[key] = {x for x in truths if x in in_cands}
    return CandidateSet(cands, filt)
