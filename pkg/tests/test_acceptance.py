"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is
printed in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v``.  Set
``FSKGC_NELL_DIR`` to a NELL-One style directory to point the smoke run at
real data instead of the generated stand-in.
"""
import json
import math
import os
import time

import numpy as np
import pytest

from conftest import DESK, record, tiny_config
from helpers import pipeline_grad_check
from fskgc import autodiff as ad
from fskgc.autodiff import Tensor
from fskgc.cli import main as cli_main
from fskgc.config import TrainConfig
from fskgc.decoder import margin_loss
from fskgc.encoder import attend_aggregate, encoder_params, gate_values, register_encoder
from fskgc.gradcheck import grad_check
from fskgc.learner import (
    DiffusionSchedule, attention_pool, forward_diffuse, gaussian_kl, gaussian_score_eps, np_condition,
    register_attention_pool, register_np, register_stable_relation, reverse_sample, stable_pool,
)
from fskgc.metrics import EvalReport, gold_rank
from fskgc.params import ParamRegistry
from fskgc.synth import SynthSpec, generate
from fskgc.train import Trainer, ablate, evaluate_model, sweep_diffusion, train


# -- 1 ---------------------------------------------------------------------------
def test_criterion_01_gradient_integrity(small_synth):
    start = time.perf_counter()
    graph, tasks = small_synth
    cfg = tiny_config(precision=64, K=3, n_neg=1)
    rep, n_params = pipeline_grad_check(graph, tasks, cfg)
    # compact per-op sweep at the unit tolerance (the full 100-case suites live in test_autodiff)
    rng = np.random.default_rng(0)
    op_errors = {}
    ops = {"matmul": lambda a: a @ Tensor(np.linspace(-1, 1, 12).reshape(4, 3)), "exp": ad.exp, "tanh": ad.tanh,
           "sigmoid": ad.sigmoid, "silu": ad.silu, "softmax": lambda a: ad.softmax(a, -1),
           "l2_norm": lambda a: ad.l2_norm(a, -1), "square": ad.square, "mean": lambda a: a.mean(axis=0)}
    for name, op in ops.items():
        worst = 0.0
        for _ in range(20):
            x = Tensor(rng.standard_normal((3, 4)))
            worst = max(worst, grad_check(lambda: (op(x) * 1.3).sum(), [x], tol=1e-6).max_rel_error)
        op_errors[name] = worst
    elapsed = time.perf_counter() - start
    ok = rep.max_rel_error <= 1e-4 and max(op_errors.values()) <= 1e-6 and elapsed < 120
    record(1, "end-to-end gradient check", ok,
           f"pipeline max rel err {rep.max_rel_error:.2e} over {n_params} params, worst op "
           f"{max(op_errors.values()):.2e}, {elapsed:.0f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------------
def test_criterion_02_vp_sde_marginals():
    assert math.exp(-0.5 * (0.1 * 1 + 0.5 * (20 - 0.1) * 1)) == pytest.approx(math.exp(-5.025), rel=1e-15)
    n, x0 = 100_000, 1.7
    sch = DiffusionSchedule("sde", 0.1, 20.0)
    rng = np.random.default_rng(0)
    lines, ok = [], True
    with ad.precision(np.float64):
        for t in (0.1, 0.5, 1.0):
            alpha = math.exp(-0.5 * (0.1 * t + 0.5 * 19.9 * t * t))  # closed form, independent of the engine
            x_t, _ = forward_diffuse(Tensor(np.full(n, x0)), t, sch, rng)
            var = 1 - alpha ** 2
            se_mean = math.sqrt(var / n)
            se_var = var * math.sqrt(2 / (n - 1))
            dm = abs(x_t.data.mean() - alpha * x0) / se_mean
            dv = abs(x_t.data.var(ddof=1) - var) / se_var
            ok &= dm <= 3 and dv <= 3
            lines.append(f"t={t}: mean {dm:.2f} SE, var {dv:.2f} SE")
    record(2, "VP-SDE marginal law", ok, "; ".join(lines))
    assert ok


# -- 3 ---------------------------------------------------------------------------
def test_criterion_03_analytic_score_sampling():
    m, s, n = 1.0, 0.5, 10_000
    sch = DiffusionSchedule("sde", steps=100)
    rng = np.random.default_rng(0)
    with ad.precision(np.float64):
        x = reverse_sample(ad.sample_gaussian((n, 1), rng), None, sch, gaussian_score_eps(m, s, sch), rng)
    dev = abs(x.data.mean() - m) / (s / math.sqrt(n))
    ok = dev <= 3
    record(3, "analytic-score reverse SDE sampling", ok,
           f"N(1, 0.5^2): sample mean {x.data.mean():.4f}, {dev:.2f} standard errors from m")
    assert ok


# -- 4 ---------------------------------------------------------------------------
def test_criterion_04_kl_correctness():
    rng = np.random.default_rng(0)
    worst = 0.0
    with ad.precision(np.float64):
        for _ in range(20):
            d = 3
            mq, mp = rng.standard_normal(d), rng.standard_normal(d)
            sq, sp = rng.uniform(0.5, 2, d), rng.uniform(0.5, 2, d)
            closed = gaussian_kl(mq, sq, mp, sp).item()
            x = mq + sq * rng.standard_normal((1_000_000, d))
            log_q = -np.log(sq) - 0.5 * ((x - mq) / sq) ** 2
            log_p = -np.log(sp) - 0.5 * ((x - mp) / sp) ** 2
            mc = float(np.mean(np.sum(log_q - log_p, axis=1)))
            worst = max(worst, abs(mc - closed) / closed)
        mus = rng.standard_normal((10_000, 2, 3)) * 3
        sds = rng.uniform(0.01, 5, (10_000, 2, 3))
        min_kl = min(gaussian_kl(m[0], s[0], m[1], s[1]).item() for m, s in zip(mus, sds))
        same = max(abs(gaussian_kl(m[0], s[0], m[0], s[0]).item()) for m, s in zip(mus[:1000], sds[:1000]))
    ok = worst <= 0.01 and min_kl >= 0 and same == 0.0
    record(4, "diagonal-Gaussian KL", ok,
           f"worst MC rel err {worst:.4%}, min KL {min_kl:.3g} over 1e4 pairs, identical pairs max {same}")
    assert ok


# -- 5 ---------------------------------------------------------------------------
def test_criterion_05_component_invariants():
    rng = np.random.default_rng(0)
    d = 6
    reg = ParamRegistry(np.float64)
    with ad.precision(np.float64):
        register_encoder(reg, d, rng)
        register_attention_pool(reg, d, d, rng)
        register_stable_relation(reg, d, d, rng)
        register_np(reg, d, 4, 4, 8, rng)
        enc = encoder_params(reg)
        worst_sum, gate_ok, sigma_ok = 0.0, True, True
        for _ in range(1000):
            m = int(rng.integers(1, 8))
            scale = rng.uniform(0.1, 10)
            alphas, _ = attend_aggregate(Tensor(rng.standard_normal(d) * scale),
                                         Tensor(rng.standard_normal((m, d)) * scale), enc)
            w_pool, _ = attention_pool(Tensor(rng.standard_normal((m, d)) * scale), reg)
            w_sr, _ = stable_pool(Tensor(rng.standard_normal((m, d)) * scale), reg)
            worst_sum = max(worst_sum, *(abs(w.data.sum() - 1) for w in (alphas, w_pool, w_sr)))
            # float64 rounds sigmoid(a) to exactly 1.0 once a > ~36.7, so gate inputs stay at embedding scale
            g = gate_values(Tensor(rng.standard_normal((4, d)) * min(scale, 3.0)), enc).data
            gate_ok &= bool(np.all((g > 0) & (g < 1)))
            ctx = np_condition(Tensor(rng.standard_normal((2 * m, d)) * scale), [1] * m + [0] * m, reg, rng)
            sigma_ok &= bool(np.all((ctx.sigma.data > 0.1) & (ctx.sigma.data < 1.0)))
        hinge = [margin_loss(Tensor(np.array([p])), Tensor(np.array([n])), 1.0).item()
                 for p, n in ((2.0, 0.5), (0.5, 0.5), (0.0, 0.2))]
        random_ok = all(margin_loss(Tensor(rng.standard_normal(5)), Tensor(rng.standard_normal((5, 3))),
                                    rng.uniform(0.1, 3)).item() >= 0 for _ in range(1000))
    ok = worst_sum <= 1e-6 and gate_ok and sigma_ok and hinge == [0.0, 1.0, 1.2] and random_ok
    record(5, "attention simplex, gate, sigma range, hinge examples", ok,
           f"max |sum-1| {worst_sum:.1e}, gate in (0,1): {gate_ok}, sigma in (0.1,1): {sigma_ok}, hinge {hinge}")
    assert ok


# -- 6 ---------------------------------------------------------------------------
def test_criterion_06_metric_oracle():
    rng = np.random.default_rng(0)
    exact, monotone = True, True
    for _ in range(100):
        scores = rng.integers(0, 8, size=(20, 50)).astype(float)
        golds = rng.integers(0, 50, size=20)
        ids = np.arange(50)
        engine = EvalReport.from_ranks([gold_rank(scores[q], ids, golds[q]) for q in range(20)])
        ref_ranks = []
        for q in range(20):
            order = sorted(range(50), key=lambda i: (-scores[q, i], i))
            ref_ranks.append(order.index(golds[q]) + 1)
        ref_mrr = sum(1.0 / r for r in ref_ranks) / 20
        ref_hits = {k: sum(r <= k for r in ref_ranks) / 20 for k in (1, 5, 10)}
        exact &= engine.mrr == pytest.approx(ref_mrr, abs=1e-15) and engine.hits_at == ref_hits
        monotone &= engine.hits_at[1] <= engine.hits_at[5] <= engine.hits_at[10]
    ok = exact and monotone
    record(6, "metric oracle on 100 random 20x50 score matrices", ok, f"exact: {exact}, monotone: {monotone}")
    assert ok


# -- 7, 8 --------------------------------------------------------------------------
@pytest.fixture(scope="module")
def desk():
    graph, tasks = generate(SynthSpec(entities=50, relations=8, seed=0))
    return graph, tasks, TrainConfig(**DESK, checkpoint="")


def _train_mrr(cfg, graph, tasks):
    start = time.perf_counter()
    trainer = train(cfg, graph, tasks)
    rep = evaluate_model(trainer.model, graph, tasks["train"], cfg, eval_seed=trainer.eval_seed)
    return rep, time.perf_counter() - start


def test_criterion_07_desk_scale_learning(desk):
    graph, tasks, cfg = desk
    full, t_full = _train_mrr(cfg, graph, tasks)
    no_sr, t_sr = _train_mrr(cfg.ablated("sr"), graph, tasks)
    ok = full.mrr >= 0.90 and t_full <= 600 and cfg.episodes_max <= 2000 and no_sr.mrr < full.mrr
    record(7, "desk-scale learning on the synthetic KG", ok,
           f"training-query MRR {full.mrr:.3f} in {t_full:.0f}s over {cfg.episodes_max} episodes; "
           f"w/o SR {no_sr.mrr:.3f}")
    assert ok


def test_criterion_08_diffusion_sweep_direction(desk):
    graph, tasks, cfg = desk
    table = sweep_diffusion(cfg, ["sde"], [1, 20], "train", graph, tasks)
    rows = {int(r.split(",")[1]): float(r.split(",")[2]) for r in table.splitlines()[1:]}
    ok = rows[20] >= rows[1]
    record(8, "diffusion steps sweep direction (sde)", ok, f"MRR steps=1 {rows[1]:.3f}, steps=20 {rows[20]:.3f}")
    assert ok


# -- 9 ---------------------------------------------------------------------------
def test_criterion_09_determinism_and_resume(tmp_path, synth):
    graph, tasks = synth
    cfg = tiny_config(dim=16, K=5, n_query=5, seed=11)
    a, b = Trainer(cfg, graph, tasks), Trainer(cfg, graph, tasks)
    a.run(100, validate=False)
    b.run(100, validate=False)
    la = np.array([r["L"] for r in a.history])
    lb = np.array([r["L"] for r in b.history])
    same_traj = bool(np.max(np.abs(la - lb)) <= 1e-12)
    half = Trainer(cfg, graph, tasks)
    half.run(50, validate=False)
    half.save(tmp_path / "half.ckpt")
    resumed = Trainer.resume(tmp_path / "half.ckpt", graph, tasks)
    resumed.run(50, validate=False)
    lr = np.array([r["L"] for r in resumed.history])
    bitwise = lr.tobytes() == la[50:].tobytes() and all(
        p.data.tobytes() == resumed.model.registry[n].data.tobytes() for n, p in a.model.registry)
    ok = same_traj and bitwise
    record(9, "determinism and bitwise resume", ok,
           f"max trajectory diff {np.max(np.abs(la - lb)):.1e}; 50+save+load+50 bitwise: {bitwise}")
    assert ok


# -- 10 --------------------------------------------------------------------------
STATEMENT = ("Benchmark-scale magnitudes (NELL-One MRR 0.534, FB15k237-One MRR 0.595, Wiki-One MRR 0.561) "
             "need full-dataset training and are not reproducible at desk scale; only the smoke run is checked.")


def _nell_layout(directory):
    """Write the synthetic KG in the NELL-One file layout."""
    graph, tasks = generate(SynthSpec(entities=60, relations=10, seed=5, valid_relations=2, test_relations=2))
    directory.mkdir(parents=True)
    name = {e: f"concept:thing:{e}" for e in graph.entities}
    rname = {r: f"concept:{r}" for r in graph.relations}
    task_rows = {tr for rels in tasks.values() for rows in rels.values() for tr in rows}
    with open(directory / "path_graph", "w") as fh:
        for h, r, t in sorted(graph.triples - task_rows):
            fh.write(f"{name[graph.entities[h]]}\t{rname[graph.relations[r]]}\t{name[graph.entities[t]]}\n")
    files = {"train": "train_tasks.json", "valid": "dev_tasks.json", "test": "test_tasks.json"}
    cands = {}
    for split, rels in tasks.items():
        payload = {}
        for rel, rows in rels.items():
            payload[rname[rel]] = [[name[graph.entities[h]], rname[rel], name[graph.entities[t]]] for h, _, t in rows]
            cands[rname[rel]] = sorted({name[graph.entities[t]] for _, _, t in rows} | set(list(name.values())[:30]))
        (directory / files[split]).write_text(json.dumps(payload))
    (directory / "ent2ids").write_text(json.dumps({name[e]: i for i, e in enumerate(graph.entities)}))
    (directory / "rel2candidates.json").write_text(json.dumps(cands))


def test_criterion_10_smoke_run_on_nell_format(tmp_path, capsys):
    data = os.environ.get("FSKGC_NELL_DIR")
    if data is None:
        data = tmp_path / "nell"
        _nell_layout(data)
    cand = os.path.join(data, "rel2candidates.json")
    conf = tmp_path / "smoke.conf"
    conf.write_text(f"data.dir = {data}\nmodel.dim = 32\nmodel.cond_dim = 16\nnp.latent_dim = 16\n"
                    f"np.hidden_dim = 32\nicdr.blocks = 2\ntrain.episodes = 200\ntrain.eval_every = 100\n"
                    f"eval.max_queries = 50\nout.checkpoint = {tmp_path / 'smoke.ckpt'}\n"
                    + (f"data.candidates = {cand}\n" if os.path.exists(cand) else ""))
    rc_train = cli_main(["train", "--config", str(conf)])
    rc_eval = cli_main(["eval", "--checkpoint", str(tmp_path / "smoke.ckpt"), "--split", "test",
                        "--out", str(tmp_path / "smoke.json")])
    report = json.loads((tmp_path / "smoke.json").read_text()) if rc_eval == 0 else {}
    ok = rc_train == 0 and rc_eval == 0 and report.get("queries", 0) > 0
    with capsys.disabled():
        print("\n" + STATEMENT)
    record(10, "200-episode smoke run on a NELL-One-format dataset", ok,
           f"train rc {rc_train}, eval rc {rc_eval}, test MRR {report.get('MRR', float('nan')):.3f} "
           f"on {report.get('queries', 0)} queries; benchmark magnitudes NOT reproduced (see statement)")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
