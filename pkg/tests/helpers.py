import numpy as np

from fskgc import autodiff as ad
from fskgc.gradcheck import grad_check
from fskgc.kg import sample_episode
from fskgc.model import ConjugateModel


def pipeline_grad_check(graph, tasks, cfg, t=0.4, seed=0):
    """grad_check of the full episode loss w.r.t. every parameter.

    The episode, the diffusion time and every Gaussian draw are pinned: each
    evaluation reseeds the same generator, so finite differences see one
    fixed function.
    """
    with ad.precision(np.float64):
        model = ConjugateModel(cfg, graph.num_entities, graph.num_relations, np.random.default_rng(seed))
        rel = sorted(tasks["train"])[0]
        ep = sample_episode(tasks["train"], graph, cfg.K, 1, cfg.n_neg, np.random.default_rng(seed), rel)
        params = [p for _, p in model.registry]

        def f():
            return model.episode_loss(graph, ep, np.random.default_rng(seed + 1), t=t).total

        return grad_check(f, params, tol=1e-4), model.registry.num_parameters()
