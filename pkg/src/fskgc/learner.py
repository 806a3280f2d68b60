"""Conjugate relation learner: conditional diffusion offset and stable relation.

The diffusion part uses a variance-preserving SDE with a linear noise rate
``beta(t) = beta_min + t (beta_max - beta_min)`` on ``t in (0, 1]``.  The
signal coefficient is ``alpha(t) = exp(-0.5 * int_0^t beta)`` and the
marginal is ``x_t = alpha(t) x_0 + sqrt(1 - alpha(t)^2) eps``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamRegistry

KINDS = ("vp_sde", "ddpm", "ddim")
_KIND_ALIASES = {"sde": "vp_sde", "vp_sde": "vp_sde", "vpsde": "vp_sde", "ddpm": "ddpm", "ddim": "ddim"}


def normalize_kind(kind: str) -> str:
    try:
        return _KIND_ALIASES[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown diffusion kind {kind!r}; expected one of sde, ddpm, ddim") from None


class SamplerError(FloatingPointError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    kind: str = "vp_sde"
    beta_min: float = 0.1
    beta_max: float = 20.0
    steps: int = 20
    t_eps: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        if not self.beta_min < self.beta_max:
            raise ValueError(f"beta_min ({self.beta_min}) must be below beta_max ({self.beta_max})")
        if self.steps < 1:
            raise ValueError(f"diffusion steps must be >= 1, got {self.steps}")

    def beta(self, t: float) -> float:
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def integral_beta(self, t: float) -> float:
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def alpha(self, t: float) -> float:
        return math.exp(-0.5 * self.integral_beta(t))

    def sigma(self, t: float) -> float:
        # -expm1 keeps precision for t -> 0
        return math.sqrt(-math.expm1(-self.integral_beta(t)))

    def grid(self) -> np.ndarray:
        """Reverse-time grid from 1 down to ``t_eps``, ``steps + 1`` points."""
        return np.linspace(1.0, self.t_eps, self.steps + 1)


def forward_diffuse(x0, t: float, schedule: DiffusionSchedule, rng: np.random.Generator | None = None,
                    eps: Tensor | None = None) -> tuple:
    """Perturb ``x0`` to time ``t``; returns ``(x_t, eps)``."""
    if not 0.0 < t <= 1.0:
        raise ValueError(f"diffusion time must lie in (0, 1], got {t}")
    x0 = ad.as_tensor(x0)
    if eps is None:
        eps = ad.sample_gaussian(x0.shape, rng)
    return x0 * schedule.alpha(t) + eps * schedule.sigma(t), eps


def sinusoidal_features(t: float, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = 1000.0 * t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)]).astype(ad.get_default_dtype())


# -- networks --------------------------------------------------------------
def register_mlp(registry: ParamRegistry, prefix: str, sizes, rng) -> None:
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        registry.add(f"{prefix}.W{i}", (a, b), rng)
        registry.add(f"{prefix}.b{i}", (b,), rng)


def mlp(registry: ParamRegistry, prefix: str, x, layers: int = 2, act=ad.tanh) -> Tensor:
    for i in range(1, layers + 1):
        x = x @ registry[f"{prefix}.W{i}"] + registry[f"{prefix}.b{i}"]
        if i < layers:
            x = act(x)
    return x


@dataclass
class ScoreNet:
    """Residual MLP noise predictor eps(x_t, t, c) for rows of x_t."""

    registry: ParamRegistry
    blocks: int = 4
    time_dim: int = 32
    prefix: str = "icdr"

    @staticmethod
    def register(registry: ParamRegistry, dim: int, cond_dim: int, hidden: int, blocks: int,
                 time_dim: int, rng, prefix: str = "icdr") -> "ScoreNet":
        register_mlp(registry, f"{prefix}.time", (time_dim, hidden, hidden), rng)
        registry.add(f"{prefix}.cond.W", (cond_dim, hidden), rng)
        registry.add(f"{prefix}.cond.b", (hidden,), rng)
        registry.add(f"{prefix}.in.W", (dim, hidden), rng)
        registry.add(f"{prefix}.in.b", (hidden,), rng)
        for i in range(blocks):
            registry.add(f"{prefix}.block{i}.W1", (hidden, hidden), rng)
            registry.add(f"{prefix}.block{i}.b1", (hidden,), rng)
            registry.add(f"{prefix}.block{i}.W2", (hidden, hidden), rng)
            registry.add(f"{prefix}.block{i}.b2", (hidden,), rng)
        registry.add(f"{prefix}.out.W", (hidden, dim), rng)
        registry.add(f"{prefix}.out.b", (dim,), rng)
        return ScoreNet(registry, blocks, time_dim, prefix)

    def __call__(self, x_t, t: float, c) -> Tensor:
        r, p = self.registry, self.prefix
        temb = mlp(r, f"{p}.time", Tensor(sinusoidal_features(t, self.time_dim)), act=ad.silu)
        cemb = ad.as_tensor(c) @ r[f"{p}.cond.W"] + r[f"{p}.cond.b"]
        cond = temb + cemb
        hid = ad.as_tensor(x_t) @ r[f"{p}.in.W"] + r[f"{p}.in.b"]
        for i in range(self.blocks):
            u = ad.silu((hid + cond) @ r[f"{p}.block{i}.W1"] + r[f"{p}.block{i}.b1"])
            hid = hid + u @ r[f"{p}.block{i}.W2"] + r[f"{p}.block{i}.b2"]
        return hid @ r[f"{p}.out.W"] + r[f"{p}.out.b"]


def _finite(x: Tensor, kind: str, step: int) -> None:
    if not np.all(np.isfinite(x.data)):
        raise SamplerError(f"{kind} sampler produced a non-finite state at step {step}")


def reverse_sample(x_T, c, schedule: DiffusionSchedule, score_net: Callable, rng: np.random.Generator | None = None,
                   kind: str | None = None, clip: float | None = None) -> Tensor:
    """Integrate the reverse process from ``t=1`` to ``t_eps`` in ``schedule.steps`` steps.

    ``score_net(x, t, c)`` predicts the noise; the score is ``-eps / sigma(t)``.
    ``vp_sde`` is Euler-Maruyama on the reverse SDE, ``ddpm`` ancestral
    sampling on the discretized chain, ``ddim`` the deterministic (eta=0)
    update.  No noise is injected on the final step.  ``clip`` bounds the
    denoised estimate at every step (the noise estimate is re-derived from
    the clipped value) and the returned state; ``None`` disables it.
    """
    kind = normalize_kind(kind or schedule.kind)
    x = ad.as_tensor(x_T)
    grid = schedule.grid()
    n = schedule.steps
    for i in range(n):
        t, t_next = float(grid[i]), float(grid[i + 1])
        eps_hat = score_net(x, t, c)
        last = i == n - 1
        if kind == "vp_sde":
            dt = t - t_next
            beta = schedule.beta(t)
            if clip is not None:
                a, s = schedule.alpha(t), schedule.sigma(t)
                x0_pred = ad.clip((x - eps_hat * s) * (1.0 / a), -clip, clip)
                eps_hat = (x - x0_pred * a) * (1.0 / s)
            score = eps_hat * (-1.0 / schedule.sigma(t))
            x = x + (x * (0.5 * beta) + score * beta) * dt
            if not last:
                x = x + ad.sample_gaussian(x.shape, rng) * math.sqrt(beta * dt)
        else:
            ab, ab_next = schedule.alpha(t) ** 2, schedule.alpha(t_next) ** 2
            if kind == "ddpm":
                a_step = ab / ab_next
                if clip is None:
                    x = (x - eps_hat * ((1.0 - a_step) / math.sqrt(1.0 - ab))) * (1.0 / math.sqrt(a_step))
                else:
                    # posterior mean written through the clipped x0 estimate
                    x0_pred = ad.clip((x - eps_hat * math.sqrt(1.0 - ab)) * (1.0 / math.sqrt(ab)), -clip, clip)
                    coef0 = math.sqrt(ab_next) * (1.0 - a_step) / (1.0 - ab)
                    coeft = math.sqrt(a_step) * (1.0 - ab_next) / (1.0 - ab)
                    x = x0_pred * coef0 + x * coeft
                if not last:
                    var = (1.0 - ab_next) / (1.0 - ab) * (1.0 - a_step)
                    x = x + ad.sample_gaussian(x.shape, rng) * math.sqrt(var)
            else:
                x0_pred = (x - eps_hat * math.sqrt(1.0 - ab)) * (1.0 / math.sqrt(ab))
                if clip is not None:
                    # re-derive the noise from the clipped estimate so x stays bounded
                    x0_pred = ad.clip(x0_pred, -clip, clip)
                    eps_hat = (x - x0_pred * math.sqrt(ab)) * (1.0 / math.sqrt(1.0 - ab))
                x = x0_pred * math.sqrt(ab_next) + eps_hat * math.sqrt(1.0 - ab_next)
        _finite(x, kind, i)
    if clip is not None:
        x = ad.clip(x, -clip, clip)
    return x


def gaussian_score_eps(mean: float, std: float, schedule: DiffusionSchedule) -> Callable:
    """Exact noise prediction for data ``N(mean, std^2 I)``: ``-sigma(t) * score``."""

    def eps_fn(x, t, c=None):
        a, s = schedule.alpha(t), schedule.sigma(t)
        var = a * a * std * std + s * s
        return (ad.as_tensor(x) - a * mean) * (s / var)

    return eps_fn


# -- attention pool ----------------------------------------------------------
def register_attention_pool(registry: ParamRegistry, dim: int, attn_dim: int, rng, prefix: str = "icdr.pool") -> None:
    registry.add(f"{prefix}.q", (attn_dim,), rng, init="xavier")
    registry.add(f"{prefix}.Wk", (dim, attn_dim), rng)
    registry.add(f"{prefix}.Wv", (dim, dim), rng)


def attention_pool(x0_hat, registry: ParamRegistry, prefix: str = "icdr.pool") -> tuple:
    """Learned-query attention over rows; returns ``(weights, z)``."""
    x = ad.as_tensor(x0_hat)
    q = registry[f"{prefix}.q"]
    keys = x @ registry[f"{prefix}.Wk"]
    weights = ad.softmax((keys @ q) * (1.0 / math.sqrt(q.shape[0])), axis=0)
    values = x @ registry[f"{prefix}.Wv"]
    z = (ad.expand_dims(weights, -1) * values).sum(axis=0)
    return weights, z


# -- weak features and neural-process condition ---------------------------------
def weak_features(heads, tails) -> Tensor:
    """Rows ``t_i - h_i`` for K support pairs."""
    heads, tails = ad.as_tensor(heads), ad.as_tensor(tails)
    if heads.ndim != 2 or heads.shape[0] == 0:
        raise ValueError("weak_features needs K >= 1 support pairs")
    if heads.shape != tails.shape:
        raise ad.ShapeError(f"weak_features: shapes {heads.shape} and {tails.shape} differ")
    return tails - heads


@dataclass
class NPContext:
    s: Tensor
    r: Tensor
    mu: Tensor
    sigma: Tensor
    c: Tensor


def register_np(registry: ParamRegistry, dim: int, latent_dim: int, cond_dim: int, hidden: int, rng) -> None:
    register_mlp(registry, "np.enc", (dim + 1, hidden, latent_dim), rng)
    register_mlp(registry, "np.mu", (latent_dim, hidden, cond_dim), rng)
    register_mlp(registry, "np.sigma", (latent_dim, hidden, cond_dim), rng)


def np_condition(features, labels, registry: ParamRegistry, rng: np.random.Generator | None = None,
                 deterministic: bool = False, eps: Tensor | None = None) -> NPContext:
    """Neural-process latent condition from labeled weak features.

    ``features`` stacks context rows (positives then negatives); ``labels``
    holds one 0/1 label per row.
    """
    features = ad.as_tensor(features)
    labels = np.asarray(labels, dtype=features.dtype)
    if labels.shape != (features.shape[0],):
        raise ValueError(f"np_condition: {len(labels)} labels for {features.shape[0]} context rows")
    x = ad.concat([features, Tensor(labels[:, None])], axis=-1)
    s = mlp(registry, "np.enc", x)
    r = s.mean(axis=0)
    mu = mlp(registry, "np.mu", r)
    sigma = 0.1 + 0.9 * ad.sigmoid(mlp(registry, "np.sigma", r))
    if deterministic:
        c = mu
    else:
        if eps is None:
            eps = ad.sample_gaussian(mu.shape, rng)
        c = mu + sigma * eps
    return NPContext(s, r, mu, sigma, c)


def gaussian_kl(mu_q, sigma_q, mu_p, sigma_p) -> Tensor:
    """KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)) summed over diagonal dims."""
    mu_q, sigma_q, mu_p, sigma_p = map(ad.as_tensor, (mu_q, sigma_q, mu_p, sigma_p))
    assert np.all(sigma_q.data > 0) and np.all(sigma_p.data > 0), "standard deviations must be positive"
    var_q, var_p = ad.square(sigma_q), ad.square(sigma_p)
    terms = ad.log(sigma_p) - ad.log(sigma_q) + (var_q + ad.square(mu_q - mu_p)) / (2.0 * var_p) - 0.5
    return terms.sum()


def icdr_loss(x0, schedule: DiffusionSchedule, score_net: Callable, c, posterior: NPContext | None,
              prior: NPContext | None, rng: np.random.Generator | None = None, t: float | None = None,
              eps: Tensor | None = None) -> tuple:
    """Denoising MSE at one sampled time plus KL(posterior || prior).

    Returns ``(L_rel, mse_term, kl_term)``.  With no posterior the KL term is 0.
    """
    if t is None:
        t = float(rng.uniform(schedule.t_eps, 1.0))
    x_t, eps = forward_diffuse(x0, t, schedule, rng, eps=eps)
    eps_hat = score_net(x_t, t, c)
    mse_term = ad.mse(eps_hat, eps)
    if posterior is None or prior is None:
        kl_term = ad.zeros(())
    else:
        kl_term = gaussian_kl(posterior.mu, posterior.sigma, prior.mu, prior.sigma)
    return mse_term + kl_term, mse_term, kl_term


# -- stable relation ----------------------------------------------------------
def register_stable_relation(registry: ParamRegistry, dim: int, hidden: int, rng) -> None:
    for direction in ("fw", "bw"):
        registry.add(f"sr.lstm.{direction}.Wx", (2 * dim, 4 * hidden), rng)
        registry.add(f"sr.lstm.{direction}.Wh", (hidden, 4 * hidden), rng)
        registry.add(f"sr.lstm.{direction}.b", (4 * hidden,), rng)
    registry.add("sr.proj.W", (2 * hidden, dim), rng)
    registry.add("sr.proj.b", (dim,), rng)
    registry.add("sr.att.W", (dim,), rng, init="xavier")
    registry.add("sr.att.b", (1,), rng)


def _lstm(xs: list, registry: ParamRegistry, direction: str) -> list:
    Wx = registry[f"sr.lstm.{direction}.Wx"]
    Wh = registry[f"sr.lstm.{direction}.Wh"]
    b = registry[f"sr.lstm.{direction}.b"]
    H = Wh.shape[0]
    h = ad.zeros((H,))
    c = ad.zeros((H,))
    out = []
    for x in xs:
        gates = x @ Wx + h @ Wh + b
        i = ad.sigmoid(gates[0:H])
        f = ad.sigmoid(gates[H:2 * H])
        g = ad.tanh(gates[2 * H:3 * H])
        o = ad.sigmoid(gates[3 * H:4 * H])
        c = f * c + i * g
        h = o * ad.tanh(c)
        out.append(h)
    return out


def bilstm_states(heads, tails, registry: ParamRegistry) -> Tensor:
    """Projected BiLSTM hidden states ``(K, d)`` over the ``[h_i; t_i]`` sequence."""
    seq = ad.concat([ad.as_tensor(heads), ad.as_tensor(tails)], axis=-1)
    xs = [seq[i] for i in range(seq.shape[0])]
    fw = _lstm(xs, registry, "fw")
    bw = _lstm(xs[::-1], registry, "bw")[::-1]
    states = ad.stack([ad.concat([a, b]) for a, b in zip(fw, bw)], axis=0)
    return states @ registry["sr.proj.W"] + registry["sr.proj.b"]


def stable_pool(states, registry: ParamRegistry) -> tuple:
    """Softmax over rows of tanh(W_s r_i + b_s); returns ``(weights, r_s)``."""
    states = ad.as_tensor(states)
    logits = ad.tanh(states @ registry["sr.att.W"] + registry["sr.att.b"])
    weights = ad.softmax(logits, axis=0)
    return weights, (ad.expand_dims(weights, -1) * states).sum(axis=0)


def stable_relation(heads, tails, registry: ParamRegistry) -> Tensor:
    if ad.as_tensor(heads).shape[0] == 0:
        raise ValueError("stable_relation needs K >= 1 support pairs")
    return stable_pool(bilstm_states(heads, tails, registry), registry)[1]
