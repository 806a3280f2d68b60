"""Training configuration and the flat ``key = value`` config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

ABLATIONS = ("gate", "condition", "icdr", "sr", "macone")


class ConfigError(ValueError):
    pass


def _opt(default, key: str, doc: str):
    return field(default=default, metadata={"key": key, "doc": doc})


@dataclass
class TrainConfig:
    # data
    dataset: str = _opt("", "data.dir", "dataset directory (background triples + task JSON files)")
    candidates: str = _opt("", "data.candidates", "optional candidate file for evaluation")
    max_neighbors: int = _opt(50, "data.max_neighbors", "neighbor truncation per entity")
    add_inverse: bool = _opt(False, "data.add_inverse", "add inverse background triples")
    # dimensions
    dim: int = _opt(100, "model.dim", "entity/relation embedding size d")
    cond_dim: int = _opt(50, "model.cond_dim", "implicit condition size d_c")
    latent_dim: int = _opt(50, "np.latent_dim", "neural-process latent size d_s")
    np_hidden: int = _opt(100, "np.hidden_dim", "hidden width of the neural-process MLPs")
    sr_hidden: int = _opt(0, "sr.hidden_dim", "BiLSTM hidden size (0 = d)")
    score_hidden: int = _opt(0, "icdr.hidden_dim", "denoiser hidden width (0 = 4d)")
    score_blocks: int = _opt(4, "icdr.blocks", "residual blocks in the denoiser")
    time_dim: int = _opt(32, "icdr.time_dim", "sinusoidal time feature size")
    attn_dim: int = _opt(0, "icdr.attn_dim", "attention-pool key size (0 = d)")
    thresh_hidden: int = _opt(0, "dec.thresh_hidden", "threshold MLP hidden width (0 = d_c)")
    encoder_layers: int = _opt(1, "encoder.layers", "stacked aggregation layers")
    leaky_slope: float = _opt(0.2, "encoder.leaky_slope", "LeakyReLU slope of the attention logits")
    margin: float = _opt(1.0, "dec.margin", "ranking margin gamma")
    # diffusion
    diffusion_kind: str = _opt("sde", "diffusion.kind", "sampler: sde, ddpm or ddim")
    diffusion_steps: int = _opt(20, "diffusion.steps", "reverse steps N")
    beta_min: float = _opt(0.1, "diffusion.beta_min", "VP-SDE beta at t=0")
    beta_max: float = _opt(20.0, "diffusion.beta_max", "VP-SDE beta at t=1")
    t_eps: float = _opt(1e-3, "diffusion.t_eps", "smallest diffusion time")
    diffusion_clip: float = _opt(3.0, "diffusion.clip", "bound on denoised estimates in data-RMS units (0 = off)")
    eval_sampler: str = _opt("ddim", "eval.sampler", "reverse sampler at evaluation ('train' = diffusion.kind)")
    stochastic_eval: bool = _opt(False, "eval.stochastic", "sample c and reverse noise at evaluation")
    # episodes
    K: int = _opt(5, "train.K", "support size (shots)")
    n_query: int = _opt(10, "train.n_query", "query triples per training episode")
    n_neg: int = _opt(1, "train.n_neg", "negatives per positive query")
    # optimization
    lr: float = _opt(1e-3, "train.lr", "Adam learning rate")
    beta1: float = _opt(0.9, "train.beta1", "Adam beta1")
    beta2: float = _opt(0.999, "train.beta2", "Adam beta2")
    adam_eps: float = _opt(1e-8, "train.adam_eps", "Adam epsilon")
    clip_norm: float = _opt(0.0, "train.clip_norm", "global gradient-norm clip (0 = off)")
    lr_schedule: str = _opt("constant", "train.lr_schedule", "constant, or cosine decay to lr_floor * lr")
    lr_floor: float = _opt(0.05, "train.lr_floor", "final fraction of the learning rate under cosine decay")
    episodes_max: int = _opt(10000, "train.episodes", "training episodes")
    eval_every: int = _opt(0, "train.eval_every", "validation/checkpoint interval (0 = only at end)")
    eval_max_queries: int = _opt(0, "eval.max_queries", "cap on ranked queries per relation (0 = all)")
    seed: int = _opt(0, "train.seed", "master seed")
    precision: int = _opt(32, "train.precision", "float width: 32 or 64")
    # ablations (True = component enabled)
    use_gate: bool = _opt(True, "ablate.gate", "gated fusion in the encoder")
    use_condition: bool = _opt(True, "ablate.condition", "neural-process implicit condition")
    use_icdr: bool = _opt(True, "ablate.icdr", "diffusion uncertainty offset")
    use_sr: bool = _opt(True, "ablate.sr", "BiLSTM stable relation")
    use_macone: bool = _opt(True, "ablate.macone", "sphere-threshold manifold scoring")
    # outputs
    checkpoint: str = _opt("checkpoints/model.ckpt", "out.checkpoint", "checkpoint path")
    metrics_log: str = _opt("", "out.metrics", "per-episode JSON-lines log (empty = none)")

    def validate(self) -> "TrainConfig":
        if self.K < 1:
            raise ConfigError(f"train.K must be >= 1, got {self.K}")
        if self.episodes_max < 1:
            raise ConfigError(f"train.episodes must be >= 1, got {self.episodes_max}")
        if self.n_query < 1 or self.n_neg < 1:
            raise ConfigError("train.n_query and train.n_neg must be >= 1")
        if self.diffusion_steps < 1:
            raise ConfigError(f"diffusion.steps must be >= 1, got {self.diffusion_steps}")
        if self.precision not in (32, 64):
            raise ConfigError(f"train.precision must be 32 or 64, got {self.precision}")
        if self.margin <= 0:
            raise ConfigError("dec.margin must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown train.lr_schedule {self.lr_schedule!r}")
        if self.diffusion_kind.lower() not in ("sde", "vp_sde", "ddpm", "ddim"):
            raise ConfigError(f"unknown diffusion.kind {self.diffusion_kind!r}")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def ablated(self, variant: str) -> "TrainConfig":
        if variant not in ABLATIONS:
            raise ConfigError(f"unknown ablation {variant!r}; valid: {', '.join(ABLATIONS)}")
        return self.replace(**{f"use_{variant}": False})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


KEYS = {f.metadata["key"]: f for f in dataclasses.fields(TrainConfig)}


def _coerce(f: dataclasses.Field, raw: str):
    kind = type(f.default)
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{f.metadata['key']}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{f.metadata['key']}: expected {kind.__name__}, got {raw!r}") from None


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        f = KEYS[key]
        values[f.name] = _coerce(f, raw.strip())
    return (base or TrainConfig()).replace(**values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"))
    # relative dataset/checkpoint paths resolve against the config's directory
    for name in ("dataset", "candidates", "checkpoint", "metrics_log"):
        value = getattr(cfg, name)
        if value and not Path(value).is_absolute():
            cfg = cfg.replace(**{name: str(path.parent / value)})
    return cfg


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for key, f in KEYS.items():
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"# {f.metadata['doc']}\n{key} = {value}")
    return "\n".join(lines) + "\n"
