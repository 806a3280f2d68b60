"""Manifold conjugate decoder: sphere-threshold translation scoring and losses."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .learner import mlp, register_mlp
from .params import ParamRegistry


def register_decoder(registry: ParamRegistry, dim: int, cond_dim: int, hidden: int, rng) -> None:
    # residual branch starts at zero: the offset only grows where it helps ranking
    registry.add("dec.fc.W", (dim, dim), rng, init="zeros")
    registry.add("dec.fc.b", (dim,), rng)
    register_mlp(registry, "dec.thresh", (cond_dim, hidden, 1), rng)


def conjugate_relation(r_s, z, registry: ParamRegistry) -> Tensor:
    """r_conj = r_s + FC(z)."""
    r_s, z = ad.as_tensor(r_s), ad.as_tensor(z)
    if r_s.shape != z.shape:
        raise ad.ShapeError(f"conjugate_relation: shapes {r_s.shape} and {z.shape} differ")
    return r_s + (z @ registry["dec.fc.W"] + registry["dec.fc.b"])


def threshold(c, registry: ParamRegistry) -> Tensor:
    """Scalar boundary D_z from the condition vector."""
    return mlp(registry, "dec.thresh", ad.as_tensor(c))[0]


def score(h, r_conj, t, d_z=None) -> Tensor:
    """Ranking score, higher is more plausible.

    With a threshold: ``-| ||h + r - t||^2 - D_z^2 |``, which is zero exactly on
    the sphere of radius ``|D_z|``.  Without one (plain translation):
    ``-||h + r - t||``.  Broadcasts over leading axes of ``h``/``t``.
    """
    h, r_conj, t = ad.as_tensor(h), ad.as_tensor(r_conj), ad.as_tensor(t)
    diff = h + r_conj - t
    if d_z is None:
        return -ad.l2_norm(diff, axis=-1)
    dist2 = ad.square(diff).sum(axis=-1)
    return -ad.absolute(dist2 - ad.square(d_z))


def margin_loss(pos_scores, neg_scores, margin: float = 1.0) -> Tensor:
    """Sum of max(margin + neg - pos, 0).

    ``pos_scores`` is ``(Q,)``; ``neg_scores`` is ``(Q,)`` or ``(Q, n_neg)``,
    each row paired with its positive.
    """
    pos, neg = ad.as_tensor(pos_scores), ad.as_tensor(neg_scores)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("margin_loss: empty positive/negative pairing")
    if neg.ndim == pos.ndim + 1:
        pos = ad.expand_dims(pos, -1)
    elif neg.shape != pos.shape:
        raise ad.ShapeError(f"margin_loss: negatives {neg.shape} not paired with positives {pos.shape}")
    return ad.relu(margin + neg - pos).sum()


def total_loss(l_tri, l_rel) -> Tensor:
    return ad.as_tensor(l_tri) + ad.as_tensor(l_rel)


def scores_numpy(h: np.ndarray, r_conj: np.ndarray, t: np.ndarray, d_z: float | None) -> np.ndarray:
    """Gradient-free batch scoring used for ranking."""
    diff = h + r_conj - t
    if d_z is None:
        return -np.sqrt(np.sum(diff * diff, axis=-1))
    return -np.abs(np.sum(diff * diff, axis=-1) - d_z * d_z)
