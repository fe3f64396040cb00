"""Sampling estimators for inner products against an implicit basis.

The central quantity is ``v^T H b`` for a basis vector ``v`` (accessible by
length-square sampling and entry queries) and an explicit projection ``b``.
Drawing ``j ~ v(j)^2 / ||v||^2`` and ``l ~ b(l)^2 / ||b||^2`` gives the
unbiased single-draw estimate::

    Z = ||v||^2 ||b||^2 H[j, l] / (v(j) b(l))

Its variance is at most ``||v||^2 ||b||^2 ||H||_F^2``.  Averaging ``N_q``
draws and taking the median of ``N_p`` such means gives an estimate within
``eps`` of the target with probability at least ``1 - delta`` when
``N_q >= 4 ||H||_F^2 ||v||^2 ||b||^2 / eps^2`` and ``N_p >= 8 ln(1 / delta)``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .matstore import SquareForest
from .sketch import materialize

__all__ = [
    "EstimatorConfig",
    "CoordinateEstimate",
    "inner_product_estimate",
    "build_q_hat",
    "dense_q",
    "basis_norm_sq",
    "approx_proj_norm",
    "xi_estimate",
    "spawn_generators",
]


@dataclass(frozen=True)
class EstimatorConfig:
    """Median-of-means budget: ``n_groups`` groups of ``group_size`` draws."""

    n_groups: int
    group_size: int

    def __post_init__(self):
        if int(self.n_groups) < 1 or int(self.group_size) < 1:
            raise ValueError("n_groups and group_size must be positive")

    @property
    def total(self):
        return self.n_groups * self.group_size

    @classmethod
    def for_precision(cls, eps, delta, frob_sq, v_norm_sq=1.0, b_norm_sq=1.0):
        """Smallest budget with additive error ``eps`` at failure probability ``delta``."""
        if eps <= 0 or not 0 < delta < 1:
            raise ValueError("need eps > 0 and 0 < delta < 1")
        n_groups = max(1, math.ceil(8 * math.log(1 / delta)))
        group_size = max(1, math.ceil(4 * frob_sq * v_norm_sq * b_norm_sq / eps ** 2))
        return cls(n_groups, group_size)


@dataclass
class CoordinateEstimate:
    """Estimated ``V^T H b`` together with the budget spent on it."""

    q_hat: np.ndarray
    draws_per_coordinate: int
    degenerate: bool = False


def spawn_generators(rng, n):
    """``n`` independent generators derived from a Generator or SeedSequence."""
    if isinstance(rng, np.random.SeedSequence):
        return [np.random.default_rng(c) for c in rng.spawn(n)]
    if isinstance(rng, np.random.Generator):
        return rng.spawn(n)
    return [np.random.default_rng(c) for c in np.random.SeedSequence(rng).spawn(n)]


def inner_product_estimate(H, v_sampler, v_query, b, cfg, rng, v_norm_sq,
                           b_sampler=None, return_group_means=False):
    """Median-of-means estimate of ``v^T H b``.

    Parameters
    ----------
    H : SampledMatrix
    v_sampler : callable ``(size, rng) -> indices``
        Length-square sampler for ``v``.
    v_query : callable ``(indices) -> values``
        Entry access to ``v``.
    b : ndarray of shape (m,)
    cfg : EstimatorConfig
    rng : numpy.random.Generator
    v_norm_sq : float
        ``||v||^2`` (exact or estimated).
    b_sampler : callable, optional
        Length-square sampler for ``b``; built from ``b`` when omitted.
    return_group_means : bool
        Also return the ``n_groups`` group means.
    """
    b = np.asarray(b, dtype=np.float64)
    b_sq = float(b @ b)
    if b_sq <= 0 or v_norm_sq <= 0:
        est = 0.0
        return (est, np.zeros(cfg.n_groups)) if return_group_means else est
    if b_sampler is None:
        forest = SquareForest([b * b])
        b_sampler = lambda size, g: forest.sample(np.zeros(size, dtype=np.int64), g.random(size))
    n = cfg.total
    j = np.asarray(v_sampler(n, rng))
    l = np.asarray(b_sampler(n, rng))
    denom = np.asarray(v_query(j)) * b[l]
    if np.any(denom == 0):
        raise RuntimeError("a sampler returned an index of probability zero")
    z = v_norm_sq * b_sq * H.entries(j, l) / denom
    means = z.reshape(cfg.n_groups, cfg.group_size).mean(axis=1)
    est = float(np.median(means))
    return (est, means) if return_group_means else est


def build_q_hat(H, columns, b, cfg, rng):
    """Estimate every coordinate of ``V^T H b`` with independent streams.

    Parameters
    ----------
    H : SampledMatrix
    columns : column operator
        The basis ``V`` (see :mod:`conical_anchor.sampler`).
    b : ndarray of shape (m,)
    cfg : EstimatorConfig
    rng : Generator, SeedSequence or int
        Parent of one child stream per coordinate.
    """
    b = np.asarray(b, dtype=np.float64)
    k = columns.shape[1]
    if not np.any(b):
        return CoordinateEstimate(np.zeros(k), 0, degenerate=True)
    forest = SquareForest([b * b])
    b_sampler = lambda size, g: forest.sample(np.zeros(size, dtype=np.int64), g.random(size))
    q = np.zeros(k)
    for i, g in enumerate(spawn_generators(rng, k)):
        norm_i = float(columns.col_norms_sq[i])
        if norm_i <= 0:
            continue
        q[i] = inner_product_estimate(
            H,
            lambda size, gg, i=i: columns.sample_in_column(np.full(size, i), gg),
            lambda j, i=i: columns.values(j, i),
            b, cfg, g, norm_i, b_sampler=b_sampler,
        )
    return CoordinateEstimate(q, cfg.total, degenerate=not np.any(q))


def dense_q(V, Hd, b):
    """Exact ``V^T H b`` from dense arrays (oracle path)."""
    return np.asarray(V).T @ (np.asarray(Hd) @ np.asarray(b, dtype=np.float64))


def basis_norm_sq(H, basis, i, method="dense", cfg=None, rng=None):
    """``||v_i||^2`` for ``v_i = R omega_i / sigma_i``.

    ``method="dense"`` evaluates the vector over all ``n`` rows.
    ``method="sampled"`` draws rows ``l`` of ``R`` with probability
    ``||R[l]||^2 / ||R||_F^2`` and averages
    ``||R||_F^2 (R[l] omega_i)^2 / (||R[l]||^2 sigma_i^2)`` by median of means.
    A zero vector gives 0.
    """
    if method == "dense":
        v = materialize(basis, H)[:, i]
        return float(v @ v)
    if method != "sampled":
        raise ValueError(f"unknown method {method!r}")
    if cfg is None or rng is None:
        raise ValueError("sampled norms need an EstimatorConfig and a generator")
    n = cfg.total
    s = basis.s
    t = rng.integers(s, size=n)
    rows = H.sample_index_in_col(basis.col_idx[t], rng)
    h = H.entries(rows[:, None], basis.unique_cols[None, :])
    cw = np.bincount(basis.col_inverse, weights=basis.col_scale ** 2, minlength=len(basis.unique_cols))
    row_sq = (h * h) @ cw
    r_frob = float(np.sum(H.col_norm_sq(basis.unique_cols) * cw))
    prod = h @ (basis.column_weights[:, i] * basis.sigma[i])
    z = r_frob * prod ** 2 / (row_sq * basis.sigma[i] ** 2)
    return float(np.median(z.reshape(cfg.n_groups, cfg.group_size).mean(axis=1)))


def approx_proj_norm(q_hat, norms_sq):
    """``sum_i q_i^2 ||v_i||^2``, the squared norm of ``V q`` for near-orthogonal ``V``."""
    q_hat = np.asarray(q_hat, dtype=np.float64)
    return float(np.sum(q_hat ** 2 * np.asarray(norms_sq, dtype=np.float64)))


def xi_estimate(norm_x_sq, norm_y_sq):
    """Ratio of squared projected norms ``||X b||^2 / ||Y b||^2``."""
    if norm_y_sq <= 0:
        raise ValueError("the projection annihilates Y; xi is undefined")
    return float(norm_x_sq) / float(norm_y_sq)
