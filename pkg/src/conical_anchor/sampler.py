"""Sampling from ``V @ q`` without forming it, and heuristic post-selection.

The column operators below give the access a thin matrix ``V`` must offer
for rejection sampling: squared column norms, length-square sampling inside
a column, and products of a few rows with a vector.

* :class:`DenseColumns` wraps an explicit ``n x k`` array.
* :class:`SketchColumns` is the ``n x s`` matrix ``R`` of a sketch, answered
  from entry queries on the underlying :class:`~conical_anchor.matstore.SampledMatrix`.
* :class:`BasisColumns` is the implicit basis ``R omega / sigma``; sampling
  inside one of its columns is itself a rejection sample on ``R``.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import RejectionLimitError, ZeroNormError
from .matstore import SquareForest
from .sketch import basis_rows

__all__ = [
    "DenseColumns",
    "SketchColumns",
    "BasisColumns",
    "thin_matvec_sample",
    "VecDistribution",
    "DenseDistribution",
    "prob_of_index",
    "PostSelectConfig",
    "SubproblemOutcome",
    "heuristic_post_select",
    "limit_post_select",
    "positive_part",
]

DEFAULT_MAX_ITER = 10 ** 6


class DenseColumns:
    """Column access to an explicit matrix through per-column sum-trees."""

    def __init__(self, V):
        V = np.asarray(V, dtype=np.float64)
        if V.ndim == 1:
            V = V[:, None]
        self.V = V
        self.shape = V.shape
        self._trees = SquareForest([V[:, j] ** 2 for j in range(V.shape[1])])
        self.col_norms_sq = self._trees.totals.copy()

    def sample_in_column(self, cols, rng):
        cols = np.asarray(cols, dtype=np.int64)
        if np.any(self.col_norms_sq[cols] <= 0):
            raise ZeroNormError("cannot sample inside an all-zero column")
        return self._trees.sample(cols, rng.random(cols.shape))

    def values(self, rows, col):
        return self.V[rows, col]

    def row_products(self, rows, q):
        block = self.V[rows]
        return block @ q, np.einsum("ij,ij->i", block, block)

    def dense(self):
        return self.V


class SketchColumns:
    """The rescaled sampled-column matrix ``R = H[:, col_idx] * col_scale``."""

    def __init__(self, H, basis):
        self.H = H
        self.basis = basis
        self.shape = (H.n, basis.s)
        self.col_norms_sq = H.col_norm_sq(basis.col_idx) * basis.col_scale ** 2
        self._col_weight = np.bincount(
            basis.col_inverse, weights=basis.col_scale ** 2, minlength=len(basis.unique_cols)
        )

    def sample_in_column(self, cols, rng):
        return self.H.sample_index_in_col(self.basis.col_idx[np.asarray(cols)], rng)

    def values(self, rows, col):
        b = self.basis
        return self.H.entries(rows, b.col_idx[col]) * b.col_scale[col]

    def row_products(self, rows, q):
        b = self.basis
        agg = np.zeros(len(b.unique_cols))
        np.add.at(agg, b.col_inverse, b.col_scale * q)
        h = self.H.entries(np.asarray(rows)[:, None], b.unique_cols[None, :])
        return h @ agg, (h * h) @ self._col_weight

    def dense(self):
        b = self.basis
        return self.H.entries(np.arange(self.H.n)[:, None], b.col_idx[None, :]) * b.col_scale


class BasisColumns:
    """Implicit basis ``v_i = R omega_i / sigma_i`` with sampling access.

    Parameters
    ----------
    H : SampledMatrix
    basis : ImplicitBasis
    norms_sq : array-like, optional
        Squared column norms ``||v_i||^2``; evaluated densely when omitted.
    max_iter : int
        Iteration cap for the inner rejection sampler over ``R``.
    """

    def __init__(self, H, basis, norms_sq=None, max_iter=DEFAULT_MAX_ITER):
        self.H = H
        self.basis = basis
        self.shape = (H.n, basis.rank)
        self.max_iter = max_iter
        self._r = SketchColumns(H, basis)
        if norms_sq is None:
            from .estimators import basis_norm_sq

            norms_sq = [basis_norm_sq(H, basis, i) for i in range(basis.rank)]
        self.col_norms_sq = np.asarray(norms_sq, dtype=np.float64)

    def sample_in_column(self, cols, rng):
        # P(l) of v_i is proportional to (R omega_i)(l)^2
        cols = np.asarray(cols, dtype=np.int64)
        out = np.empty(cols.shape, dtype=np.int64)
        for i in np.unique(cols):
            mask = cols == i
            out[mask] = thin_matvec_sample(
                self._r, self.basis.omega[i], rng, size=int(mask.sum()), max_iter=self.max_iter
            )
        return out

    def values(self, rows, col):
        return basis_rows(self.basis, self.H, np.atleast_1d(rows))[:, col]

    def row_products(self, rows, q):
        block = basis_rows(self.basis, self.H, np.asarray(rows))
        return block @ q, np.einsum("ij,ij->i", block, block)

    def dense(self):
        from .sketch import materialize

        return materialize(self.basis, self.H)


def thin_matvec_sample(V, q, rng, size=None, max_iter=DEFAULT_MAX_ITER, return_iterations=False):
    """Exact length-square sample(s) from ``V @ q`` by rejection.

    Each round picks a column ``j`` with probability proportional to
    ``||V[:, j]||^2`` (uniform when the columns have equal norms), a row
    ``l`` with probability ``V[l, j]^2 / ||V[:, j]||^2``, and accepts ``l``
    with probability ``(V[l] @ q)^2 / (||V[l]||^2 ||q||^2)``.  Accepted rows
    follow ``(V[l] @ q)^2 / ||V q||^2`` exactly.

    Parameters
    ----------
    V : column operator
        :class:`DenseColumns`, :class:`SketchColumns` or :class:`BasisColumns`.
    q : array-like of shape (k,)
    rng : numpy.random.Generator
    size : int, optional
        Number of draws; a single int is returned when omitted.
    max_iter : int
        Maximum number of consecutive rejections before giving up.
    return_iterations : bool
        Also return the number of rounds spent on each accepted draw.

    Raises
    ------
    ZeroNormError
        If ``q`` or ``V`` is zero.
    RejectionLimitError
        If ``max_iter`` consecutive rounds are rejected.
    """
    q = np.asarray(q, dtype=np.float64)
    q_sq = float(q @ q)
    cn = np.asarray(V.col_norms_sq, dtype=np.float64)
    total = float(cn.sum())
    if q_sq <= 0 or total <= 0:
        raise ZeroNormError("cannot sample from V @ q with zero q or zero V")
    want = 1 if size is None else int(size)
    cdf = np.cumsum(cn) / total
    cdf[-1] = 1.0

    accepted = np.empty(want, dtype=np.int64)
    iterations = np.empty(want, dtype=np.int64)
    got = 0
    since_last = 0
    rounds = 0
    hits = 0
    while got < want:
        rate = (hits + 1) / (rounds + len(cn))
        batch = int(min(max(64, math.ceil(1.25 * (want - got) / rate)), 1 << 18))
        cols = np.minimum(np.searchsorted(cdf, rng.random(batch), side="right"), len(cn) - 1)
        rows = V.sample_in_column(cols, rng)
        prod, row_sq = V.row_products(rows, q)
        p_acc = np.minimum(prod * prod / (row_sq * q_sq), 1.0)
        ok = rng.random(batch) < p_acc
        pos = np.flatnonzero(ok)
        rounds += batch
        hits += len(pos)
        if len(pos) == 0:
            since_last += batch
            if since_last >= max_iter:
                raise RejectionLimitError(max_iter, hits / rounds)
            continue
        take = pos[: want - got]
        gaps = np.diff(np.concatenate([[-1], take]))
        gaps[0] += since_last
        if np.any(gaps > max_iter):
            raise RejectionLimitError(max_iter, hits / rounds)
        accepted[got:got + len(take)] = rows[take]
        iterations[got:got + len(take)] = gaps
        got += len(take)
        since_last = batch - 1 - pos[-1] if len(take) == len(pos) else 0
    if size is None:
        return (int(accepted[0]), int(iterations[0])) if return_iterations else int(accepted[0])
    return (accepted, iterations) if return_iterations else accepted


def prob_of_index(V, q, norm_sq, l):
    """``(V[l] @ q)^2 / norm_sq`` for one index or an array of indices."""
    if norm_sq <= 0:
        raise ValueError("norm_sq must be positive")
    scalar = np.ndim(l) == 0
    prod, _ = V.row_products(np.atleast_1d(np.asarray(l, dtype=np.int64)), np.asarray(q, dtype=np.float64))
    p = prod * prod / norm_sq
    return float(p[0]) if scalar else p


class VecDistribution:
    """Length-square distribution of ``V @ q`` with rejection-sampled draws.

    ``prob_of`` uses the supplied ``norm_sq`` (typically an estimate of
    ``||V q||^2``), so probabilities are exact only when that norm is.
    """

    def __init__(self, V, q, norm_sq, max_iter=DEFAULT_MAX_ITER):
        self.V = V
        self.q = np.asarray(q, dtype=np.float64)
        self.norm_sq = float(norm_sq)
        self.max_iter = max_iter
        self.iterations = []

    @property
    def expected_rejection_iters(self):
        """``||V||_F^2 ||q||^2 / ||V q||^2`` with the stored norm estimate."""
        return float(np.sum(self.V.col_norms_sq) * (self.q @ self.q) / self.norm_sq)

    def draw(self, rng, size):
        idx, its = thin_matvec_sample(
            self.V, self.q, rng, size=size, max_iter=self.max_iter, return_iterations=True
        )
        self.iterations.append(its)
        return idx

    def draw_one(self, rng):
        return int(self.draw(rng, 1)[0])

    def prob_of(self, l):
        return prob_of_index(self.V, self.q, self.norm_sq, l)


class DenseDistribution:
    """Exact length-square distribution of an explicit vector."""

    def __init__(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        sq = vec * vec
        total = float(sq.sum())
        if total <= 0:
            raise ZeroNormError("length-square distribution of the zero vector")
        self.vec = vec
        self.norm_sq = total
        self._p = sq / total
        self._cdf = np.cumsum(self._p)
        self._cdf[-1] = 1.0
        self.iterations = []

    @property
    def expected_rejection_iters(self):
        return 1.0

    def probabilities(self):
        return self._p.copy()

    def draw(self, rng, size):
        return np.minimum(np.searchsorted(self._cdf, rng.random(size), side="right"), len(self._p) - 1)

    def draw_one(self, rng):
        return int(self.draw(rng, 1)[0])

    def prob_of(self, l):
        out = self._p[l]
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PostSelectConfig:
    """Draw counts and thresholds for heuristic post-selection.

    ``n_x``/``n_y`` default to ``ceil(2 ln(8 / delta) / eps_gap^2)``.
    """

    n_x: int | None = None
    n_y: int | None = None
    eps_gap: float = 0.05
    eps_t: float = 1e-3
    delta: float = 0.1

    def __post_init__(self):
        if self.eps_gap <= 0 or self.eps_t <= 0 or not 0 < self.delta < 1:
            raise ValueError("eps_gap, eps_t must be positive and 0 < delta < 1")
        default = self.default_draws(self.eps_gap, self.delta)
        if self.n_x is None:
            object.__setattr__(self, "n_x", default)
        if self.n_y is None:
            object.__setattr__(self, "n_y", default)
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("n_x and n_y must be positive")

    @staticmethod
    def default_draws(eps_gap, delta):
        return int(math.ceil(2 * math.log(8 / delta) / eps_gap ** 2))


@dataclass
class SubproblemOutcome:
    """Result of one divide-step subproblem.

    ``degenerate`` outcomes are excluded from voting.  ``fallback`` marks a
    post-selection in which every sampled candidate fell below the
    threshold, so the most frequent index was returned instead; those still
    vote.
    """

    anchor_idx: int
    t: int | None = None
    c_star: float | None = None
    xi_hat: float | None = None
    top_x: int | None = None
    x_indices: np.ndarray | None = None
    x_counts: np.ndarray | None = None
    y_indices: np.ndarray | None = None
    y_counts: np.ndarray | None = None
    degenerate: bool = False
    fallback: bool = False
    below_eps_t: bool = False
    diagnostics: dict = field(default_factory=dict)

    def summary(self):
        out = {
            "t": self.t,
            "anchor": int(self.anchor_idx),
            "degenerate": bool(self.degenerate),
            "fallback": bool(self.fallback),
        }
        if self.c_star is not None:
            out["c_star"] = float(self.c_star)
        if self.xi_hat is not None:
            out["xi_hat"] = float(self.xi_hat)
        if self.top_x is not None:
            out["top_x"] = int(self.top_x)
        if self.x_counts is not None:
            out["n_distinct_x"] = int(len(self.x_counts))
        if self.y_counts is not None:
            out["n_distinct_y"] = int(len(self.y_counts))
        out.update(self.diagnostics)
        return out


def positive_part(x):
    """``x`` where ``x >= 0`` and ``+inf`` elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, np.inf)


def heuristic_post_select(dist_x, dist_y, xi_hat, cfg, rng):
    """Estimate ``argmin_i (P_Y(i) - xi * max_j P_X(j))_+`` from samples.

    1. Draw ``cfg.n_x`` indices from ``dist_x``; the most frequent is the
       candidate maximiser (ties to the smaller index).
    2. ``C*`` is the exact probability of that index under ``dist_x``.
    3. Draw ``cfg.n_y`` indices from ``dist_y``.
    4. Among the distinct sampled ``z`` minimise
       ``(count(z) / n_y - xi * C*)_+``; ties go to the larger count, then
       the smaller index.  If every candidate is negative the most frequent
       ``y`` index is returned with ``fallback=True``.
    """
    xs = dist_x.draw(rng, cfg.n_x)
    ux, cx = np.unique(xs, return_counts=True)
    top_x = int(ux[np.argmax(cx)])
    c_star = float(dist_x.prob_of(top_x))

    ys = dist_y.draw(rng, cfg.n_y)
    uy, cy = np.unique(ys, return_counts=True)
    vals = positive_part(cy / cfg.n_y - xi_hat * c_star)
    fallback = bool(np.all(np.isinf(vals)))
    if fallback:
        anchor = int(uy[np.argmax(cy)])
    else:
        order = np.lexsort((uy, -cy, vals))
        anchor = int(uy[order[0]])
    return SubproblemOutcome(
        anchor_idx=anchor,
        c_star=c_star,
        xi_hat=float(xi_hat),
        top_x=top_x,
        x_indices=ux,
        x_counts=cx,
        y_indices=uy,
        y_counts=cy,
        fallback=fallback,
        below_eps_t=c_star < cfg.eps_t,
    )


def limit_post_select(dist_x, dist_y, xi_hat, rtol=1e-9):
    """Post-selection with exact probabilities in place of sample frequencies.

    This is the infinite-sample limit of :func:`heuristic_post_select` and
    needs distributions exposing ``probabilities()``.  Differences within
    ``rtol * xi * C*`` of zero count as zero.
    """
    px = dist_x.probabilities()
    py = dist_y.probabilities()
    top_x = int(np.argmax(px))
    c_star = float(px[top_x])
    thresh = xi_hat * c_star
    diff = py - thresh
    diff = np.where(np.abs(diff) <= rtol * max(thresh, np.finfo(float).tiny), 0.0, diff)
    vals = positive_part(diff)
    fallback = bool(np.all(np.isinf(vals)))
    anchor = int(np.argmax(py)) if fallback else int(np.argmin(vals))
    return SubproblemOutcome(
        anchor_idx=anchor, c_star=c_star, xi_hat=float(xi_hat), top_x=top_x, fallback=fallback
    )
