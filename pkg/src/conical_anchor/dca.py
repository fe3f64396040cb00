"""Divide-and-conquer anchoring over random one-dimensional projections.

Each of ``p`` subproblems projects ``X`` and ``Y`` onto a random unit vector
``b_t`` and picks the row of ``Y`` whose projection sits closest above the
largest projection of ``X``.  The final anchors are the ``k`` rows picked
most often.

Two subproblem solvers are provided.  :func:`solve_subproblem_exact` works on
dense projections.  :func:`solve_subproblem_approx` only touches the data
through length-square sampling and entry queries; it compares the squared
magnitude distributions of the projected vectors instead of the signed values.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .estimators import (
    EstimatorConfig,
    approx_proj_norm,
    build_q_hat,
    xi_estimate,
)
from .exceptions import SubproblemError, VoteShortfallError, ZeroNormError
from .matstore import SampledMatrix
from .sampler import (
    DEFAULT_MAX_ITER,
    BasisColumns,
    DenseColumns,
    DenseDistribution,
    PostSelectConfig,
    SubproblemOutcome,
    VecDistribution,
    heuristic_post_select,
    limit_post_select,
    positive_part,
)
from .sketch import SketchConfig, materialize, subsample

__all__ = [
    "ENSEMBLES",
    "ProjectionSpec",
    "AnchorSet",
    "Operand",
    "prepare_operand",
    "oracle_operand",
    "generate_projections",
    "resolve_ensemble",
    "default_num_projections",
    "solve_subproblem_exact",
    "solve_subproblem_approx",
    "conquer",
    "solve",
]

ENSEMBLES = ("gaussian", "unit_basis", "data_row", "uniform_nonneg")
_ALIASES = {"unitBasis": "unit_basis", "dataRow": "data_row", "uniformNonneg": "uniform_nonneg"}

# spawn-key prefixes keep the random streams of different stages disjoint
_PROJ, _SKETCH, _SUB = 0, 1, 2


def _stream(master_seed, *key):
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(x) for x in key))


def default_num_projections(k, c=10):
    """``ceil(k log2 k) * c``, at least ``c``."""
    return max(1, math.ceil(k * math.log2(k))) * c if k > 1 else c


@dataclass(frozen=True)
class ProjectionSpec:
    """A unit projection vector and the seed path that produced it."""

    b: np.ndarray
    ensemble: str
    seed: tuple


def _normalize_ensemble(name):
    name = _ALIASES.get(name, name)
    if name not in ENSEMBLES and name != "auto":
        raise ValueError(f"unknown ensemble {name!r}; choose from {ENSEMBLES + ('auto',)}")
    return name


def _is_nonneg(A):
    if isinstance(A, SampledMatrix):
        return bool(np.all(A.to_triplets()[2] >= 0))
    if sp.issparse(A):
        return bool(A.nnz == 0 or A.data.min() >= 0)
    return bool(np.all(np.asarray(A) >= 0))


def resolve_ensemble(ensemble, X, Y=None):
    """Resolve ``"auto"``: gaussian when ``Y`` is ``X`` (or absent) or the data
    are signed, uniform_nonneg for a separate nonnegative ``Y``."""
    ensemble = _normalize_ensemble(ensemble)
    if ensemble != "auto":
        return ensemble
    if Y is None or Y is X:
        return "gaussian"
    return "uniform_nonneg" if _is_nonneg(X) and _is_nonneg(Y) else "gaussian"


def generate_projections(m, p, ensemble="gaussian", master_seed=0, data=None):
    """``p`` unit vectors in ``R^m``, vector ``t`` drawn from its own stream.

    ``data_row`` picks a row of ``data`` by length-square sampling, so zero
    rows are never chosen.
    """
    if p < 1 or m < 1:
        raise ValueError("p and m must be positive")
    ensemble = _normalize_ensemble(ensemble)
    if ensemble == "auto":
        raise ValueError("resolve 'auto' with resolve_ensemble first")
    if ensemble == "data_row":
        if data is None:
            raise ValueError("the data_row ensemble needs a data matrix")
        store = _as_store(data)
        if store.m != m:
            raise ValueError(f"data has {store.m} columns, expected {m}")
    out = []
    for t in range(p):
        rng = np.random.default_rng(_stream(master_seed, _PROJ, t))
        if ensemble == "gaussian":
            b = rng.standard_normal(m)
        elif ensemble == "unit_basis":
            b = np.zeros(m)
            b[rng.integers(m)] = 1.0
        elif ensemble == "uniform_nonneg":
            b = rng.random(m)
        else:
            b = store.row(int(store.sample_row_index(rng)))
        out.append(ProjectionSpec(b / np.linalg.norm(b), ensemble, (int(master_seed), t)))
    return out


@dataclass
class AnchorSet:
    """Voted anchors.

    Attributes
    ----------
    indices : ndarray of shape (k,)
        Rows of ``Y``, by decreasing score (ties to the smaller index).
    scores : ndarray of shape (n_Y,)
        Vote share of every row over the non-degenerate subproblems.
    outcomes : list of SubproblemOutcome
    """

    indices: np.ndarray
    scores: np.ndarray
    outcomes: list = field(default_factory=list)

    @property
    def n_degenerate(self):
        return sum(o.degenerate for o in self.outcomes)

    @property
    def n_fallback(self):
        return sum(o.fallback for o in self.outcomes)

    def to_dict(self, diagnostics=False):
        out = {
            "anchors": [int(i) for i in self.indices],
            "scores": {str(int(i)): float(self.scores[i]) for i in np.flatnonzero(self.scores)},
            "n_subproblems": len(self.outcomes),
            "n_degenerate": int(self.n_degenerate),
            "n_fallback": int(self.n_fallback),
        }
        if diagnostics:
            out["subproblems"] = [o.summary() for o in self.outcomes]
        return out


def conquer(outcomes, k, n_y):
    """Vote shares over non-degenerate outcomes and the ``k`` top-voted rows.

    Raises
    ------
    VoteShortfallError
        If fewer than ``k`` distinct rows received a vote; the rows that did
        are attached as ``partial``.
    """
    votes = np.array([o.anchor_idx for o in outcomes if not o.degenerate], dtype=np.int64)
    if len(votes) == 0:
        raise VoteShortfallError(k, 0)
    counts = np.bincount(votes, minlength=n_y)
    scores = counts / len(votes)
    n_voted = int(np.count_nonzero(counts))
    order = np.lexsort((np.arange(n_y), -counts))
    if k > n_voted:
        raise VoteShortfallError(k, n_voted, AnchorSet(order[:n_voted].copy(), scores, list(outcomes)))
    return AnchorSet(order[:k].copy(), scores, list(outcomes))


# ----------------------------------------------------------------------
# exact subproblems

def solve_subproblem_exact(X, Y, b, t=None):
    """``argmin_i (Y b)_i - max_j (X b)_j`` over nonnegative differences.

    Ties go to the smaller index.  When every row of ``Y`` projects below the
    maximum of ``X`` the row with the largest projection is returned and the
    outcome is flagged ``fallback``.
    """
    xt = np.asarray(X) @ b
    yt = np.asarray(Y) @ b
    vals = positive_part(yt - xt.max())
    fallback = bool(np.all(np.isinf(vals)))
    anchor = int(np.argmax(yt)) if fallback else int(np.argmin(vals))
    return SubproblemOutcome(anchor_idx=anchor, t=t, fallback=fallback)


# ----------------------------------------------------------------------
# approximate subproblems

class Operand:
    """A matrix prepared for approximate subproblems.

    Attributes
    ----------
    H : SampledMatrix
    columns : column operator
        Sampling access to the basis ``V`` (n x k').
    norms_sq : ndarray
        ``||v_i||^2`` used in the projected norm.
    basis : ImplicitBasis or None
        ``None`` for an exact-SVD oracle operand.
    """

    def __init__(self, H, columns, norms_sq, basis=None):
        self.H = H
        self.columns = columns
        self.norms_sq = np.asarray(norms_sq, dtype=np.float64)
        self.basis = basis

    @property
    def rank(self):
        return self.columns.shape[1]

    def dense_basis(self):
        return self.columns.dense()


def prepare_operand(H, sketch_cfg, rng, access="dense", max_iter=DEFAULT_MAX_ITER):
    """Sketch ``H`` and wrap the basis for sampling.

    ``access="dense"`` materialises the ``n x k'`` basis once (O(n s) entry
    queries) and samples from it with sum-trees.  ``access="implicit"`` keeps
    the basis implicit; every basis draw is a nested rejection sample over
    the sampled columns.
    """
    H = _as_store(H)
    basis = subsample(H, sketch_cfg, rng)
    V = materialize(basis, H)
    norms = np.einsum("ij,ij->j", V, V)
    if access == "dense":
        return Operand(H, DenseColumns(V), norms, basis)
    if access == "implicit":
        return Operand(H, BasisColumns(H, basis, norms, max_iter=max_iter), norms, basis)
    raise ValueError(f"unknown basis access {access!r}")


def oracle_operand(A, rank=None):
    """Operand whose basis is the exact top left singular vectors of ``A``."""
    H = _as_store(A)
    Ad = H.to_dense()
    u, sig, _ = np.linalg.svd(Ad, full_matrices=False)
    r = int(np.sum(sig > max(Ad.shape) * np.finfo(float).eps * (sig[0] if len(sig) else 0)))
    if rank is not None:
        r = min(r, int(rank))
    if r == 0:
        raise ZeroNormError("cannot build a basis for the zero matrix")
    V = u[:, :r]
    return Operand(H, DenseColumns(V), np.ones(r))


def _coordinates(op, b, est_cfg, seq, q_mode):
    if q_mode == "exact":
        return op.dense_basis().T @ (op.H.to_dense() @ b)
    return build_q_hat(op.H, op.columns, b, est_cfg, seq).q_hat


def solve_subproblem_approx(x_op, y_op, b, est_cfg, ps_cfg, seq, t=None,
                            post_select="sampled", q_mode="sampled"):
    """One subproblem through sampling access only.

    Parameters
    ----------
    x_op, y_op : Operand
        ``y_op is x_op`` shares the coordinates, so ``xi = 1``.
    b : ndarray of shape (m,)
    est_cfg : EstimatorConfig
    ps_cfg : PostSelectConfig
    seq : numpy.random.SeedSequence
        Root of this subproblem's random streams.
    post_select : {"sampled", "limit"}
        ``"limit"`` replaces sample frequencies by exact probabilities of the
        dense projected vectors.
    q_mode : {"sampled", "exact"}
        ``"exact"`` computes ``V^T H b`` densely.
    """
    s_x, s_y, s_ps = seq.spawn(3)
    shared = y_op is x_op
    qx = _coordinates(x_op, b, est_cfg, s_x, q_mode)
    qy = qx if shared else _coordinates(y_op, b, est_cfg, s_y, q_mode)
    nx = approx_proj_norm(qx, x_op.norms_sq)
    ny = nx if shared else approx_proj_norm(qy, y_op.norms_sq)
    if nx <= 0 or ny <= 0:
        return SubproblemOutcome(anchor_idx=-1, t=t, degenerate=True)
    xi = 1.0 if shared else xi_estimate(nx, ny)
    if post_select == "limit":
        dist_x = DenseDistribution(x_op.dense_basis() @ qx)
        dist_y = dist_x if shared else DenseDistribution(y_op.dense_basis() @ qy)
        out = limit_post_select(dist_x, dist_y, xi)
    elif post_select == "sampled":
        dist_x = VecDistribution(x_op.columns, qx, nx)
        dist_y = dist_x if shared else VecDistribution(y_op.columns, qy, ny)
        out = heuristic_post_select(dist_x, dist_y, xi, ps_cfg, np.random.default_rng(s_ps))
        its = np.concatenate(dist_x.iterations + ([] if shared else dist_y.iterations))
        out.diagnostics["mean_rejection_iters"] = float(its.mean())
    else:
        raise ValueError(f"unknown post_select {post_select!r}")
    out.t = t
    out.diagnostics["norm_x_sq"] = nx
    out.diagnostics["norm_y_sq"] = ny
    return out


# ----------------------------------------------------------------------

def _as_store(A):
    if isinstance(A, SampledMatrix):
        return A
    if sp.issparse(A):
        return SampledMatrix.from_sparse(A)
    return SampledMatrix.from_dense(np.asarray(A, dtype=np.float64))


def _as_dense(A):
    if isinstance(A, SampledMatrix):
        return A.to_dense()
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=np.float64)


def _shape(A):
    return A.shape if not isinstance(A, SampledMatrix) else (A.n, A.m)


def _run(fn, n_tasks, n_jobs):
    def wrapped(t):
        try:
            return fn(t)
        except Exception as exc:
            raise SubproblemError(t, exc) from exc

    if n_jobs is None or n_jobs == 1 or n_tasks == 1:
        return [wrapped(t) for t in range(n_tasks)]
    workers = (os.cpu_count() or 1) if n_jobs == -1 else int(n_jobs)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(wrapped, range(n_tasks)))


def solve(X, Y=None, *, k, p=None, mode="approx", sketch_size=2000, eps=0.1, delta=0.05,
          estimator=None, post_select=None, ensemble="auto", master_seed=0, n_jobs=1,
          basis_access="dense", post_select_mode="sampled", q_mode="sampled",
          max_iter=DEFAULT_MAX_ITER, projections=None):
    """Find ``k`` anchor rows of ``Y`` whose cone covers the rows of ``X``.

    Parameters
    ----------
    X : array-like, sparse matrix or SampledMatrix of shape (n_X, m)
    Y : same types, shape (n_Y, m), optional
        Defaults to ``X`` (separable NMF).
    k : int
        Number of anchors.
    p : int, optional
        Number of projections; ``ceil(k log2 k) * 10`` by default.
    mode : {"approx", "exact"}
    sketch_size : int
        Samples ``s`` per sketch (approx mode).
    eps, delta : float
        Relative precision and failure probability of each coordinate
        estimate; the budget is ``ceil(8 ln(1/delta))`` groups of
        ``ceil(4 / eps^2)`` draws.
    estimator : EstimatorConfig, optional
        Overrides the budget derived from ``eps`` and ``delta``.
    post_select : PostSelectConfig, optional
    ensemble : str
        ``"auto"`` or one of :data:`ENSEMBLES` (camelCase aliases accepted).
    master_seed : int
        Every random stream is derived from it; results do not depend on
        ``n_jobs``.
    n_jobs : int
        Worker threads for the subproblems (-1 for all cores).
    basis_access : {"dense", "implicit", "oracle"}
        How the approximate solver reaches the basis; ``"oracle"`` uses the
        exact SVD of the dense data.
    post_select_mode : {"sampled", "limit"}
    q_mode : {"sampled", "exact"}
    projections : list of ProjectionSpec, optional
        Use these instead of generating them.

    Returns
    -------
    AnchorSet
    """
    if Y is None:
        Y = X
    shared = Y is X
    n_x, m = _shape(X)
    n_y, m_y = _shape(Y)
    if m != m_y:
        raise ValueError(f"X has {m} columns but Y has {m_y}")
    if not 1 <= k <= n_y:
        raise ValueError(f"k={k} must lie in [1, {n_y}]")
    if mode not in ("approx", "exact"):
        raise ValueError(f"unknown mode {mode!r}")
    if p is None:
        p = default_num_projections(k)
    if projections is None:
        ens = resolve_ensemble(ensemble, X, None if shared else Y)
        projections = generate_projections(m, p, ens, master_seed, data=X if ens == "data_row" else None)
    p = len(projections)

    if mode == "exact":
        Xd = _as_dense(X)
        Yd = Xd if shared else _as_dense(Y)
        outcomes = _run(lambda t: solve_subproblem_exact(Xd, Yd, projections[t].b, t), p, n_jobs)
        return conquer(outcomes, k, n_y)

    if estimator is None:
        estimator = EstimatorConfig.for_precision(eps, delta, 1.0)
    if post_select is None:
        post_select = PostSelectConfig()

    def operand(A, which):
        if basis_access == "oracle":
            return oracle_operand(A, k)
        cfg = SketchConfig(s=int(sketch_size), k=k)
        rng = np.random.default_rng(_stream(master_seed, _SKETCH, which))
        return prepare_operand(A, cfg, rng, access=basis_access, max_iter=max_iter)

    x_op = operand(X, 0)
    y_op = x_op if shared else operand(Y, 1)

    def task(t):
        return solve_subproblem_approx(
            x_op, y_op, projections[t].b, estimator, post_select,
            _stream(master_seed, _SUB, t), t=t,
            post_select=post_select_mode, q_mode=q_mode,
        )

    return conquer(_run(task, p, n_jobs), k, n_y)
