"""scikit-learn style front end to the anchor solver."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from . import dca
from .sampler import PostSelectConfig
from .snmf_bench import nnls_coefficients

__all__ = ["ConicalHullAnchors"]


class ConicalHullAnchors(TransformerMixin, BaseEstimator):
    """Select rows of ``Y`` whose conical hull covers the rows of ``X``.

    With ``Y`` omitted this is separable NMF: ``X ~ F X[anchors_]`` with
    ``F >= 0``, and :meth:`transform` returns ``F``.

    Parameters
    ----------
    n_components : int
        Number of anchors ``k``.
    n_projections : int, optional
        Number of random projections; ``ceil(k log2 k) * 10`` by default.
    mode : {"approx", "exact"}
        ``"approx"`` touches the data only through sampling and entry
        queries; ``"exact"`` projects densely.
    sketch_size : int
        Column/row samples per sketch.
    n_draws_x, n_draws_y : int, optional
        Post-selection draws; derived from ``eps_gap`` when omitted.
    eps, delta : float
        Relative precision and failure probability of the coordinate
        estimates.
    eps_gap : float
        Probability gap resolved by post-selection (sets default draws).
    ensemble : str
        Projection ensemble, ``"auto"`` or one of ``gaussian``,
        ``unit_basis``, ``data_row``, ``uniform_nonneg``.
    basis_access : {"dense", "implicit"}
    random_state : int, RandomState or None
        ``None`` draws a fresh master seed.
    n_jobs : int
        Threads for the subproblems; the result does not depend on it.

    Attributes
    ----------
    anchors_ : ndarray of shape (n_components,)
        Anchor rows, by decreasing vote share.
    scores_ : ndarray of shape (n_Y,)
        Vote share of every row of ``Y``.
    components_ : ndarray of shape (n_components, n_features)
        The anchor rows themselves.
    anchor_set_ : AnchorSet
        Full result including per-subproblem outcomes.
    """

    def __init__(self, n_components=10, *, n_projections=None, mode="approx", sketch_size=2000,
                 n_draws_x=None, n_draws_y=None, eps=0.1, delta=0.05, eps_gap=0.05,
                 ensemble="auto", basis_access="dense", random_state=0, n_jobs=1):
        self.n_components = n_components
        self.n_projections = n_projections
        self.mode = mode
        self.sketch_size = sketch_size
        self.n_draws_x = n_draws_x
        self.n_draws_y = n_draws_y
        self.eps = eps
        self.delta = delta
        self.eps_gap = eps_gap
        self.ensemble = ensemble
        self.basis_access = basis_access
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _master_seed(self):
        if isinstance(self.random_state, (int, np.integer)):
            return int(self.random_state)
        return int(check_random_state(self.random_state).randint(2 ** 31 - 1))

    def fit(self, X, y=None, Y=None):
        """Find the anchors.

        Parameters
        ----------
        X : array-like or sparse matrix of shape (n_samples, n_features)
        y : ignored
        Y : array-like or sparse matrix of shape (n_candidates, n_features), optional
            Candidate rows; defaults to ``X``.
        """
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        if Y is not None:
            Y = check_array(Y, accept_sparse="csr", dtype=np.float64)
            if Y.shape[1] != X.shape[1]:
                raise ValueError(f"X has {X.shape[1]} features but Y has {Y.shape[1]}")
        result = dca.solve(
            X, Y,
            k=int(self.n_components),
            p=self.n_projections,
            mode=self.mode,
            sketch_size=self.sketch_size,
            eps=self.eps,
            delta=self.delta,
            post_select=PostSelectConfig(n_x=self.n_draws_x, n_y=self.n_draws_y, eps_gap=self.eps_gap),
            ensemble=self.ensemble,
            master_seed=self._master_seed(),
            n_jobs=self.n_jobs,
            basis_access=self.basis_access,
        )
        source = X if Y is None else Y
        rows = source[result.indices]
        self.components_ = rows.toarray() if hasattr(rows, "toarray") else np.asarray(rows)
        self.anchors_ = result.indices
        self.scores_ = result.scores
        self.anchor_set_ = result
        return self

    def transform(self, X):
        """Nonnegative coefficients ``F`` with ``X ~ F components_``."""
        check_is_fitted(self, "components_")
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if hasattr(X, "toarray"):
            X = X.toarray()
        return nnls_coefficients(X, self.components_)

    def inverse_transform(self, F):
        check_is_fitted(self, "components_")
        F = check_array(F, dtype=np.float64)
        return F @ self.components_
