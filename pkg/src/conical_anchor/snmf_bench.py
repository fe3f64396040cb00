"""Near-separable NMF instances, recovery metrics and a benchmark harness.

An instance is ``X = P (F X_A + N)`` with ``F = [I_k; U]``, rows of ``X_A``
and ``U`` drawn uniformly and scaled to unit l1 norm, Gaussian noise ``N``
of standard deviation ``mu`` and a random row permutation ``P``.  The anchors
are the rows that ``P`` moves the identity block to.
"""
import csv
import io
import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import dca
from .exceptions import VoteShortfallError
from .sampler import PostSelectConfig

__all__ = [
    "SnmfInstance",
    "BenchConfig",
    "BenchRecord",
    "generate_synthetic",
    "recovery_rate",
    "nnls_coefficients",
    "nnls_encode",
    "reconstruction_error",
    "run_bench",
    "sweep",
    "aggregate",
    "CSV_COLUMNS",
    "records_to_csv",
    "records_to_json",
]

CSV_COLUMNS = ("n", "m", "k", "mu", "p", "s", "mode", "seed", "rho", "recon_err", "wall_ms")


@dataclass
class SnmfInstance:
    """A generated instance and its ground truth.

    ``X[i] == base[perm[i]]`` where ``base = F @ X_A + noise``.
    """

    X: np.ndarray
    true_anchors: np.ndarray
    mu: float
    seed: int
    X_A: np.ndarray
    F: np.ndarray
    noise: np.ndarray
    perm: np.ndarray

    @property
    def base(self):
        return self.F @ self.X_A + self.noise


def generate_synthetic(n, m, k, mu, seed=0):
    """Draw an instance.  Noise is drawn (and not clipped) even when ``mu == 0``,
    so instances for different ``mu`` share ``X_A``, ``U`` and ``perm``."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    rng = np.random.default_rng(seed)
    X_A = rng.random((k, m))
    X_A /= X_A.sum(axis=1, keepdims=True)
    U = rng.random((n - k, k))
    U /= U.sum(axis=1, keepdims=True)
    noise = rng.standard_normal((n, m)) * mu
    perm = rng.permutation(n)
    F = np.vstack([np.eye(k), U])
    X = (F @ X_A + noise)[perm]
    anchors = np.flatnonzero(perm < k)
    return SnmfInstance(X, anchors, float(mu), seed, X_A, F, noise, perm)


def recovery_rate(true_anchors, found):
    """``|A & A_hat| / |A|``."""
    true_set = {int(i) for i in true_anchors}
    if not true_set:
        raise ValueError("true anchor set is empty")
    return len(true_set & {int(i) for i in found}) / len(true_set)


def nnls_coefficients(X, W, max_iter=500, tol=1e-8):
    """Nonnegative ``F`` approximately minimising ``||X - F W||_F``.

    Projected gradient descent with step ``1 / L``, ``L`` the largest
    eigenvalue of ``W W^T``, started from the clipped least-squares
    solution.  Stops after ``max_iter`` steps or when the relative change of
    the objective drops below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    G = W @ W.T
    L = float(np.linalg.eigvalsh(G)[-1])
    if L <= 0:
        return np.zeros((X.shape[0], W.shape[0]))
    XWt = X @ W.T
    x_sq = float(np.sum(X * X))
    F = np.maximum(np.linalg.lstsq(W.T, X.T, rcond=None)[0].T, 0.0)

    def objective(F):
        return float(np.sum((F @ G) * F) - 2 * np.sum(F * XWt) + x_sq)

    prev = objective(F)
    for _ in range(max_iter):
        F = np.maximum(F - (F @ G - XWt) / L, 0.0)
        cur = objective(F)
        if abs(prev - cur) <= tol * max(abs(prev), np.finfo(float).tiny):
            break
        prev = cur
    return F


def nnls_encode(X, anchor_rows, max_iter=500, tol=1e-8):
    """Nonnegative ``F`` with ``X ~ F X[anchor_rows]``; see :func:`nnls_coefficients`."""
    X = np.asarray(X, dtype=np.float64)
    anchor_rows = np.asarray(anchor_rows, dtype=np.int64)
    if anchor_rows.size == 0:
        raise ValueError("anchor_rows is empty")
    return nnls_coefficients(X, X[anchor_rows], max_iter=max_iter, tol=tol)


def reconstruction_error(X, anchor_rows, F=None):
    """``||F X[anchor_rows] - X||_F`` with ``F`` from :func:`nnls_encode` by default."""
    X = np.asarray(X, dtype=np.float64)
    if F is None:
        F = nnls_encode(X, anchor_rows)
    return float(np.linalg.norm(F @ X[np.asarray(anchor_rows)] - X))


@dataclass(frozen=True)
class BenchConfig:
    """One benchmark cell."""

    n: int = 500
    m: int = 500
    k: int = 10
    mu: float = 0.0
    p: int = 100
    s: int = 2000
    mode: str = "approx"
    seed: int = 0
    n_x: int = 4096
    n_y: int = 4096
    eps: float = 0.1
    delta: float = 0.05
    ensemble: str = "auto"
    basis_access: str = "dense"
    n_jobs: int = 1

    def solve_kwargs(self):
        return dict(
            k=self.k, p=self.p, mode=self.mode, sketch_size=self.s, eps=self.eps,
            delta=self.delta, post_select=PostSelectConfig(n_x=self.n_x, n_y=self.n_y),
            ensemble=self.ensemble, master_seed=self.seed, n_jobs=self.n_jobs,
            basis_access=self.basis_access,
        )


@dataclass
class BenchRecord:
    config: BenchConfig
    rho: float
    recon_err: float
    wall_ms: float | None
    anchors: list = field(default_factory=list)
    true_anchors: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None

    def row(self, timing=True):
        c = self.config
        out = {"n": c.n, "m": c.m, "k": c.k, "mu": c.mu, "p": c.p, "s": c.s,
               "mode": c.mode, "seed": c.seed, "rho": self.rho, "recon_err": self.recon_err}
        out["wall_ms"] = self.wall_ms if timing else None
        return out

    def to_dict(self, timing=True):
        out = {"config": asdict(self.config), **self.row(timing)}
        out.update(anchors=self.anchors, true_anchors=self.true_anchors,
                   diagnostics=self.diagnostics, error=self.error)
        return out


def run_bench(cfg, diagnostics=False):
    """Generate an instance, solve it and score the result.

    When fewer than ``k`` rows receive votes the voted rows are scored as
    the anchor set and ``diagnostics["shortfall"]`` records how many are
    missing.
    """
    t0 = time.perf_counter()
    inst = generate_synthetic(cfg.n, cfg.m, cfg.k, cfg.mu, cfg.seed)
    shortfall = 0
    try:
        result = dca.solve(inst.X, **cfg.solve_kwargs())
    except VoteShortfallError as exc:
        # fewer than k rows were voted for: score the rows that were
        if exc.partial is None:
            raise
        result = exc.partial
        shortfall = exc.k - exc.n_voted
    rho = recovery_rate(inst.true_anchors, result.indices)
    err = reconstruction_error(inst.X, np.sort(result.indices))
    wall = (time.perf_counter() - t0) * 1000.0
    diag = result.to_dict(diagnostics=diagnostics)
    diag.pop("anchors")
    diag["shortfall"] = shortfall
    return BenchRecord(cfg, rho, err, wall, sorted(int(i) for i in result.indices),
                       [int(i) for i in inst.true_anchors], diag)


def _grid_cells(base, grid, seeds):
    names = list(grid)
    valid = {f.name for f in fields(BenchConfig)}
    for name in names:
        if name not in valid:
            raise ValueError(f"unknown grid parameter {name!r}")
    for values in itertools.product(*(grid[n] for n in names)):
        for seed in seeds:
            yield replace(base, seed=int(seed), **dict(zip(names, values)))


def sweep(base, grid, seeds=(0,), n_workers=1, diagnostics=False):
    """Run every cell of ``grid`` (name -> values) for every seed.

    Cells are independent and may run on ``n_workers`` threads; the output
    order is the grid order.  A failing cell is recorded with ``error`` set
    and ``rho``/``recon_err`` NaN.
    """
    cells = list(_grid_cells(base, grid, seeds))

    def one(cfg):
        try:
            return run_bench(cfg, diagnostics=diagnostics)
        except Exception as exc:
            return BenchRecord(cfg, float("nan"), float("nan"), None, error=f"{type(exc).__name__}: {exc}")

    if n_workers <= 1:
        return [one(c) for c in cells]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(one, cells))


def aggregate(records, by=("n", "m", "k", "mu", "p", "s", "mode")):
    """Median and variance of ``rho`` and ``recon_err`` per group of ``by``."""
    groups = {}
    for r in records:
        key = tuple(getattr(r.config, b) for b in by)
        groups.setdefault(key, []).append(r)
    out = []
    for key, rs in groups.items():
        rho = np.array([r.rho for r in rs])
        err = np.array([r.recon_err for r in rs])
        out.append({**dict(zip(by, key)), "n_seeds": len(rs),
                    "rho_median": float(np.nanmedian(rho)), "rho_var": float(np.nanvar(rho)),
                    "recon_err_median": float(np.nanmedian(err)),
                    "recon_err_var": float(np.nanvar(err))})
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records, timing=True):
    """CSV text, one row per record, columns :data:`CSV_COLUMNS`."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        row = r.row(timing)
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def records_to_json(records, timing=True):
    return json.dumps([r.to_dict(timing) for r in records], indent=2)
