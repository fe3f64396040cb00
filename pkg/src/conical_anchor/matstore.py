"""Length-square sampling store for real matrices.

A :class:`SampledMatrix` keeps every row and every column of a matrix in a
binary sum-tree whose leaves hold ``(value**2, sign(value))`` and whose
internal nodes hold the sum of their two children.  A second level of trees
over the row (column) norms gives O(log n) length-square sampling of a row
(column) index, and the trees inside a row give O(log m) sampling of an
entry inside that row.

The store is immutable after construction and never holds RNG state, so a
single instance can be shared by any number of concurrent readers.
"""
import csv
import os

import numpy as np
import scipy.io
import scipy.sparse as sp

from .exceptions import MatrixFormatError, ZeroNormError

__all__ = [
    "SquareForest",
    "SampledMatrix",
    "build",
    "load_csv",
    "load_matrix_market",
    "load_matrix",
    "save_csv",
]

# entry queries use a dense value table below this many cells
_VALMAP_LIMIT = 1 << 22


def _next_pow2(x):
    return 1 << max(0, int(x - 1).bit_length()) if x > 1 else 1


class SquareForest:
    """A collection of sum-trees over nonnegative leaf weights.

    Trees with the same padded capacity are stored together in one 2-D
    heap-ordered array (node 1 is the root, node ``h`` has children ``2h``
    and ``2h + 1``, leaves start at the capacity ``P``), which lets a batch
    of descents over different trees run as a handful of numpy operations.

    Parameters
    ----------
    segments : sequence of 1-D arrays
        Leaf weights of each tree.  Empty segments give a tree with total 0.
    """

    def __init__(self, segments):
        segments = [np.asarray(s, dtype=np.float64).ravel() for s in segments]
        self.n_trees = len(segments)
        lengths = np.array([len(s) for s in segments], dtype=np.int64)
        self.lengths = lengths
        self.offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        self.leaves = (np.concatenate(segments) if segments else np.zeros(0))
        caps = np.array([_next_pow2(max(1, L)) for L in lengths], dtype=np.int64)
        self._group_of = np.empty(self.n_trees, dtype=np.int64)
        self._slot_of = np.empty(self.n_trees, dtype=np.int64)
        self._groups = []
        for g, cap in enumerate(np.unique(caps)):
            members = np.flatnonzero(caps == cap)
            heap = np.zeros((len(members), 2 * cap), dtype=np.float64)
            for slot, t in enumerate(members):
                heap[slot, cap:cap + lengths[t]] = segments[t]
            h = cap // 2
            while h >= 1:
                heap[:, h:2 * h] = heap[:, 2 * h:4 * h:2] + heap[:, 2 * h + 1:4 * h:2]
                h //= 2
            self._group_of[members] = g
            self._slot_of[members] = np.arange(len(members))
            self._groups.append((int(cap), heap))
        self.totals = np.empty(self.n_trees, dtype=np.float64)
        for g, (cap, heap) in enumerate(self._groups):
            members = self._group_of == g
            self.totals[members] = heap[self._slot_of[members], 1]

    def leaf(self, tree, pos):
        """Leaf weight(s) of ``tree`` at position(s) ``pos``."""
        return self.leaves[self.offsets[tree] + pos]

    def sample(self, trees, u):
        """Descend each tree in ``trees`` using the matching uniform variate in ``u``.

        Returns the leaf position inside each tree.  A child with zero weight
        is never entered, so zero-weight leaves are never returned.
        """
        trees = np.asarray(trees, dtype=np.int64)
        u = np.asarray(u, dtype=np.float64)
        trees, u = np.broadcast_arrays(trees, u)
        out = np.empty(trees.shape, dtype=np.int64)
        groups = self._group_of[trees]
        for g in np.unique(groups):
            cap, heap = self._groups[g]
            mask = groups == g
            flat = heap.ravel()
            base = self._slot_of[trees[mask]] * (2 * cap)
            target = u[mask] * flat[base + 1]
            node = np.ones(base.shape, dtype=np.int64)
            for _ in range(cap.bit_length() - 1):
                li = base + 2 * node
                left = flat[li]
                go_right = ((target >= left) & (flat[li + 1] > 0)) | (left <= 0)
                target -= left * go_right
                node = 2 * node + go_right
            out[mask] = node - cap
        return out

    def audit(self):
        """Largest absolute violation of ``node == left + right`` over all internal nodes."""
        worst = 0.0
        for cap, heap in self._groups:
            if cap == 1:
                continue
            parents = heap[:, 1:cap]
            idx = np.arange(1, cap)
            sums = heap[:, 2 * idx] + heap[:, 2 * idx + 1]
            worst = max(worst, float(np.max(np.abs(parents - sums))))
        return worst


class SampledMatrix:
    """Immutable real matrix with length-square sampling access.

    Use :func:`build`, :meth:`from_dense`, :meth:`from_sparse` or one of the
    loaders rather than calling the constructor directly.

    Attributes
    ----------
    n, m : int
        Row and column counts.
    nnz : int
        Number of stored entries (explicit zeros are kept but never sampled).
    """

    def __init__(self, rows, cols, vals, n, m):
        self.n = int(n)
        self.m = int(m)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        self.nnz = len(vals)
        squares = vals * vals
        signs = np.sign(vals).astype(np.int8)

        # row orientation
        self._row_ptr = np.searchsorted(rows, np.arange(self.n + 1)).astype(np.int64)
        self._row_cols = cols
        self._row_sign = signs
        self._keys = rows * self.m + cols
        self.row_trees = SquareForest(
            [squares[self._row_ptr[i]:self._row_ptr[i + 1]] for i in range(self.n)]
        )
        self.row_norm_tree = SquareForest([self.row_trees.totals])

        # column orientation
        corder = np.lexsort((rows, cols))
        crow, ccol = rows[corder], cols[corder]
        self._col_ptr = np.searchsorted(ccol, np.arange(self.m + 1)).astype(np.int64)
        self._col_rows = crow
        self._col_sign = signs[corder]
        csq = squares[corder]
        self.col_trees = SquareForest(
            [csq[self._col_ptr[j]:self._col_ptr[j + 1]] for j in range(self.m)]
        )
        self.col_norm_tree = SquareForest([self.col_trees.totals])
        # values reconstructed from (square, sign), used by entry queries
        self._vals = self._row_sign * np.sqrt(self.row_trees.leaves)
        self._valmap = None

    # ------------------------------------------------------------------
    # construction helpers
    @classmethod
    def from_dense(cls, a):
        """Build from a dense 2-D array, omitting zeros."""
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise MatrixFormatError(f"expected a 2-D array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise MatrixFormatError("matrix contains non-finite values")
        rows, cols = np.nonzero(a)
        return cls(rows.astype(np.int64), cols.astype(np.int64), a[rows, cols], *a.shape)

    @classmethod
    def from_sparse(cls, a):
        coo = sp.coo_matrix(a)
        coo.sum_duplicates()
        return build((coo.row, coo.col, coo.data), *coo.shape)

    # ------------------------------------------------------------------
    # queries
    @property
    def shape(self):
        return (self.n, self.m)

    def frob_norm_sq(self):
        return float(self.row_norm_tree.totals[0])

    def row_norm_sq(self, i):
        i = self._check_index(i, self.n, "row")
        out = self.row_trees.totals[i]
        return float(out) if np.ndim(out) == 0 else out

    def col_norm_sq(self, j):
        j = self._check_index(j, self.m, "column")
        out = self.col_trees.totals[j]
        return float(out) if np.ndim(out) == 0 else out

    def entry(self, i, j):
        """Exact stored value ``H[i, j]`` (0 for entries not stored)."""
        return float(self.entries(i, j))

    def entries(self, rows, cols):
        """Vectorised entry lookup for broadcastable index arrays."""
        rows = self._check_index(rows, self.n, "row")
        cols = self._check_index(cols, self.m, "column")
        rows, cols = np.broadcast_arrays(rows, cols)
        if self.nnz == 0:
            return np.zeros(rows.shape)
        if self.n * self.m <= _VALMAP_LIMIT:
            return self._value_map()[rows, cols]
        keys = rows * self.m + cols
        pos = np.minimum(np.searchsorted(self._keys, keys), self.nnz - 1)
        found = self._keys[pos] == keys
        return np.where(found, self._vals[pos], 0.0)

    def _value_map(self):
        # dense lookup table for small matrices; built on first use
        if self._valmap is None:
            vm = np.zeros((self.n, self.m))
            r = np.repeat(np.arange(self.n), np.diff(self._row_ptr))
            vm[r, self._row_cols] = self._vals
            self._valmap = vm
        return self._valmap

    def row(self, i):
        """Dense copy of row ``i``."""
        i = int(self._check_index(i, self.n, "row"))
        out = np.zeros(self.m)
        lo, hi = self._row_ptr[i], self._row_ptr[i + 1]
        out[self._row_cols[lo:hi]] = self._vals[lo:hi]
        return out

    # ------------------------------------------------------------------
    # sampling
    def sample_row_index(self, rng, size=None):
        """Row ``i`` with probability ``||H[i, :]||^2 / ||H||_F^2``."""
        if self.frob_norm_sq() <= 0:
            raise ZeroNormError("cannot sample a row index from an all-zero matrix")
        u = rng.random(1 if size is None else size)
        out = self.row_norm_tree.sample(0, u)
        return int(out[0]) if size is None else out

    def sample_col_index(self, rng, size=None):
        """Column ``j`` with probability ``||H[:, j]||^2 / ||H||_F^2``."""
        if self.frob_norm_sq() <= 0:
            raise ZeroNormError("cannot sample a column index from an all-zero matrix")
        u = rng.random(1 if size is None else size)
        out = self.col_norm_tree.sample(0, u)
        return int(out[0]) if size is None else out

    def sample_index_in_row(self, i, rng, size=None):
        """Column ``j`` with probability ``H[i, j]^2 / ||H[i, :]||^2``.

        ``i`` may be an array, in which case one draw is made per entry.
        """
        scalar = np.ndim(i) == 0 and size is None
        i = np.asarray(self._check_index(i, self.n, "row"))
        if size is not None:
            i = np.broadcast_to(i, size)
        if np.any(self.row_trees.totals[i] <= 0):
            raise ZeroNormError("cannot sample inside an all-zero row")
        pos = self.row_trees.sample(i, rng.random(i.shape))
        out = self._row_cols[self._row_ptr[i] + pos]
        return int(out) if scalar else out

    def sample_index_in_col(self, j, rng, size=None):
        """Row ``i`` with probability ``H[i, j]^2 / ||H[:, j]||^2``."""
        scalar = np.ndim(j) == 0 and size is None
        j = np.asarray(self._check_index(j, self.m, "column"))
        if size is not None:
            j = np.broadcast_to(j, size)
        if np.any(self.col_trees.totals[j] <= 0):
            raise ZeroNormError("cannot sample inside an all-zero column")
        pos = self.col_trees.sample(j, rng.random(j.shape))
        out = self._col_rows[self._col_ptr[j] + pos]
        return int(out) if scalar else out

    # ------------------------------------------------------------------
    # export and audit
    def to_triplets(self):
        """Stored entries as ``(rows, cols, values)`` arrays in row-major order."""
        rows = np.repeat(np.arange(self.n), np.diff(self._row_ptr))
        return rows, self._row_cols.copy(), self._vals.copy()

    def to_dense(self):
        out = np.zeros((self.n, self.m))
        r, c, v = self.to_triplets()
        out[r, c] = v
        return out

    def audit(self):
        """Worst violation of the tree invariants; 0.0 for a consistent store."""
        worst = max(
            self.row_trees.audit(),
            self.col_trees.audit(),
            self.row_norm_tree.audit(),
            self.col_norm_tree.audit(),
        )
        if np.any(self.row_norm_tree.leaves != self.row_trees.totals):
            worst = max(worst, float(np.max(np.abs(self.row_norm_tree.leaves - self.row_trees.totals))))
        return worst

    @staticmethod
    def _check_index(idx, bound, what):
        arr = np.asarray(idx)
        if arr.dtype.kind not in "iu":
            if arr.dtype.kind == "f" and np.all(arr == np.floor(arr)):
                arr = arr.astype(np.int64)
            else:
                raise IndexError(f"{what} index must be an integer")
        if np.any(arr < 0) or np.any(arr >= bound):
            raise IndexError(f"{what} index out of range [0, {bound})")
        return arr.astype(np.int64) if arr.ndim else int(arr)

    def __repr__(self):
        return f"SampledMatrix(n={self.n}, m={self.m}, nnz={self.nnz})"


def build(triplets, n, m):
    """Build a :class:`SampledMatrix` from ``(row, col, value)`` triplets.

    Parameters
    ----------
    triplets : iterable of (int, int, float) or tuple of three arrays
        0-based coordinates.  Duplicate coordinates are rejected.
    n, m : int
        Matrix shape.

    Raises
    ------
    MatrixFormatError
        On out-of-range indices, duplicates, or non-finite values.
    """
    if n < 0 or m < 0:
        raise MatrixFormatError(f"invalid shape ({n}, {m})")
    if isinstance(triplets, tuple) and len(triplets) == 3 and np.ndim(triplets[0]) == 1:
        rows, cols, vals = (np.asarray(a) for a in triplets)
    else:
        trip = list(triplets)
        if trip:
            rows, cols, vals = (np.asarray(a) for a in zip(*trip))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
    if not (len(rows) == len(cols) == len(vals)):
        raise MatrixFormatError("row, column and value arrays differ in length")
    if len(rows) and (rows.dtype.kind not in "iu" or cols.dtype.kind not in "iu"):
        if np.any(rows != np.floor(rows)) or np.any(cols != np.floor(cols)):
            raise MatrixFormatError("row and column indices must be integers")
    rows = rows.astype(np.int64)
    cols = cols.astype(np.int64)
    vals = vals.astype(np.float64)
    bad = np.flatnonzero((rows < 0) | (rows >= n) | (cols < 0) | (cols >= m))
    if len(bad):
        b = bad[0]
        raise MatrixFormatError(
            f"entry ({rows[b]}, {cols[b]}) outside the {n}x{m} matrix"
        )
    if not np.all(np.isfinite(vals)):
        raise MatrixFormatError("non-finite value in triplets")
    keys = rows * max(m, 1) + cols
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 1):
        k = uniq[np.argmax(counts > 1)]
        raise MatrixFormatError(f"duplicate entry ({k // max(m, 1)}, {k % max(m, 1)})")
    return SampledMatrix(rows, cols, vals, n, m)


def load_csv(path):
    """Read the triplet CSV format.

    The first non-blank line is ``n,m``; every following line is
    ``i,j,value`` with 0-based indices.
    """
    rows, cols, vals = [], [], []
    shape = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            fields = [f.strip() for f in rec]
            if shape is None:
                if len(fields) != 2:
                    raise MatrixFormatError("header must be 'n,m'", line=lineno)
                try:
                    shape = (int(fields[0]), int(fields[1]))
                except ValueError:
                    raise MatrixFormatError(f"non-integer dimensions {fields!r}", line=lineno) from None
                continue
            if len(fields) != 3:
                raise MatrixFormatError(f"expected 'i,j,value', got {len(fields)} fields", line=lineno)
            try:
                i, j = int(fields[0]), int(fields[1])
            except ValueError:
                raise MatrixFormatError(f"non-integer index in {fields[:2]!r}", line=lineno) from None
            try:
                v = float(fields[2])
            except ValueError:
                raise MatrixFormatError(f"non-numeric value {fields[2]!r}", line=lineno) from None
            if not (0 <= i < shape[0] and 0 <= j < shape[1]):
                raise MatrixFormatError(
                    f"entry ({i}, {j}) outside the declared {shape[0]}x{shape[1]} shape", line=lineno
                )
            rows.append(i)
            cols.append(j)
            vals.append(v)
    if shape is None:
        raise MatrixFormatError(f"{path}: empty file, missing 'n,m' header")
    return build((np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals)), *shape)


def load_matrix_market(path):
    """Read a Matrix Market file (1-based on disk, 0-based in memory)."""
    try:
        a = scipy.io.mmread(path)
    except (ValueError, IndexError, TypeError) as exc:
        raise MatrixFormatError(f"{path}: {exc}") from None
    if sp.issparse(a):
        return SampledMatrix.from_sparse(a)
    return SampledMatrix.from_dense(np.asarray(a, dtype=np.float64))


def load_matrix(path):
    """Dispatch on extension: ``.mtx`` is Matrix Market, anything else triplet CSV."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"matrix file not found: {path}")
    if str(path).lower().endswith(".mtx"):
        return load_matrix_market(path)
    return load_csv(path)


def save_csv(matrix, path):
    """Write a dense array or :class:`SampledMatrix` in the triplet CSV format."""
    if not isinstance(matrix, SampledMatrix):
        matrix = SampledMatrix.from_dense(matrix)
    r, c, v = matrix.to_triplets()
    with open(path, "w", newline="") as fh:
        fh.write(f"{matrix.n},{matrix.m}\n")
        for i, j, x in zip(r.tolist(), c.tolist(), v.tolist()):
            fh.write(f"{i},{j},{x!r}\n")
