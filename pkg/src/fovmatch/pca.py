"""Exact and randomized principal component analysis.

A fitted model holds the orthonormal weight matrix (d x l), the training
scores (n x l), the singular values of the centered data, and the column
means, so out-of-sample vectors can be projected consistently. The
randomized fit sketches the data with a seeded Gaussian test matrix,
orthonormalizes, and solves the small SVD; accuracy is controlled by
oversampling and power iterations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidRank

_MAGIC = b"PCM1"

# Tile blocks are streamed through the sketch in groups of this many rows
# so large dictionaries never materialize the full data matrix.
DEFAULT_BLOCK_ROWS = 256


@dataclass(frozen=True)
class PcaModel:
    weights: np.ndarray          # d x l, orthonormal columns
    components: np.ndarray       # n x l training scores (centered data @ weights)
    singular_values: np.ndarray  # length l, nonincreasing
    column_means: np.ndarray     # length d

    @property
    def n_samples(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    @property
    def n_components(self) -> int:
        return self.weights.shape[1]

    def project(self, sample: np.ndarray) -> np.ndarray:
        """Map a feature vector (length d) to model coordinates (length l)."""
        v = np.asarray(sample, dtype=np.float64).ravel()
        if v.size != self.n_features:
            raise DimensionMismatch(f"sample length {v.size} != {self.n_features}")
        return (v - self.column_means) @ self.weights

    def nearest(self, query: np.ndarray, k: int = 1) -> list[tuple[int, float]]:
        """k training rows closest to `query` in score space, ascending.

        Ties break toward lower row index.
        """
        q = np.asarray(query, dtype=np.float64).ravel()
        if q.size != self.n_components:
            raise DimensionMismatch(f"query length {q.size} != {self.n_components}")
        if not 1 <= k <= self.n_samples:
            raise DimensionMismatch(f"k={k} outside [1, {self.n_samples}]")
        d = np.sqrt(((self.components - q) ** 2).sum(axis=1))
        order = np.argsort(d, kind="stable")[:k]
        return [(int(i), float(d[i])) for i in order]

    def to_bytes(self) -> bytes:
        n, d, l = self.n_samples, self.n_features, self.n_components
        head = _MAGIC + struct.pack("<III", n, d, l)
        body = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (self.column_means, self.weights, self.singular_values, self.components)
        )
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PcaModel":
        if blob[:4] != _MAGIC:
            raise ValueError("not a PCA model blob")
        n, d, l = struct.unpack("<III", blob[4:16])
        off = 16

        def take(count, shape):
            nonlocal off
            a = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            off += count * 8
            return a.astype(np.float64)

        means = take(d, (d,))
        weights = take(d * l, (d, l))
        sv = take(l, (l,))
        comps = take(n * l, (n, l))
        return cls(weights=weights, components=comps, singular_values=sv, column_means=means)


def _fix_signs(weights: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(weights), axis=0)
    signs = np.sign(weights[idx, np.arange(weights.shape[1])])
    signs[signs == 0] = 1.0
    return weights * signs


def _check_rank(l: int, n: int, d: int) -> None:
    if not 1 <= l <= min(n, d):
        raise InvalidRank(f"l={l} outside [1, min(n={n}, d={d})]")


def fit_exact(data: np.ndarray, l: int) -> PcaModel:
    """Deterministic SVD of the column-centered data, truncated to l components."""
    X = np.asarray(data, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise InvalidRank("need at least 2 observations")
    _check_rank(l, n, d)
    means = X.mean(axis=0)
    Xc = X - means
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    weights = _fix_signs(vt[:l].T)
    return PcaModel(
        weights=weights,
        components=Xc @ weights,
        singular_values=s[:l].copy(),
        column_means=means,
    )


def fit_randomized(
    data: np.ndarray,
    l: int,
    oversample: int = 10,
    power_iters: int = 1,
    seed: int | None = 0,
) -> PcaModel:
    """Sketch-based PCA: Y = X @ Omega, Y = QR, B = Q^T X, small SVD of B.

    The Gaussian test matrix is drawn from `seed`, so repeated fits are
    bit-identical. The sketch width l + oversample is clamped to min(n, d).
    """
    X = np.asarray(data, dtype=np.float64)
    n, d = X.shape
    _check_rank(l, n, d)

    def blocks():
        yield X

    return _fit_randomized_blocks(blocks, n, d, l, oversample, power_iters, seed)


def fit_randomized_blocks(
    block_fn,
    n: int,
    d: int,
    l: int,
    oversample: int = 10,
    power_iters: int = 1,
    seed: int | None = 0,
) -> PcaModel:
    """Randomized PCA over data delivered as row blocks.

    `block_fn()` must return a fresh iterator of row-block arrays (each
    shape (b_i, d), sum of b_i = n) and is called once per data pass, so
    very wide tile matrices never need to exist in memory at once.
    """
    _check_rank(l, n, d)
    return _fit_randomized_blocks(block_fn, n, d, l, oversample, power_iters, seed)


def _fit_randomized_blocks(block_fn, n, d, l, oversample, power_iters, seed):
    sketch = min(l + max(oversample, 0), n, d)
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((d, sketch))

    col_sums = np.zeros(d)
    for blk in block_fn():
        col_sums += blk.sum(axis=0)
    means = col_sums / n

    def centered_times(M: np.ndarray) -> np.ndarray:
        # (X - 1 mu^T) @ M, streamed over row blocks
        shift = means @ M
        out = np.empty((n, M.shape[1]))
        r = 0
        for blk in block_fn():
            out[r : r + blk.shape[0]] = blk @ M - shift
            r += blk.shape[0]
        return out

    def centered_t_times(Y: np.ndarray) -> np.ndarray:
        # (X - 1 mu^T)^T @ Y, streamed over row blocks
        out = np.zeros((d, Y.shape[1]))
        r = 0
        for blk in block_fn():
            out += blk.T @ Y[r : r + blk.shape[0]]
            r += blk.shape[0]
        return out - np.outer(means, Y.sum(axis=0))

    Y = centered_times(omega)
    for _ in range(max(power_iters, 0)):
        Q, _ = np.linalg.qr(Y)
        Y = centered_times(centered_t_times(Q))
    Q, _ = np.linalg.qr(Y)

    B = centered_t_times(Q).T  # sketch x d
    _, s, vt = np.linalg.svd(B, full_matrices=False)
    weights = _fix_signs(vt[:l].T)
    return PcaModel(
        weights=weights,
        components=centered_times(weights),
        singular_values=s[:l].copy(),
        column_means=means,
    )


def project(model: PcaModel, sample: np.ndarray) -> np.ndarray:
    return model.project(sample)


def nearest_neighbor(model: PcaModel, query_feature: np.ndarray, k: int = 1) -> list[tuple[int, float]]:
    return model.nearest(query_feature, k)
