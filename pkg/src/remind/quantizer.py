"""Product quantization of feature tensors.

Each d-dimensional tensor element (one spatial location of an m x m x d map)
is cut into ``s`` contiguous channel blocks of width ``d / s``; every block is
quantized against its own ``c``-entry k-means codebook, so an element is
stored as ``s`` small integers. ``s = 1`` is plain k-means vector quantization.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_tensor, check_tensor_batch
from .rng import check_random_state, split_rng

# rows x centroids x sub_dim elements per chunk of the exact distance search
_CHUNK_ELEMS = 1 << 22


# --------------------------------------------------------------------------
# k-means

def nearest_centroid(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest-centroid search by squared Euclidean distance.

    Distances are computed from explicit differences in float64 (no norm
    expansion), and ties resolve to the lowest centroid index.
    Returns ``(indices, squared_distances)``.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    n, k = X.shape[0], C.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(1, k * C.shape[1]))
    for start in range(0, n, step):
        diff = X[start:start + step, None, :] - C[None, :, :]
        d2 = np.einsum("nkj,nkj->nk", diff, diff)
        best = np.argmin(d2, axis=1)
        idx[start:start + step] = best
        dist[start:start + step] = d2[np.arange(best.shape[0]), best]
    return idx, dist


def _fast_assign(X, C, x_sq):
    # ||x||^2 is constant per row, so it is added back only for the winners
    G = X @ C.T
    G *= -2.0
    G += np.einsum("kj,kj->k", C, C)[None, :]
    labels = np.argmin(G, axis=1)
    dist = G[np.arange(X.shape[0]), labels] + x_sq
    np.maximum(dist, 0.0, out=dist)
    return labels, dist


def kmeans_objective(X, C) -> float:
    """Sum of squared distances from each vector to its nearest centroid."""
    return float(nearest_centroid(X, C)[1].sum())


def kmeans_plusplus(X: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ seeding; falls back to uniform picks once all mass is zero."""
    rng = check_random_state(rng)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = np.einsum("nj,nj->n", X - centers[0], X - centers[0])
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(n, p=closest / total)
        else:
            pick = rng.integers(n)
        centers[i] = X[pick]
        diff = X - centers[i]
        np.minimum(closest, np.einsum("nj,nj->n", diff, diff), out=closest)
    return centers


def _repair_empty(X, C, labels, dist, k):
    """Fill empty clusters with the point farthest from its centroid.

    Only points whose cluster keeps at least one other member are eligible,
    so each repair strictly shrinks the number of empty clusters. When no
    eligible point remains (fewer points than clusters) the empty centroid is
    left as it is, i.e. duplicated or stale.
    """
    counts = np.bincount(labels, minlength=k)
    repaired = False
    for e in np.flatnonzero(counts == 0):
        eligible = counts[labels] >= 2
        if not eligible.any():
            break
        masked = np.where(eligible, dist, -1.0)
        p = int(np.argmax(masked))
        counts[labels[p]] -= 1
        counts[e] += 1
        labels[p] = e
        dist[p] = 0.0
        C[e] = X[p]
        repaired = True
    return repaired


def _cluster_means(X, labels, C):
    k = C.shape[0]
    counts = np.bincount(labels, minlength=k)
    sums = np.stack([np.bincount(labels, weights=X[:, j], minlength=k)
                     for j in range(X.shape[1])], axis=1)
    out = C.copy()
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz, None]
    return out


def train_kmeans(vectors, k: int, iters: int = 25, rng=None, *,
                 return_history: bool = False):
    """Lloyd's k-means with k-means++ seeding and empty-cluster repair.

    Parameters
    ----------
    vectors : array-like of shape (n, dim)
    k : int
        Number of centroids. ``k`` larger than the number of distinct
        vectors is allowed; surplus centroids end up duplicated.
    iters : int
        Maximum number of Lloyd iterations; stops early once assignments
        are stable.
    rng : Generator or int or None
    return_history : bool
        Also return the objective after seeding and after every iteration.

    Returns
    -------
    centroids : ndarray of shape (k, dim), float32
    history : list of float, only if ``return_history``
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValueError("k-means needs at least one vector")
    if k < 1:
        raise ValueError("k must be at least 1")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    rng = check_random_state(rng)

    x_sq = np.einsum("nj,nj->n", X, X)
    C = kmeans_plusplus(X, k, rng)
    history: list[float] = []
    prev = None
    for _ in range(iters):
        labels, dist = _fast_assign(X, C, x_sq)
        _record(history, float(dist.sum()))
        repaired = _repair_empty(X, C, labels, dist, k)
        if prev is not None and not repaired and np.array_equal(labels, prev):
            break
        C = _cluster_means(X, labels, C)
        prev = labels
    _, dist = _fast_assign(X, C, x_sq)
    _record(history, float(dist.sum()))
    C = C.astype(np.float32)
    return (C, history) if return_history else C


def _record(history, obj):
    # tolerance covers float64 rounding in the norm-expanded distances
    if history and obj > history[-1] * (1 + 1e-9) + 1e-12:
        raise RuntimeError(f"k-means objective increased: {history[-1]} -> {obj}")
    history.append(obj)


# --------------------------------------------------------------------------
# product quantizer

@dataclass(frozen=True, eq=False)
class Codebook:
    """Trained PQ model: ``s`` sub-codebooks of ``c`` centroids each."""

    centroids: np.ndarray  # (s, c, sub_dim) float32
    trained_on: int = 0

    def __post_init__(self):
        cents = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if cents.ndim != 3 or min(cents.shape) < 1:
            raise ValueError(f"centroids must have shape (s, c, sub_dim), got {cents.shape}")
        if not np.all(np.isfinite(cents)):
            raise ValueError("codebook centroids must be finite")
        if cents.shape[1] > 65536:
            raise ValueError("at most 65536 centroids per sub-codebook are supported")
        cents.setflags(write=False)
        object.__setattr__(self, "centroids", cents)

    @property
    def s(self) -> int:
        return self.centroids.shape[0]

    @property
    def c(self) -> int:
        return self.centroids.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def d(self) -> int:
        return self.s * self.sub_dim

    @property
    def code_dtype(self):
        return code_dtype(self.c)

    def __eq__(self, other):
        return (isinstance(other, Codebook) and self.trained_on == other.trained_on
                and np.array_equal(self.centroids, other.centroids))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class QuantizedSample:
    """An m x m x s array of code indices plus the sample's metadata.

    ``label`` is a hard class id; replay-time soft labels are derived from it.
    """

    codes: np.ndarray
    label: int
    instance_id: int = 0
    seq_index: int = 0

    @property
    def nbytes(self) -> int:
        return int(self.codes.nbytes)


def code_dtype(c: int):
    return np.uint8 if c <= 256 else np.uint16


def sample_bytes(m: int, s: int, c: int) -> int:
    """Bytes needed to store one quantized m x m x d tensor."""
    return m * m * s * (1 if c <= 256 else 2)


def codebook_bytes(cb: Codebook) -> int:
    """Bytes of float32 centroid storage."""
    return cb.s * cb.c * cb.sub_dim * 4


def _elements(tensors) -> np.ndarray:
    X = check_tensor_batch(tensors, name="tensors")
    return X.reshape(-1, X.shape[3])


def train_pq(tensors, s: int, c: int, iters: int = 25, rng=None) -> Codebook:
    """Train one k-means codebook per contiguous channel block.

    All m*m elements of every training tensor are pooled. Each partition is
    trained from its own split RNG stream on its own columns only.
    """
    X = _elements(tensors)
    d = X.shape[1]
    if s < 1 or d % s:
        raise ValueError(f"d={d} is not divisible by s={s}")
    if c < 1:
        raise ValueError("c must be at least 1")
    if X.shape[0] < c:
        warnings.warn(f"only {X.shape[0]} tensor elements to fit {c} centroids; "
                      "surplus centroids will be duplicates", RuntimeWarning, stacklevel=2)
    sub = d // s
    streams = split_rng(check_random_state(rng), s)
    cents = np.stack([train_kmeans(X[:, p * sub:(p + 1) * sub], c, iters, streams[p])
                      for p in range(s)])
    return Codebook(cents, trained_on=int(X.shape[0]))


def encode_batch(cb: Codebook, tensors) -> np.ndarray:
    """Encode tensors of shape (n, m, m, d) into codes of shape (n, m, m, s)."""
    X = check_tensor_batch(tensors, name="tensors")
    n, m, _, d = X.shape
    if d != cb.d:
        raise ValueError(f"tensor depth {d} does not match codebook depth {cb.d}")
    flat = X.reshape(-1, cb.s, cb.sub_dim)
    codes = np.empty((flat.shape[0], cb.s), dtype=cb.code_dtype)
    for p in range(cb.s):
        codes[:, p] = nearest_centroid(flat[:, p, :], cb.centroids[p])[0]
    return codes.reshape(n, m, m, cb.s)


def decode_batch(cb: Codebook, codes) -> np.ndarray:
    """Reconstruct float32 tensors of shape (n, m, m, d) from codes."""
    codes = np.asarray(codes)
    if codes.ndim == 3:
        codes = codes[None]
    if codes.ndim != 4 or codes.shape[3] != cb.s:
        raise ValueError(f"codes must have shape (n, m, m, {cb.s}), got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= cb.c):
        raise ValueError(f"code out of range for a codebook of size {cb.c}")
    parts = cb.centroids[np.arange(cb.s), codes.astype(np.intp)]  # (n, m, m, s, sub_dim)
    return parts.reshape(codes.shape[:3] + (cb.d,))


def encode(cb: Codebook, t, label: int = 0, instance_id: int = 0,
           seq_index: int = 0) -> QuantizedSample:
    t = check_tensor(t)
    return QuantizedSample(encode_batch(cb, t[None])[0], int(label),
                           int(instance_id), int(seq_index))


def decode(cb: Codebook, q: QuantizedSample) -> np.ndarray:
    return decode_batch(cb, q.codes[None])[0]


def reconstruction_mse(cb: Codebook, tensors) -> float:
    """Mean squared elementwise error of encode-then-decode over ``tensors``."""
    X = check_tensor_batch(tensors, name="tensors")
    if X.shape[0] == 0:
        raise ValueError("reconstruction_mse needs at least one tensor")
    R = decode_batch(cb, encode_batch(cb, X))
    return float(np.mean((R.astype(np.float64) - X.astype(np.float64)) ** 2))


# --------------------------------------------------------------------------
# serialization: "RMCB" | u32 version | u32 s | u32 c | u32 sub_dim | f32[s*c*sub_dim]

_CB_HEADER = struct.Struct("<4sIIII")
_CB_MAGIC = b"RMCB"


def codebook_to_bytes(cb: Codebook) -> bytes:
    return (_CB_HEADER.pack(_CB_MAGIC, 1, cb.s, cb.c, cb.sub_dim)
            + cb.centroids.astype("<f4").tobytes())


def codebook_from_bytes(raw: bytes) -> Codebook:
    if len(raw) < _CB_HEADER.size:
        raise ValueError("codebook blob shorter than its header")
    magic, version, s, c, sub = _CB_HEADER.unpack_from(raw, 0)
    if magic != _CB_MAGIC or version != 1:
        raise ValueError(f"not a version-1 codebook (magic {magic!r}, version {version})")
    if len(raw) != _CB_HEADER.size + 4 * s * c * sub:
        raise ValueError("codebook payload size does not match its header")
    cents = np.frombuffer(raw, dtype="<f4", offset=_CB_HEADER.size).reshape(s, c, sub)
    return Codebook(cents.astype(np.float32))


def save_codebook(cb: Codebook, path) -> None:
    with open(path, "wb") as fh:
        fh.write(codebook_to_bytes(cb))


def load_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        return codebook_from_bytes(fh.read())


# --------------------------------------------------------------------------

class ProductQuantizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` learns a :class:`Codebook`, ``transform``
    returns code arrays and ``inverse_transform`` reconstructs tensors.

    Parameters
    ----------
    n_codebooks : int, default=32
        Number of channel partitions ``s``.
    codebook_size : int, default=256
        Centroids per partition ``c``.
    n_iter : int, default=25
        Lloyd iterations per partition.
    random_state : int, Generator or None
    """

    def __init__(self, n_codebooks=32, codebook_size=256, n_iter=25, random_state=None):
        self.n_codebooks = n_codebooks
        self.codebook_size = codebook_size
        self.n_iter = n_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        self.codebook_ = train_pq(X, self.n_codebooks, self.codebook_size, self.n_iter,
                                  check_random_state(self.random_state))
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        return encode_batch(self.codebook_, X)

    def inverse_transform(self, codes):
        check_is_fitted(self, "codebook_")
        return decode_batch(self.codebook_, codes)

    def score(self, X, y=None):
        """Negative reconstruction MSE (higher is better)."""
        check_is_fitted(self, "codebook_")
        return -reconstruction_mse(self.codebook_, X)
