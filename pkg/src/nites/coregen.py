"""Statistical model of the core subspace and sampling from it.

Core samples are clustered with a binary-splitting k-means tree. Inside a
cluster, PCA reduces and whitens, symmetric FastICA rotates to roughly
independent sources, and each source's marginal is kept as an inverse-CDF
table on a uniform probability grid. Sampling picks a cluster from the
interval representation of the mixture weights, pushes standard normal
draws through the normal CDF and the inverse-CDF tables, and maps the
result back through the ICA and PCA inverses.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from sklearn.cluster import KMeans

from .errors import FitError, ModelQualityError

log = logging.getLogger(__name__)

MAX_REJECTIONS = 1000


def _sub_seed(seed, *path):
    return int(np.random.SeedSequence([int(seed), *path]).generate_state(1)[0])


# -- hierarchical k-means ----------------------------------------------------

def _inertia(x):
    return float(((x - x.mean(axis=0)) ** 2).sum())


def two_means(x, seed):
    """Labels (0/1) of a 2-means split."""
    km = KMeans(n_clusters=2, n_init=4, random_state=seed)
    return km.fit_predict(x)


def hierarchical_kmeans(samples, leaves, seed=0, min_size=1):
    """Binary k-means tree grown by splitting the leaf with largest inertia.

    Returns one leaf label per sample, leaves numbered left to right in
    the tree. Splits that would create a leaf smaller than ``min_size`` are
    refused; if no leaf can be split further, fewer than ``leaves`` labels
    are produced and a warning is logged.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[0]
    if leaves < 1:
        raise ValueError("number of leaves must be >= 1")
    if leaves > n:
        raise ValueError(f"cannot form {leaves} clusters from {n} samples")

    nodes = [np.arange(n)]
    inertia = [_inertia(x)]
    frozen = [False]
    n_splits = 0
    while len(nodes) < leaves:
        candidates = [i for i in range(len(nodes))
                      if not frozen[i] and len(nodes[i]) >= 2 * min_size and inertia[i] > 0]
        if not candidates:
            log.warning("hierarchical k-means stopped at %d of %d leaves", len(nodes), leaves)
            break
        i = max(candidates, key=lambda j: (inertia[j], -j))
        idx = nodes[i]
        labels = two_means(x[idx], _sub_seed(seed, n_splits))
        n_splits += 1
        left, right = idx[labels == 0], idx[labels == 1]
        if min(len(left), len(right)) < max(min_size, 1):
            frozen[i] = True
            continue
        nodes[i:i + 1] = [left, right]
        inertia[i:i + 1] = [_inertia(x[left]), _inertia(x[right])]
        frozen[i:i + 1] = [False, False]

    out = np.empty(n, dtype=np.int64)
    for label, idx in enumerate(nodes):
        out[idx] = label
    return out


# -- FastICA -----------------------------------------------------------------

def _sym_decorrelate(w):
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def fastica(whitened, seed=0, max_iter=200, tol=1e-4, return_info=False):
    """Symmetric fixed-point FastICA with the log-cosh contrast.

    ``whitened`` is (samples, r) with identity covariance. Returns the
    orthogonal (r, r) unmixing matrix W, sources being ``whitened @ W.T``.
    Non-convergence keeps the last iterate and emits a RuntimeWarning.
    """
    x = np.asarray(whitened, dtype=np.float64).T
    r, n = x.shape
    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((r, r)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = np.tanh(w @ x)
        g_prime = 1.0 - g * g
        w_new = _sym_decorrelate(g @ x.T / n - g_prime.mean(axis=1)[:, None] * w)
        lim = np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0))
        w = w_new
        if lim < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"FastICA did not converge in {max_iter} iterations", RuntimeWarning, stacklevel=2)
    if return_info:
        return w, it, converged
    return w


def amari_distance(w, a):
    """Normalized Amari index of W @ A; 0 iff W inverts A up to scale and permutation."""
    p = np.abs(np.asarray(w) @ np.asarray(a))
    m = p.shape[0]
    if m == 1:
        return 0.0
    rows = (p.sum(axis=1) / p.max(axis=1) - 1.0).sum()
    cols = (p.sum(axis=0) / p.max(axis=0) - 1.0).sum()
    return float((rows + cols) / (2.0 * m * (m - 1)))


# -- inverse-CDF tables ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CdfTable:
    quantiles: np.ndarray  # values at probabilities linspace(0, 1, bins)

    @property
    def bins(self):
        return len(self.quantiles)

    @property
    def support(self):
        return float(self.quantiles[0]), float(self.quantiles[-1])

    def lookup(self, u):
        return cdf_lookup(self.quantiles[None, :], np.asarray(u)[..., None])[..., 0]


def build_cdf(values, bins=64):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 2:
        raise ValueError("need at least 2 values to build a CDF table")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    q = np.quantile(values, np.linspace(0.0, 1.0, bins))
    return CdfTable(np.maximum.accumulate(q))


def cdf_lookup(tables, u):
    """Inverse-CDF lookup with linear interpolation between grid points.

    ``tables`` is (r, bins); ``u`` is (..., r) in [0, 1]. Column j of ``u``
    is looked up in table j.
    """
    tables = np.asarray(tables)
    bins = tables.shape[1]
    pos = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0) * (bins - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), bins - 2)
    frac = pos - lo
    cols = np.arange(tables.shape[0])
    left = tables[cols, lo]
    right = tables[cols, lo + 1]
    return left + frac * (right - left)


def quantize_cdfs(tables, codebook_size, seed=0):
    """Vector-quantize CDF tables.

    Returns (codebook, codes, distortion) where ``codebook[codes]``
    approximates ``tables`` and distortion is the mean squared error per
    table. Codewords are sorted so every decoded table stays monotone.
    """
    tables = np.asarray(tables, dtype=np.float64)
    if tables.ndim != 2 or tables.shape[0] < 1:
        raise ValueError("need at least one CDF table")
    if codebook_size < 1:
        raise ValueError("codebook size must be >= 1")
    t = tables.shape[0]
    if codebook_size >= t:
        return tables.copy(), np.arange(t), 0.0
    km = KMeans(n_clusters=codebook_size, n_init=4, random_state=seed).fit(tables)
    codebook = np.sort(km.cluster_centers_, axis=1)
    d2 = ((tables[:, None, :] - codebook[None, :, :]) ** 2).sum(axis=2)
    codes = np.argmin(d2, axis=1)
    distortion = float(d2[np.arange(t), codes].mean())
    return codebook, codes, distortion


# -- per-cluster model -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClusterModel:
    weight: float
    mean: np.ndarray  # (d,)
    pca_basis: np.ndarray  # (r, d) orthonormal rows
    pca_scales: np.ndarray  # (r,) standard deviations
    unmixing: np.ndarray  # (r, r) orthogonal
    cdfs: np.ndarray  # (r, bins) inverse-CDF tables per ICA source
    cdf_codes: np.ndarray = None  # indices into the shared codebook when VQ-coded

    def __post_init__(self):
        # C-ordered float64 so a reloaded cluster computes bit-identically
        for name in ("mean", "pca_basis", "pca_scales", "unmixing", "cdfs"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64, order="C"))

    @property
    def components(self):
        return self.pca_basis.shape[0]

    def whiten(self, z):
        return (np.asarray(z) - self.mean) @ self.pca_basis.T / self.pca_scales

    def analyze(self, z):
        """Core samples -> ICA sources."""
        return self.whiten(z) @ self.unmixing.T

    def synthesize(self, sources):
        """ICA sources -> core samples (ICA inverse, then PCA inverse)."""
        whitened = np.asarray(sources) @ self.unmixing
        return self.mean + (whitened * self.pca_scales) @ self.pca_basis


def fit_cluster(samples, retain_energy=0.98, bins=64, seed=0, max_components=None, weight=1.0):
    """PCA-whiten a cluster's samples, run FastICA and tabulate source marginals."""
    z = np.asarray(samples, dtype=np.float64)
    n, d = z.shape
    if n < 2:
        raise FitError(f"cluster has {n} sample(s); at least 2 are needed")
    mean = z.mean(axis=0)
    u, s, vt = np.linalg.svd(z - mean, full_matrices=False)
    var = s * s / n
    total = var.sum()
    rank = int((s > max(s[0], 1e-300) * 1e-10).sum()) if s.size and s[0] > 1e-12 else 0
    rank = min(rank, n - 1)
    if rank == 0 or total <= 0:
        empty = np.zeros((0, d))
        return ClusterModel(weight, mean, empty, np.zeros(0), np.zeros((0, 0)), np.zeros((0, bins)))
    frac = np.cumsum(var) / total
    r = int(np.searchsorted(frac, retain_energy - 1e-12) + 1)
    r = min(r, rank)
    if max_components is not None:
        r = max(1, min(r, int(max_components)))
    scales = np.sqrt(var[:r])
    whitened = u[:, :r] * np.sqrt(n)
    unmixing = fastica(whitened, seed=seed)
    sources = whitened @ unmixing.T
    cdfs = np.stack([build_cdf(sources[:, j], bins).quantiles for j in range(r)])
    return ClusterModel(weight, mean, vt[:r].copy(), scales, unmixing, cdfs)


# -- mixture model -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeneratorModel:
    clusters: tuple
    boundaries: np.ndarray  # cumulative weights, last entry exactly 1
    reject_threshold: float = 0.5
    codebook: np.ndarray = None
    core_shape: tuple = None

    @property
    def weights(self):
        return np.array([c.weight for c in self.clusters])

    @property
    def dim(self):
        return self.clusters[0].mean.shape[0]


def interval_boundaries(weights):
    bounds = np.cumsum(np.asarray(weights, dtype=np.float64))
    bounds[-1] = 1.0
    return bounds


def sample_cluster_index(model, u):
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    return int(np.searchsorted(model.boundaries, u, side="right"))


def fit_generator(samples, clusters=8, retain_energy=0.98, cdf_bins=64, vq_codebook=64,
                  reject_threshold=0.5, seed=0, core_shape=None, min_cluster_size=8):
    """Fit the mixture of per-cluster PCA/ICA/inverse-CDF models on (n, d) core samples."""
    z = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    n = z.shape[0]
    labels = hierarchical_kmeans(z, clusters, seed=_sub_seed(seed, 0), min_size=min(min_cluster_size, n))
    fitted = []
    for i in range(labels.max() + 1):
        members = z[labels == i]
        weight = len(members) / n
        fitted.append(fit_cluster(members, retain_energy, cdf_bins, seed=_sub_seed(seed, 1, i),
                                  max_components=max(1, len(members) // 2), weight=weight))
        log.info("cluster %d: %d samples, %d components", i, len(members), fitted[-1].components)

    codebook = None
    all_tables = np.concatenate([c.cdfs for c in fitted], axis=0)
    if vq_codebook and 0 < vq_codebook < len(all_tables):
        codebook, codes, distortion = quantize_cdfs(all_tables, vq_codebook, seed=_sub_seed(seed, 2))
        log.info("CDF VQ: %d tables -> %d codewords, distortion %.3g", len(all_tables), vq_codebook, distortion)
        offsets = np.cumsum([0] + [c.components for c in fitted])
        fitted = [
            ClusterModel(c.weight, c.mean, c.pca_basis, c.pca_scales, c.unmixing,
                         codebook[codes[a:b]], codes[a:b].copy())
            for c, a, b in zip(fitted, offsets[:-1], offsets[1:])
        ]
    return GeneratorModel(tuple(fitted), interval_boundaries([c.weight for c in fitted]),
                          float(reject_threshold), codebook, tuple(core_shape) if core_shape else None)


def draw_core_sample(model, rng, max_rejections=MAX_REJECTIONS):
    """One core sample, reshaped to ``model.core_shape`` when it is set."""
    for _ in range(max_rejections):
        cluster = model.clusters[sample_cluster_index(model, rng.random())]
        r = cluster.components
        if r == 0:
            z = cluster.mean.copy()
            break
        matched = cdf_lookup(cluster.cdfs, ndtr(rng.standard_normal(r)))
        if model.reject_threshold > 0 and np.max(np.abs(matched)) < model.reject_threshold:
            continue
        z = cluster.synthesize(matched)
        break
    else:
        raise ModelQualityError(f"{max_rejections} consecutive samples rejected by threshold "
                                f"{model.reject_threshold}")
    if model.core_shape is not None:
        z = z.reshape(model.core_shape)
    return z
