"""Single-stage Saab transform over flattened blocks.

A block of dimension d is split into its DC part (projection on the unit
all-ones direction) and an AC residual. AC filters are the principal axes
of the residuals; a constant bias shifts every AC response to be
nonnegative. DC filter plus AC basis form an orthonormal bank, so the
inverse is a transpose.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import helmert

from .errors import FitError

AUTO = "auto"
KNEE_RATIO = 0.01
TAIL_POLICIES = ("zero", "mean")


@dataclass(frozen=True)
class BlockSpec:
    window: int
    in_channels: int

    def __post_init__(self):
        if self.window < 1 or self.in_channels < 1:
            raise ValueError(f"invalid block spec {self}")

    @property
    def block_dim(self):
        return self.window * self.window * self.in_channels


@dataclass(frozen=True, eq=False)
class SaabKernel:
    spec: BlockSpec
    ac_basis: np.ndarray  # (block_dim - 1, block_dim), rows orthonormal, orthogonal to DC
    eigenvalues: np.ndarray  # (block_dim - 1,), nonincreasing
    bias: float
    mean: np.ndarray  # training mean of the DC-removed residual
    kept_ac: int

    def __post_init__(self):
        # C-ordered float64 so a reloaded kernel computes bit-identically
        for name in ("ac_basis", "eigenvalues", "mean"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64, order="C"))

    @property
    def block_dim(self):
        return self.spec.block_dim

    @property
    def dc_filter(self):
        d = self.block_dim
        return np.full(d, 1.0 / np.sqrt(d))

    @property
    def n_out(self):
        return 1 + self.kept_ac

    @property
    def filters(self):
        """(1 + kept_ac, block_dim) analysis bank: DC row then kept AC rows."""
        return np.vstack([self.dc_filter[None, :], self.ac_basis[: self.kept_ac]])

    @property
    def discarded_energy(self):
        return float(self.eigenvalues[self.kept_ac:].sum())

    def tail_mean(self):
        """Mean block content carried by the discarded AC directions."""
        tail = self.ac_basis[self.kept_ac:]
        return (tail @ self.mean) @ tail

    def with_kept(self, kept_ac):
        if not 0 <= kept_ac <= len(self.eigenvalues):
            raise ValueError(f"kept_ac {kept_ac} outside [0, {len(self.eigenvalues)}]")
        return SaabKernel(self.spec, self.ac_basis, self.eigenvalues, self.bias, self.mean, int(kept_ac))


def select_knee(eigenvalues, bounds):
    """Smallest k in [lo, hi] whose eigenvalue drops below 1% of the largest.

    Returns ``hi`` when the spectrum never flattens inside the bounds.
    """
    eig = np.asarray(eigenvalues, dtype=np.float64)
    if eig.size == 0:
        raise ValueError("empty eigenvalue spectrum")
    lo, hi = int(bounds[0]), int(bounds[1])
    if lo < 0 or hi < lo:
        raise ValueError(f"invalid knee bounds {bounds}")
    top = eig[0]
    if top <= 0:
        return lo
    for k in range(lo, hi + 1):
        if k >= eig.size or eig[k] / top < KNEE_RATIO:
            return k
    return hi


def _sign_fix(rows):
    # deterministic orientation: largest-magnitude entry of each row positive
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), idx])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


def fit_saab(blocks, spec=None, keep=AUTO, knee_bounds=None):
    """Fit a Saab kernel on an (n, block_dim) array of flattened blocks.

    ``keep`` is the number of AC components retained, or ``"auto"`` for
    knee selection within ``knee_bounds`` (default: full range).
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2:
        raise FitError(f"blocks must be 2-D (n, block_dim), got shape {blocks.shape}")
    n, d = blocks.shape
    if spec is None:
        spec = BlockSpec(1, d)
    if spec.block_dim != d:
        raise FitError(f"block dimension {d} does not match spec {spec}")
    if n < 2:
        raise FitError(f"need at least 2 blocks to fit a Saab kernel, got {n}")
    if d == 1:
        return SaabKernel(spec, np.zeros((0, 1)), np.zeros(0), 0.0, np.zeros(1), 0)

    residual = blocks - blocks.mean(axis=1, keepdims=True)
    mean = residual.mean(axis=0)
    centered = residual - mean
    # work in the orthonormal complement of the all-ones direction
    comp = helmert(d)  # (d-1, d)
    reduced = centered @ comp.T
    cov = reduced.T @ reduced / n
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval = np.clip(eigval[order], 0.0, None)
    ac_basis = _sign_fix((comp.T @ eigvec[:, order]).T)

    bias = float(np.sqrt((residual * residual).sum(axis=1)).max())

    scale = max(1.0, float((blocks * blocks).sum(axis=1).mean()))
    if eigval[0] <= 1e-14 * scale:
        kept = 0
    elif keep == AUTO or keep is None:
        lo, hi = knee_bounds if knee_bounds is not None else (0, d - 1)
        kept = select_knee(eigval, (lo, min(hi, d - 1)))
    else:
        kept = int(keep)
        if not 0 <= kept <= d - 1:
            raise FitError(f"keep={kept} outside [0, {d - 1}] for block_dim {d}")
    return SaabKernel(spec, ac_basis, eigval, bias, mean, kept)


def _check_last(arr, size, what):
    if arr.shape[-1] != size:
        raise ValueError(f"{what}: expected last dimension {size}, got {arr.shape[-1]}")


def forward(kernel, blocks):
    """Responses (..., 1 + kept_ac): DC projection, then AC projections + bias."""
    blocks = np.asarray(blocks, dtype=np.float64)
    _check_last(blocks, kernel.block_dim, "forward")
    out = blocks @ kernel.filters.T
    out[..., 1:] += kernel.bias
    return out


def inverse(kernel, responses, truncated_tail="zero"):
    """Map responses back to blocks.

    Discarded AC coefficients are filled with zero (``"zero"``) or with
    their training mean (``"mean"``); both are exact at full rank.
    """
    if truncated_tail not in TAIL_POLICIES:
        raise ValueError(f"truncated_tail must be one of {TAIL_POLICIES}")
    responses = np.asarray(responses, dtype=np.float64)
    _check_last(responses, kernel.n_out, "inverse")
    coeffs = responses.copy()
    coeffs[..., 1:] -= kernel.bias
    out = coeffs @ kernel.filters
    if truncated_tail == "mean" and kernel.kept_ac < len(kernel.eigenvalues):
        out += kernel.tail_mean()
    return out
