"""Image quilting of generated patches with minimum-error boundary cuts."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class QuiltSpec:
    out_side: int = 256
    patch_side: int = 32
    overlap: int = 4
    candidate_tolerance: float = 0.1

    def __post_init__(self):
        if not 0 < self.overlap < self.patch_side:
            raise ConfigError(f"overlap must lie in (0, {self.patch_side}), got {self.overlap}")
        if self.out_side < self.patch_side:
            raise ConfigError("output side smaller than patch side")
        if (self.out_side - self.patch_side) % self.step:
            raise ConfigError(
                f"(out_side - patch_side) = {self.out_side - self.patch_side} is not divisible "
                f"by patch_side - overlap = {self.step}"
            )
        if self.candidate_tolerance < 0:
            raise ConfigError("candidate tolerance must be >= 0")

    @property
    def step(self):
        return self.patch_side - self.overlap

    @property
    def per_axis(self):
        return (self.out_side - self.patch_side) // self.step + 1

    @property
    def placements(self):
        return self.per_axis ** 2


def overlap_mask(patch_side, overlap, position):
    """Boolean (P, P) mask of the already-written L-shaped region at ``position``."""
    y, x = position
    mask = np.zeros((patch_side, patch_side), dtype=bool)
    if y > 0:
        mask[:overlap, :] = True
    if x > 0:
        mask[:, :overlap] = True
    return mask


def _check_position(canvas, patch_side, position):
    y, x = position
    h, w = canvas.shape[:2]
    if y < 0 or x < 0 or y + patch_side > h or x + patch_side > w:
        raise ValueError(f"patch at {position} does not fit inside a {h}x{w} canvas")


def overlap_cost(candidate, canvas, position, overlap):
    """Sum of squared differences over the overlap region (corner counted once).

    ``candidate`` may be a single (P, P, 3) patch or a stack (n, P, P, 3);
    a stack yields one cost per candidate.
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    p = candidate.shape[-2]
    _check_position(canvas, p, position)
    y, x = position
    mask = overlap_mask(p, overlap, position)
    target = canvas[y:y + p, x:x + p]
    diff = (candidate - target) ** 2
    return (diff * mask[..., None]).sum(axis=(-3, -2, -1))


def choose_patch(costs, tolerance, rng):
    """Uniform pick among candidates within (1 + tolerance) of the best cost."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.size == 0:
        raise ValueError("no candidates to choose from")
    best = costs.min()
    pool = np.flatnonzero(costs <= (1.0 + tolerance) * best)
    return int(pool[rng.integers(len(pool))])


def min_cut_seam(error_band):
    """Minimum-cost top-to-bottom path through a (rows, band) error matrix.

    Consecutive rows may shift by at most one column. Ties are broken
    toward the smaller column index. Returns per-row column indices.
    """
    e = np.asarray(error_band, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] == 0 or e.shape[1] == 0:
        raise ValueError(f"error band must be a non-empty 2-D array, got shape {e.shape}")
    rows, width = e.shape
    cost = e.copy()
    back = np.zeros((rows, width), dtype=np.int64)
    cols = np.arange(width)
    for r in range(1, rows):
        prev = cost[r - 1]
        left = np.concatenate([[np.inf], prev[:-1]])
        right = np.concatenate([prev[1:], [np.inf]])
        # candidate order (left, up, right) so argmin prefers smaller columns
        choice = np.argmin(np.stack([left, prev, right]), axis=0)
        back[r] = cols + choice - 1
        cost[r] += np.stack([left, prev, right])[choice, cols]
    path = np.empty(rows, dtype=np.int64)
    path[-1] = int(np.argmin(cost[-1]))
    for r in range(rows - 1, 0, -1):
        path[r - 1] = back[r, path[r]]
    return path


def seam_cost(error_band, path):
    e = np.asarray(error_band, dtype=np.float64)
    # sequential sum, the same order the dynamic program accumulates in
    return float(np.add.accumulate(e[np.arange(e.shape[0]), path])[-1])


def _blend_mask(candidate, canvas, position, overlap):
    """True where the new patch wins over existing canvas content."""
    p = candidate.shape[0]
    y, x = position
    target = canvas[y:y + p, x:x + p]
    err = ((candidate - target) ** 2).sum(axis=2)
    take = np.ones((p, p), dtype=bool)
    cols = np.arange(overlap)
    seams = []
    if y > 0:
        seam = min_cut_seam(err[:overlap, :].T)  # per column: first row taken from new patch
        take[:overlap, :] &= cols[:, None] >= seam[None, :]
        seams.append(("horizontal", seam))
    if x > 0:
        seam = min_cut_seam(err[:, :overlap])  # per row: first column taken from new patch
        vertical = cols[None, :] >= seam[:, None]
        take[:, :overlap] &= vertical
        if y > 0:
            # the vertical seam alone decides the shared corner
            take[:overlap, :overlap] = vertical[:overlap]
        seams.append(("vertical", seam))
    return take, seams


def quilt(patches, spec, seed=0, return_layout=False):
    """Stitch patches (n, P, P, 3) into an (out_side, out_side, 3) image in raster order."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 4 or patches.shape[1:] != (spec.patch_side, spec.patch_side, 3):
        raise ConfigError(f"patches must be (n, {spec.patch_side}, {spec.patch_side}, 3), got {patches.shape}")
    if len(patches) < 1:
        raise ConfigError("no patches to quilt")
    rng = np.random.default_rng(seed)
    p, ov, step = spec.patch_side, spec.overlap, spec.step
    canvas = np.zeros((spec.out_side, spec.out_side, 3))
    written = np.zeros((spec.out_side, spec.out_side), dtype=bool)
    layout = []
    for gy in range(spec.per_axis):
        for gx in range(spec.per_axis):
            pos = (gy * step, gx * step)
            y, x = pos
            if gy == 0 and gx == 0:
                idx = int(rng.integers(len(patches)))
                take, seams = np.ones((p, p), dtype=bool), []
            else:
                costs = overlap_cost(patches, canvas, pos, ov)
                idx = choose_patch(costs, spec.candidate_tolerance, rng)
                take, seams = _blend_mask(patches[idx], canvas, pos, ov)
            region = canvas[y:y + p, x:x + p]
            region[take] = patches[idx][take]
            written[y:y + p, x:x + p] = True
            layout.append({"position": pos, "index": idx, "seams": seams})
    assert written.all()
    if return_layout:
        return canvas, layout
    return canvas
