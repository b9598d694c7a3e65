"""Multi-hop channel-wise Saab pipeline.

Hop 0 transforms joint I0 x I0 x 3 blocks with one kernel. Every later hop
fits one kernel per incoming channel on that channel's I x I blocks, and
concatenates the per-channel responses (DC first, then AC) in parent
order. Stage tensors are laid out (n, side, side, channels).

Keep counts at the configuration level are *channel* counts and include
the DC response: ``keep=10`` at hop 0 means one DC plus nine AC channels.
For channel-wise hops an integer keep is the total across all groups and
is distributed by AC eigenvalue energy, every group keeping its DC.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import saab
from .errors import ConfigError, FitError
from .saab import AUTO, BlockSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HopConfig:
    window: int = 2
    keep: object = AUTO  # int total, list of per-group counts, or "auto"
    keep_total_band: tuple = None

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"hop window must be >= 1, got {self.window}")
        if isinstance(self.keep, int) and self.keep < 1:
            raise ConfigError(f"hop keep must be >= 1, got {self.keep}")


@dataclass(frozen=True, eq=False)
class ChannelGroup:
    parent: int  # incoming channel index; -1 for the joint colour hop
    kernel: saab.SaabKernel

    @property
    def kept(self):
        return self.kernel.n_out


@dataclass(frozen=True, eq=False)
class Hop:
    window: int
    groups: tuple

    @property
    def joint(self):
        return len(self.groups) == 1 and self.groups[0].parent == -1

    @property
    def out_channels(self):
        return sum(g.kept for g in self.groups)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum([g.kept for g in self.groups])]).astype(int)


@dataclass(frozen=True, eq=False)
class PipelineModel:
    patch_side: int
    hops: tuple
    tail_policy: str = "mean"
    in_channels: int = field(default=3)

    @property
    def spatial_sides(self):
        sides = [self.patch_side]
        for hop in self.hops:
            sides.append(sides[-1] // hop.window)
        return sides

    @property
    def stage_channels(self):
        return [self.in_channels] + [hop.out_channels for hop in self.hops]

    @property
    def core_shape(self):
        return (self.spatial_sides[-1], self.spatial_sides[-1], self.stage_channels[-1])

    @property
    def core_dim(self):
        return self.stage_dims[-1]

    @property
    def stage_dims(self):
        return [s * s * c for s, c in zip(self.spatial_sides, self.stage_channels)]


def stage_dims(model):
    return list(model.stage_dims)


# -- block reshaping ---------------------------------------------------------

def to_blocks(x, window):
    """(n, S, S, C) -> (n, S/w, S/w, w*w*C), block entries in (row, col, channel) order."""
    n, s, _, c = x.shape
    b = s // window
    x = x.reshape(n, b, window, b, window, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n, b, b, window * window * c)


def from_blocks(blocks, window, channels):
    n, b, _, _ = blocks.shape
    x = blocks.reshape(n, b, b, window, window, channels).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n, b * window, b * window, channels)


# -- channel budget allocation ----------------------------------------------

def _energy_order(kernels):
    """All AC components as (energy, group, index), highest energy first."""
    items = [(-float(e), g, j) for g, k in enumerate(kernels) for j, e in enumerate(k.eigenvalues)]
    items.sort()
    return items


def allocate_total(kernels, total):
    """Per-group channel counts summing to ``total``; DC always kept."""
    groups = len(kernels)
    capacity = sum(k.block_dim for k in kernels)
    if not groups <= total <= capacity:
        raise ConfigError(f"total keep {total} must lie in [{groups}, {capacity}] for {groups} groups")
    counts = [1] * groups
    # eigenvalues are nonincreasing within a group, so the global energy
    # ranking always takes a prefix of each group's AC components
    for _, g, _ in _energy_order(kernels)[: total - groups]:
        counts[g] += 1
    return counts


def clamp_total(kernels, counts, band):
    """Grow or shrink knee-selected counts until their sum lies inside ``band``."""
    counts = list(counts)
    lo, hi = band
    capacity = sum(k.block_dim for k in kernels)
    lo, hi = max(lo, len(kernels)), min(hi, capacity)
    if lo > hi:
        raise ConfigError(f"keep_total_band {band} is unreachable for {len(kernels)} groups")
    while sum(counts) < lo:
        best = max(
            (g for g, k in enumerate(kernels) if counts[g] < k.block_dim),
            key=lambda g: (kernels[g].eigenvalues[counts[g] - 1], -g),
        )
        counts[best] += 1
    while sum(counts) > hi:
        worst = min(
            (g for g in range(len(kernels)) if counts[g] > 1),
            key=lambda g: (kernels[g].eigenvalues[counts[g] - 2], -g),
        )
        counts[worst] -= 1
    return counts


# -- fitting -----------------------------------------------------------------

def _fit_joint(x, config):
    spec = BlockSpec(config.window, x.shape[-1])
    blocks = to_blocks(x, config.window).reshape(-1, spec.block_dim)
    keep = config.keep
    if isinstance(keep, (list, tuple)):
        if len(keep) != 1:
            raise ConfigError("the joint colour hop has a single group; keep list must have length 1")
        keep = keep[0]
    if keep == AUTO:
        lo, hi = config.keep_total_band or (1, spec.block_dim)
        kernel = saab.fit_saab(blocks, spec, AUTO, knee_bounds=(max(lo - 1, 0), hi - 1))
    else:
        if not 1 <= keep <= spec.block_dim:
            raise ConfigError(f"hop keep {keep} outside [1, {spec.block_dim}]")
        kernel = saab.fit_saab(blocks, spec, keep - 1)
    return Hop(config.window, (ChannelGroup(-1, kernel),))


def fit_channel_kernels(x, window, order=None):
    """Fit one full-spectrum kernel per channel of ``x``; ``order`` only changes fit order."""
    channels = x.shape[-1]
    spec = BlockSpec(window, 1)
    order = range(channels) if order is None else order
    kernels = {}
    for k in order:
        blocks = to_blocks(x[..., k:k + 1], window).reshape(-1, spec.block_dim)
        kernels[k] = saab.fit_saab(blocks, spec, keep=spec.block_dim - 1)
    return [kernels[k] for k in range(channels)]


def _fit_channelwise(x, config):
    kernels = fit_channel_kernels(x, config.window)
    keep = config.keep
    if isinstance(keep, (list, tuple)):
        if len(keep) != len(kernels):
            raise ConfigError(f"keep list has {len(keep)} entries but hop has {len(kernels)} groups")
        counts = [int(c) for c in keep]
        for c, k in zip(counts, kernels):
            if not 1 <= c <= k.block_dim:
                raise ConfigError(f"per-group keep {c} outside [1, {k.block_dim}]")
    elif keep == AUTO:
        counts = [1 + saab.select_knee(k.eigenvalues, (0, k.block_dim - 1)) if len(k.eigenvalues) else 1
                  for k in kernels]
        if config.keep_total_band is not None:
            counts = clamp_total(kernels, counts, config.keep_total_band)
    else:
        counts = allocate_total(kernels, int(keep))
    groups = tuple(ChannelGroup(g, k.with_kept(c - 1)) for g, (k, c) in enumerate(zip(kernels, counts)))
    return Hop(config.window, groups)


def hop_forward(hop, x):
    if hop.joint:
        kernel = hop.groups[0].kernel
        return saab.forward(kernel, to_blocks(x, hop.window))
    outs = []
    for g in hop.groups:
        blocks = to_blocks(x[..., g.parent:g.parent + 1], hop.window)
        outs.append(saab.forward(g.kernel, blocks))
    return np.concatenate(outs, axis=-1)


def hop_inverse(hop, y, tail="mean"):
    if hop.joint:
        kernel = hop.groups[0].kernel
        blocks = saab.inverse(kernel, y, tail)
        return from_blocks(blocks, hop.window, kernel.spec.in_channels)
    offsets = hop.offsets
    parts = []
    for g, a, b in zip(hop.groups, offsets[:-1], offsets[1:]):
        blocks = saab.inverse(g.kernel, y[..., a:b], tail)
        parts.append(from_blocks(blocks, hop.window, 1))
    return np.concatenate(parts, axis=-1)


def fit_pipeline(patches, configs, strict=True, tail_policy="mean"):
    """Fit hop kernels on (n, N, N, 3) patches, hop by hop.

    With ``strict`` the stage dimensions must strictly decrease; a hop that
    does not shrink the representation is a configuration error.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 4 or patches.shape[1] != patches.shape[2]:
        raise ConfigError(f"patches must be (n, N, N, C), got shape {patches.shape}")
    n, side = patches.shape[0], patches.shape[1]
    if n < 2:
        raise FitError(f"need at least 2 patches, got {n}")
    configs = list(configs)
    if not configs:
        raise ConfigError("at least one hop is required")
    prod = int(np.prod([c.window for c in configs]))
    if side % prod:
        raise ConfigError(f"patch side {side} not divisible by product of hop windows {prod}")

    x = patches
    hops = []
    dims = [x[0].size]
    for i, config in enumerate(configs):
        hop = _fit_joint(x, config) if i == 0 else _fit_channelwise(x, config)
        x = hop_forward(hop, x)
        dims.append(x[0].size)
        if strict and dims[-1] >= dims[-2]:
            raise ConfigError(
                f"hop {i} does not reduce dimension ({dims[-2]} -> {dims[-1]}); "
                "stage dimensions must strictly decrease"
            )
        log.info("hop %d: %d groups, %d channels, dim %d", i, len(hop.groups), hop.out_channels, dims[-1])
        hops.append(hop)
    return PipelineModel(side, tuple(hops), tail_policy, patches.shape[-1])


# -- transforms --------------------------------------------------------------

def _as_batch(x, shape):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == len(shape)
    if single:
        x = x[None]
    if x.shape[1:] != tuple(shape):
        raise ValueError(f"expected tensor of shape {tuple(shape)}, got {x.shape[1:]}")
    return x, single


def stage_shape(model, i):
    s = model.spatial_sides[i]
    return (s, s, model.stage_channels[i])


def embed_stages(model, patches):
    """All stage tensors [S0, S1, ..., Sn] for a batch of patches."""
    x, single = _as_batch(patches, stage_shape(model, 0))
    stages = [x]
    for hop in model.hops:
        stages.append(hop_forward(hop, stages[-1]))
    return [s[0] for s in stages] if single else stages


def embed(model, patches):
    """Forward chain to the core subspace; accepts one patch or a batch."""
    x, single = _as_batch(patches, stage_shape(model, 0))
    for hop in model.hops:
        x = hop_forward(hop, x)
    return x[0] if single else x


def invert_stage(model, stage, tensor):
    """Map a stage-``stage`` tensor back to stage ``stage - 1``."""
    if not 1 <= stage <= len(model.hops):
        raise ValueError(f"stage index {stage} outside [1, {len(model.hops)}]")
    y, single = _as_batch(tensor, stage_shape(model, stage))
    x = hop_inverse(model.hops[stage - 1], y, model.tail_policy)
    return x[0] if single else x


def invert_full(model, core):
    x = core
    for stage in range(len(model.hops), 0, -1):
        x = invert_stage(model, stage, x)
    return x
