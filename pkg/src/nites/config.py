"""Run configuration: flat ``key=value`` text with dotted keys.

Example::

    preset=standard
    hops.1.keep=auto
    hops.1.keep_total_band=20,30
    clusters=8

A ``preset`` line installs a hop layout (and patch size) before the other
keys are applied, so explicit keys always win. Unknown keys are rejected.
"""

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cwsaab import HopConfig
from .errors import ConfigError
from .quilt import QuiltSpec
from .saab import AUTO

# patch side, then (window, keep) per hop; keep counts include the DC channel
PRESETS = {
    "standard": (32, [(2, 10), (2, 27)]),
    "a": (32, [(2, 10), (2, 32)]),
    "b": (32, [(2, 6), (2, 12)]),
    "c": (32, [(2, 5), (2, 8)]),
    "d": (32, [(2, 3), (2, 3)]),
    "deep64": (64, [(2, 10), (2, 25), (2, 63)]),
    "auto": (32, [(2, AUTO, (6, 10)), (2, AUTO, (20, 30))]),
}
# quilting overlap per patch side so that a 256 output tiles exactly
_OVERLAP_FOR_SIDE = {32: 4, 64: 16}

_SCALARS = {
    "seed": int,
    "patch_size": int,
    "num_crops": int,
    "clusters": int,
    "cdf_bins": int,
    "vq_codebook": int,
    "reject_threshold": float,
    "retain_energy": float,
    "quilt.size": int,
    "quilt.overlap": int,
    "quilt.tolerance": float,
}
_HOP_KEY = re.compile(r"^hops\.(\d+)\.(window|keep|keep_total_band)$")


def preset_hops(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    side, hops = PRESETS[name]
    out = []
    for h in hops:
        out.append(HopConfig(h[0], h[1], h[2] if len(h) > 2 else None))
    return side, out


def _default_hops():
    return preset_hops("standard")[1]


@dataclass
class RunConfig:
    seed: int = 0
    patch_size: int = 32
    num_crops: int = 5000
    hops: list = field(default_factory=_default_hops)
    clusters: int = 8
    cdf_bins: int = 64
    vq_codebook: int = 64
    reject_threshold: float = 0.5
    retain_energy: float = 0.98
    quilt_size: int = 256
    quilt_overlap: int = 4
    quilt_tolerance: float = 0.1

    @classmethod
    def preset(cls, name, **overrides):
        side, hops = preset_hops(name)
        cfg = cls(patch_size=side, hops=hops, quilt_overlap=_OVERLAP_FOR_SIDE[side])
        return replace(cfg, **overrides).validate()

    @property
    def quilt_spec(self):
        return QuiltSpec(self.quilt_size, self.patch_size, self.quilt_overlap, self.quilt_tolerance)

    def validate(self):
        if self.patch_size < 4 or self.patch_size % 2:
            raise ConfigError(f"patch_size must be even and >= 4, got {self.patch_size}")
        if self.num_crops < 2:
            raise ConfigError("num_crops must be >= 2")
        if not self.hops:
            raise ConfigError("at least one hop must be configured")
        prod = int(np.prod([h.window for h in self.hops]))
        if self.patch_size % prod:
            raise ConfigError(f"patch_size {self.patch_size} is not divisible by the hop windows' product {prod}")
        for i, h in enumerate(self.hops):
            if not (h.keep == AUTO or isinstance(h.keep, (int, list, tuple))):
                raise ConfigError(f"hops.{i}.keep must be an integer, a list or 'auto'")
            if h.keep_total_band is not None:
                lo, hi = h.keep_total_band
                if not 1 <= lo <= hi:
                    raise ConfigError(f"hops.{i}.keep_total_band must satisfy 1 <= lo <= hi")
        if self.clusters < 1:
            raise ConfigError("clusters must be >= 1")
        if self.cdf_bins < 2:
            raise ConfigError("cdf_bins must be >= 2")
        if self.vq_codebook < 0:
            raise ConfigError("vq_codebook must be >= 0 (0 disables VQ)")
        if self.reject_threshold < 0:
            raise ConfigError("reject_threshold must be >= 0")
        if not 0 < self.retain_energy <= 1:
            raise ConfigError("retain_energy must lie in (0, 1]")
        self.quilt_spec  # raises on an invalid quilting layout
        return self

    # -- text form -----------------------------------------------------------

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        cfg = cls()
        for key, value in pairs:
            if key == "preset":
                side, hops = preset_hops(value)
                cfg.patch_size, cfg.hops, cfg.quilt_overlap = side, hops, _OVERLAP_FOR_SIDE[side]
        hop_items = {}
        for key, value in pairs:
            if key == "preset":
                continue
            if key in _SCALARS:
                try:
                    setattr(cfg, key.replace(".", "_"), _SCALARS[key](value))
                except ValueError:
                    raise ConfigError(f"{key}: cannot parse {value!r} as {_SCALARS[key].__name__}") from None
                continue
            m = _HOP_KEY.match(key)
            if not m:
                raise ConfigError(f"unknown configuration key {key!r}")
            hop_items.setdefault(int(m.group(1)), {})[m.group(2)] = value
        if hop_items:
            cfg.hops = _merge_hops(cfg.hops, hop_items)
        return cfg.validate()

    @classmethod
    def from_text(cls, text):
        pairs = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            pairs.append((key, value))
        return cls.from_pairs(pairs)

    @classmethod
    def from_file(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_pairs(self):
        pairs = [(k, getattr(self, k.replace(".", "_"))) for k in _SCALARS]
        for i, h in enumerate(self.hops):
            pairs.append((f"hops.{i}.window", h.window))
            pairs.append((f"hops.{i}.keep", _fmt_keep(h.keep)))
            if h.keep_total_band is not None:
                pairs.append((f"hops.{i}.keep_total_band", "%d,%d" % tuple(h.keep_total_band)))
        return [(k, _fmt(v)) for k, v in pairs]

    def to_text(self):
        return "".join(f"{k}={v}\n" for k, v in self.to_pairs())

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return self.to_pairs() == other.to_pairs()


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def _fmt_keep(keep):
    if isinstance(keep, (list, tuple)):
        return ",".join(str(int(k)) for k in keep)
    return str(keep)


def _parse_keep(text):
    text = text.strip().lower()
    if text == AUTO:
        return AUTO
    try:
        if "," in text:
            return [int(t) for t in text.split(",") if t.strip()]
        return int(text)
    except ValueError:
        raise ConfigError(f"hop keep must be an integer, a comma list or 'auto', got {text!r}") from None


def _merge_hops(hops, items):
    count = max(len(hops), max(items) + 1)
    if not set(range(len(hops), count)) <= set(items):
        raise ConfigError("hop indices must be contiguous starting at 0")
    out = []
    for i in range(count):
        base = hops[i] if i < len(hops) else HopConfig()
        kw = {}
        item = items.get(i, {})
        try:
            if "window" in item:
                kw["window"] = int(item["window"])
            if "keep" in item:
                kw["keep"] = _parse_keep(item["keep"])
            if "keep_total_band" in item:
                lo, hi = (int(t) for t in item["keep_total_band"].split(","))
                kw["keep_total_band"] = (lo, hi)
        except ValueError:
            raise ConfigError(f"hops.{i}: malformed value in {item}") from None
        out.append(replace(base, **kw))
    return out
