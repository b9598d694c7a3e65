"""End-to-end fit / generate and the ``.nites`` model container.

Container layout (all integers little-endian)::

    b"NITESMDL"  u32 format_version  u32 section_count
    per section: u16 name_len, name, u64 payload_len, u32 crc32, payload

Sections appear in the fixed order MANIFEST, PIPELINE, GENERATOR. MANIFEST
is UTF-8 ``key=value`` text. The other two hold named arrays:
u32 count, then per array u16 name_len, name, u8 ndim, ndim x u64 shape,
and the float64 little-endian payload.
"""

import logging
import struct
import time
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coregen, cwsaab, patchio, saab
from .config import RunConfig
from .errors import ConfigError, ModelFormatError, ModelQualityError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"NITESMDL"
SECTIONS = ("MANIFEST", "PIPELINE", "GENERATOR")
MODEL_SUFFIX = ".nites"

# phase counters; bench uses them to show that fitting runs once per model
PHASE_COUNTS = Counter()


@dataclass(eq=False)
class NitesModel:
    pipeline: cwsaab.PipelineModel
    generator: coregen.GeneratorModel
    config: RunConfig
    format_version: int = FORMAT_VERSION
    timings: dict = field(default_factory=dict)

    @property
    def patch_side(self):
        return self.pipeline.patch_side

    def manifest(self):
        dims = self.pipeline.stage_dims
        lines = [
            f"format_version={self.format_version}",
            f"patch_side={self.patch_side}",
            "stage_dims=" + ",".join(map(str, dims)),
            f"core_ratio={dims[-1] / dims[0]:.6f}",
            f"clusters={len(self.generator.clusters)}",
            "cluster_components=" + ",".join(str(c.components) for c in self.generator.clusters),
        ]
        for i, hop in enumerate(self.pipeline.hops):
            lines.append(f"hop{i}.group_channels=" + ",".join(str(g.kept) for g in hop.groups))
        lines += [f"config.{k}={v}" for k, v in self.config.to_pairs()]
        return "\n".join(lines) + "\n"


def _seq(seed, *path):
    return np.random.SeedSequence([int(seed), *path])


def _int_seed(seed, *path):
    return int(_seq(seed, *path).generate_state(1)[0])


def fit(exemplar, config=None, seed=None):
    """Crop patches, fit the transform chain, embed, and fit the core model."""
    config = (config or RunConfig()).validate()
    seed = config.seed if seed is None else int(seed)
    exemplar = np.asarray(exemplar, dtype=np.float64)
    h, w = exemplar.shape[:2]
    if min(h, w) < config.patch_size:
        raise ConfigError(f"exemplar {h}x{w} is smaller than the {config.patch_size}px patch size")
    t0 = time.perf_counter()
    PHASE_COUNTS["embed"] += 1
    patches = patchio.random_crops(exemplar, config.patch_size, config.num_crops, _seq(seed, 0))
    pipeline = cwsaab.fit_pipeline(patches, config.hops)
    core = cwsaab.embed(pipeline, patches).reshape(len(patches), -1)
    generator = coregen.fit_generator(
        core,
        clusters=config.clusters,
        retain_energy=config.retain_energy,
        cdf_bins=config.cdf_bins,
        vq_codebook=config.vq_codebook,
        reject_threshold=config.reject_threshold,
        seed=_int_seed(seed, 1),
        core_shape=pipeline.core_shape,
    )
    model = NitesModel(pipeline, generator, config)
    model.timings["embed_seconds"] = time.perf_counter() - t0
    log.info("fit done: stage dims %s in %.2fs", pipeline.stage_dims, model.timings["embed_seconds"])
    return model


def generate_stages(model, rng):
    """One generated sample at every stage, core first: [S_n, ..., S_0] (unclipped)."""
    stages = [coregen.draw_core_sample(model.generator, rng)]
    for stage in range(len(model.pipeline.hops), 0, -1):
        stages.append(cwsaab.invert_stage(model.pipeline, stage, stages[-1]))
    return stages


def generate_patch(model, rng):
    """Draw a core sample and run the inverse chain; clamp only at the end."""
    patch = generate_stages(model, rng)[-1]
    if not np.all(np.isfinite(patch)):
        raise ModelQualityError("generated patch contains non-finite values")
    return np.clip(patch, 0.0, 1.0)


def item_rng(seed, index):
    """Independent stream for batch item ``index`` (SeedSequence over (seed, index))."""
    return np.random.default_rng(_seq(seed, index))


def generate_batch(model, count, seed=0, threads=1):
    """``count`` patches as (count, N, N, 3); identical for any ``threads``."""
    if count < 1:
        raise ConfigError("patch count must be >= 1")
    t0 = time.perf_counter()
    PHASE_COUNTS["generate"] += 1

    def one(j):
        return generate_patch(model, item_rng(seed, j))

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(count), chunksize=max(1, count // (4 * threads))))
    else:
        out = [one(j) for j in range(count)]
    model.timings["generate_seconds"] = time.perf_counter() - t0
    return np.stack(out)


# -- serialization -----------------------------------------------------------

def _pack_arrays(arrays):
    out = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.array(arr, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf, section):
        self.buf, self.pos, self.section = buf, 0, section

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ModelFormatError(f"section {self.section}: truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _unpack_arrays(payload, section):
    r = _Reader(payload, section)
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(payload):
        raise ModelFormatError(f"section {section}: trailing bytes")
    return arrays


def _pipeline_arrays(p):
    a = {
        "patch_side": p.patch_side,
        "in_channels": p.in_channels,
        "hop_count": len(p.hops),
        "tail_policy": saab.TAIL_POLICIES.index(p.tail_policy),
    }
    for i, hop in enumerate(p.hops):
        a[f"hop{i}.window"] = hop.window
        a[f"hop{i}.parents"] = [g.parent for g in hop.groups]
        for j, g in enumerate(hop.groups):
            k, pre = g.kernel, f"hop{i}.g{j}."
            a[pre + "spec"] = [k.spec.window, k.spec.in_channels]
            a[pre + "dc_scale"] = 1.0 / np.sqrt(k.block_dim)
            a[pre + "ac_basis"] = k.ac_basis
            a[pre + "eigenvalues"] = k.eigenvalues
            a[pre + "bias"] = k.bias
            a[pre + "mean"] = k.mean
            a[pre + "kept_ac"] = k.kept_ac
    return a


def _pipeline_from(a):
    hops = []
    for i in range(int(a["hop_count"])):
        groups = []
        for j, parent in enumerate(a[f"hop{i}.parents"]):
            pre = f"hop{i}.g{j}."
            window, channels = (int(v) for v in a[pre + "spec"])
            kernel = saab.SaabKernel(
                saab.BlockSpec(window, channels),
                a[pre + "ac_basis"],
                a[pre + "eigenvalues"],
                float(a[pre + "bias"]),
                a[pre + "mean"],
                int(a[pre + "kept_ac"]),
            )
            groups.append(cwsaab.ChannelGroup(int(parent), kernel))
        hops.append(cwsaab.Hop(int(a[f"hop{i}.window"]), tuple(groups)))
    return cwsaab.PipelineModel(int(a["patch_side"]), tuple(hops),
                                saab.TAIL_POLICIES[int(a["tail_policy"])], int(a["in_channels"]))


def _generator_arrays(g):
    a = {
        "reject_threshold": g.reject_threshold,
        "boundaries": g.boundaries,
        "core_shape": list(g.core_shape or ()),
        "cluster_count": len(g.clusters),
    }
    if g.codebook is not None:
        a["codebook"] = g.codebook
    for i, c in enumerate(g.clusters):
        pre = f"cluster{i}."
        a[pre + "weight"] = c.weight
        a[pre + "mean"] = c.mean
        a[pre + "pca_basis"] = c.pca_basis
        a[pre + "pca_scales"] = c.pca_scales
        a[pre + "unmixing"] = c.unmixing
        if g.codebook is not None:
            a[pre + "cdf_codes"] = c.cdf_codes
        else:
            a[pre + "cdfs"] = c.cdfs
    return a


def _generator_from(a):
    codebook = a.get("codebook")
    clusters = []
    for i in range(int(a["cluster_count"])):
        pre = f"cluster{i}."
        if codebook is not None:
            codes = a[pre + "cdf_codes"].astype(np.int64)
            cdfs = codebook[codes]
        else:
            codes, cdfs = None, a[pre + "cdfs"]
        clusters.append(coregen.ClusterModel(
            float(a[pre + "weight"]), a[pre + "mean"], a[pre + "pca_basis"],
            a[pre + "pca_scales"], a[pre + "unmixing"], cdfs, codes,
        ))
    shape = tuple(int(v) for v in a["core_shape"]) or None
    return coregen.GeneratorModel(tuple(clusters), a["boundaries"], float(a["reject_threshold"]),
                                  codebook, shape)


def parse_manifest(text):
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key] = value
    return out


def config_from_manifest(text):
    items = parse_manifest(text)
    return RunConfig.from_pairs((k[len("config."):], v) for k, v in items.items() if k.startswith("config."))


def dumps_model(model):
    payloads = {
        "MANIFEST": model.manifest().encode("utf-8"),
        "PIPELINE": _pack_arrays(_pipeline_arrays(model.pipeline)),
        "GENERATOR": _pack_arrays(_generator_arrays(model.generator)),
    }
    out = [MAGIC, struct.pack("<II", model.format_version, len(SECTIONS))]
    for name in SECTIONS:
        key, body = name.encode("ascii"), payloads[name]
        out.append(struct.pack("<H", len(key)) + key)
        out.append(struct.pack("<QI", len(body), zlib.crc32(body)))
        out.append(body)
    return b"".join(out)


def loads_model(buf):
    r = _Reader(buf, "header")
    if r.take(len(MAGIC)) != MAGIC:
        raise ModelFormatError("not a NITES model file (bad magic)")
    version, count = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}; this build reads version {FORMAT_VERSION}")
    if count != len(SECTIONS):
        raise ModelFormatError(f"header: expected {len(SECTIONS)} sections, found {count}")
    payloads = {}
    for expected in SECTIONS:
        r.section = expected
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("ascii", errors="replace")
        if name != expected:
            raise ModelFormatError(f"section {expected}: found {name!r} in its place")
        length, crc = r.unpack("<QI")
        body = r.take(length)
        if zlib.crc32(body) != crc:
            raise ModelFormatError(f"section {expected}: corrupt (checksum mismatch)")
        payloads[name] = body
    try:
        manifest = payloads["MANIFEST"].decode("utf-8")
        config = config_from_manifest(manifest)
    except (UnicodeDecodeError, ConfigError) as exc:
        raise ModelFormatError(f"section MANIFEST: {exc}") from exc
    sections = {}
    for name, build in (("PIPELINE", _pipeline_from), ("GENERATOR", _generator_from)):
        try:
            sections[name] = build(_unpack_arrays(payloads[name], name))
        except ModelFormatError:
            raise
        except (KeyError, ValueError, IndexError) as exc:
            raise ModelFormatError(f"section {name}: malformed ({exc})") from exc
    return NitesModel(sections["PIPELINE"], sections["GENERATOR"], config, version)


def save_model(model, path):
    patchio.atomic_write(Path(path), dumps_model(model))


def load_model(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read model {path}: {exc}") from exc
    return loads_model(buf)
