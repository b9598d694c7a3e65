"""Command-line front end.

Subcommands: fit, generate, quilt, bench, inspect. Reports are printed as
one ``key=value`` per line. Exit codes: 0 success, 2 usage/config,
3 I/O or model format, 4 numerical/fit failure.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import patchio, quilt, synth
from .config import PRESETS, RunConfig
from .errors import ConfigError, ModelFormatError, NitesError

log = logging.getLogger("nites")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass
class TimingReport:
    embed_seconds: float = 0.0
    generate_seconds: float = 0.0
    quilt_seconds: float = 0.0
    patches: int = 0
    placements: int = 0

    def as_dict(self):
        return {
            "embed_seconds": self.embed_seconds,
            "generate_seconds": self.generate_seconds,
            "quilt_seconds": self.quilt_seconds,
            "patches": self.patches,
            "placements": self.placements,
        }

    def to_text(self):
        out = []
        for k, v in self.as_dict().items():
            out.append(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}")
        return "\n".join(out) + "\n"


def resolve_threads(arg):
    env = os.environ.get("NITES_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"NITES_THREADS must be an integer, got {env!r}") from None
    return max(1, arg or os.cpu_count() or 1)


def build_config(args):
    if getattr(args, "config", None):
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig()
    if getattr(args, "preset", None):
        if args.config:
            raise ConfigError("use either --config or --preset, not both")
        cfg = RunConfig.preset(args.preset)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "patch_size", None) is not None:
        overrides["patch_size"] = args.patch_size
    if getattr(args, "num_crops", None) is not None:
        overrides["num_crops"] = args.num_crops
    for name in ("size", "overlap", "tolerance"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[f"quilt_{name}"] = value
    return replace(cfg, **overrides).validate()


def _need_file(path, what):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


def _print_dims(model):
    dims = model.pipeline.stage_dims
    print("stage_dims=" + ",".join(map(str, dims)))
    print(f"core_ratio={dims[-1] / dims[0]:.4f}")
    print("dimension_chain=" + "->".join(map(str, dims)) + f" ({100 * dims[-1] / dims[0]:.2f}%)")


def cmd_fit(args):
    _need_file(args.exemplar, "exemplar")
    cfg = build_config(args)
    image = patchio.load_image(args.exemplar)
    model = synth.fit(image, cfg)
    synth.save_model(model, args.out)
    _print_dims(model)
    print(f"embed_seconds={model.timings['embed_seconds']:.4f}")
    return EXIT_OK


def write_patches(patches, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for j, p in enumerate(patches):
        patchio.save_image(p, outdir / f"patch_{j:05d}.png")


def cmd_generate(args):
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    _need_file(args.model, "model")
    model = synth.load_model(args.model)
    patches = synth.generate_batch(model, args.count, seed=args.seed, threads=resolve_threads(args.threads))
    write_patches(patches, args.out)
    report = TimingReport(generate_seconds=model.timings["generate_seconds"], patches=len(patches))
    print(f"generate_seconds={report.generate_seconds:.4f}")
    print(f"patches={report.patches}")
    return EXIT_OK


def read_patches(directory, side):
    files = sorted(Path(directory).glob("*.png")) + sorted(Path(directory).glob("*.ppm"))
    if not files:
        raise FileNotFoundError(f"no PNG/PPM patches in {directory}")
    patches = [patchio.load_image(f) for f in files]
    for f, p in zip(files, patches):
        if p.shape != (side, side, 3):
            raise ConfigError(f"{f}: patch is {p.shape[1]}x{p.shape[0]}, expected {side}x{side}")
    return np.stack(patches)


def cmd_quilt(args):
    spec = quilt.QuiltSpec(args.size, args.patch_size, args.overlap, args.tolerance)
    patches = read_patches(args.patches, spec.patch_side)
    t0 = time.perf_counter()
    image = quilt.quilt(patches, spec, seed=args.seed)
    seconds = time.perf_counter() - t0
    patchio.save_image(image, args.out)
    print(f"quilt_seconds={seconds:.4f}")
    print(f"placements={spec.placements}")
    return EXIT_OK


def cmd_bench(args):
    _need_file(args.exemplar, "exemplar")
    cfg = build_config(args)
    spec = cfg.quilt_spec
    threads = resolve_threads(args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image = patchio.load_image(args.exemplar)

    before = dict(synth.PHASE_COUNTS)
    model = synth.fit(image, cfg)
    gen_seconds, batches = [], []
    for run in range(2):
        batches.append(synth.generate_batch(model, args.count, seed=cfg.seed + run, threads=threads))
        gen_seconds.append(model.timings["generate_seconds"])
    t0 = time.perf_counter()
    texture = quilt.quilt(batches[0], spec, seed=cfg.seed)
    quilt_seconds = time.perf_counter() - t0

    fits = synth.PHASE_COUNTS["embed"] - before.get("embed", 0)
    gens = synth.PHASE_COUNTS["generate"] - before.get("generate", 0)
    if fits != 1 or gens != 2:
        raise NitesError(f"phase accounting broken: embed ran {fits}x, generate ran {gens}x")

    report = TimingReport(
        embed_seconds=model.timings["embed_seconds"],
        generate_seconds=float(np.mean(gen_seconds)),
        quilt_seconds=quilt_seconds,
        patches=args.count,
        placements=spec.placements,
    )
    synth.save_model(model, out / f"model{synth.MODEL_SUFFIX}")
    write_patches(batches[0], out / "patches")
    patchio.save_image(texture, out / "quilt.png")
    patchio.atomic_write(out / "report.txt", report.to_text().encode("ascii"))
    if not args.no_figures:
        from . import plotting

        plotting.write_report_figures(model, batches[0], report.as_dict(), out / "figures", seed=cfg.seed)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_inspect(args):
    _need_file(args.model, "model")
    model = synth.load_model(args.model)
    sys.stdout.write(model.manifest())
    return EXIT_OK


def _add_config_args(p):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named hop layout")
    p.add_argument("--seed", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--num-crops", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="nites", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model on an exemplar image")
    p.add_argument("--exemplar", required=True)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("generate", help="generate patches from a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("quilt", help="stitch a directory of patches into a texture")
    p.add_argument("--patches", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--patch-size", type=int, default=32)
    p.add_argument("--overlap", type=int, default=4)
    p.add_argument("--tolerance", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_quilt)

    p = sub.add_parser("bench", help="fit once, generate twice, quilt once; report timings")
    p.add_argument("--exemplar", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--size", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--no-figures", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="print a model's manifest and stage dimensions")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "bench" and args.count < 1:
        parser.error("--count must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"nites {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ModelFormatError) as exc:
        print(f"nites {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NitesError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"nites {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
