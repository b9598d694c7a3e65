"""Report figures written next to the ``bench`` key=value report."""

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import patchio, synth  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    patchio.atomic_write(path, buf.getvalue())


def plot_spectra(model, path):
    """AC eigenvalue spectra of every hop with the retained count marked."""
    hops = model.pipeline.hops
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(hops), figsize=(3.2 * len(hops), 2.6), squeeze=False)
        for i, (ax, hop) in enumerate(zip(axes[0], hops)):
            for g in hop.groups:
                eig = g.kernel.eigenvalues
                if eig.size == 0:
                    continue
                x = np.arange(1, eig.size + 1)
                line, = ax.semilogy(x, np.maximum(eig, 1e-16), marker=".", lw=0.8)
                if g.kernel.kept_ac:
                    k = g.kernel.kept_ac
                    ax.plot(k, max(eig[k - 1], 1e-16), "o", mfc="none", color=line.get_color())
            ax.set_title(f"hop {i}: {hop.out_channels} channels kept")
            ax.set_xlabel("AC component")
            ax.set_ylabel("eigenvalue")
        fig.tight_layout()
        _save(fig, path)


def plot_patch_grid(patches, path, ncols=8, limit=64):
    patches = np.clip(np.asarray(patches)[:limit], 0, 1)
    n = len(patches)
    nrows = int(np.ceil(n / ncols))
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(ncols * 0.9, nrows * 0.9), squeeze=False)
        for ax in axes.ravel():
            ax.axis("off")
        for ax, p in zip(axes.ravel(), patches):
            ax.imshow(p, interpolation="nearest")
        fig.subplots_adjust(wspace=0.05, hspace=0.05)
        _save(fig, path)


def plot_stage_dc(model, path, seed=0, samples=4):
    """DC plane of the first channel group at each stage, then the final patch."""
    rows = []
    for j in range(samples):
        stages = synth.generate_stages(model, synth.item_rng(seed, j))
        rows.append([s[..., 0] for s in stages[:-1]] + [np.clip(stages[-1], 0, 1)])
    ncols = len(rows[0])
    labels = [f"S{len(rows[0]) - 1 - k}" for k in range(ncols)]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(samples, ncols, figsize=(1.6 * ncols, 1.6 * samples), squeeze=False)
        for r, row in enumerate(rows):
            for c, img in enumerate(row):
                ax = axes[r, c]
                ax.axis("off")
                if img.ndim == 2:
                    lo, hi = img.min(), img.max()
                    ax.imshow((img - lo) / (hi - lo) if hi > lo else img * 0, cmap="gray", interpolation="nearest")
                else:
                    ax.imshow(img, interpolation="nearest")
                if r == 0:
                    ax.set_title(labels[c])
        _save(fig, path)


def plot_timings(report, path):
    keys = ["embed_seconds", "generate_seconds", "quilt_seconds"]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 2.2))
        ax.barh(["forward embedding", "reverse generation", "quilting"], [report[k] for k in keys],
                color=["#4c72b0", "#c44e52", "#55a868"])
        ax.invert_yaxis()
        ax.set_xlabel("wall-clock seconds")
        fig.tight_layout()
        _save(fig, path)


def write_report_figures(model, patches, report, outdir, seed=0):
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "spectra": outdir / "spectra.png",
        "patches": outdir / "patches.png",
        "stages": outdir / "stage_dc.png",
        "timings": outdir / "timings.png",
    }
    plot_spectra(model, paths["spectra"])
    plot_patch_grid(patches, paths["patches"])
    plot_stage_dc(model, paths["stages"], seed=seed)
    plot_timings(report, paths["timings"])
    return paths
