"""Figure kinds and the deterministic render pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be fixed first)
import numpy as np  # noqa: E402
import yaml  # noqa: E402

RECORDS_VERSION = "stefanest-records-v1"

FIGURE_KINDS = (
    "annual-cycle",
    "contour",
    "profile-snapshots",
    "interface-trace",
    "soc-comparison",
)

# Shipped figure presets: figure name -> (kind, run preset expected in --run).
PRESET_FIGURES = {
    "seaice-annual": ("annual-cycle", "seaice-annual-cycle"),
    "seaice-observer-contour": ("contour", "seaice-observer"),
    "seaice-observer-profiles": ("profile-snapshots", "seaice-observer"),
    "stefan-interface": ("interface-trace", "stefan-joint-observer"),
    "battery-soc": ("soc-comparison", "battery-estimation-noisy"),
}


class RecordsError(ValueError):
    """Missing, malformed, or empty run records."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    title: str = ""
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; "
                             f"choose from {FIGURE_KINDS}")


def preset_spec(name: str) -> FigureSpec:
    if name not in PRESET_FIGURES:
        raise KeyError(f"unknown figure preset {name!r}; "
                       f"available: {sorted(PRESET_FIGURES)}")
    kind, _ = PRESET_FIGURES[name]
    return FigureSpec(kind=kind, title=name)


def load_spec(path) -> FigureSpec:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    known = {"kind", "title", "options"}
    extra = set(raw) - known
    if extra:
        raise ValueError(f"unknown spec keys: {sorted(extra)}")
    return FigureSpec(kind=raw.get("kind", ""), title=raw.get("title", ""),
                      options=raw.get("options", {}))


def load_records(run_dir):
    """Read a versioned records.csv; returns (meta, columns, array)."""
    path = Path(run_dir) / "records.csv"
    if not path.exists():
        raise RecordsError(f"no records.csv in {run_dir}")
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith(f"# {RECORDS_VERSION}"):
            raise RecordsError(f"{path}: missing versioned records header")
        meta = dict(kv.split("=", 1) for kv in header.split()[2:])
        cols = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.strip().split(",")]
                for line in fh if line.strip()]
    if not rows:
        raise RecordsError(f"{path}: no data rows to plot")
    return meta, cols, np.array(rows)


def _c(cols, arr, name):
    if name not in cols:
        raise RecordsError(f"records lack required column {name!r}")
    return arr[:, cols.index(name)]


def _profile_block(cols, arr, prefix):
    names = sorted((c for c in cols if c.startswith(prefix)),
                   key=lambda c: int(c[len(prefix):]))
    if not names:
        raise RecordsError(f"records lack profile columns {prefix}*")
    return np.column_stack([arr[:, cols.index(c)] for c in names])


def _plot_annual_cycle(ax_pair, cols, arr, options):
    ax, ax2 = ax_pair
    day = _c(cols, arr, "day")
    ax.plot(day, _c(cols, arr, "thickness"), color="tab:blue", label="ice thickness")
    ax.plot(day, _c(cols, arr, "snow"), color="tab:cyan", label="snow depth")
    ax.set_xlabel("day")
    ax.set_ylabel("thickness [m]")
    ax.legend(loc="upper left")
    ax2.plot(day, _c(cols, arr, "surface_temp"), color="tab:red", lw=0.8,
             label="surface temperature")
    ax2.set_ylabel("surface temperature [degC]")
    ax2.legend(loc="upper right")


def _plot_contour(fig, axes, cols, arr, options):
    day = _c(cols, arr, "day") if "day" in cols else _c(cols, arr, "time")
    truth = _profile_block(cols, arr, "Ti_")
    est = _profile_block(cols, arr, "Tihat_")
    depth = np.linspace(0.0, 1.0, truth.shape[1])
    vmin = min(truth.min(), est.min())
    vmax = max(truth.max(), est.max())
    for ax, block, label in ((axes[0], truth, "truth"),
                             (axes[1], est, "estimate")):
        pc = ax.pcolormesh(day, depth, block.T, vmin=vmin, vmax=vmax,
                           shading="nearest", cmap="viridis")
        ax.set_xlabel("day")
        ax.set_title(label)
    # depth axis is shared: invert once so the surface sits on top
    axes[0].invert_yaxis()
    axes[0].set_ylabel("depth fraction")
    fig.colorbar(pc, ax=list(axes), label="temperature [degC]")


def _plot_profile_snapshots(ax, cols, arr, options):
    day = _c(cols, arr, "day") if "day" in cols else _c(cols, arr, "time")
    truth = _profile_block(cols, arr, "Ti_")
    est = _profile_block(cols, arr, "Tihat_")
    depth = np.linspace(0.0, 1.0, truth.shape[1])
    count = int(options.get("snapshots", 4))
    idx = np.unique(np.linspace(0, len(day) - 1, count).astype(int))
    cmap = plt.get_cmap("viridis")
    for j, i in enumerate(idx):
        color = cmap(j / max(len(idx) - 1, 1) * 0.85)
        ax.plot(truth[i], depth, color=color, label=f"day {day[i]:.1f}")
        ax.plot(est[i], depth, color=color, ls="--")
    ax.invert_yaxis()
    ax.set_xlabel("temperature [degC]")
    ax.set_ylabel("depth fraction")
    ax.legend(title="truth (solid) / estimate (dashed)", fontsize=8)


_INTERFACE_PAIRS = (("s", "s_hat"), ("H", "H_hat"), ("r_p", "r_p_hat"),
                    ("r_p", "r_p_ekf"))


def _plot_interface_trace(ax, cols, arr, options):
    for truth_col, est_col in _INTERFACE_PAIRS:
        if truth_col in cols and est_col in cols:
            break
    else:
        raise RecordsError("records carry no interface truth/estimate pair")
    t = _c(cols, arr, "time")
    ax.plot(t, _c(cols, arr, truth_col), color="k", label=truth_col)
    ax.plot(t, _c(cols, arr, est_col), color="tab:orange", ls="--", label=est_col)
    ax.set_xlabel("time")
    ax.set_ylabel("interface position")
    ax.legend()


def _plot_soc_comparison(ax, cols, arr, options):
    t = _c(cols, arr, "time") / 60.0
    styles = {"soc_neg": ("tab:blue", "-"), "soc_pos": ("tab:green", "-"),
              "soc_neg_hat": ("tab:blue", "--"), "soc_pos_hat": ("tab:green", "--"),
              "soc_neg_ekf": ("tab:blue", ":"), "soc_pos_ekf": ("tab:green", ":")}
    plotted = 0
    for name, (color, ls) in styles.items():
        if name in cols:
            ax.plot(t, _c(cols, arr, name), color=color, ls=ls, label=name)
            plotted += 1
    if plotted == 0:
        raise RecordsError("records carry no state-of-charge columns")
    ax.set_xlabel("time [min]")
    ax.set_ylabel("state of charge")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)


def render(spec: FigureSpec, run_dir, out_path) -> Path:
    """Render one figure from a finished run directory.

    Deterministic for fixed inputs (fixed backend, dpi, and no embedded
    timestamps), so re-rendering produces byte-identical files.  Raises
    `RecordsError` before any file is written if the records are unusable.
    """
    _, cols, arr = load_records(run_dir)

    if spec.kind == "annual-cycle":
        fig, ax = plt.subplots(figsize=(8.0, 4.0), constrained_layout=True)
        _plot_annual_cycle((ax, ax.twinx()), cols, arr, spec.options)
    elif spec.kind == "contour":
        fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6), sharey=True)
        _plot_contour(fig, axes, cols, arr, spec.options)
    elif spec.kind == "profile-snapshots":
        fig, ax = plt.subplots(figsize=(5.0, 4.2), constrained_layout=True)
        _plot_profile_snapshots(ax, cols, arr, spec.options)
    elif spec.kind == "interface-trace":
        fig, ax = plt.subplots(figsize=(6.5, 3.8), constrained_layout=True)
        _plot_interface_trace(ax, cols, arr, spec.options)
    elif spec.kind == "soc-comparison":
        fig, ax = plt.subplots(figsize=(6.5, 3.8), constrained_layout=True)
        _plot_soc_comparison(ax, cols, arr, spec.options)
    else:  # pragma: no cover - FigureSpec already validates
        raise ValueError(f"unknown figure kind {spec.kind!r}")

    if spec.title:
        fig.suptitle(spec.title)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(out, dpi=120, format="png",
                    metadata={"Software": "plotkit"})
    finally:
        plt.close(fig)
    return out
