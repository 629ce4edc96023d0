"""Report emission: delimited tables, ROC files, activation-map images and
rendered figures.

Every run writes CSV first — those files are the deterministic surface that
repeated runs reproduce byte for byte. Figures (PNG) are rendered from the
same data next to the CSVs; per-filter activation maps are written as binary
8-bit PGM files, each map normalised to [0, 1] independently.
"""

from __future__ import annotations

import io
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ShapeError
from .metrics import MisalignmentReport
from .nn.layers import Conv2D
from .nn.model import Model, forward_batch
from .scenarios import CauseStudyResult, ScenarioReport


# ---------------------------------------------------------------------------
# CSV tables


def cause_study_csv(result: CauseStudyResult) -> str:
    buf = io.StringIO()
    buf.write("condition,layer,wms_mean,wms_sd\n")
    for row in result.rows:
        buf.write(f"{row.condition},{row.layer},{row.mean:.6f},{row.sd:.6f}\n")
    return buf.getvalue()


def scenario_csv(report: ScenarioReport) -> str:
    fprs = sorted(report.repetitions[0].tpr_at) if report.repetitions else []
    buf = io.StringIO()
    header = "scenario,features,rep,auc"
    for f in fprs:
        header += f",tpr@{f:g}"
    buf.write(header + "\n")
    for r in report.repetitions:
        line = f"{report.scenario},{report.feature_desc},{r.rep},{r.auc:.6f}"
        for f in fprs:
            line += f",{r.tpr_at[f]:.6f}"
        buf.write(line + "\n")
    ci = f"{report.ci95():.6f}" if len(report.repetitions) >= 2 else ""
    buf.write(f"{report.scenario},{report.feature_desc},mean,{report.mean_auc:.6f}")
    for f in fprs:
        mean_t = np.mean([r.tpr_at[f] for r in report.repetitions])
        buf.write(f",{mean_t:.6f}")
    buf.write("\n")
    buf.write(f"{report.scenario},{report.feature_desc},ci95,{ci}")
    for _ in fprs:
        buf.write(",")
    buf.write("\n")
    return buf.getvalue()


def realignment_csv(report: ScenarioReport) -> str:
    buf = io.StringIO()
    buf.write("rep,layer,wms_before,wms_after\n")
    for r in report.repetitions:
        for layer, (before, after) in enumerate(zip(r.wms_before, r.wms_after)):
            buf.write(f"{r.rep},{layer},{before:.6f},{after:.6f}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# PGM activation maps


def write_pgm(path: str, image: np.ndarray):
    """Binary 8-bit PGM; the image is normalised so min -> 0 and max -> 255."""
    if image.ndim != 2:
        raise ShapeError(f"PGM needs a 2-D map, got shape {image.shape}")
    img = image.astype(np.float64)
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = (img - lo) / (hi - lo)
    else:
        img = np.zeros_like(img)
    data = np.round(img * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_activation_maps(model: Model, record: np.ndarray, out_dir: str) -> list:
    """One PGM per filter for every convolutional layer, evaluated on one
    record. Returns the written paths (empty for models without conv layers)."""
    os.makedirs(out_dir, exist_ok=True)
    trace = forward_batch(model, np.asarray(record)[None], dropout_rng=None)
    written = []
    for param_idx in range(model.n_param_layers):
        pos, layer = model.param_layer(param_idx)
        if not isinstance(layer, Conv2D):
            continue
        maps = trace.activations[pos + 1][0]  # (C, H, W)
        for f in range(maps.shape[0]):
            path = os.path.join(out_dir, f"layer{param_idx}_filter{f:03d}.pgm")
            write_pgm(path, maps[f])
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# Figures


def render_roc_figure(curves: dict, path: str):
    """Log-log ROC plot; ``curves`` maps a label to a RocCurve."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, curve in curves.items():
        fpr = np.maximum(curve.fpr, 1e-4)
        tpr = np.maximum(curve.tpr, 1e-4)
        ax.plot(fpr, tpr, label=f"{label} (auc={curve.auc:.3f})")
    ax.plot([1e-4, 1], [1e-4, 1], "k--", linewidth=0.8, label="chance")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlim(1e-3, 1)
    ax.set_ylim(1e-3, 1)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_cause_study_figure(result: CauseStudyResult, path: str):
    """Grouped bars of per-layer weight misalignment by condition."""
    conditions = []
    for row in result.rows:
        if row.condition not in conditions:
            conditions.append(row.condition)
    layers = sorted({row.layer for row in result.rows})
    fig, ax = plt.subplots(figsize=(1.8 + 1.1 * len(conditions), 4))
    width = 0.8 / max(1, len(layers))
    xs = np.arange(len(conditions))
    for j, layer in enumerate(layers):
        means = [result.value(c, layer)[0] for c in conditions]
        sds = [result.value(c, layer)[1] for c in conditions]
        ax.bar(xs + j * width, means, width, yerr=sds, capsize=2, label=f"layer {layer}")
    ax.set_xticks(xs + width * (len(layers) - 1) / 2)
    ax.set_xticklabels(conditions, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("weight misalignment")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_scenario_figure(reports: list, path: str):
    """AUC per scenario with 95% confidence intervals."""
    fig, ax = plt.subplots(figsize=(1.5 + 0.9 * len(reports), 4))
    labels = [r.scenario for r in reports]
    means = [r.mean_auc for r in reports]
    cis = [r.ci95() for r in reports]
    ax.bar(np.arange(len(reports)), means, yerr=cis, capsize=3)
    ax.set_xticks(np.arange(len(reports)))
    ax.set_xticklabels(labels)
    ax.set_ylim(0.4, 1.0)
    ax.axhline(0.5, color="k", linestyle="--", linewidth=0.8)
    ax.set_ylabel("attack AUC")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_misalignment_figure(report: MisalignmentReport, path: str):
    layers = [row.layer for row in report.layers]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(layers, [r.wms for r in report.layers], "o-", label="wms")
    ax.plot(
        layers,
        [r.baseline_wms_mean for r in report.layers],
        "s--",
        label="random permutation",
    )
    ax.set_xlabel("layer")
    ax.set_ylabel("weight misalignment")
    ax.set_xticks(layers)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Directory-level emission


def emit_scenario_report(report: ScenarioReport, out_dir: str):
    """CSV summary, per-repetition ROC CSVs, re-alignment table and figures."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "scenario_summary.csv"), "w", encoding="utf-8") as fh:
        fh.write(scenario_csv(report))
    curves = {}
    for r in report.repetitions:
        if r.roc is None:
            continue
        with open(os.path.join(out_dir, f"roc_rep{r.rep}.csv"), "w", encoding="utf-8") as fh:
            fh.write(r.roc.to_csv())
        curves[f"rep {r.rep}"] = r.roc
    if any(r.wms_before for r in report.repetitions):
        with open(os.path.join(out_dir, "realignment_wms.csv"), "w", encoding="utf-8") as fh:
            fh.write(realignment_csv(report))
    if curves:
        render_roc_figure(curves, os.path.join(out_dir, "roc.png"))
    timing_path = os.path.join(out_dir, "timing.txt")
    with open(timing_path, "w", encoding="utf-8") as fh:
        for r in report.repetitions:
            fh.write(f"rep {r.rep}: {r.seconds:.2f}s\n")


def emit_cause_study(result: CauseStudyResult, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "cause_study.csv"), "w", encoding="utf-8") as fh:
        fh.write(cause_study_csv(result))
    render_cause_study_figure(result, os.path.join(out_dir, "cause_study.png"))
