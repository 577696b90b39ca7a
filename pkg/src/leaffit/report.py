"""Figures and delimited summaries for pipeline runs.

Everything lands under <out>/report: one PNG per stage view plus a
leaves.csv with the per-leaf metrics.  Reports are diagnostics; they sit
outside the asset directory so asset bytes stay reproducible.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .segmentation import STEM


def _label_colors(labels: np.ndarray) -> np.ndarray:
    palette = plt.get_cmap("tab20")
    colors = np.empty((labels.shape[0], 4))
    stem = labels == STEM
    colors[stem] = (0.55, 0.55, 0.55, 0.7)
    for leaf_id in np.unique(labels[~stem]):
        colors[labels == leaf_id] = palette(int(leaf_id) % 20)
    return colors


def segmentation_figure(centers: np.ndarray, labels: np.ndarray, path: Path):
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    ax.scatter(centers[:, 0], centers[:, 1], centers[:, 2],
               c=_label_colors(labels), s=2, linewidths=0)
    ax.set_title("leaf instances")
    ax.set_box_aspect((1, 1, 1))
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def geodesic_figure(centers: np.ndarray, distances: np.ndarray, path: Path):
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    finite = np.isfinite(distances)
    sc = ax.scatter(centers[finite, 0], centers[finite, 1], centers[finite, 2],
                    c=distances[finite], cmap="viridis", s=2, linewidths=0)
    fig.colorbar(sc, ax=ax, shrink=0.7, label="geodesic distance from root")
    ax.set_box_aspect((1, 1, 1))
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def losses_figure(fits, path: Path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for fit in fits:
        ax.plot(fit.result.objective_history, lw=1,
                label=f"leaf {fit.leaf_id}")
    ax.set_xlabel("step")
    ax.set_ylabel("objective")
    ax.set_yscale("log")
    if len(fits) <= 12:
        ax.legend(fontsize=7, ncols=2)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def mesh_figure(mesh, path: Path):
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    front = mesh.faces[mesh.face_side == 0] if mesh.two_sided else mesh.faces
    ax.plot_trisurf(mesh.vertices[:, 0], mesh.vertices[:, 1],
                    mesh.vertices[:, 2], triangles=front,
                    color=(0.35, 0.6, 0.3, 1.0), edgecolor="none")
    ax.set_title(f"template mesh ({mesh.vertex_count} vertices)")
    ax.set_box_aspect((1, 1, 1))
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def leaves_csv(segmentation, fits, path: Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["leaf_id", "tip", "points", "cut_distance",
                         "flagged", "chamfer_initial", "chamfer_final",
                         "objective_final", "vertex_chamfer"])
        for leaf, fit in zip(segmentation.leaves, fits):
            writer.writerow([
                leaf.id, leaf.tip, leaf.member_indices.shape[0],
                f"{leaf.cut_distance:.6g}", leaf.flagged,
                f"{fit.result.initial_chamfer:.6g}",
                f"{fit.result.chamfer:.6g}",
                f"{fit.result.objective:.6g}",
                f"{fit.vertex_chamfer:.6g}",
            ])


def write_run_reports(run) -> Path:
    report_dir = run.out_dir / "report"
    report_dir.mkdir(exist_ok=True)
    segmentation_figure(run.cloud.centers, run.segmentation.labels,
                        report_dir / "segmentation.png")
    if run.artifacts is not None:
        geodesic_figure(run.cloud.centers,
                        run.artifacts.root_field.distances,
                        report_dir / "geodesic_root.png")
    if any(fit.result.objective_history for fit in run.fits):
        losses_figure(run.fits, report_dir / "registration_losses.png")
    mesh_figure(run.asset.template_mesh, report_dir / "template_mesh.png")
    leaves_csv(run.segmentation, run.fits, report_dir / "leaves.csv")
    return report_dir
