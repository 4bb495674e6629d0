"""Report figures rendered to files (headless, Agg backend)."""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import ListedColormap
from matplotlib.patches import Patch

from .centerline import Centerline3D
from .cloud import PointCloud
from .evaluate import OVERLAY_PALETTE
from .skeleton import SkeletonGraph

logger = logging.getLogger(__name__)

_MAX_SCATTER = 60000


def _subsample(cloud: PointCloud, limit: int = _MAX_SCATTER) -> np.ndarray:
    """At most ``limit`` points, evenly strided so plots stay light."""
    xyz = cloud.xyz
    if len(xyz) <= limit:
        return xyz
    stride = int(np.ceil(len(xyz) / limit))
    return xyz[::stride]


def _save(fig, path: str | Path) -> None:
    fig.savefig(Path(path), dpi=120, bbox_inches="tight")
    plt.close(fig)
    logger.info("wrote figure %s", path)


def save_cloud_figure(cloud: PointCloud, path: str | Path) -> None:
    """Top-down scatter of the cloud, coloured by height."""
    xyz = _subsample(cloud)
    fig, ax = plt.subplots(figsize=(7, 7))
    sc = ax.scatter(xyz[:, 0], xyz[:, 1], c=xyz[:, 2], s=0.5, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="z [m]")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"input cloud ({len(cloud)} points)")
    _save(fig, path)


def save_skeleton_figure(graph: SkeletonGraph, path: str | Path) -> None:
    """Skeleton raster with endpoints and junction pixels marked."""
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.imshow(graph.raster.values, cmap="gray_r", interpolation="nearest")
    ends = graph.endpoints()
    if ends:
        rows, cols = zip(*ends)
        ax.scatter(cols, rows, s=30, marker="o", facecolors="none",
                   edgecolors="tab:blue", label="endpoints")
    junctions = graph.junction_pixels()
    if junctions:
        rows, cols = zip(*junctions)
        ax.scatter(cols, rows, s=30, marker="x", color="tab:red", label="junctions")
    if ends or junctions:
        ax.legend(loc="upper right")
    ax.set_title(f"skeleton: {len(graph.branches)} branches, "
                 f"{graph.n_components} components")
    _save(fig, path)


def save_centerlines_figure(
    road: PointCloud, lines: list[Centerline3D], path: str | Path
) -> None:
    """Extracted road points with the fitted centrelines on top."""
    xyz = _subsample(road)
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.scatter(xyz[:, 0], xyz[:, 1], s=0.5, color="0.8", label="road points")
    for i, line in enumerate(lines):
        v = line.xyz
        ax.plot(v[:, 0], v[:, 1], lw=1.8, label=f"centreline {i}" if i < 8 else None)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{len(lines)} fitted centrelines")
    ax.legend(loc="upper right", fontsize="small")
    _save(fig, path)


def save_overlay_figure(classes: np.ndarray, path: str | Path) -> None:
    """Truth/extraction agreement image with a class legend."""
    colors = [tuple(c / 255.0 for c in OVERLAY_PALETTE[k]) for k in range(4)]
    labels = ("background", "both", "extraction only", "truth only")
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.imshow(classes, cmap=ListedColormap(colors), vmin=0, vmax=3,
              interpolation="nearest")
    handles = [Patch(color=colors[k], label=labels[k]) for k in range(4)]
    ax.legend(handles=handles, loc="upper right", fontsize="small")
    ax.set_title("truth vs extraction")
    _save(fig, path)
