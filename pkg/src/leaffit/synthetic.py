"""Deterministic synthetic plant generator.

Produces splat clouds with known per-primitive labels, apex and petiole
positions, and per-leaf analytic deformations, so the segmentation and
registration stages can be tested against exact ground truth.  Plants are
rosettes: a vertical stem, petiole wires, and parametric blade sheets placed
at golden-angle azimuths.  Overlap modes deliberately reproduce the failure
geometries (side-by-side and stacked blades) used as flagged-not-crashed
regression fixtures.

Everything is driven by one seeded generator; identical specs give
byte-identical output.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError
from .splat_io import SplatCloud, compute_normalization, write_splat_ply

STEM_LABEL = -1

BLADE_SHAPES = ("ellipse", "lobed", "elongated")
OVERLAP_MODES = ("none", "horizontal", "vertical")

GOLDEN_ANGLE = 2.399963229728653


@dataclass
class PlantSpec:
    leaf_count: int = 5
    blade_shape: str = "ellipse"
    overlap: str = "none"
    noise: float = 0.0015
    seed: int = 0
    points_per_leaf: int = 420
    petiole_points: int = 28
    stem_points: int = 220
    blade_length: float = 0.18
    blade_width: float = 0.08
    petiole_length: float = 0.065


@dataclass
class LeafTruth:
    """Ground truth for one generated leaf."""

    label: int
    blade_indices: np.ndarray
    petiole_indices: np.ndarray
    apex_index: int                 # primary tip (main lobe)
    apex_indices: List[int]         # all lobe tips
    base_index: int                 # blade/petiole junction point
    deformation: Dict[str, float]   # canonical-sheet parameters
    frame_rotation: np.ndarray      # (3,3) canonical -> plant
    frame_translation: np.ndarray   # (3,)


@dataclass
class SyntheticPlant:
    cloud: SplatCloud
    labels: np.ndarray
    leaves: List[LeafTruth]
    root_index: int
    spec: PlantSpec

    def leaf_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def write(self, directory: str | Path) -> Tuple[Path, Path]:
        """Emit plant.ply plus ground_truth.json; returns both paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ply_path = directory / "plant.ply"
        write_splat_ply(ply_path, self.cloud.centers, self.cloud.scales,
                        self.cloud.rotations, self.cloud.opacities,
                        self.cloud.colors)
        truth = {
            "root_index": int(self.root_index),
            "labels": self.labels.tolist(),
            "spec": dataclasses.asdict(self.spec),
            "leaves": [
                {
                    "label": int(leaf.label),
                    "apex_index": int(leaf.apex_index),
                    "apex_indices": [int(i) for i in leaf.apex_indices],
                    "base_index": int(leaf.base_index),
                    "blade_indices": leaf.blade_indices.tolist(),
                    "petiole_indices": leaf.petiole_indices.tolist(),
                    "deformation": leaf.deformation,
                    "frame_rotation": leaf.frame_rotation.tolist(),
                    "frame_translation": leaf.frame_translation.tolist(),
                }
                for leaf in self.leaves
            ],
        }
        json_path = directory / "ground_truth.json"
        json_path.write_text(json.dumps(truth))
        return ply_path, json_path


def _width_profile(shape: str, s: np.ndarray) -> np.ndarray:
    """Half-width at relative arc position s in [0, 1] (0 = base, 1 = tip).

    Two half-ellipses with the peak near the base: leaves widen quickly from
    the petiole and taper gradually toward the tip.
    """
    s = np.asarray(s, dtype=np.float64)
    peak = 0.28
    u = np.where(s >= peak, (s - peak) / (1.0 - peak), (peak - s) / peak)
    ellipse = np.sqrt(np.clip(1.0 - u ** 2, 0.0, None))
    if shape == "elongated":
        return ellipse ** 0.7
    return ellipse


def _sample_blade(rng: np.random.Generator, shape: str, n: int,
                  length: float, width: float,
                  bend: float, cup: float) -> Tuple[np.ndarray, np.ndarray]:
    """Sample one blade sheet in canonical coordinates.

    Canonical frame: x along the midline (base at 0, primary tip at
    +length), y across, z up.  Returns (points, tip_positions) where
    tip_positions holds one midline tip per lobe, primary first.
    """
    if shape in ("ellipse", "elongated"):
        xs = rng.uniform(0.0, 1.0, 4 * n)
        ys = rng.uniform(-1.0, 1.0, 4 * n)
        keep = np.abs(ys) <= _width_profile(shape, xs)
        xs, ys = xs[keep][:n], ys[keep][:n]
        pts = np.column_stack([
            xs * length,
            ys * width,
            bend * (xs * length) ** 2 + cup * (ys * width) ** 2,
        ])
        tips = np.array([[length, 0.0, bend * length ** 2]])
        return pts, tips

    if shape == "lobed":
        # a main lobe plus two side lobes branching partway up the midline
        lobe_dirs = np.array([0.0, 1.05, -1.05])
        lobe_scale = np.array([1.0, 0.8, 0.8])
        fork = 0.28 * length
        counts = [n - 2 * (n // 3), n // 3, n // 3]
        parts, tips = [], []
        for ang, fac, cnt in zip(lobe_dirs, lobe_scale, counts):
            xs = rng.uniform(0.0, 1.0, 5 * cnt)
            ys = rng.uniform(-1.0, 1.0, 5 * cnt)
            keep = np.abs(ys) <= _width_profile("ellipse", xs)
            xs, ys = xs[keep][:cnt], ys[keep][:cnt]
            lobe_len = (length - fork) * fac
            lx = xs * lobe_len
            ly = ys * width
            ca, sa = np.cos(ang), np.sin(ang)
            px = fork + lx * ca - ly * sa
            py = lx * sa + ly * ca
            parts.append(np.column_stack([
                px, py, bend * px ** 2 + cup * py ** 2]))
            tip = np.array([fork + lobe_len * ca, lobe_len * sa, 0.0])
            tip[2] = bend * tip[0] ** 2 + cup * tip[1] ** 2
            tips.append(tip)
        return np.vstack(parts), np.vstack(tips)

    raise ParameterError(f"unknown blade shape '{shape}'")


def _rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _leaf_placements(spec: PlantSpec, rng: np.random.Generator) -> List[Dict[str, float]]:
    """Azimuth/height/pitch per leaf, honoring the requested overlap mode."""
    placements = []
    base_h = 0.14
    dh = max(0.055, 0.56 / max(spec.leaf_count, 1))
    for i in range(spec.leaf_count):
        placements.append({
            "azimuth": (i * GOLDEN_ANGLE + rng.uniform(-0.15, 0.15)) % (2 * np.pi),
            "height": base_h + i * dh,
            "pitch": rng.uniform(-0.25, 0.1),
        })
    if spec.overlap == "horizontal" and spec.leaf_count >= 2:
        # two blades at the same height crossing through each other
        placements[1]["azimuth"] = placements[0]["azimuth"] + 0.3
        placements[1]["height"] = placements[0]["height"]
        placements[1]["pitch"] = placements[0]["pitch"]
    elif spec.overlap == "vertical" and spec.leaf_count >= 2:
        # one blade stacked directly above the other within graph reach
        placements[1]["azimuth"] = placements[0]["azimuth"]
        placements[1]["height"] = placements[0]["height"] + 0.012
        placements[1]["pitch"] = placements[0]["pitch"]
    return placements


def generate(spec: PlantSpec) -> SyntheticPlant:
    """Build one plant; labels, apexes, and deformations are exact."""
    if spec.leaf_count < 1:
        raise ParameterError("leaf count must be >= 1")
    if spec.blade_shape not in BLADE_SHAPES:
        raise ParameterError(f"unknown blade shape '{spec.blade_shape}'")
    if spec.overlap not in OVERLAP_MODES:
        raise ParameterError(f"unknown overlap mode '{spec.overlap}'")

    rng = np.random.default_rng(spec.seed)
    placements = _leaf_placements(spec, rng)
    # the stem ends just above the last attachment; a long bare tip would
    # register as a spurious apex
    stem_top = max(p["height"] for p in placements) + 0.015

    points: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    colors: List[np.ndarray] = []
    leaves: List[LeafTruth] = []

    # stem: a vertical wire, densest structure of the plant
    n_stem = spec.stem_points
    stem = np.column_stack([
        np.zeros(n_stem), np.zeros(n_stem), np.linspace(0.0, stem_top, n_stem)])
    stem[1:] += rng.normal(0.0, spec.noise, (n_stem - 1, 3))
    stem[0] = 0.0                     # exact root at the origin
    points.append(stem)
    labels.append(np.full(n_stem, STEM_LABEL))
    stem_color = np.array([0.45, 0.33, 0.2])
    colors.append(np.tile(stem_color, (n_stem, 1)) +
                  rng.normal(0, 0.02, (n_stem, 3)))

    offset = n_stem
    for li, place in enumerate(placements):
        az, h, pitch = place["azimuth"], place["height"], place["pitch"]
        deformation = {
            "scale_x": float(rng.uniform(0.85, 1.15)),
            "scale_y": float(rng.uniform(0.85, 1.15)),
            "shear": float(rng.uniform(-0.08, 0.08)),
            "bend": float(rng.uniform(0.2, 0.7)),
            "cup": float(rng.uniform(0.0, 0.5)),
        }
        length_factor = 1.3 if spec.blade_shape == "elongated" else 1.0
        blade, tips = _sample_blade(
            rng, spec.blade_shape, spec.points_per_leaf,
            spec.blade_length * length_factor * deformation["scale_x"],
            spec.blade_width * deformation["scale_y"],
            deformation["bend"], deformation["cup"])
        shear = np.array([[1.0, deformation["shear"], 0.0],
                          [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        blade = blade @ shear.T
        tips = tips @ shear.T

        rot = _rotation_z(az) @ _rotation_y(pitch)
        attach = rot @ np.array([spec.petiole_length, 0.0, 0.0]) + \
            np.array([0.0, 0.0, h])

        n_pet = spec.petiole_points
        pet_t = np.linspace(0.0, 1.0, n_pet + 1)[:-1][:, None]
        petiole = pet_t * (rot @ np.array([spec.petiole_length, 0.0, 0.0]))
        petiole = petiole + np.array([0.0, 0.0, h])
        petiole += rng.normal(0.0, spec.noise * 0.5, petiole.shape)

        blade_world = blade @ rot.T + attach
        blade_world += rng.normal(0.0, spec.noise, blade_world.shape)
        tips_world = tips @ rot.T + attach

        blade_idx = np.arange(offset, offset + blade_world.shape[0])
        pet_idx = np.arange(offset + blade_world.shape[0],
                            offset + blade_world.shape[0] + petiole.shape[0])
        offset = pet_idx[-1] + 1

        # exact tip/base primitives: snap ground truth to nearest samples
        apex_indices = []
        for tip in tips_world:
            local = int(np.argmin(np.linalg.norm(blade_world - tip, axis=1)))
            apex_indices.append(int(blade_idx[local]))
        base_local = int(np.argmin(np.linalg.norm(blade_world - attach, axis=1)))

        points += [blade_world, petiole]
        labels += [np.full(blade_world.shape[0], li),
                   np.full(petiole.shape[0], STEM_LABEL)]
        leaf_color = np.array([0.18 + 0.05 * rng.uniform(-1, 1),
                               0.45 + 0.1 * rng.uniform(-1, 1),
                               0.16 + 0.05 * rng.uniform(-1, 1)])
        colors += [np.tile(leaf_color, (blade_world.shape[0], 1)) +
                   rng.normal(0, 0.02, (blade_world.shape[0], 3)),
                   np.tile(stem_color, (petiole.shape[0], 1)) +
                   rng.normal(0, 0.02, (petiole.shape[0], 3))]

        leaves.append(LeafTruth(
            label=li,
            blade_indices=blade_idx,
            petiole_indices=pet_idx,
            apex_index=apex_indices[0],
            apex_indices=apex_indices,
            base_index=int(blade_idx[base_local]),
            deformation=deformation,
            frame_rotation=rot,
            frame_translation=attach,
        ))

    centers = np.vstack(points)
    all_labels = np.concatenate(labels)
    all_colors = np.clip(np.vstack(colors), 0.02, 0.98)

    normalization = compute_normalization(centers)
    centers = normalization.apply(centers)
    for leaf in leaves:
        leaf.frame_translation = normalization.apply(leaf.frame_translation)

    # isotropic splat extents from local spacing
    tree = cKDTree(centers)
    dist, _ = tree.query(centers, k=5)
    sigma = 0.6 * dist[:, 1:].mean(axis=1)
    scales = np.tile(sigma[:, None], (1, 3))

    n = centers.shape[0]
    rotations = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    opacities = rng.uniform(0.75, 0.95, n)

    cloud = SplatCloud(centers=centers, scales=scales, rotations=rotations,
                       opacities=opacities, colors=all_colors,
                       normalization=normalization)
    return SyntheticPlant(cloud=cloud, labels=all_labels, leaves=leaves,
                          root_index=0, spec=spec)


def generate_leaf_pair(seed: int, kind: str = "affine", n: int = 420,
                       shape: str = "ellipse"
                       ) -> Tuple[np.ndarray, np.ndarray, Optional[Dict]]:
    """Template/target leaf point sets with a known analytic deformation.

    ``affine`` pairs share the sampled sheet and differ by an exact affine
    map (returned as {"A": 3x3, "b": 3}); ``bend`` pairs differ by smooth
    non-affine bending, for which no closed-form map is returned.
    """
    rng = np.random.default_rng(seed)
    template, _ = _sample_blade(rng, shape, n, length=0.2, width=0.07,
                                bend=0.3, cup=0.2)
    template = template - template.mean(axis=0)
    if kind == "affine":
        angle = rng.uniform(-0.3, 0.3)
        A = _rotation_z(angle) @ np.diag([rng.uniform(0.85, 1.2),
                                          rng.uniform(0.85, 1.2),
                                          rng.uniform(0.9, 1.1)])
        A[0, 1] += rng.uniform(-0.1, 0.1)
        b = rng.uniform(-0.05, 0.05, 3)
        target = template @ A.T + b
        return template, target, {"A": A, "b": b}
    if kind == "bend":
        x = template[:, 0]
        amp = rng.uniform(0.15, 0.45)
        target = template.copy()
        target[:, 2] += amp * (x - x.min()) ** 2
        target[:, 1] *= rng.uniform(0.85, 1.15)
        target = target @ _rotation_z(rng.uniform(-0.25, 0.25)).T
        return template, target, None
    raise ParameterError(f"unknown pair kind '{kind}'")
