"""Explicit stem geometry.

Non-leaf edges of the rootward tree become capped prisms whose radii follow
the branching area rule: a parent edge's cross-section equals the sum of its
children's.  Leaf-attachment edges start at the petiole radius; after the
rootward propagation every radius is scaled once so the root edge matches
the requested root radius exactly.  Rings are generated per tree node and
shared by the incident prisms, welding junctions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ParameterError
from .segmentation import STEM, PlantTree, Segmentation


@dataclass(frozen=True)
class StemSpec:
    root_radius: float = 0.01
    petiole_radius: float = 0.003
    sides: int = 8

    def __post_init__(self):
        if not self.root_radius >= self.petiole_radius > 0:
            raise ParameterError("need root_radius >= petiole_radius > 0")
        if self.sides < 3:
            raise ParameterError("a prism needs at least 3 sides")


@dataclass
class StemMesh:
    vertices: np.ndarray
    faces: np.ndarray
    edge_radii: Dict[Tuple[int, int], float] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return self.faces.shape[0] == 0


def stem_edges(tree: PlantTree, segmentation: Segmentation
               ) -> Dict[int, int]:
    """child -> parent over path nodes that are labeled stem."""
    labels = segmentation.labels
    edges: Dict[int, int] = {}
    for path in tree.paths.values():
        for a, b in zip(path[:-1], path[1:]):
            a, b = int(a), int(b)
            if labels[a] == STEM and labels[b] == STEM:
                edges.setdefault(a, b)
    return edges


def leonardo_radii(parent: Dict[int, int],
                   petiole_radius: float) -> Dict[Tuple[int, int], float]:
    """Area-conserving radii over a child->parent edge map.

    Tip edges (no incoming children) get the petiole radius; every other
    edge's squared radius is the sum of its children's squared radii.
    """
    children: Dict[int, List[int]] = {}
    for child, par in parent.items():
        children.setdefault(par, []).append(child)

    # post-order evaluation of squared radii, iterative to handle long chains
    area: Dict[int, float] = {}
    for start in parent:
        if start in area:
            continue
        stack = [start]
        while stack:
            node = stack[-1]
            subs = children.get(node, [])
            pending = [c for c in subs if c not in area]
            if pending:
                stack.extend(pending)
                continue
            stack.pop()
            if node in area:
                continue
            if not subs:
                area[node] = petiole_radius ** 2
            else:
                area[node] = float(sum(area[c] for c in subs))
    return {(child, par): float(np.sqrt(area[child]))
            for child, par in parent.items()}


def _ring_basis(axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0])
    if abs(float(axis @ ref)) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


def build_stem_mesh(tree: PlantTree, segmentation: Segmentation,
                    spec: StemSpec, centers: np.ndarray) -> StemMesh:
    """Capped prisms over the non-leaf tree edges with welded junctions."""
    parent = stem_edges(tree, segmentation)
    if not parent:
        warnings.warn("tree has no non-leaf edges; stem mesh is empty")
        return StemMesh(vertices=np.zeros((0, 3)),
                        faces=np.zeros((0, 3), dtype=np.int64))

    radii = leonardo_radii(parent, spec.petiole_radius)
    roots = sorted({par for par in parent.values() if par not in parent})
    root_edges = [(c, p) for c, p in parent.items() if p in roots]
    combined = float(np.sqrt(sum(radii[e] ** 2 for e in root_edges)))
    scale = spec.root_radius / combined if combined > 0 else 1.0
    radii = {e: r * scale for e, r in radii.items()}

    # one ring per node: radius and axis follow the thickest incident edge
    incident: Dict[int, List[Tuple[float, int, int]]] = {}
    for (child, par), r in radii.items():
        incident.setdefault(child, []).append((r, child, par))
        incident.setdefault(par, []).append((r, child, par))
    ring_of: Dict[int, int] = {}
    verts: List[np.ndarray] = []
    sides = spec.sides
    for node in sorted(incident):
        r, child, par = max(incident[node], key=lambda t: (t[0], -t[1]))
        axis = centers[par] - centers[child]
        norm = np.linalg.norm(axis)
        axis = axis / norm if norm > 1e-12 else np.array([0.0, 0.0, 1.0])
        u, v = _ring_basis(axis)
        ring_of[node] = len(verts)
        max_r = max(t[0] for t in incident[node])
        angles = 2 * np.pi * np.arange(sides) / sides
        for ang in angles:
            verts.append(centers[node] + max_r * (np.cos(ang) * u +
                                                  np.sin(ang) * v))

    faces: List[Tuple[int, int, int]] = []
    for child in sorted(parent):
        par = parent[child]
        a0, b0 = ring_of[child], ring_of[par]
        for i in range(sides):
            j = (i + 1) % sides
            faces.append((a0 + i, b0 + i, b0 + j))
            faces.append((a0 + i, b0 + j, a0 + j))

    # caps at degree-1 nodes (tips and the root end)
    degree: Dict[int, int] = {}
    for child, par in parent.items():
        degree[child] = degree.get(child, 0) + 1
        degree[par] = degree.get(par, 0) + 1
    center_of: Dict[int, int] = {}
    for node in sorted(degree):
        if degree[node] != 1:
            continue
        base = ring_of[node]
        center_of[node] = len(verts)
        verts.append(centers[node])
        outward = node in parent  # tip node: cap faces away from the parent
        for i in range(sides):
            j = (i + 1) % sides
            if outward:
                faces.append((base + j, base + i, center_of[node]))
            else:
                faces.append((base + i, base + j, center_of[node]))

    return StemMesh(vertices=np.asarray(verts),
                    faces=np.asarray(faces, dtype=np.int64),
                    edge_radii=radii)


def write_stem_obj(path, mesh: StemMesh, object_name: str = "stem") -> None:
    lines = [f"o {object_name}"]
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in mesh.faces:
        lines.append(f"f {int(f[0]) + 1} {int(f[1]) + 1} {int(f[2]) + 1}")
    from pathlib import Path
    Path(path).write_text("\n".join(lines) + "\n")
