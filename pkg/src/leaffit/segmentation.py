"""Automatic leaf-instance segmentation.

The stages mirror the geodesic workflow: farthest point sampling stabilizes
apex detection, rootward steepest-descent paths with a deferred-merge rule
form a tree, apexes are grouped into leaves by comparing direct geodesic
distances against the tree path through their lowest common ancestor, and
the leaf base is found where the iso-geodesic band diameter collapses.

All node references are global primitive indices; the sparse sample only
provides the graph structure for tracing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import SegmentationConfig
from .errors import DegenerateInputError, ParameterError, TraceError
from .geodesics import (GeodesicField, NeighborGraph, SampleSet,
                        build_knn_graph, farthest_point_sampling,
                        geodesic_distances)
from .splat_io import SplatCloud

STEM = -1

SEGMENTATION_SCHEMA_VERSION = 1


@dataclass
class PlantTree:
    """Rootward tree over the sparse sample (global primitive indices)."""

    root: int
    parent: Dict[int, int]                  # node -> next node toward root
    paths: Dict[int, np.ndarray]            # apex -> path (apex .. root)
    junctions: set
    apexes: List[int]
    sample: SampleSet

    @property
    def nodes(self) -> np.ndarray:
        return np.asarray(sorted(self.parent.keys() | {self.root}))

    def path_to_root(self, node: int) -> List[int]:
        out = [node]
        seen = {node}
        while out[-1] != self.root:
            nxt = self.parent[out[-1]]
            if nxt in seen:
                raise TraceError(f"parent cycle at node {nxt}")
            out.append(nxt)
            seen.add(nxt)
        return out

    def lca(self, a: int, b: int) -> int:
        ancestors = {}
        for rank, node in enumerate(self.path_to_root(a)):
            ancestors[node] = rank
        best = None
        for node in self.path_to_root(b):
            if node in ancestors:
                best = node
                break
        if best is None:
            raise TraceError(f"no common ancestor for {a} and {b}")
        return best

    def to_json(self) -> str:
        return json.dumps({
            "root": int(self.root),
            "parent": {str(k): int(v) for k, v in self.parent.items()},
            "paths": {str(k): [int(x) for x in v]
                      for k, v in self.paths.items()},
            "junctions": sorted(int(j) for j in self.junctions),
            "apexes": [int(a) for a in self.apexes],
            "sample": [int(i) for i in self.sample.indices],
        })

    @classmethod
    def from_json(cls, text: str) -> "PlantTree":
        doc = json.loads(text)
        return cls(
            root=int(doc["root"]),
            parent={int(k): int(v) for k, v in doc["parent"].items()},
            paths={int(k): np.asarray(v, dtype=np.int64)
                   for k, v in doc["paths"].items()},
            junctions=set(doc["junctions"]),
            apexes=list(doc["apexes"]),
            sample=SampleSet(indices=np.asarray(doc["sample"],
                                                dtype=np.int64)),
        )


@dataclass
class LeafRecord:
    id: int
    tip: int                    # primary apex (largest root distance)
    apexes: List[int]
    cut_distance: float
    flagged: bool
    member_indices: np.ndarray = field(default=None, repr=False)


@dataclass
class Segmentation:
    """Per-primitive labels (leaf id >= 0 or STEM) plus per-leaf records."""

    labels: np.ndarray
    leaves: List[LeafRecord]
    root: int

    def leaf_count(self) -> int:
        return len(self.leaves)

    def members(self, leaf_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == leaf_id)

    def to_json(self) -> str:
        doc = {
            "version": SEGMENTATION_SCHEMA_VERSION,
            "root": int(self.root),
            "labels": [int(v) for v in self.labels],
            "leaves": [
                {
                    "id": int(leaf.id),
                    "tip": int(leaf.tip),
                    "apexes": [int(a) for a in leaf.apexes],
                    "cut_distance": float(leaf.cut_distance),
                    "flagged": bool(leaf.flagged),
                }
                for leaf in self.leaves
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Segmentation":
        doc = json.loads(text)
        if doc.get("version") != SEGMENTATION_SCHEMA_VERSION:
            raise ParameterError(
                f"unsupported segmentation document version {doc.get('version')}")
        labels = np.asarray(doc["labels"], dtype=np.int64)
        leaves = [LeafRecord(id=item["id"], tip=item["tip"],
                             apexes=list(item["apexes"]),
                             cut_distance=item["cut_distance"],
                             flagged=item["flagged"],
                             member_indices=np.flatnonzero(labels == item["id"]))
                  for item in doc["leaves"]]
        return cls(labels=labels, leaves=leaves, root=int(doc["root"]))


def effective_neighbor_count(point_count: int, cfg: SegmentationConfig) -> int:
    """Desk-scale clouds get a reduced neighbor count."""
    k = cfg.n_neighbors
    if point_count < cfg.n_samples:
        k = min(k, cfg.desk_scale_neighbors)
    return max(1, min(k, point_count - 1))


def apex_neighbor_count(sample_size: int, cfg: SegmentationConfig) -> int:
    """Neighborhood size for local-maximum testing.

    Apex detection needs a neighborhood that spans a whole blade; the
    configured count is kept proportional to the sample (matching the
    full-scale ratio) so desk-scale clouds do not sprout duplicate tips
    from sampling noise.
    """
    proportional = max(cfg.desk_scale_neighbors, sample_size // 16)
    return max(1, min(cfg.n_neighbors, proportional, sample_size - 1))


def detect_apexes(field: GeodesicField, sample: SampleSet,
                  graph: NeighborGraph) -> List[int]:
    """Strict local maxima of the root distance on the sampled graph.

    Returns global primitive indices sorted by descending distance.
    """
    local_values = field.distances[sample.indices]
    apexes = []
    for local in range(len(sample)):
        nbrs, _ = graph.neighbors(local)
        if nbrs.shape[0] == 0:
            continue
        v = local_values[local]
        if np.isfinite(v) and np.all(local_values[nbrs] < v):
            apexes.append(local)
    if not apexes:
        raise DegenerateInputError(
            "no geodesic local maximum found; the cloud has no distinct "
            "extremities")
    apexes.sort(key=lambda loc: (-local_values[loc], sample.indices[loc]))
    return [int(sample.indices[loc]) for loc in apexes]


def _merge_target(candidates: np.ndarray, here: int, points: np.ndarray,
                  sample: SampleSet) -> int:
    """Deterministic junction pick: spatially nearest visited node.

    Picking the closest node (rather than the most rootward one) keeps the
    junction near the true route crossing, which the apex grouping relies on.
    """
    order = sorted(candidates,
                   key=lambda loc: (np.linalg.norm(points[loc] - points[here]),
                                    sample.indices[loc]))
    return int(order[0])


def trace_tree(apexes: Sequence[int], field: GeodesicField, sample: SampleSet,
               graph: NeighborGraph, deferred_merge: bool = True) -> PlantTree:
    """Trace rootward steepest-descent paths and merge them into a tree.

    A path touching an already-visited neighborhood once is not joined
    immediately; the merge happens only if the next step's neighborhood still
    contains visited nodes (deferred merge).  Disable ``deferred_merge`` to
    get the naive first-contact behavior.
    """
    if len(apexes) == 0:
        raise ParameterError("apex list is empty")
    root = field.source
    sample_pos = {int(g): i for i, g in enumerate(sample.indices)}
    if root not in sample_pos:
        raise ParameterError("root must be part of the sample")
    root_local = sample_pos[root]
    dist = field.distances[sample.indices]

    order = sorted(apexes, key=lambda g: (-field.distances[g], g))
    visited: set = set()
    # territory maps every node inside a tree path's neighborhood to the
    # owning path node, so later paths notice the tree as soon as their own
    # neighborhood overlaps it (sparse chains would otherwise slip past)
    territory: Dict[int, int] = {}
    parent: Dict[int, int] = {}
    junctions: set = set()
    paths: Dict[int, np.ndarray] = {}

    def descend(cur: int) -> int:
        nbrs, _ = graph.neighbors(cur)
        if nbrs.shape[0] == 0:
            raise TraceError(
                f"node {int(sample.indices[cur])} has no neighbors")
        best = min(nbrs, key=lambda loc: (dist[loc], sample.indices[loc]))
        if dist[best] >= dist[cur]:
            raise TraceError(
                f"steepest descent stuck at node {int(sample.indices[cur])}; "
                f"cloud may be disconnected or too sparsely sampled")
        return int(best)

    def contact_owners(node: int, own: set) -> List[int]:
        seen = [node, *graph.neighbors(node)[0]]
        owners = {territory[t] for t in seen
                  if t not in own and t in territory}
        return sorted(owners - own)

    def claim(nodes: List[int]) -> None:
        for c in nodes:
            territory[c] = c
        for c in nodes:
            for t in graph.neighbors(c)[0]:
                territory.setdefault(int(t), c)

    for apex in order:
        al = sample_pos[apex]
        if al in visited:
            # apex already absorbed by an earlier path
            paths[apex] = np.asarray(
                [sample.indices[al]] if al == root_local else
                _globalize(_walk_parent(al, root_local, parent), sample))
            continue
        segment = [al]
        own = {al}
        merged_at: Optional[int] = None
        cur = al
        while cur != root_local:
            contact = contact_owners(cur, own)
            if contact and not deferred_merge:
                merged_at = _merge_target(np.asarray(contact), cur,
                                          graph.points, sample)
                segment.append(merged_at)
                break
            nxt = descend(cur)
            if nxt in visited:
                segment.append(nxt)
                merged_at = nxt
                break
            segment.append(nxt)
            own.add(nxt)
            if contact:
                # deferred check one step later
                contact2 = contact_owners(nxt, own)
                if contact2:
                    merged_at = _merge_target(np.asarray(contact2), nxt,
                                              graph.points, sample)
                    segment.append(merged_at)
                    break
            cur = nxt

        for i in range(len(segment) - 1):
            parent.setdefault(segment[i], segment[i + 1])
        visited.update(segment)
        if merged_at is not None and merged_at != root_local:
            junctions.add(int(sample.indices[merged_at]))
            tail = _walk_parent(merged_at, root_local, parent)
            full = segment + tail[1:]
        else:
            full = segment
        visited.update(full)
        claim(segment)
        paths[apex] = _globalize(full, sample)

    return PlantTree(
        root=root,
        parent={int(sample.indices[a]): int(sample.indices[b])
                for a, b in parent.items()},
        paths=paths,
        junctions=junctions,
        apexes=list(order),
        sample=sample,
    )


def _walk_parent(start: int, root_local: int, parent: Dict[int, int]) -> List[int]:
    out = [start]
    while out[-1] != root_local:
        out.append(parent[out[-1]])
    return out


def _globalize(locals_: List[int], sample: SampleSet) -> np.ndarray:
    return np.asarray([int(sample.indices[loc]) for loc in locals_])


def group_apexes(tree: PlantTree, apex_fields: Dict[int, GeodesicField],
                 tau: float) -> List[List[int]]:
    """Connected components of the same-leaf relation between apexes.

    Two apexes join when the direct geodesic distance beats the tree path
    through their lowest common ancestor by more than ``tau``.  The direct
    term uses both field orientations so the grouping is symmetric.
    """
    apexes = tree.apexes
    for a in apexes:
        if a not in apex_fields:
            raise ParameterError(f"missing distance field for apex {a}")
    parent = {a: a for a in apexes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, a in enumerate(apexes):
        for b in apexes[i + 1:]:
            direct = min(apex_fields[a].distances[b],
                         apex_fields[b].distances[a])
            lca = tree.lca(a, b)
            via_tree = (apex_fields[a].distances[lca] +
                        apex_fields[b].distances[lca])
            if direct < via_tree - tau:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    groups: Dict[int, List[int]] = {}
    for a in apexes:
        groups.setdefault(find(a), []).append(a)
    # keep the tree's priority order (descending root distance)
    ordered = sorted(groups.values(),
                     key=lambda g: min(apexes.index(a) for a in g))
    return ordered


@dataclass(frozen=True)
class PetioleResult:
    cut_distance: float
    cut_index: int
    flagged: bool


def locate_petiole(group: Sequence[int], tip_field: GeodesicField,
                   path: np.ndarray, cloud_centers: np.ndarray,
                   tree: PlantTree, delta: float, epsilon: float,
                   rho: float) -> PetioleResult:
    """March rootward along the tip path until the band diameter collapses.

    The diameter at a path node is the largest Euclidean distance to any
    primitive inside an iso-geodesic band of width ``delta``, restricted to
    a 2*epsilon ball around the node so that structures merely equidistant
    from the tip (other lobes, other leaves) cannot mask a thin petiole.
    Testing is disabled within the initial fraction ``rho`` of the arc
    length from the tip to the first junction with a path from outside
    ``group`` (in-leaf lobe merges must not shrink the protection window).
    """
    d_a = tip_field.distances
    pts = cloud_centers[path]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])

    group_set = set(int(a) for a in group)
    outside: set = set()
    for apex in tree.apexes:
        if int(apex) not in group_set:
            outside.update(int(v) for v in tree.paths[apex])

    junction_i = len(path) - 1
    for i, node in enumerate(path):
        if i > 0 and node in tree.junctions and int(node) in outside:
            junction_i = i
            break
    junction_arc = arc[junction_i]
    protect = rho * junction_arc

    finite = np.isfinite(d_a)
    for i, node in enumerate(path):
        if arc[i] < protect:
            continue
        band = finite & (np.abs(d_a - d_a[node]) <= delta / 2.0)
        offsets = cloud_centers[band] - cloud_centers[node]
        dists = np.linalg.norm(offsets, axis=1)
        dists = dists[dists <= 2.0 * epsilon]
        diameter = float(dists.max()) if dists.size else 0.0
        if diameter < epsilon:
            # a cut landing at the junction with the rest of the plant means
            # no petiole was found below the blade: leave it for review
            no_petiole = junction_arc - arc[i] < 2.0 * delta
            return PetioleResult(cut_distance=float(d_a[node]),
                                 cut_index=int(node), flagged=no_petiole)

    # no trigger: cut at the first outside junction (or path end) and flag
    return PetioleResult(cut_distance=float(d_a[path[junction_i]]),
                         cut_index=int(path[junction_i]), flagged=True)


@dataclass
class SegmentationArtifacts:
    """Intermediate stage products kept for inspection and reuse."""

    full_graph: NeighborGraph
    sample: SampleSet
    sample_graph: NeighborGraph
    root_field: GeodesicField
    tree: PlantTree
    apex_fields: Dict[int, GeodesicField]
    groups: List[List[int]]


def segment_leaves(cloud: SplatCloud, root: int,
                   cfg: Optional[SegmentationConfig] = None,
                   return_artifacts: bool = False):
    """Full automatic segmentation; returns Segmentation (+ artifacts)."""
    cfg = cfg or SegmentationConfig()
    centers = cloud.centers
    n = centers.shape[0]
    if not 0 <= root < n:
        raise ParameterError(f"root index {root} out of range")

    k_eff = effective_neighbor_count(n, cfg)
    full_graph = build_knn_graph(centers, k_eff)
    root_field = geodesic_distances(full_graph, root, cfg.backend)

    n_sample = min(cfg.n_samples, n)
    sample = farthest_point_sampling(centers, n_sample, seed_index=root)
    k_s = max(1, min(k_eff, n_sample - 1))
    sample_graph = build_knn_graph(centers[sample.indices], k_s)

    k_apex = apex_neighbor_count(n_sample, cfg)
    if k_apex == k_s:
        apex_graph = sample_graph
    else:
        apex_graph = build_knn_graph(centers[sample.indices], k_apex)
    apexes = detect_apexes(root_field, sample, apex_graph)
    tree = trace_tree(apexes, root_field, sample, sample_graph)

    apex_fields = {a: geodesic_distances(full_graph, a, cfg.backend)
                   for a in apexes}
    groups = group_apexes(tree, apex_fields, cfg.tau)

    labels = np.full(n, STEM, dtype=np.int64)
    claim_dist = np.full(n, np.inf)
    contested = np.zeros(n, dtype=bool)
    candidates: List[LeafRecord] = []
    for leaf_id, group in enumerate(groups):
        tip = max(group, key=lambda a: (root_field.distances[a], -a))
        result = locate_petiole(group, apex_fields[tip], tree.paths[tip],
                                centers, tree, cfg.delta, cfg.epsilon, cfg.rho)
        d_tip = apex_fields[tip].distances
        members = np.isfinite(d_tip) & (d_tip < result.cut_distance)
        contested |= members & (labels >= 0)
        # overlapping claims go to the geodesically nearest tip
        take = members & (d_tip < claim_dist)
        labels[take] = leaf_id
        claim_dist[take] = d_tip[take]
        # a grouped apex beyond its own cut cannot belong to the leaf it was
        # grouped into: typical of overlapping blades corrupting the field
        stray_apex = any(np.isfinite(d_tip[a]) and
                         d_tip[a] >= result.cut_distance
                         for a in group if a != tip)
        candidates.append(LeafRecord(
            id=leaf_id, tip=int(tip), apexes=[int(a) for a in group],
            cut_distance=result.cut_distance,
            flagged=result.flagged or stray_apex))

    # tiny detections (bare stem tips, noise bumps) are folded back into stem
    leaves: List[LeafRecord] = []
    for record in candidates:
        members = np.flatnonzero(labels == record.id)
        if members.shape[0] < cfg.min_leaf_points:
            labels[members] = STEM
            continue
        # leaves interpenetrating geodesically (many multiply-claimed
        # primitives) need review: overlapping blades corrupt the fields
        share = contested[members].mean() if members.size else 0.0
        record.flagged = record.flagged or share > 0.05
        leaves.append(record)

    # same-plant leaves are similar; a leaf towering over the population is
    # usually several blades fused by overlap, so leave it for review
    if len(leaves) >= 2:
        sizes = np.asarray([np.count_nonzero(labels == leaf.id)
                            for leaf in leaves], dtype=np.float64)
        median = float(np.median(sizes))
        for leaf, size in zip(leaves, sizes):
            if size > 1.8 * median:
                leaf.flagged = True
    for new_id, leaf in enumerate(leaves):
        members = np.flatnonzero(labels == leaf.id)
        labels[members] = new_id
        leaf.id = new_id
        leaf.member_indices = members

    segmentation = Segmentation(labels=labels, leaves=leaves, root=int(root))
    if return_artifacts:
        return segmentation, SegmentationArtifacts(
            full_graph=full_graph, sample=sample, sample_graph=sample_graph,
            root_field=root_field, tree=tree, apex_fields=apex_fields,
            groups=groups)
    return segmentation
