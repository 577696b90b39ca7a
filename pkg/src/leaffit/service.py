"""Embedded HTTP/WebSocket service for interactive segmentation editing.

The server owns one session: the cloud, the current labels, an undo stack,
and a small LRU cache of geodesic fields keyed by source primitive.  Clients
fetch the point buffer once (binary: little-endian f32 xyz + u8 rgb), read
and edit labels over JSON, and stream drag/brush selections over the
/select WebSocket, which replies with changed-index deltas and a sequence
counter.

Edits are serialized through a lock; selection queries are pure reads.
"""


import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from .config import SegmentationConfig
from .errors import ParameterError
from .geodesics import GeodesicField, NeighborGraph, build_knn_graph, \
    geodesic_distances
from .segmentation import (STEM, LeafRecord, Segmentation,
                           effective_neighbor_count)
from .splat_io import SplatCloud

FIELD_CACHE_SIZE = 16
BVH_LEAF_SIZE = 8
TRUNCATION_SCALE = 3.0


@dataclass(frozen=True)
class PickRay:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=np.float64)
        norm = np.linalg.norm(direction)
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise ParameterError("ray direction must be unit length")
        object.__setattr__(self, "origin",
                           np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", direction)


class SplatBVH:
    """Median-split AABB tree over splat bounds at the truncation scale."""

    def __init__(self, cloud: SplatCloud, truncation: float = TRUNCATION_SCALE):
        self.cloud = cloud
        self.truncation = truncation
        radius = truncation * cloud.scales.max(axis=1)
        self.lo = cloud.centers - radius[:, None]
        self.hi = cloud.centers + radius[:, None]
        order = np.arange(len(cloud))
        self.nodes: List[Tuple[np.ndarray, np.ndarray, int, int, int, int]] = []
        self.order = order.copy()
        self._build(0, len(order))

    def _build(self, start: int, end: int) -> int:
        idx = self.order[start:end]
        lo = self.lo[idx].min(axis=0)
        hi = self.hi[idx].max(axis=0)
        node_id = len(self.nodes)
        self.nodes.append([lo, hi, start, end, -1, -1])
        if end - start > BVH_LEAF_SIZE:
            centers = self.cloud.centers[idx]
            axis = int(np.argmax(hi - lo))
            mid = (end - start) // 2
            part = np.argsort(centers[:, axis], kind="stable")
            self.order[start:end] = idx[part]
            left = self._build(start, start + mid)
            right = self._build(start + mid, end)
            self.nodes[node_id][4] = left
            self.nodes[node_id][5] = right
        return node_id

    @staticmethod
    def _slab_hit(lo, hi, origin, inv_dir) -> Tuple[bool, float]:
        t0 = (lo - origin) * inv_dir
        t1 = (hi - origin) * inv_dir
        tmin = float(np.maximum(np.minimum(t0, t1), 0.0).max())
        tmax = float(np.maximum(t0, t1).min())
        return tmax >= tmin, tmin

    def _ellipsoid_hit(self, index: int, ray: PickRay) -> Optional[float]:
        """Exact ray vs 3-sigma ellipsoid intersection parameter."""
        c = self.cloud.centers[index]
        q = self.cloud.rotations[index]
        w, x, y, z = q
        rot = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        radii = self.truncation * self.cloud.scales[index]
        # transform the ray into the unit-sphere frame of the splat
        o = (rot.T @ (ray.origin - c)) / radii
        d = (rot.T @ ray.direction) / radii
        a = float(d @ d)
        b = 2.0 * float(o @ d)
        cc = float(o @ o) - 1.0
        disc = b * b - 4 * a * cc
        if disc < 0 or a == 0.0:
            return None
        sq = np.sqrt(disc)
        t_near = (-b - sq) / (2 * a)
        t_far = (-b + sq) / (2 * a)
        if t_far < 0:
            return None
        return t_near if t_near >= 0 else t_far

    def raycast(self, ray: PickRay) -> Optional[int]:
        with np.errstate(divide="ignore"):
            inv_dir = 1.0 / ray.direction
        best_t = np.inf
        best_index: Optional[int] = None
        stack = [0]
        while stack:
            node = self.nodes[stack.pop()]
            lo, hi, start, end, left, right = node
            hit, tmin = self._slab_hit(lo, hi, ray.origin, inv_dir)
            if not hit or tmin > best_t:
                continue
            if left < 0:
                for index in self.order[start:end]:
                    t = self._ellipsoid_hit(int(index), ray)
                    if t is not None and t < best_t:
                        best_t = t
                        best_index = int(index)
            else:
                stack.append(left)
                stack.append(right)
        return best_index

    def raycast_brute_force(self, ray: PickRay) -> Optional[int]:
        """Linear-scan oracle for tests."""
        best_t, best = np.inf, None
        for index in range(len(self.cloud)):
            t = self._ellipsoid_hit(index, ray)
            if t is not None and t < best_t:
                best_t, best = t, index
        return best


class EditSession:
    """One cloud, one mutable segmentation, one undo stack."""

    def __init__(self, cloud: SplatCloud, segmentation: Segmentation,
                 cfg: Optional[SegmentationConfig] = None):
        self.cloud = cloud
        self.segmentation = segmentation
        self.cfg = cfg or SegmentationConfig()
        self.lock = threading.Lock()
        self.undo_stack: List[Tuple[np.ndarray, np.ndarray]] = []
        self.sequence = 0
        self._graph: Optional[NeighborGraph] = None
        self._fields: "OrderedDict[int, GeodesicField]" = OrderedDict()
        self._bvh: Optional[SplatBVH] = None

    @property
    def graph(self) -> NeighborGraph:
        if self._graph is None:
            k = effective_neighbor_count(len(self.cloud), self.cfg)
            self._graph = build_knn_graph(self.cloud.centers, k)
        return self._graph

    @property
    def bvh(self) -> SplatBVH:
        if self._bvh is None:
            self._bvh = SplatBVH(self.cloud)
        return self._bvh

    def field(self, source: int) -> GeodesicField:
        if source in self._fields:
            self._fields.move_to_end(source)
            return self._fields[source]
        field = geodesic_distances(self.graph, source, self.cfg.backend)
        self._fields[source] = field
        while len(self._fields) > FIELD_CACHE_SIZE:
            self._fields.popitem(last=False)
        return field

    # -- selection queries (pure) -----------------------------------------
    def drag_select(self, source: int, target: int) -> np.ndarray:
        d = self.field(source).distances
        return np.flatnonzero(d <= d[target])

    def brush_select(self, center: int, radius: float) -> np.ndarray:
        if radius <= 0:
            raise ParameterError("brush radius must be positive")
        d = self.field(center).distances
        return np.flatnonzero(d <= radius)

    def raycast(self, ray: PickRay) -> Optional[int]:
        return self.bvh.raycast(ray)

    # -- edits -------------------------------------------------------------
    def apply_label(self, selection: np.ndarray, label: int) -> Dict:
        selection = np.asarray(selection, dtype=np.int64)
        if selection.size == 0:
            return {"changed": [], "warning": "empty selection",
                    "sequence": self.sequence}
        if selection.min() < 0 or selection.max() >= len(self.cloud):
            raise ParameterError("selection indices out of range")
        with self.lock:
            previous = self.segmentation.labels[selection].copy()
            self.segmentation.labels[selection] = label
            self.undo_stack.append((selection.copy(), previous))
            self._refresh_records()
            self.sequence += 1
            changed = selection[previous != label]
            return {"changed": changed.tolist(), "label": int(label),
                    "sequence": self.sequence}

    def undo(self) -> Dict:
        with self.lock:
            if not self.undo_stack:
                return {"changed": [], "warning": "nothing to undo",
                        "sequence": self.sequence}
            selection, previous = self.undo_stack.pop()
            self.segmentation.labels[selection] = previous
            self._refresh_records()
            self.sequence += 1
            return {"changed": selection.tolist(), "sequence": self.sequence}

    def _refresh_records(self) -> None:
        labels = self.segmentation.labels
        kept: List[LeafRecord] = []
        for leaf in self.segmentation.leaves:
            members = np.flatnonzero(labels == leaf.id)
            if members.size:
                leaf.member_indices = members
                kept.append(leaf)
        known = {leaf.id for leaf in kept}
        for leaf_id in np.unique(labels):
            if leaf_id == STEM or int(leaf_id) in known:
                continue
            members = np.flatnonzero(labels == leaf_id)
            kept.append(LeafRecord(id=int(leaf_id), tip=int(members[0]),
                                   apexes=[int(members[0])],
                                   cut_distance=float("nan"), flagged=True,
                                   member_indices=members))
        kept.sort(key=lambda leaf: leaf.id)
        self.segmentation.leaves = kept

    def cloud_buffer(self) -> bytes:
        xyz = self.cloud.centers.astype("<f4").tobytes()
        rgb = (np.clip(self.cloud.colors, 0, 1) * 255).astype(np.uint8).tobytes()
        return xyz + rgb


def create_app(session: EditSession):
    """FastAPI app exposing the session; imported lazily by the CLI."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import JSONResponse, Response

    app = FastAPI(title="leaffit edit service")

    @app.get("/cloud")
    def get_cloud():
        return Response(content=session.cloud_buffer(),
                        media_type="application/octet-stream",
                        headers={"X-Point-Count": str(len(session.cloud))})

    @app.get("/segmentation")
    def get_segmentation():
        return Response(content=session.segmentation.to_json(),
                        media_type="application/json")

    @app.post("/label")
    async def post_label(payload: dict):
        try:
            selection = np.asarray(payload["selection"], dtype=np.int64)
            label = int(payload["label"])
        except (KeyError, TypeError, ValueError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        try:
            return session.apply_label(selection, label)
        except ParameterError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)

    @app.post("/undo")
    def post_undo():
        return session.undo()

    @app.post("/raycast")
    async def post_raycast(payload: dict):
        try:
            ray = PickRay(origin=np.asarray(payload["origin"], dtype=float),
                          direction=np.asarray(payload["direction"],
                                               dtype=float))
        except (KeyError, ParameterError, ValueError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        hit = session.raycast(ray)
        return {"hit": hit if hit is None else int(hit)}

    @app.websocket("/select")
    async def select_socket(socket: WebSocket):
        await socket.accept()
        previous: Set[int] = set()
        counter = 0
        try:
            while True:
                message = json.loads(await socket.receive_text())
                op = message.get("op")
                try:
                    if op == "drag":
                        selection = session.drag_select(
                            int(message["source"]), int(message["target"]))
                    elif op == "brush":
                        selection = session.brush_select(
                            int(message["source"]),
                            float(message["radius"]))
                    elif op == "clear":
                        selection = np.zeros(0, dtype=np.int64)
                    else:
                        await socket.send_text(json.dumps(
                            {"error": f"unknown op '{op}'"}))
                        continue
                except (ParameterError, KeyError, ValueError) as exc:
                    await socket.send_text(json.dumps({"error": str(exc)}))
                    continue
                current = set(int(v) for v in selection)
                counter += 1
                await socket.send_text(json.dumps({
                    "sequence": counter,
                    "added": sorted(current - previous),
                    "removed": sorted(previous - current),
                    "count": len(current),
                }))
                previous = current
        except WebSocketDisconnect:
            return

    return app


def serve(input_ply, segmentation_path, port: int = 7878,
          cfg: Optional[SegmentationConfig] = None) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn

    from .splat_io import load_splat_ply

    cloud = load_splat_ply(input_ply)
    segmentation = Segmentation.from_json(
        open(segmentation_path).read())
    session = EditSession(cloud, segmentation, cfg)
    uvicorn.run(create_app(session), host="127.0.0.1", port=port,
                log_level="warning")
