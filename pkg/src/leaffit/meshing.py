"""Template mesh extraction from a denoised, PCA-aligned leaf.

Ball pivoting rolls a sphere of increasing radius over the point set to
triangulate the thin sheet; small interior holes are closed with centroid
fans, the single outer boundary stays open.  Faces and vertices are then
duplicated into a front/back pair with split normals and disjoint UV atlas
halves, and textures are baked from orthographic soft-splatted renders of
the leaf's Gaussians.

UVs come from the same planar map as the bake cameras, so texture lookups
and baked pixels coincide by construction.
"""

from __future__ import annotations

import heapq
import warnings
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, ParameterError, ReconstructionError
from .geodesics import farthest_point_sampling

BPA_RADII = (1.5, 2.0, 3.0)      # multiples of the mean nearest-neighbor gap
ON_SPHERE_TOL = 1e-7             # relative slack for the empty-ball test
HOLE_EDGE_LIMIT = 24


@dataclass
class PlanarMap:
    """Shared parameterization between UVs and bake cameras."""

    center_x: float
    center_y: float
    half_extent: float

    @classmethod
    def fit(cls, points: np.ndarray, margin: float = 0.05) -> "PlanarMap":
        lo, hi = points.min(axis=0), points.max(axis=0)
        half = 0.5 * max(hi[0] - lo[0], hi[1] - lo[1]) * (1 + 2 * margin)
        return cls(center_x=float((lo[0] + hi[0]) / 2),
                   center_y=float((lo[1] + hi[1]) / 2),
                   half_extent=float(max(half, 1e-9)))

    def uv(self, points: np.ndarray) -> np.ndarray:
        u = (points[:, 0] - self.center_x) / (2 * self.half_extent) + 0.5
        v = (points[:, 1] - self.center_y) / (2 * self.half_extent) + 0.5
        return np.column_stack([u, v])


@dataclass
class TemplateMesh:
    vertices: np.ndarray          # (V, 3)
    faces: np.ndarray             # (F, 3) int
    normals: np.ndarray           # (V, 3)
    uvs: np.ndarray               # (V, 2) atlas coordinates
    planar: PlanarMap
    two_sided: bool = False
    face_side: np.ndarray = None  # (F,) 0 = front, 1 = back
    base_vertex_count: int = 0    # FPS vertices before hole-repair centroids

    def __post_init__(self):
        if self.face_side is None:
            self.face_side = np.zeros(self.faces.shape[0], dtype=np.int8)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def face_count(self) -> int:
        return self.faces.shape[0]


@dataclass
class TextureImage:
    """RGBA atlas; left half is the front side, right half the back."""

    pixels: np.ndarray            # (H, W, 4) uint8

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def half(self, side: str) -> np.ndarray:
        w = self.width // 2
        return self.pixels[:, :w] if side == "front" else self.pixels[:, w:]


def estimate_normals(points: np.ndarray, k: int = 10) -> np.ndarray:
    """Local PCA normals oriented toward +z (aligned sheets)."""
    tree = cKDTree(points)
    k = min(k, points.shape[0] - 1)
    _, idx = tree.query(points, k=k + 1)
    normals = np.empty_like(points)
    for i in range(points.shape[0]):
        nb = points[idx[i]]
        diff = nb - nb.mean(axis=0)
        _, vecs = np.linalg.eigh(diff.T @ diff)
        n = vecs[:, 0]
        normals[i] = n if n[2] >= 0 else -n
    return normals


def mean_spacing(points: np.ndarray) -> float:
    tree = cKDTree(points)
    d, _ = tree.query(points, k=2)
    return float(d[:, 1].mean())


def _circumcircle(pa, pb, pc):
    """Circumcenter and radius of a 3D triangle (None when degenerate)."""
    ab = pb - pa
    ac = pc - pa
    n = np.cross(ab, ac)
    nn = float(n @ n)
    if nn < 1e-24:
        return None, None, None
    ab2 = float(ab @ ab)
    ac2 = float(ac @ ac)
    # c = pa + (|ac|^2 [n x ab] + |ab|^2 [ac x n]) / (2 n.n)
    to_center = (ac2 * np.cross(n, ab) + ab2 * np.cross(ac, n)) / (2.0 * nn)
    center = pa + to_center
    radius = float(np.linalg.norm(to_center))
    return center, radius, n / np.sqrt(nn)


class _BallPivot:
    """Ball-pivoting front machinery over a fixed point set."""

    def __init__(self, points: np.ndarray, normals: np.ndarray):
        self.points = points
        self.normals = normals
        self.tree = cKDTree(points)
        self.faces: List[Tuple[int, int, int]] = []
        self.consumed: Set[Tuple[int, int]] = set()   # directed edges in use
        self.avail: Dict[Tuple[int, int], int] = {}   # free reverse edge -> opp
        self.face_set: Set[frozenset] = set()
        self.used = np.zeros(points.shape[0], dtype=bool)

    def edge_faces(self, a: int, b: int) -> int:
        return int((a, b) in self.consumed) + int((b, a) in self.consumed)

    def _ball_center(self, a: int, b: int, c: int, rho: float,
                     side: np.ndarray) -> Optional[np.ndarray]:
        center, radius, n = _circumcircle(self.points[a], self.points[b],
                                          self.points[c])
        if center is None or radius > rho:
            return None
        h = np.sqrt(max(rho * rho - radius * radius, 0.0))
        if float(n @ side) < 0:
            n = -n
        return center + h * n

    def _ball_empty(self, center: np.ndarray, rho: float,
                    exclude: Tuple[int, ...]) -> bool:
        limit = rho * (1.0 - ON_SPHERE_TOL)
        for idx in self.tree.query_ball_point(center, limit):
            if idx not in exclude:
                return False
        return True

    def _add_face(self, a: int, b: int, c: int) -> None:
        self.faces.append((a, b, c))
        self.face_set.add(frozenset((a, b, c)))
        for u, v in ((a, b), (b, c), (c, a)):
            self.consumed.add((u, v))
            self.avail.pop((u, v), None)
        third = {(b, a): c, (c, b): a, (a, c): b}
        for (u, v), opp in third.items():
            if (u, v) not in self.consumed:
                self.avail[(u, v)] = {(b, a): c, (c, b): a, (a, c): b}[(u, v)]
        self.used[[a, b, c]] = True

    def _face_ok(self, a: int, b: int, c: int) -> bool:
        if frozenset((a, b, c)) in self.face_set:
            return False
        # every directed edge may carry one face only (edge-manifold)
        for u, v in ((a, b), (b, c), (c, a)):
            if (u, v) in self.consumed:
                return False
        return True

    def _pivot(self, u: int, v: int, opp: int, rho: float) -> Optional[int]:
        """Roll the ball around available edge u->v; return the hit vertex."""
        pts = self.points
        pu, pv = pts[u], pts[v]
        mid = 0.5 * (pu + pv)
        half_edge = 0.5 * np.linalg.norm(pv - pu)
        if half_edge > rho:
            return None
        axis = (pv - pu) / max(2 * half_edge, 1e-300)
        prev_center = self._ball_center(v, u, opp, rho,
                                        side=self._face_normal(v, u, opp))
        if prev_center is None:
            return None
        e_prev = prev_center - mid
        e_prev -= axis * float(axis @ e_prev)
        ep_norm = np.linalg.norm(e_prev)
        if ep_norm < 1e-15:
            return None
        e_prev /= ep_norm

        reach = np.sqrt(rho * rho - half_edge * half_edge) + rho
        cand = np.asarray([c for c in self.tree.query_ball_point(mid, reach)
                           if c != u and c != v and c != opp], dtype=np.int64)
        if cand.shape[0] == 0:
            return None

        # batched circumcenters of (u, v, w) for all candidates w
        ab = pv - pu
        ac = pts[cand] - pu
        n = np.cross(ab[None, :], ac)
        nn = (n * n).sum(axis=1)
        ok = nn > 1e-24
        ab2 = float(ab @ ab)
        ac2 = (ac * ac).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            to_center = (ac2[:, None] * np.cross(n, ab[None, :]) +
                         ab2 * np.cross(ac, n)) / (2.0 * nn[:, None])
            radius2 = (to_center * to_center).sum(axis=1)
            ok &= radius2 <= rho * rho
            n_hat = n / np.sqrt(nn)[:, None]
        if not ok.any():
            return None
        centers0 = pu + to_center
        h = np.sqrt(np.clip(rho * rho - radius2, 0.0, None))

        # winding constraint: the new face's normal follows vertex normals
        side = self.normals[u] + self.normals[v] + self.normals[cand]
        tri_n = np.cross(pu - pts[cand], pv - pts[cand])
        ok &= (tri_n * side).sum(axis=1) > 0

        idx = np.flatnonzero(ok)
        if idx.shape[0] == 0:
            return None
        both = np.stack([centers0[idx] + h[idx, None] * n_hat[idx],
                         centers0[idx] - h[idx, None] * n_hat[idx]], axis=1)
        ec = both - mid
        ec -= axis[None, None, :] * (ec @ axis)[:, :, None]
        ecn = np.linalg.norm(ec, axis=2)
        safe = ecn > 1e-15
        ec = np.where(safe[:, :, None], ec / np.maximum(ecn, 1e-300)[:, :, None], 0)
        cosv = np.clip(ec @ e_prev, -1.0, 1.0)
        sinv = np.cross(np.broadcast_to(e_prev, ec.shape), ec) @ axis
        theta = np.arctan2(sinv, cosv)
        theta = np.where(theta <= 1e-12, theta + 2 * np.pi, theta)
        theta = np.where(safe, theta, np.pi)

        flat_theta = theta.reshape(-1)
        flat_w = np.repeat(cand[idx], 2)
        flat_centers = both.reshape(-1, 3)
        order = np.lexsort((flat_w, flat_theta))
        theta0 = flat_theta[order[0]]
        for pos in order:
            if flat_theta[pos] > theta0 + 1e-9:
                break
            w = int(flat_w[pos])
            if self._ball_empty(flat_centers[pos], rho, (u, v, w)) and \
                    self._face_ok(u, v, w):
                return w
        # first contact blocked by an existing face: the ball stops here
        return None

    def _face_normal(self, a: int, b: int, c: int) -> np.ndarray:
        return self.normals[a] + self.normals[b] + self.normals[c]

    def _find_seed(self, rho: float) -> Optional[Tuple[int, int, int]]:
        for i in np.flatnonzero(~self.used).tolist():
            nbrs = self.tree.query_ball_point(self.points[i], 2 * rho)
            nbrs = sorted((n for n in nbrs if n != i),
                          key=lambda n: (np.linalg.norm(self.points[n] -
                                                        self.points[i]), n))
            nbrs = nbrs[:14]
            for ai in range(len(nbrs)):
                for bi in range(ai + 1, len(nbrs)):
                    a, b = nbrs[ai], nbrs[bi]
                    tri_n = np.cross(self.points[a] - self.points[i],
                                     self.points[b] - self.points[i])
                    if float(tri_n @ self._face_normal(i, a, b)) < 0:
                        a, b = b, a
                    if not self._face_ok(i, a, b):
                        continue
                    center = self._ball_center(i, a, b, rho,
                                               self._face_normal(i, a, b))
                    if center is None:
                        continue
                    if self._ball_empty(center, rho, (i, a, b)):
                        return i, a, b
        return None

    def run(self, radii: Sequence[float]) -> np.ndarray:
        for rho in radii:
            front = deque(sorted(self.avail.items()))
            while True:
                while front:
                    (u, v), opp = front.popleft()
                    if (u, v) not in self.avail:
                        continue
                    w = self._pivot(u, v, opp, rho)
                    if w is None:
                        continue
                    self._add_face(u, v, w)
                    for edge in ((w, v), (u, w)):
                        if edge in self.avail:
                            front.append((edge, self.avail[edge]))
                seed = self._find_seed(rho)
                if seed is None:
                    break
                self._add_face(*seed)
                front.extend(sorted(
                    (e, o) for e, o in self.avail.items()
                    if frozenset(e) <= frozenset(seed)))
        return np.asarray(self.faces, dtype=np.int64)


def boundary_loops(faces: np.ndarray) -> List[List[int]]:
    """Closed vertex loops of boundary edges, oriented like the free side."""
    consumed = set()
    for a, b, c in faces:
        consumed.update([(a, b), (b, c), (c, a)])
    free = {}
    for u, v in list(consumed):
        if (v, u) not in consumed:
            free.setdefault(v, []).append(u)   # reverse edge is走 free
    for k in free:
        free[k].sort()
    loops = []
    visited = set()
    for start in sorted(free):
        for nxt in free[start]:
            if (start, nxt) in visited:
                continue
            loop = [start]
            cur, prev = nxt, start
            visited.add((start, nxt))
            while cur != start:
                loop.append(cur)
                options = [x for x in free.get(cur, []) if (cur, x) not in visited]
                if not options:
                    break
                nxt2 = options[0]
                visited.add((cur, nxt2))
                prev, cur = cur, nxt2
            if cur == start and len(loop) >= 3:
                loops.append(loop)
    return loops


def fill_holes(vertices: np.ndarray, faces: np.ndarray,
               edge_limit: int = HOLE_EDGE_LIMIT
               ) -> Tuple[np.ndarray, np.ndarray]:
    """Centroid-fan every boundary loop up to edge_limit edges.

    The longest loop (the outer leaf boundary) always stays open.
    """
    loops = boundary_loops(faces)
    if len(loops) <= 1:
        return vertices, faces
    loops.sort(key=len)
    outer = loops[-1]
    new_vertices = [vertices]
    new_faces = [faces]
    next_index = vertices.shape[0]
    for loop in loops[:-1]:
        if len(loop) > edge_limit:
            continue
        centroid = vertices[loop].mean(axis=0)
        new_vertices.append(centroid[None, :])
        fan = []
        for i in range(len(loop)):
            a, b = loop[i], loop[(i + 1) % len(loop)]
            fan.append((a, b, next_index))
        new_faces.append(np.asarray(fan, dtype=np.int64))
        next_index += 1
    return np.vstack(new_vertices), np.vstack(new_faces)


def face_components(faces: np.ndarray) -> List[np.ndarray]:
    """Connected components of faces via shared edges."""
    edge_to_faces = defaultdict(list)
    for fi, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            edge_to_faces[frozenset((u, v))].append(fi)
    seen = np.zeros(faces.shape[0], dtype=bool)
    comps = []
    for start in range(faces.shape[0]):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            fi = stack.pop()
            comp.append(fi)
            a, b, c = faces[fi]
            for u, v in ((a, b), (b, c), (c, a)):
                for other in edge_to_faces[frozenset((u, v))]:
                    if not seen[other]:
                        seen[other] = True
                        stack.append(other)
        comps.append(np.asarray(sorted(comp)))
    comps.sort(key=len, reverse=True)
    return comps


def reconstruct_template(points: np.ndarray,
                         vertex_budget: int = 2048) -> TemplateMesh:
    """Single-sided template mesh from a denoised, PCA-aligned leaf."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 4:
        raise DegenerateInputError("need at least 4 points to mesh")
    if vertex_budget > points.shape[0]:
        warnings.warn(
            f"vertex budget {vertex_budget} exceeds point count "
            f"{points.shape[0]}; clamping")
        vertex_budget = points.shape[0]
    sel = farthest_point_sampling(points, vertex_budget)
    verts = points[np.sort(sel.indices)]

    spacing = mean_spacing(verts)
    normals = estimate_normals(verts)
    pivot = _BallPivot(verts, normals)
    faces = pivot.run([r * spacing for r in BPA_RADII])
    if faces.shape[0] == 0:
        raise ReconstructionError("ball pivoting produced no faces")

    comps = face_components(faces)
    sizes = [len(c) for c in comps]
    large = [c for c in comps if len(c) > max(5, 0.02 * faces.shape[0])]
    if len(large) > 1:
        raise ReconstructionError(
            f"reconstruction split into {len(large)} large components "
            f"(face counts {sizes})")
    faces = faces[comps[0]]

    verts, faces = fill_holes(verts, faces)
    # drop any vertices never referenced (islands outside the main component)
    used = np.zeros(verts.shape[0], dtype=bool)
    used[faces.ravel()] = True
    remap = -np.ones(verts.shape[0], dtype=np.int64)
    remap[used] = np.arange(int(used.sum()))
    verts = verts[used]
    faces = remap[faces]

    planar = PlanarMap.fit(verts)
    normals = estimate_normals(verts)
    return TemplateMesh(vertices=verts, faces=faces, normals=normals,
                        uvs=_front_uvs(planar, verts), planar=planar,
                        base_vertex_count=int(min(vertex_budget, used.sum())))


def _front_uvs(planar: PlanarMap, verts: np.ndarray) -> np.ndarray:
    base = planar.uv(verts)
    return np.column_stack([base[:, 0] * 0.5, base[:, 1]])


def make_two_sided(mesh: TemplateMesh) -> TemplateMesh:
    """Duplicate into front/back pairs with flipped winding and split UVs."""
    if mesh.two_sided:
        raise ParameterError("mesh is already two-sided")
    n = mesh.vertex_count
    verts = np.vstack([mesh.vertices, mesh.vertices])
    normals = np.vstack([mesh.normals, -mesh.normals])
    base = mesh.planar.uv(mesh.vertices)
    front_uv = np.column_stack([base[:, 0] * 0.5, base[:, 1]])
    back_uv = np.column_stack([0.5 + base[:, 0] * 0.5, base[:, 1]])
    uvs = np.vstack([front_uv, back_uv])
    back_faces = mesh.faces[:, ::-1] + n
    faces = np.vstack([mesh.faces, back_faces])
    side = np.concatenate([np.zeros(mesh.face_count, dtype=np.int8),
                           np.ones(mesh.face_count, dtype=np.int8)])
    return TemplateMesh(vertices=verts, faces=faces, normals=normals,
                        uvs=uvs, planar=mesh.planar, two_sided=True,
                        face_side=side,
                        base_vertex_count=mesh.base_vertex_count)


def render_color(points: np.ndarray, colors: np.ndarray, opacities: np.ndarray,
                 planar: PlanarMap, resolution: int, side: int = +1,
                 footprint: Optional[float] = None
                 ) -> Tuple[np.ndarray, np.ndarray]:
    """Orthographic soft-splatted color render from +z (side=+1) or -z.

    Returns (rgb float image, weight image).  The -z view mirrors u, exactly
    as a camera looking from behind would.
    """
    points = np.asarray(points, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    opac = np.asarray(opacities, dtype=np.float64)
    res = resolution
    ps = 2 * planar.half_extent / res
    x = points[:, 0] * (1 if side > 0 else -1)
    cx = planar.center_x * (1 if side > 0 else -1)
    px = (x - (cx - planar.half_extent)) / ps - 0.5
    py = (points[:, 1] - (planar.center_y - planar.half_extent)) / ps - 0.5

    if footprint is None:
        spacing_px = mean_spacing(points) / ps
        footprint = max(1.5, 0.75 * spacing_px)
    radius = int(np.ceil(4.0 * footprint))
    offs = np.arange(-radius, radius + 1)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    ox, oy = ox.ravel(), oy.ravel()

    bx = np.floor(px).astype(np.int64)[:, None] + ox[None, :]
    by = np.floor(py).astype(np.int64)[:, None] + oy[None, :]
    inside = (bx >= 0) & (bx < res) & (by >= 0) & (by < res)
    dx = bx - px[:, None]
    dy = by - py[:, None]
    r2 = dx * dx + dy * dy
    w = opac[:, None] * np.exp(-r2 / (2 * footprint ** 2))
    # taper to exactly zero at the window edge; renders stay independent of
    # the integer window placement (front/back views mirror exactly)
    r_out = 4.0 * footprint
    r_in = 2.5 * footprint
    t = np.clip((r_out - np.sqrt(r2)) / (r_out - r_in), 0.0, 1.0)
    w *= t * t * (3.0 - 2.0 * t)
    w = np.where(inside, w, 0.0)

    flat = (np.clip(by, 0, res - 1) * res + np.clip(bx, 0, res - 1)).ravel()
    wsum = np.zeros(res * res)
    np.add.at(wsum, flat, w.ravel())
    rgb = np.zeros((res * res, 3))
    for ch in range(3):
        np.add.at(rgb[:, ch], flat, (w * colors[:, ch:ch + 1]).ravel())
    rgb = rgb / np.maximum(wsum, 1e-12)[:, None]
    return rgb.reshape(res, res, 3), wsum.reshape(res, res)


def _dilate_colors(rgb: np.ndarray, mask: np.ndarray, px: int) -> np.ndarray:
    """Fill empty texels with their nearest covered color, up to px away."""
    dist, (iy, ix) = ndimage.distance_transform_edt(~mask, return_indices=True)
    filled = rgb.copy()
    reach = dist <= px
    filled[reach & ~mask] = rgb[iy[reach & ~mask], ix[reach & ~mask]]
    return filled


def bake_texture(points: np.ndarray, colors: np.ndarray, opacities: np.ndarray,
                 mesh: TemplateMesh, atlas_width: int = 1024,
                 atlas_height: int = 512, dilation_px: int = 4) -> TextureImage:
    """Bake a two-half RGBA atlas from front and back orthographic renders.

    Both halves share the mesh's planar parameterization; the back render's
    mirrored u axis is unmirrored when written, so uv lookups on either side
    sample the texel covering the same surface location.
    """
    if points.shape[0] == 0:
        raise ParameterError("cannot bake from an empty leaf")
    res = atlas_height
    if atlas_width != 2 * res:
        raise ParameterError("atlas must be two square halves")
    atlas = np.zeros((res, 2 * res, 4), dtype=np.uint8)
    for side, offset in ((+1, 0), (-1, res)):
        rgb, wsum = render_color(points, colors, opacities, mesh.planar, res,
                                 side=side)
        if side < 0:
            rgb = rgb[:, ::-1]
            wsum = wsum[:, ::-1]
        mask = wsum >= 1e-6
        rgb = _dilate_colors(rgb, mask, dilation_px)
        alpha = ndimage.binary_dilation(mask, iterations=dilation_px)
        half = np.zeros((res, res, 4))
        half[..., :3] = np.clip(rgb, 0, 1)
        half[..., 3] = mask.astype(float)
        atlas[:, offset:offset + res, :3] = (half[..., :3] * 255).astype(np.uint8)
        atlas[:, offset:offset + res, 3] = (mask * 255).astype(np.uint8)
    return TextureImage(pixels=atlas)


def write_obj(path, mesh: TemplateMesh, texture_name: Optional[str] = None,
              object_name: str = "leaf") -> None:
    """OBJ with vt/vn; optionally references a texture through a sidecar MTL."""
    from pathlib import Path
    path = Path(path)
    lines = []
    if texture_name:
        mtl_name = path.with_suffix(".mtl").name
        lines.append(f"mtllib {mtl_name}")
        mtl = ("newmtl leaf_material\nKd 1.0 1.0 1.0\n"
               f"map_Kd {texture_name}\n")
        path.with_suffix(".mtl").write_text(mtl)
    lines.append(f"o {object_name}")
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for t in mesh.uvs:
        lines.append(f"vt {t[0]:.9g} {t[1]:.9g}")
    for n in mesh.normals:
        lines.append(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
    if texture_name:
        lines.append("usemtl leaf_material")
    for f in mesh.faces:
        a, b, c = (int(x) + 1 for x in f)
        lines.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
    path.write_text("\n".join(lines) + "\n")


def read_obj(path) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Read back vertices, uvs, normals, faces from our OBJ layout."""
    verts, uvs, normals, faces = [], [], [], []
    for line in open(path):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "vn":
            normals.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return (np.asarray(verts), np.asarray(uvs), np.asarray(normals),
            np.asarray(faces, dtype=np.int64))
