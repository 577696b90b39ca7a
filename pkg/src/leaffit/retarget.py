"""Cross-species leaf geometry retargeting.

Source and target leaves are rendered orthographically; their silhouettes
become 2D cages split at the apex and petiole base and resampled to matched
vertex counts.  Interior samples move by mean value coordinates from the
source cage to the target cage, both sides are lifted with their own depth
maps, and the resulting 3D pairs parameterize a moving-least-squares warp.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from matplotlib.path import Path as MplPath
from scipy import ndimage
from skimage import measure

from .errors import ParameterError
from .geodesics import farthest_point_sampling
from .registration import (ControlSet, DepthImage, MLSField, OrthoCamera,
                           render_depth)


@dataclass
class Cage2D:
    """Closed counterclockwise silhouette polygon in pixel coordinates."""

    vertices: np.ndarray     # (2 * samples_per_side, 2)
    apex_index: int
    base_index: int

    def __post_init__(self):
        area = _signed_area(self.vertices)
        if area <= 0:
            raise ParameterError("cage must be counterclockwise")

    @property
    def count(self) -> int:
        return self.vertices.shape[0]


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _resample_arc(points: np.ndarray, n: int,
                  include_end: bool = False) -> np.ndarray:
    """Arc-length-uniform resampling of an open polyline to n points."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    if total <= 0:
        return np.tile(points[0], (n, 1))
    targets = np.linspace(0.0, total, n, endpoint=include_end)
    out = np.empty((n, 2))
    for k, t in enumerate(targets):
        i = int(np.clip(np.searchsorted(arc, t) - 1, 0, len(seg) - 1))
        frac = (t - arc[i]) / max(seg[i], 1e-300)
        out[k] = points[i] + frac * (points[i + 1] - points[i])
    return out


def trace_cage(mask: np.ndarray, apex_pixel: np.ndarray,
               base_pixel: np.ndarray, samples_per_side: int = 16) -> Cage2D:
    """Silhouette cage from a binary mask, split at apex and base.

    Marching squares extracts the sub-pixel boundary; the two arcs between
    the (snapped) apex and base are resampled uniformly by arc length into
    ``samples_per_side`` vertices each.
    """
    labels, n_comp = ndimage.label(mask)
    if n_comp != 1:
        raise ParameterError(
            f"silhouette must be a single region (found {n_comp})")
    contours = measure.find_contours(mask.astype(float), 0.5)
    contour = max(contours, key=lambda c: c.shape[0])
    # find_contours yields (row, col); swap to (x, y) pixel coordinates
    poly = contour[:, ::-1]
    if np.allclose(poly[0], poly[-1]):
        poly = poly[:-1]

    def snap(pixel, name):
        pixel = np.asarray(pixel, dtype=np.float64)
        idx = int(np.argmin(((poly - pixel) ** 2).sum(axis=1)))
        if np.linalg.norm(poly[idx] - pixel) > 2.0:
            warnings.warn(f"{name} pixel not on the boundary; snapped to the "
                          f"nearest contour point")
        return idx

    ai = snap(apex_pixel, "apex")
    bi = snap(base_pixel, "base")
    if ai == bi:
        raise ParameterError("apex and base snapped to the same boundary point")

    rolled = np.roll(poly, -ai, axis=0)
    bi = (bi - ai) % poly.shape[0]
    side_a = rolled[:bi + 1]                      # apex .. base
    side_b = np.vstack([rolled[bi:], rolled[:1]])  # base .. apex (wraps)

    a_pts = _resample_arc(side_a, samples_per_side, include_end=False)
    b_pts = _resample_arc(side_b, samples_per_side, include_end=False)
    cage = np.vstack([a_pts, b_pts])
    if _signed_area(cage) < 0:
        # reverse orientation keeping the apex first; the base lands at the
        # mirrored slot, which is again samples_per_side
        cage = np.vstack([cage[:1], cage[1:][::-1]])
    return Cage2D(vertices=cage, apex_index=0, base_index=samples_per_side)


def point_in_cage(x: np.ndarray, cage: Cage2D) -> bool:
    return bool(MplPath(cage.vertices).contains_point(np.asarray(x, dtype=float)))


def mvc_weights(x: np.ndarray, cage: Cage2D) -> np.ndarray:
    """Mean value coordinates of an interior point, normalized to sum 1.

    Points on an edge fall back to the exact two-endpoint barycentric limit;
    points outside the cage are rejected.
    """
    x = np.asarray(x, dtype=np.float64)
    verts = cage.vertices
    n = verts.shape[0]
    s = verts - x
    r = np.linalg.norm(s, axis=1)

    near = np.flatnonzero(r < 1e-12)
    if near.size:
        w = np.zeros(n)
        w[near[0]] = 1.0
        return w

    s_next = np.roll(s, -1, axis=0)
    r_next = np.roll(r, -1)
    cross = s[:, 0] * s_next[:, 1] - s[:, 1] * s_next[:, 0]
    dot = (s * s_next).sum(axis=1)

    on_edge = np.flatnonzero((np.abs(cross) <= 1e-12 * r * r_next) & (dot < 0))
    if on_edge.size:
        i = int(on_edge[0])
        w = np.zeros(n)
        total = r[i] + r_next[i]
        w[i] = r_next[i] / total
        w[(i + 1) % n] = r[i] / total
        return w

    if not point_in_cage(x, cage):
        raise ParameterError("point lies outside the cage")

    tan_half = (r * r_next - dot) / cross
    w = (np.roll(tan_half, 1) + tan_half) / r
    return w / w.sum()


def transfer_points(samples: np.ndarray, cage_src: Cage2D,
                    cage_tar: Cage2D) -> np.ndarray:
    """Map interior samples through the cage correspondence."""
    if cage_src.count != cage_tar.count:
        raise ParameterError("cages must share the vertex count")
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    out = np.empty_like(samples)
    for i, x in enumerate(samples):
        w = mvc_weights(x, cage_src)
        out[i] = w @ cage_tar.vertices
    return out


@dataclass
class RetargetResult:
    field: MLSField
    cage_src: Cage2D
    cage_tar: Cage2D
    pairs_src: np.ndarray
    pairs_tar: np.ndarray
    clamped: int


def _bilinear_depth(image: DepthImage, px: np.ndarray) -> float:
    """Bilinear depth sample; NaN when any participating texel is background."""
    x, y = float(px[0]), float(px[1])
    res = image.depth.shape[0]
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    if not (0 <= x0 < res - 1 and 0 <= y0 < res - 1):
        return float("nan")
    fx, fy = x - x0, y - y0
    patch = image.depth[y0:y0 + 2, x0:x0 + 2]
    if np.isnan(patch).any():
        return float("nan")
    top = patch[0, 0] * (1 - fx) + patch[0, 1] * fx
    bot = patch[1, 0] * (1 - fx) + patch[1, 1] * fx
    return float(top * (1 - fy) + bot * fy)


def _lift(camera: OrthoCamera, px: np.ndarray, depth: float) -> np.ndarray:
    xy = camera.from_pixels(px[0], px[1])
    return np.array([xy[0], xy[1], camera.z_top - depth])


def build_retarget_field(source_points: np.ndarray, target_points: np.ndarray,
                         source_weights: Optional[np.ndarray] = None,
                         target_weights: Optional[np.ndarray] = None,
                         samples: int = 64, samples_per_side: int = 16,
                         resolution: int = 256, sigma: float = 0.1,
                         source_apex: Optional[np.ndarray] = None,
                         source_base: Optional[np.ndarray] = None,
                         target_apex: Optional[np.ndarray] = None,
                         target_base: Optional[np.ndarray] = None,
                         footprint: float = 3.0) -> RetargetResult:
    """Fit an MLS warp from dense silhouette-transferred 3D pairs.

    Both leaves must be PCA-aligned.  Apex/base default to the +x / -x
    extremes of each point set (the aligned tip convention).
    """
    source_points = np.asarray(source_points, dtype=np.float64)
    target_points = np.asarray(target_points, dtype=np.float64)

    def bundle(points, weights, apex, base):
        w = np.ones(points.shape[0]) if weights is None else weights
        camera = OrthoCamera.fit(points, resolution)
        image = render_depth(points, w, camera, footprint=footprint)
        apex = points[int(np.argmax(points[:, 0]))] if apex is None else apex
        base = points[int(np.argmin(points[:, 0]))] if base is None else base
        cage = trace_cage(image.mask, camera.to_pixels(np.asarray(apex)),
                          camera.to_pixels(np.asarray(base)),
                          samples_per_side)
        return camera, image, cage

    cam_s, img_s, cage_s = bundle(source_points, source_weights,
                                  source_apex, source_base)
    cam_t, img_t, cage_t = bundle(target_points, target_weights,
                                  target_apex, target_base)

    # interior source samples: foreground pixels inside the cage, thinned
    ys, xs = np.nonzero(img_s.mask)
    pix = np.column_stack([xs, ys]).astype(np.float64)
    inside = MplPath(cage_s.vertices).contains_points(pix)
    pix = pix[inside]
    if pix.shape[0] < samples:
        raise ParameterError("not enough interior pixels in the source cage")
    sel = farthest_point_sampling(np.column_stack([pix, np.zeros(len(pix))]),
                                  samples)
    src_px = pix[sel.indices]

    tar_px = transfer_points(src_px, cage_s, cage_t)
    tar_path = MplPath(cage_t.vertices)
    clamped = 0
    fg = np.column_stack(np.nonzero(img_t.mask)[::-1]).astype(np.float64)
    for i in range(tar_px.shape[0]):
        if not tar_path.contains_point(tar_px[i]):
            nearest = fg[int(np.argmin(((fg - tar_px[i]) ** 2).sum(axis=1)))]
            tar_px[i] = nearest
            clamped += 1
    if clamped:
        warnings.warn(f"{clamped} transferred samples fell outside the target "
                      f"cage and were clamped to the silhouette")

    src3d, tar3d = [], []
    for sp, tp in zip(src_px, tar_px):
        ds = _bilinear_depth(img_s, sp)
        dt = _bilinear_depth(img_t, tp)
        if np.isnan(ds) or np.isnan(dt):
            continue
        src3d.append(_lift(cam_s, sp, ds))
        tar3d.append(_lift(cam_t, tp, dt))
    if len(src3d) < 4:
        raise ParameterError(
            f"only {len(src3d)} correspondence pairs survived the depth lift")

    pairs_src = np.asarray(src3d)
    pairs_tar = np.asarray(tar3d)
    field = MLSField(ControlSet(pairs_src), ControlSet(pairs_tar), sigma)
    return RetargetResult(field=field, cage_src=cage_s, cage_tar=cage_t,
                          pairs_src=pairs_src, pairs_tar=pairs_tar,
                          clamped=clamped)
