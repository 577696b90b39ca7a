"""Non-rigid leaf registration.

A template leaf is fitted to each target leaf by moving a sparse set of
control points that parameterize an affine moving-least-squares warp.  The
objective combines an orthographic soft-splatted depth comparison with a
bidirectional Chamfer term, minimized with Adam; gradients flow through the
warp, the rasterizer, and both losses (everything is evaluated in float64
torch, so autograd matches central finite differences tightly).

Rendering keeps the whole image smooth in the point positions: per-pixel
depth blends toward the far plane as coverage vanishes, and the depth loss
weighs pixels by a soft union of both foreground occupancies instead of a
hard mask.  Hard masks are still exposed on DepthImage for display and
silhouette extraction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .config import RegistrationConfig
from .errors import DegenerateInputError, NumericsError, ParameterError
from .geodesics import farthest_point_sampling

# moment-matrix regularization; added to both factors so the identity map is
# reproduced exactly even for coplanar control sets
MLS_EPS = 1e-9

# soft-rendering constants: background threshold for the hard mask, a much
# smaller blend prior pulling empty pixels to the far plane, and the window
# cut-off in footprint units
BACKGROUND_THRESHOLD = 1e-6
BLEND_PRIOR = 1e-7
WINDOW_SIGMAS = 6.0

_DT = torch.float64


@dataclass(frozen=True)
class ControlSet:
    """Control point positions; row i corresponds to template row i."""

    positions: np.ndarray  # (K, 3)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 4:
            raise ParameterError("control set must be (K>=4, 3)")
        if not np.isfinite(pos).all():
            raise ParameterError("control positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class MLSField:
    """Affine MLS warp parameterized by source and target control handles."""

    source: ControlSet
    target: ControlSet
    sigma: float

    def __post_init__(self):
        if self.source.count != self.target.count:
            raise ParameterError("source/target control counts differ")
        if self.sigma <= 0:
            raise ParameterError("sigma must be positive")


@dataclass(frozen=True)
class LeafFrame:
    """Rigid frame aligning a leaf: rows of rotation are the PCA axes."""

    rotation: np.ndarray      # (3, 3), right-handed, det +1
    translation: np.ndarray   # (3,) centroid in plant space

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation.T

    def to_plant(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation + self.translation


@dataclass(frozen=True)
class OrthoCamera:
    """Square orthographic camera looking down -z in the aligned frame."""

    center_x: float
    center_y: float
    half_extent: float
    z_top: float
    far_depth: float
    resolution: int

    @classmethod
    def fit(cls, points: np.ndarray, resolution: int,
            margin: float = 0.05) -> "OrthoCamera":
        points = np.asarray(points, dtype=np.float64)
        lo, hi = points.min(axis=0), points.max(axis=0)
        half = 0.5 * max(hi[0] - lo[0], hi[1] - lo[1]) * (1.0 + 2 * margin)
        half = max(half, 1e-6)
        z_margin = margin * 2 * half
        z_top = hi[2] + z_margin
        far = (z_top - lo[2]) + z_margin
        return cls(center_x=float((lo[0] + hi[0]) / 2),
                   center_y=float((lo[1] + hi[1]) / 2),
                   half_extent=float(half), z_top=float(z_top),
                   far_depth=float(far), resolution=int(resolution))

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.half_extent / self.resolution

    def to_pixels(self, xy: np.ndarray) -> np.ndarray:
        """World xy -> continuous pixel coordinates (pixel i samples at i)."""
        px = (xy[..., 0] - (self.center_x - self.half_extent)) / self.pixel_size - 0.5
        py = (xy[..., 1] - (self.center_y - self.half_extent)) / self.pixel_size - 0.5
        return np.stack([px, py], axis=-1)

    def from_pixels(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        x = (np.asarray(px) + 0.5) * self.pixel_size + self.center_x - self.half_extent
        y = (np.asarray(py) + 0.5) * self.pixel_size + self.center_y - self.half_extent
        return np.stack([x, y], axis=-1)


@dataclass
class DepthImage:
    """Soft-splatted orthographic depth render."""

    camera: OrthoCamera
    depth: np.ndarray       # (res, res), NaN where background
    mask: np.ndarray        # (res, res) bool, total weight >= threshold
    blend: np.ndarray       # (res, res), smooth depth, far plane off-leaf
    occupancy: np.ndarray   # (res, res) in [0, 1)
    weight_sum: np.ndarray  # (res, res) raw splat weight totals

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


def denoise_mls(points: np.ndarray, sigma: float = 0.1) -> np.ndarray:
    """Remove outliers against local weighted plane fits, then project.

    Residuals beyond twice the robust scale (MAD * 1.4826) of all plane
    residuals are dropped; surviving points are projected onto their local
    planes.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 10:
        raise DegenerateInputError("need at least 10 points to denoise")

    tree = cKDTree(points)
    pairs = tree.query_ball_tree(tree, r=3.0 * sigma)
    centroids = np.empty_like(points)
    normals = np.empty_like(points)
    isolated = np.zeros(n, dtype=bool)
    for i, nbrs in enumerate(pairs):
        if len(nbrs) < 4:
            # a point alone in its own ball has nothing to fit; treat as an
            # outlier rather than letting it validate itself
            isolated[i] = True
            centroids[i] = points[i]
            normals[i] = (0.0, 0.0, 1.0)
            continue
        nb = points[nbrs]
        w = np.exp(-((nb - points[i]) ** 2).sum(axis=1) / (2 * sigma ** 2))
        wsum = w.sum()
        c = (w[:, None] * nb).sum(axis=0) / wsum
        diff = nb - c
        cov = (w[:, None, None] * diff[:, :, None] * diff[:, None, :]).sum(axis=0)
        evals, evecs = np.linalg.eigh(cov)
        centroids[i] = c
        normals[i] = evecs[:, 0]

    residuals = np.abs(((points - centroids) * normals).sum(axis=1))
    residuals[isolated] = np.inf
    scale = max(1.4826 * float(np.median(np.abs(residuals - np.median(residuals)))),
                1e-12)
    keep = residuals <= 2.0 * scale
    if not keep.any():
        raise DegenerateInputError("denoising removed every point")
    kept = points[keep]
    offsets = ((kept - centroids[keep]) * normals[keep]).sum(axis=1)
    return kept - offsets[:, None] * normals[keep]


def pca_align(points: np.ndarray,
              tip: Optional[np.ndarray] = None) -> Tuple[np.ndarray, LeafFrame]:
    """Align a leaf so its principal plane is xy and its normal is +z.

    The first axis points toward ``tip`` (default: the point farthest from
    the centroid); the out-of-plane sign follows the skew of the normal
    coordinate so the frame is covariant under rigid motions.
    """
    points = np.asarray(points, dtype=np.float64)
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / max(points.shape[0], 1)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 1e-12 * max(evals[2], 1e-30):
        raise DegenerateInputError("points are rank-deficient (a line or point)")

    e1, e3 = evecs[:, 2], evecs[:, 0]
    if tip is None:
        tip = points[int(np.argmax(np.linalg.norm(centered, axis=1)))]
    tip_dir = np.asarray(tip, dtype=np.float64) - centroid
    if float(e1 @ tip_dir) < 0:
        e1 = -e1
    skew = float(np.mean((centered @ e3) ** 3))
    if abs(skew) > 1e-12 and skew < 0:
        e3 = -e3
    e2 = np.cross(e3, e1)
    rotation = np.vstack([e1, e2, e3])
    frame = LeafFrame(rotation=rotation, translation=centroid)
    return frame.to_local(points), frame


def sample_controls(points: np.ndarray, k: int = 32) -> ControlSet:
    """Farthest point sampling of control handles (deterministic)."""
    points = np.asarray(points, dtype=np.float64)
    if k > points.shape[0]:
        raise ParameterError(
            f"cannot sample {k} controls from {points.shape[0]} points")
    sel = farthest_point_sampling(points, k)
    return ControlSet(positions=points[sel.indices])


def initial_correspondence(c_t: ControlSet, c_j: ControlSet) -> np.ndarray:
    """Minimum-cost bijection between control rows (squared distances).

    Returns ``perm`` such that ``c_j.positions[perm]`` row-aligns with the
    template.  Among equal-cost optima the lexicographically smallest
    assignment is returned.
    """
    if c_t.count != c_j.count:
        raise ParameterError("control sets must have equal size")
    cost = ((c_t.positions[:, None, :] - c_j.positions[None, :, :]) ** 2).sum(-1)
    k = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    tol = 1e-9 * (1.0 + abs(best))

    perm = np.full(k, -1, dtype=np.int64)
    free_cols = list(range(k))
    remaining = best
    for i in range(k):
        chosen = None
        for j in free_cols:
            rest_rows = np.arange(i + 1, k)
            rest_cols = [c for c in free_cols if c != j]
            if rest_rows.shape[0] == 0:
                sub_total = 0.0
            else:
                sub = cost[np.ix_(rest_rows, rest_cols)]
                rr, cc = linear_sum_assignment(sub)
                sub_total = float(sub[rr, cc].sum())
            if cost[i, j] + sub_total <= remaining + tol:
                chosen = j
                remaining = remaining - float(cost[i, j])
                break
        if chosen is None:  # numerically impossible, but stay safe
            chosen = free_cols[0]
            remaining -= float(cost[i, chosen])
        perm[i] = chosen
        free_cols.remove(chosen)
    return perm


def _as_tensor(arr) -> torch.Tensor:
    if isinstance(arr, torch.Tensor):
        return arr.to(_DT)
    return torch.as_tensor(np.asarray(arr, dtype=np.float64), dtype=_DT)


def mls_deform_torch(ct: torch.Tensor, cj: torch.Tensor, x: torch.Tensor,
                     sigma: float) -> torch.Tensor:
    """Affine MLS warp of query points x; differentiable in all inputs.

    Both moment factors carry the +eps*I regularizer, so c_j == c_t yields
    the exact identity map even for degenerate (coplanar) control sets.
    """
    d2 = torch.cdist(x, ct) ** 2                      # (N, K)
    w = torch.exp(-d2 / (2.0 * sigma ** 2))
    wsum = w.sum(dim=1, keepdim=True).clamp_min(1e-300)
    pstar = (w @ ct) / wsum                           # (N, 3)
    qstar = (w @ cj) / wsum
    dt = ct.unsqueeze(0) - pstar.unsqueeze(1)         # (N, K, 3)
    dj = cj.unsqueeze(0) - qstar.unsqueeze(1)
    eye = torch.eye(3, dtype=ct.dtype, device=ct.device) * MLS_EPS
    S = torch.einsum("nk,nki,nkj->nij", w, dt, dt) + eye
    B = torch.einsum("nk,nki,nkj->nij", w, dt, dj) + eye
    M = torch.linalg.solve(S, B)                      # S @ M = B
    return qstar + torch.einsum("ni,nij->nj", x - pstar, M)


def mls_deform(field: MLSField, x: np.ndarray) -> np.ndarray:
    """Numpy front end of the warp; also used by the runtime evaluator."""
    single = np.asarray(x).ndim == 1
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = evaluate_mls(field.source.positions, field.target.positions, pts,
                       field.sigma)
    return out[0] if single else out


def evaluate_mls(ct: np.ndarray, cj: np.ndarray, x: np.ndarray,
                 sigma: float) -> np.ndarray:
    """Pure-numpy affine MLS evaluation (the reference CPU path).

    Matches mls_deform_torch to float precision but factors the weighted
    moment sums into plain matrix products and solves the per-point 3x3
    systems in closed form, so a 2048-vertex template evaluates in about a
    millisecond on one core.
    """
    ct = np.asarray(ct, dtype=np.float64)
    cj = np.asarray(cj, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)

    d2 = (x * x).sum(1)[:, None] + (ct * ct).sum(1)[None, :] - 2.0 * (x @ ct.T)
    w = np.exp(-np.maximum(d2, 0.0) / (2.0 * sigma ** 2))
    wsum = np.maximum(w.sum(axis=1), 1e-300)

    s_t = w @ ct                               # (N, 3) weighted sums
    s_j = w @ cj
    # second moments: sum_k w_nk * outer(ct_k, {ct_k, cj_k}); centering by
    # the weighted means reduces to subtracting outer(s, s)/wsum
    tt = w @ (ct[:, :, None] * ct[:, None, :]).reshape(-1, 9)
    tj = w @ (ct[:, :, None] * cj[:, None, :]).reshape(-1, 9)
    S = tt.reshape(-1, 3, 3) - (s_t[:, :, None] * s_t[:, None, :]) / wsum[:, None, None]
    B = tj.reshape(-1, 3, 3) - (s_t[:, :, None] * s_j[:, None, :]) / wsum[:, None, None]
    S[:, 0, 0] += MLS_EPS
    S[:, 1, 1] += MLS_EPS
    S[:, 2, 2] += MLS_EPS
    B[:, 0, 0] += MLS_EPS
    B[:, 1, 1] += MLS_EPS
    B[:, 2, 2] += MLS_EPS

    # closed-form 3x3 solve via the adjugate
    a, b_, c = S[:, 0, 0], S[:, 0, 1], S[:, 0, 2]
    d, e, f = S[:, 1, 0], S[:, 1, 1], S[:, 1, 2]
    g, h, i = S[:, 2, 0], S[:, 2, 1], S[:, 2, 2]
    adj = np.empty_like(S)
    adj[:, 0, 0] = e * i - f * h
    adj[:, 0, 1] = c * h - b_ * i
    adj[:, 0, 2] = b_ * f - c * e
    adj[:, 1, 0] = f * g - d * i
    adj[:, 1, 1] = a * i - c * g
    adj[:, 1, 2] = c * d - a * f
    adj[:, 2, 0] = d * h - e * g
    adj[:, 2, 1] = b_ * g - a * h
    adj[:, 2, 2] = a * e - b_ * d
    det = a * adj[:, 0, 0] + b_ * adj[:, 1, 0] + c * adj[:, 2, 0]
    bad = np.abs(det) < 1e-300
    if bad.any():
        warnings.warn("singular MLS moment matrix; regularized solution used")
        det = np.where(bad, 1.0, det)
    M = np.einsum("nij,njk->nik", adj, B) / det[:, None, None]

    pstar = s_t / wsum[:, None]
    qstar = s_j / wsum[:, None]
    return qstar + np.einsum("ni,nij->nj", x - pstar, M)


def render_depth_torch(points: torch.Tensor, alphas: torch.Tensor,
                       camera: OrthoCamera, footprint: float
                       ) -> Tuple[torch.Tensor, torch.Tensor]:
    """Soft-splat points into (blend_depth, total_weight) images.

    Each point contributes a screen-space Gaussian of the given pixel
    footprint, truncated at WINDOW_SIGMAS so the cut-off weight sits far
    below the background threshold; the blended depth eases into the far
    plane as coverage vanishes, keeping the image smooth everywhere.
    """
    res = camera.resolution
    if points.shape[0] == 0:
        far = torch.full((res, res), camera.far_depth, dtype=_DT)
        return far, torch.zeros((res, res), dtype=_DT)
    ps = camera.pixel_size
    px = (points[:, 0] - (camera.center_x - camera.half_extent)) / ps - 0.5
    py = (points[:, 1] - (camera.center_y - camera.half_extent)) / ps - 0.5
    depth = camera.z_top - points[:, 2]

    radius = int(np.ceil(WINDOW_SIGMAS * footprint))
    offs = torch.arange(-radius, radius + 1, dtype=torch.int64)
    oy, ox = torch.meshgrid(offs, offs, indexing="ij")
    ox = ox.reshape(-1)
    oy = oy.reshape(-1)

    base_x = torch.floor(px.detach()).to(torch.int64)
    base_y = torch.floor(py.detach()).to(torch.int64)
    ix = base_x.unsqueeze(1) + ox.unsqueeze(0)        # (N, W)
    iy = base_y.unsqueeze(1) + oy.unsqueeze(0)
    inside = (ix >= 0) & (ix < res) & (iy >= 0) & (iy < res)

    dx = ix.to(_DT) - px.unsqueeze(1)
    dy = iy.to(_DT) - py.unsqueeze(1)
    r2 = dx * dx + dy * dy
    wpix = alphas.unsqueeze(1) * torch.exp(-r2 / (2.0 * footprint ** 2))
    # smoothstep the tail to exactly zero at the window edge, so shifting
    # integer windows never creates a jump anywhere in the image
    r_out = WINDOW_SIGMAS * footprint
    r_in = (WINDOW_SIGMAS - 1.5) * footprint
    t = ((r_out - torch.sqrt(r2 + 1e-30)) / (r_out - r_in)).clamp(0.0, 1.0)
    wpix = wpix * t * t * (3.0 - 2.0 * t)
    wpix = torch.where(inside, wpix, torch.zeros((), dtype=_DT))
    contrib_z = wpix * depth.unsqueeze(1)

    flat = (iy.clamp(0, res - 1) * res + ix.clamp(0, res - 1)).reshape(-1)
    wsum = torch.zeros(res * res, dtype=_DT)
    wz = torch.zeros(res * res, dtype=_DT)
    wsum.scatter_add_(0, flat, wpix.reshape(-1))
    wz.scatter_add_(0, flat, contrib_z.reshape(-1))

    blend = (wz + BLEND_PRIOR * camera.far_depth) / (wsum + BLEND_PRIOR)
    return blend.reshape(res, res), wsum.reshape(res, res)


def render_depth(points: np.ndarray, weights: np.ndarray, camera: OrthoCamera,
                 footprint: float = 1.5) -> DepthImage:
    """Public depth render; weights are per-point opacities."""
    pts = _as_tensor(points)
    alphas = _as_tensor(weights)
    with torch.no_grad():
        blend, wsum = render_depth_torch(pts, alphas, camera, footprint)
    blend_np = blend.numpy()
    wsum_np = wsum.numpy()
    mask = wsum_np >= BACKGROUND_THRESHOLD
    # exact weighted-mean depth on the mask; the blend (which eases into the
    # far plane off-leaf) is kept separately for the differentiable loss
    wz = blend_np * (wsum_np + BLEND_PRIOR) - BLEND_PRIOR * camera.far_depth
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(mask, wz / np.maximum(wsum_np, 1e-300), np.nan)
    occupancy = wsum_np / (wsum_np + BACKGROUND_THRESHOLD)
    return DepthImage(camera=camera, depth=depth, mask=mask, blend=blend_np,
                      occupancy=occupancy, weight_sum=wsum_np)


def loss_depth_torch(blend1: torch.Tensor, wsum1: torch.Tensor,
                     blend2: torch.Tensor, wsum2: torch.Tensor) -> torch.Tensor:
    """Soft-union mean of squared blended-depth differences.

    In the hard-mask limit this is the classic foreground-union loss with
    background pixels replaced by the far plane; the soft occupancy keeps it
    differentiable through silhouette changes.
    """
    occ1 = wsum1 / (wsum1 + BACKGROUND_THRESHOLD)
    occ2 = wsum2 / (wsum2 + BACKGROUND_THRESHOLD)
    union = 1.0 - (1.0 - occ1) * (1.0 - occ2)
    total = union.sum()
    if float(total.detach()) < 1e-12:
        warnings.warn("empty foreground union; depth loss defined as 0")
        return torch.zeros((), dtype=_DT)
    return (union * (blend1 - blend2) ** 2).sum() / total


def loss_depth(d1: DepthImage, d2: DepthImage) -> float:
    """Depth loss between two renders of the same camera."""
    if d1.depth.shape != d2.depth.shape:
        raise ParameterError("depth images must share resolution")
    if d1.camera != d2.camera:
        raise ParameterError("depth images must share the camera")
    return float(loss_depth_torch(torch.from_numpy(d1.blend),
                                  torch.from_numpy(d1.weight_sum),
                                  torch.from_numpy(d2.blend),
                                  torch.from_numpy(d2.weight_sum)))


def loss_chamfer_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Bidirectional Chamfer: sum of both mean squared nearest distances."""
    d = torch.cdist(a, b, compute_mode="donot_use_mm_for_euclid_dist") ** 2
    return d.min(dim=1).values.mean() + d.min(dim=0).values.mean()


def loss_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ParameterError("chamfer distance needs two non-empty sets")
    return float(loss_chamfer_torch(_as_tensor(a), _as_tensor(b)))


def composite_objective(ct: torch.Tensor, cj: torch.Tensor,
                        template: torch.Tensor, target_blend: torch.Tensor,
                        target_wsum: torch.Tensor, target_points: torch.Tensor,
                        template_alphas: torch.Tensor, camera: OrthoCamera,
                        cfg: RegistrationConfig) -> torch.Tensor:
    """Depth + lambda * Chamfer at the given target controls."""
    deformed = mls_deform_torch(ct, cj, template, cfg.sigma)
    blend, wsum = render_depth_torch(deformed, template_alphas, camera,
                                     cfg.footprint_px)
    depth_term = loss_depth_torch(blend, wsum, target_blend, target_wsum)
    chamfer_term = loss_chamfer_torch(deformed, target_points)
    return depth_term + cfg.chamfer_weight * chamfer_term


@dataclass
class RegistrationResult:
    controls: ControlSet            # best target controls seen
    objective: float                # objective at the best iterate
    initial_objective: float
    chamfer: float                  # final Chamfer(deformed template, target)
    initial_chamfer: float
    objective_history: List[float] = field(default_factory=list)


def optimize_controls(template_points: np.ndarray, target_points: np.ndarray,
                      c_t: ControlSet, init: ControlSet,
                      cfg: Optional[RegistrationConfig] = None,
                      template_weights: Optional[np.ndarray] = None,
                      target_weights: Optional[np.ndarray] = None
                      ) -> RegistrationResult:
    """Fit the template to the target by optimizing the target controls.

    Both leaves are expected denoised and PCA-aligned.  Returns the iterate
    with the lowest objective seen (never worse than the initialization).
    """
    cfg = cfg or RegistrationConfig()
    template = _as_tensor(template_points)
    target = _as_tensor(target_points)
    ct = _as_tensor(c_t.positions)
    cj = _as_tensor(init.positions).clone().requires_grad_(True)

    t_alphas = (_as_tensor(template_weights) if template_weights is not None
                else torch.ones(template.shape[0], dtype=_DT))
    g_alphas = (_as_tensor(target_weights) if target_weights is not None
                else torch.ones(target.shape[0], dtype=_DT))

    stacked = np.vstack([np.asarray(template_points), np.asarray(target_points)])
    camera = OrthoCamera.fit(stacked, cfg.depth_resolution)
    with torch.no_grad():
        target_blend, target_wsum = render_depth_torch(
            target, g_alphas, camera, cfg.footprint_px)

    optimizer = torch.optim.Adam([cj], lr=cfg.learning_rate,
                                 betas=(0.9, 0.999), eps=1e-8)
    best_obj = np.inf
    best_cj = init.positions.copy()
    history: List[float] = []
    initial_chamfer = float(loss_chamfer_torch(
        mls_deform_torch(ct, _as_tensor(init.positions), template, cfg.sigma),
        target))

    for step in range(cfg.steps + 1):
        optimizer.zero_grad(set_to_none=True)
        objective = composite_objective(ct, cj, template, target_blend,
                                        target_wsum, target, t_alphas, camera,
                                        cfg)
        value = float(objective.detach())
        if not np.isfinite(value):
            raise NumericsError(f"non-finite objective at step {step}")
        history.append(value)
        if value < best_obj:
            best_obj = value
            best_cj = cj.detach().numpy().copy()
        if step == cfg.steps:
            break
        objective.backward()
        optimizer.step()

    best = ControlSet(positions=best_cj)
    final_chamfer = float(loss_chamfer_torch(
        mls_deform_torch(ct, _as_tensor(best_cj), template, cfg.sigma),
        target))
    return RegistrationResult(controls=best, objective=best_obj,
                              initial_objective=history[0],
                              chamfer=final_chamfer,
                              initial_chamfer=initial_chamfer,
                              objective_history=history)
