import itertools

import numpy as np
import pytest
import torch

from leaffit.config import RegistrationConfig
from leaffit.errors import DegenerateInputError, ParameterError
from leaffit.geodesics import farthest_point_sampling
from leaffit.registration import (ControlSet, MLSField, OrthoCamera,
                                  composite_objective, denoise_mls,
                                  evaluate_mls, initial_correspondence,
                                  loss_chamfer, loss_depth, mls_deform,
                                  mls_deform_torch, optimize_controls,
                                  pca_align, render_depth, render_depth_torch,
                                  sample_controls, _as_tensor)
from leaffit.synthetic import generate_leaf_pair


def grid_plane(n=12, spacing=0.01, z=0.0):
    xs, ys = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.column_stack([xs.ravel() * spacing, ys.ravel() * spacing,
                            np.full(n * n, z)])


class TestDenoise:
    def test_planar_points_untouched(self):
        pts = grid_plane()
        out = denoise_mls(pts, sigma=0.05)
        assert out.shape == pts.shape
        assert np.allclose(out, pts, atol=1e-12)

    def test_far_outlier_removed(self):
        pts = grid_plane()
        sigma = 0.02
        pts = np.vstack([pts, [[0.05, 0.05, 10 * sigma]]])
        out = denoise_mls(pts, sigma=sigma)
        assert out.shape[0] == pts.shape[0] - 1
        assert out[:, 2].max() < sigma
        # the surviving plane is reproduced, not shifted
        assert np.allclose(out[:, 2], 0.0, atol=1e-9)

    def test_too_few_points(self):
        with pytest.raises(DegenerateInputError):
            denoise_mls(np.zeros((5, 3)), sigma=0.1)


class TestPcaAlign:
    def leaf(self, seed=0):
        rng = np.random.default_rng(seed)
        tmpl, _, _ = generate_leaf_pair(seed, "bend", n=400)
        return tmpl

    def test_axis_aligned_input_is_fixed_point(self):
        pts = self.leaf()
        aligned, frame = pca_align(pts)
        aligned2, frame2 = pca_align(aligned)
        assert np.allclose(aligned2, aligned, atol=1e-9)
        assert np.allclose(frame2.rotation, np.eye(3), atol=1e-7)

    def test_known_rotation_recovered(self):
        pts = self.leaf(3)
        aligned, frame = pca_align(pts)
        angle = 0.7
        rot = np.array([
            [np.cos(angle), -np.sin(angle), 0],
            [np.sin(angle), np.cos(angle), 0],
            [0, 0, 1.0]]) @ np.array([
                [1, 0, 0],
                [0, np.cos(0.3), -np.sin(0.3)],
                [0, np.sin(0.3), np.cos(0.3)]])
        moved = pts @ rot.T + [0.3, -0.1, 0.2]
        aligned_m, frame_m = pca_align(moved)
        # the recovered frame undoes the applied rotation
        assert np.allclose(frame_m.rotation @ rot, frame.rotation, atol=1e-6)
        assert np.allclose(aligned_m, aligned, atol=1e-8)

    def test_frame_properties(self):
        pts = self.leaf(1)
        aligned, frame = pca_align(pts)
        r = frame.rotation
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
        # principal plane in xy: z variance is the smallest
        var = aligned.var(axis=0)
        assert var[2] == min(var)
        assert np.allclose(frame.to_plant(aligned), pts, atol=1e-12)

    def test_degenerate_line_rejected(self):
        line = np.column_stack([np.linspace(0, 1, 30), np.zeros(30), np.zeros(30)])
        with pytest.raises(DegenerateInputError):
            pca_align(line)


class TestSampleControls:
    def test_all_points_when_k_equals_count(self):
        pts = grid_plane(4)
        ctl = sample_controls(pts, 16)
        assert sorted(map(tuple, ctl.positions.tolist())) == \
            sorted(map(tuple, pts.tolist()))

    def test_line_endpoints_first(self):
        # FPS picks the line ends before interior points
        pts = np.column_stack([np.arange(8) * 1.0, np.zeros(8), np.zeros(8)])
        ctl = sample_controls(pts, 4)
        xs = ctl.positions[:, 0].tolist()
        assert sorted(xs[:2]) == [0.0, 7.0]
        sel = farthest_point_sampling(pts, 2, seed_index=0)
        assert sorted(pts[sel.indices][:, 0].tolist()) == [0.0, 7.0]

    def test_covering_radius_within_factor_two(self):
        tmpl, _, _ = generate_leaf_pair(5, "bend", n=600)
        k = 32
        ctl = sample_controls(tmpl, k)
        d = np.sqrt(((tmpl[:, None] - ctl.positions[None]) ** 2).sum(-1))
        cover = d.min(axis=1).max()
        # pigeonhole oracle: k+1 points pairwise separated by s force any
        # k-center covering radius to be at least s/2
        sel = farthest_point_sampling(tmpl, k + 1)
        pick = tmpl[sel.indices]
        pd = np.sqrt(((pick[:, None] - pick[None]) ** 2).sum(-1))
        np.fill_diagonal(pd, np.inf)
        lower_bound = pd.min() / 2
        assert cover <= 2 * lower_bound + 1e-12

    def test_k_too_large(self):
        with pytest.raises(ParameterError):
            sample_controls(grid_plane(3), 10)


class TestCorrespondence:
    def test_identity(self):
        rng = np.random.default_rng(0)
        ct = ControlSet(rng.uniform(0, 1, (8, 3)))
        perm = initial_correspondence(ct, ControlSet(ct.positions.copy()))
        assert perm.tolist() == list(range(8))

    def test_diagonal_optimal(self):
        # cost [[1,2],[2,1]]: sqrt distances arranged to produce that matrix
        ct = ControlSet(np.array([[0, 0, 0], [2, 0, 0], [4, 0, 0], [6, 0, 0.0]]))
        cj = ControlSet(np.array([[1, 0, 0], [3, 0, 0], [4.5, 0, 0], [6.5, 0, 0.0]]))
        perm = initial_correspondence(ct, cj)
        cost = ((ct.positions[:, None] - cj.positions[None]) ** 2).sum(-1)
        assert cost[np.arange(4), perm].sum() == pytest.approx(
            min(cost[np.arange(4), list(p)].sum()
                for p in itertools.permutations(range(4))))

    def test_matches_brute_force_6x6(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            ct = ControlSet(rng.uniform(0, 1, (6, 3)))
            cj = ControlSet(rng.uniform(0, 1, (6, 3)))
            perm = initial_correspondence(ct, cj)
            cost = ((ct.positions[:, None] - cj.positions[None]) ** 2).sum(-1)
            total = cost[np.arange(6), perm].sum()
            best = min(cost[np.arange(6), list(p)].sum()
                       for p in itertools.permutations(range(6)))
            assert total == pytest.approx(best, abs=1e-12)

    def test_size_mismatch(self):
        a = ControlSet(np.zeros((4, 3)) + np.arange(4)[:, None])
        b = ControlSet(np.zeros((5, 3)) + np.arange(5)[:, None])
        with pytest.raises(ParameterError):
            initial_correspondence(a, b)


class TestMlsDeform:
    def setup_method(self):
        rng = np.random.default_rng(2)
        self.ct = rng.uniform(0, 0.3, (32, 3))
        self.x = rng.uniform(0, 0.3, (64, 3))

    def test_identity(self):
        field = MLSField(ControlSet(self.ct), ControlSet(self.ct.copy()), 0.1)
        assert np.abs(mls_deform(field, self.x) - self.x).max() < 1e-14

    def test_identity_coplanar_controls(self):
        flat = self.ct.copy()
        flat[:, 2] = 0.123
        field = MLSField(ControlSet(flat), ControlSet(flat.copy()), 0.1)
        assert np.abs(mls_deform(field, self.x) - self.x).max() < 1e-14

    def test_translation_exact(self):
        v = np.array([0.04, -0.03, 0.02])
        field = MLSField(ControlSet(self.ct), ControlSet(self.ct + v), 0.1)
        assert np.abs(mls_deform(field, self.x) - (self.x + v)).max() < 1e-12

    def test_affine_reproduction(self):
        rng = np.random.default_rng(3)
        A = np.eye(3) + rng.uniform(-0.2, 0.2, (3, 3))
        b = rng.uniform(-0.05, 0.05, 3)
        field = MLSField(ControlSet(self.ct), ControlSet(self.ct @ A.T + b), 0.1)
        out = mls_deform(field, self.x)
        assert np.abs(out - (self.x @ A.T + b)).max() <= 1e-6

    def test_single_point_input(self):
        field = MLSField(ControlSet(self.ct), ControlSet(self.ct.copy()), 0.1)
        out = mls_deform(field, self.x[0])
        assert out.shape == (3,)

    def test_torch_numpy_agree(self):
        rng = np.random.default_rng(4)
        cj = self.ct + rng.normal(0, 0.02, self.ct.shape)
        a = evaluate_mls(self.ct, cj, self.x, 0.1)
        b = mls_deform_torch(_as_tensor(self.ct), _as_tensor(cj),
                             _as_tensor(self.x), 0.1).numpy()
        assert np.abs(a - b).max() < 1e-12


def small_camera(res=65):
    return OrthoCamera(center_x=0.0, center_y=0.0, half_extent=0.05,
                       z_top=0.1, far_depth=0.25, resolution=res)


class TestRenderDepth:
    def test_single_point_center_pixel(self):
        cam = small_camera()
        img = render_depth(np.array([[0.0, 0.0, 0.02]]), np.array([0.9]), cam)
        assert img.mask[32, 32]
        assert img.depth[32, 32] == pytest.approx(0.1 - 0.02, abs=1e-9)

    def test_coincident_points_mean_depth(self):
        cam = small_camera()
        pts = np.array([[0.0, 0.0, 0.02], [0.0, 0.0, 0.04]])
        img = render_depth(pts, np.array([0.5, 0.5]), cam)
        assert img.depth[32, 32] == pytest.approx(0.1 - 0.03, abs=1e-9)

    def test_depth_shifts_with_translation(self):
        cam = small_camera()
        rng = np.random.default_rng(5)
        pts = rng.uniform(-0.03, 0.03, (40, 3)) * [1, 1, 0.3]
        a = render_depth(pts, np.ones(40), cam)
        dz = 0.015
        b = render_depth(pts + [0, 0, dz], np.ones(40), cam)
        mask = a.mask & b.mask
        assert mask.any()
        assert np.allclose(b.depth[mask], a.depth[mask] - dz, atol=1e-9)

    def test_empty_input(self):
        cam = small_camera()
        img = render_depth(np.zeros((0, 3)), np.zeros(0), cam)
        assert not img.mask.any()
        assert np.isnan(img.depth).all()

    def test_background_below_threshold(self):
        cam = small_camera()
        img = render_depth(np.array([[0.0, 0.0, 0.0]]), np.array([1.0]), cam)
        assert not img.mask[0, 0]  # corner is far outside the footprint
        assert np.isnan(img.depth[0, 0])


class TestLossDepth:
    def render_pair(self):
        cam = small_camera()
        rng = np.random.default_rng(6)
        pts = rng.uniform(-0.03, 0.03, (60, 3)) * [1, 1, 0.2]
        img1 = render_depth(pts, np.ones(60), cam)
        img2 = render_depth(pts + rng.normal(0, 0.004, pts.shape),
                            np.ones(60), cam)
        return img1, img2

    def test_identical_images_zero(self):
        img1, _ = self.render_pair()
        assert loss_depth(img1, img1) == 0.0

    def test_constant_offset_squared(self):
        img1, _ = self.render_pair()
        import copy
        img2 = copy.deepcopy(img1)
        c = 0.01
        img2.blend = img1.blend + c
        assert loss_depth(img1, img2) == pytest.approx(c * c, rel=1e-12)

    def test_matches_direct_summation(self):
        img1, img2 = self.render_pair()
        # independent re-implementation of the weighted mean
        t = 1e-6
        occ1 = img1.weight_sum / (img1.weight_sum + t)
        occ2 = img2.weight_sum / (img2.weight_sum + t)
        union = 1 - (1 - occ1) * (1 - occ2)
        expected = 0.0
        for r in range(img1.depth.shape[0]):
            for cix in range(img1.depth.shape[1]):
                expected += union[r, cix] * (img1.blend[r, cix] -
                                             img2.blend[r, cix]) ** 2
        expected /= union.sum()
        assert loss_depth(img1, img2) == pytest.approx(expected, rel=1e-12)

    def test_resolution_mismatch_rejected(self):
        img1, _ = self.render_pair()
        other = render_depth(np.zeros((1, 3)), np.ones(1), small_camera(33))
        with pytest.raises(ParameterError):
            loss_depth(img1, other)


class TestLossChamfer:
    def test_identical_sets_zero(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(0, 1, (30, 3))
        assert loss_chamfer(a, a.copy()) == 0.0

    def test_unit_points(self):
        a = np.array([[0.0, 0.0, 0.0]])
        b = np.array([[1.0, 0.0, 0.0]])
        assert loss_chamfer(a, b) == pytest.approx(2.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(8)
        a = rng.uniform(0, 1, (50, 3))
        b = rng.uniform(0, 1, (50, 3))
        d2 = ((a[:, None] - b[None]) ** 2).sum(-1)
        expected = d2.min(axis=1).mean() + d2.min(axis=0).mean()
        assert loss_chamfer(a, b) == pytest.approx(expected, abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            loss_chamfer(np.zeros((0, 3)), np.ones((3, 3)))


def fd_gradient_config(seed, n=200, k=16, res=64):
    """Well-sampled leaf, controls on it, small smooth perturbation."""
    rng = np.random.default_rng(seed)
    cfg = RegistrationConfig(depth_resolution=res, control_count=k)
    raw, _, _ = generate_leaf_pair(seed, "bend", n=4 * n)
    sel = farthest_point_sampling(raw, n)
    tmpl = raw[sel.indices]
    d2 = ((tmpl[:, None] - tmpl[None]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    amp = 0.2 * np.median(np.sqrt(d2.min(1)))
    ct = sample_controls(tmpl, k)
    cj0 = ct.positions + rng.normal(0, amp, ct.positions.shape)
    camera = OrthoCamera.fit(tmpl, res)
    t_t = _as_tensor(tmpl)
    alph = torch.ones(n, dtype=torch.float64)
    tb, tw = render_depth_torch(t_t, alph, camera, cfg.footprint_px)
    return cfg, t_t, _as_tensor(ct.positions), cj0, camera, tb, tw, alph


def fd_gradient_error(seed, h=1e-4):
    cfg, t_t, ctt, cj0, camera, tb, tw, alph = fd_gradient_config(seed)

    def objective(cj_np):
        return composite_objective(ctt, _as_tensor(cj_np), t_t, tb, tw, t_t,
                                   alph, camera, cfg)

    cj = torch.tensor(cj0, requires_grad=True, dtype=torch.float64)
    loss = composite_objective(ctt, cj, t_t, tb, tw, t_t, alph, camera, cfg)
    loss.backward()
    auto = cj.grad.numpy().copy()
    fd = np.zeros_like(cj0)
    for i in range(cj0.shape[0]):
        for d in range(3):
            plus = cj0.copy()
            plus[i, d] += h
            minus = cj0.copy()
            minus[i, d] -= h
            fd[i, d] = (float(objective(plus)) - float(objective(minus))) / (2 * h)
    return np.linalg.norm(auto - fd) / np.linalg.norm(fd)


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_autograd_matches_central_differences(self, seed):
        assert fd_gradient_error(seed) <= 1e-4


class TestOptimizeControls:
    def test_self_fit_stays_at_identity(self):
        tmpl, _, _ = generate_leaf_pair(0, "bend", n=220)
        ct = sample_controls(tmpl, 16)
        cfg = RegistrationConfig(depth_resolution=96, steps=40,
                                 control_count=16)
        res = optimize_controls(tmpl, tmpl, ct,
                                ControlSet(ct.positions.copy()), cfg)
        assert res.objective <= 1e-8
        assert np.abs(res.controls.positions - ct.positions).max() <= 1e-3

    def test_translation_recovered(self):
        tmpl, _, _ = generate_leaf_pair(1, "bend", n=220)
        v = np.array([0.03, -0.02, 0.015])
        target = tmpl + v
        ct = sample_controls(tmpl, 16)
        raw = sample_controls(target, 16)
        perm = initial_correspondence(ct, raw)
        init = ControlSet(raw.positions[perm])
        cfg = RegistrationConfig(depth_resolution=96, control_count=16)
        res = optimize_controls(tmpl, target, ct, init, cfg)
        assert res.chamfer <= 1e-4
        assert np.abs(res.controls.positions - (ct.positions + v)).max() <= 5e-3

    def test_best_iterate_never_worse_than_init(self):
        tmpl, target, _ = generate_leaf_pair(2, "bend", n=200)
        ct = sample_controls(tmpl, 16)
        raw = sample_controls(target, 16)
        init = ControlSet(raw.positions[initial_correspondence(ct, raw)])
        cfg = RegistrationConfig(depth_resolution=64, steps=30,
                                 control_count=16)
        res = optimize_controls(tmpl, target, ct, init, cfg)
        assert res.objective <= res.initial_objective
        assert res.objective_history[0] == pytest.approx(res.initial_objective)
