import numpy as np
import pytest

from leaffit.config import SegmentationConfig
from leaffit.errors import DegenerateInputError, ParameterError
from leaffit.geodesics import (NeighborGraph, SampleSet, build_knn_graph,
                               farthest_point_sampling, geodesic_distances)
from leaffit.segmentation import (STEM, Segmentation, detect_apexes,
                                  group_apexes, locate_petiole, segment_leaves,
                                  trace_tree)
from leaffit.synthetic import STEM_LABEL, PlantSpec, generate


def full_sample(n):
    return SampleSet(indices=np.arange(n))


def straight_shoot(n=60, spacing=0.01):
    pts = np.zeros((n, 3))
    pts[:, 2] = np.arange(n) * spacing
    return pts


class TestDetectApexes:
    def test_single_shoot_one_apex(self):
        pts = straight_shoot()
        graph = build_knn_graph(pts, 4)
        field = geodesic_distances(graph, 0, "dijkstra")
        apexes = detect_apexes(field, full_sample(len(pts)), graph)
        assert apexes == [len(pts) - 1]

    def test_y_shape_two_apexes(self):
        # stem up to z=0.3, then two diverging branches
        stem = straight_shoot(30)
        t = np.linspace(0.012, 0.25, 25)[:, None]
        left = np.column_stack([-t[:, 0] * 0.7, np.zeros(25), 0.29 + t[:, 0] * 0.7])
        right = np.column_stack([t[:, 0] * 0.7, np.zeros(25), 0.29 + t[:, 0] * 0.7])
        pts = np.vstack([stem, left, right])
        graph = build_knn_graph(pts, 4)
        field = geodesic_distances(graph, 0, "dijkstra")
        apexes = detect_apexes(field, full_sample(len(pts)), graph)
        # brute-force oracle: strict local maxima over the same neighborhoods
        expected = []
        d = field.distances
        for i in range(len(pts)):
            nbrs, _ = graph.neighbors(i)
            if np.all(d[nbrs] < d[i]):
                expected.append(i)
        assert sorted(apexes) == sorted(expected)
        assert len(apexes) == 2
        assert set(apexes) == {29 + 25, 29 + 50}  # the two branch tips

    def test_disc_apexes_on_rim(self):
        rng = np.random.default_rng(0)
        pts = []
        while len(pts) < 400:
            xy = rng.uniform(-1, 1, (1000, 2))
            pts.extend(xy[(xy ** 2).sum(1) <= 1].tolist())
        pts = np.asarray(pts[:400])
        cloud = np.column_stack([pts * 0.2, np.zeros(400)])
        center = int(np.argmin(np.linalg.norm(cloud, axis=1)))
        graph = build_knn_graph(cloud, 8)
        field = geodesic_distances(graph, center, "dijkstra")
        apexes = detect_apexes(field, full_sample(400), graph)
        radii = np.linalg.norm(cloud[apexes][:, :2], axis=1)
        assert (radii > 0.15).all()  # interior points always have a farther neighbor

    def test_degenerate_no_apex(self):
        pts = straight_shoot(10)
        graph = build_knn_graph(pts, 3)
        field = geodesic_distances(graph, 0, "dijkstra")
        # a constant field has no strict maxima
        flat = type(field)(source=0, distances=np.zeros(len(pts)),
                           backend="dijkstra")
        with pytest.raises(DegenerateInputError):
            detect_apexes(flat, full_sample(len(pts)), graph)


def deferred_merge_fixture():
    """Two rootward chains bridged once by a stray noise point.

    Chain A descends from a0; chain B descends from b0.  A single pendant
    point (index 18) hangs between b3 and a4, so B brushes A's neighborhood
    at exactly one node before both chains reach the root independently.
    """
    a = [(0.0, 0.0, 1.0 - 0.1 * i) for i in range(10)]      # a0..a9
    b = [(1.0, 0.0, 0.93 - 0.11 * j) for j in range(8)]     # b0..b7
    noise = (0.5, 0.0, 0.6)
    root = (0.5, 0.0, -0.35)
    pts = np.asarray(a + b + [noise, root])
    p, r = len(pts) - 2, len(pts) - 1
    edges = [(i, i + 1) for i in range(9)]                  # chain A
    edges += [(10 + j, 11 + j) for j in range(7)]           # chain B
    edges += [(9, r), (17, r)]                              # both reach root
    edges += [(13, p), (p, 4)]                              # one noisy bridge
    graph = NeighborGraph.from_edges(pts, edges)
    field = geodesic_distances(graph, r, "dijkstra")
    # fixture sanity: descent from b3 must continue along B, not uphill to p
    assert field.distances[14] < field.distances[p]
    return graph, field, pts, r


class TestTraceTree:
    def test_single_apex_no_junction(self):
        pts = straight_shoot(40)
        graph = build_knn_graph(pts, 3)
        field = geodesic_distances(graph, 0, "dijkstra")
        sample = full_sample(len(pts))
        tree = trace_tree([39], field, sample, graph)
        assert tree.junctions == set()
        path = tree.paths[39]
        assert path[0] == 39 and path[-1] == 0
        d = field.distances[path]
        assert (np.diff(d) < 0).all()  # strictly decreasing toward the root

    def test_deferred_merge_skips_single_contact(self):
        graph, field, pts, r = deferred_merge_fixture()
        sample = full_sample(len(pts))
        tree = trace_tree([0, 10], field, sample, graph, deferred_merge=True)
        assert tree.junctions == set()          # single touch is ignored
        assert tree.paths[10][-1] == r

    def test_naive_merge_joins_at_contact(self):
        graph, field, pts, r = deferred_merge_fixture()
        sample = full_sample(len(pts))
        tree = trace_tree([0, 10], field, sample, graph, deferred_merge=False)
        assert 4 in tree.junctions              # joined at the noisy touch
        assert tree.paths[10][-1] == r

    def test_y_shape_junction_near_branch_point(self):
        stem = straight_shoot(30)
        t = np.linspace(0.012, 0.25, 25)
        left = np.column_stack([-t * 0.7, np.zeros(25), 0.29 + t * 0.7])
        right = np.column_stack([t * 0.7, np.zeros(25), 0.29 + t * 0.7])
        pts = np.vstack([stem, left, right])
        graph = build_knn_graph(pts, 4)
        field = geodesic_distances(graph, 0, "dijkstra")
        sample = full_sample(len(pts))
        tree = trace_tree([54, 79], field, sample, graph)
        assert len(tree.junctions) == 1
        junction = next(iter(tree.junctions))
        branch_point = stem[29]
        spacing = 0.01
        assert np.linalg.norm(pts[junction] - branch_point) <= 2 * spacing + 1e-9

    def test_lca_is_tree_node(self):
        graph, field, pts, r = deferred_merge_fixture()
        tree = trace_tree([0, 10], field, full_sample(len(pts)), graph)
        lca = tree.lca(0, 10)
        assert lca == r or lca in tree.parent


class TestGroupApexes:
    def test_single_apex_singleton(self):
        pts = straight_shoot(40)
        graph = build_knn_graph(pts, 3)
        field = geodesic_distances(graph, 0, "dijkstra")
        sample = full_sample(len(pts))
        tree = trace_tree([39], field, sample, graph)
        fields = {39: geodesic_distances(graph, 39, "dijkstra")}
        assert group_apexes(tree, fields, tau=0.05) == [[39]]

    def test_missing_field_rejected(self):
        pts = straight_shoot(40)
        graph = build_knn_graph(pts, 3)
        field = geodesic_distances(graph, 0, "dijkstra")
        tree = trace_tree([39], field, full_sample(len(pts)), graph)
        with pytest.raises(ParameterError):
            group_apexes(tree, {}, tau=0.05)

    @staticmethod
    def two_lobe_blade():
        """One blade with two distinct lobes, on a petiole above a stem."""
        rng = np.random.default_rng(5)
        stem = straight_shoot(60, 0.005)
        pet = np.column_stack([np.linspace(0.004, 0.06, 20), np.zeros(20),
                               np.full(20, 0.295)])
        lobes = []
        for sign in (+1.0, -1.0):
            n = 220
            uv = []
            while len(uv) < n:
                cand = rng.uniform(-1, 1, (600, 2))
                uv.extend(cand[(cand ** 2).sum(1) <= 1].tolist())
            uv = np.asarray(uv[:n])
            local = np.column_stack([0.085 * (uv[:, 0] + 1.0),
                                     0.05 * uv[:, 1], np.zeros(n)])
            ang = sign * 0.6
            rot = np.array([[np.cos(ang), -np.sin(ang), 0],
                            [np.sin(ang), np.cos(ang), 0], [0, 0, 1]])
            lobes.append(local @ rot.T + [0.06, 0, 0.295])
        pts = np.vstack([stem, pet] + lobes)
        return pts + rng.normal(0, 0.001, pts.shape)

    def test_lobes_on_one_blade_grouped(self):
        pts = self.two_lobe_blade()
        graph = build_knn_graph(pts, 10)
        field = geodesic_distances(graph, 0, "dijkstra")
        sample = full_sample(len(pts))
        apexes = detect_apexes(field, sample, build_knn_graph(pts, 100))
        assert len(apexes) == 2
        tree = trace_tree(apexes, field, sample, graph)
        fields = {a: geodesic_distances(graph, a, "dijkstra") for a in apexes}
        # oracle: both sides of the grouping inequality via exact distances
        a, b = apexes
        lca = tree.lca(a, b)
        direct = min(fields[a].distances[b], fields[b].distances[a])
        via = fields[a].distances[lca] + fields[b].distances[lca]
        assert direct < via - 0.05    # the blade shortcut beats the tree path
        groups = group_apexes(tree, fields, tau=0.05)
        assert groups == [[min(a, b), max(a, b)]] or groups == [sorted([a, b], key=lambda x: -field.distances[x])]

    def test_two_blades_stay_separate(self):
        plant = generate(PlantSpec(leaf_count=2, seed=11))
        cfg = SegmentationConfig(backend="dijkstra", tau=0.055)
        seg = segment_leaves(plant.cloud, plant.root_index, cfg)
        assert seg.leaf_count() == 2

    def test_grouping_is_order_symmetric(self):
        plant = generate(PlantSpec(leaf_count=3, blade_shape="lobed", seed=4))
        cfg = SegmentationConfig(backend="dijkstra", tau=0.055)
        _, art = segment_leaves(plant.cloud, plant.root_index, cfg,
                                return_artifacts=True)
        groups_fwd = group_apexes(art.tree, art.apex_fields, tau=0.055)
        reversed_tree = art.tree
        reversed_tree.apexes = list(reversed(reversed_tree.apexes))
        groups_rev = group_apexes(reversed_tree, art.apex_fields, tau=0.055)
        fwd = {frozenset(g) for g in groups_fwd}
        rev = {frozenset(g) for g in groups_rev}
        assert fwd == rev


def blade_with_petiole(tip_halfwidth_scale=1.0, petiole_len=0.12,
                       halfwidth=0.08, seed=2, n=1200):
    """Elliptic blade (half-width 0.08) plus a wire petiole.

    The outline is two half-ellipses meeting near the base, so the blade
    reaches full width quickly above the petiole junction.
    """
    rng = np.random.default_rng(seed)
    length = 0.36
    peak = 0.15
    xs = rng.uniform(0.0, 1.0, 6 * n)
    ys = rng.uniform(-1.0, 1.0, 6 * n)
    u = np.where(xs >= peak, (xs - peak) / (1.0 - peak), (peak - xs) / peak)
    w = np.sqrt(np.clip(1.0 - u ** 2, 0.0, None))
    if tip_halfwidth_scale < 1.0:
        # elongated variant: the blade ends in a narrow constant-width tongue
        taper = np.clip(1.0 - (xs - 0.72) / 0.06, 0.0, 1.0)
        w = np.where(xs < 0.72, w,
                     np.maximum(tip_halfwidth_scale, w * taper))
    keep = np.abs(ys) <= w
    xs, ys = xs[keep][:n], ys[keep][:n]
    blade = np.column_stack([xs * length, halfwidth * ys, np.zeros(len(xs))])
    n_pet = 90
    petiole = np.column_stack([np.linspace(-petiole_len, -0.002, n_pet),
                               np.zeros(n_pet), np.zeros(n_pet)])
    pts = np.vstack([petiole, blade])
    pts += rng.normal(0, 0.0012, pts.shape)
    tip_index = int(np.argmax(pts[:, 0]))
    return pts, tip_index, n_pet


class TestLocatePetiole:
    def run(self, pts, tip_index, rho=0.25, epsilon=0.05):
        graph = build_knn_graph(pts, 10)
        root = int(np.argmin(pts[:, 0]))
        field_r = geodesic_distances(graph, root, "dijkstra")
        sample = full_sample(len(pts))
        tree = trace_tree([tip_index], field_r, sample, graph)
        tip_field = geodesic_distances(graph, tip_index, "dijkstra")
        return locate_petiole([tip_index], tip_field, tree.paths[tip_index],
                              pts, tree, delta=0.01, epsilon=epsilon, rho=rho), tip_field

    @staticmethod
    def march_step(tip_field, tree, tip, cut_index):
        """Geodesic spacing of the rootward path around the cut node."""
        path = tree.paths[tip]
        d = tip_field.distances[path]
        pos = int(np.argwhere(path == cut_index)[0][0])
        gaps = np.abs(np.diff(d[max(0, pos - 1):pos + 2]))
        return float(gaps.max()) if gaps.size else 0.0

    def test_cut_lands_at_blade_base(self):
        pts, tip, n_pet = blade_with_petiole()
        result, tip_field = self.run(pts, tip)
        assert not result.flagged
        # ground truth: the blade/petiole junction sits at x ~ 0; the cut can
        # only land on a path node, so allow delta plus one march step
        graph = build_knn_graph(pts, 10)
        root = int(np.argmin(pts[:, 0]))
        tree = trace_tree([tip], geodesic_distances(graph, root, "dijkstra"),
                          full_sample(len(pts)), graph)
        base_index = n_pet + int(np.argmin(pts[n_pet:, 0]))
        true_base = tip_field.distances[base_index]
        step = self.march_step(tip_field, tree, tip, result.cut_index)
        assert abs(result.cut_distance - true_base) <= 0.01 + step

    def test_protection_window_guards_narrow_tip(self):
        # narrow-tip blade: the tip tongue is thinner than epsilon
        pts, tip, n_pet = blade_with_petiole(tip_halfwidth_scale=0.22,
                                             petiole_len=0.2)
        guarded, tip_field = self.run(pts, tip, rho=0.25)
        unguarded, _ = self.run(pts, tip, rho=0.0)
        base_index = n_pet + int(np.argmin(pts[n_pet:, 0]))
        true_base = tip_field.distances[base_index]
        assert abs(guarded.cut_distance - true_base) <= 0.03
        assert unguarded.cut_distance < 0.35 * true_base  # cut at the tip: wrong

    def test_no_petiole_flags_leaf(self):
        # a blade joining a thick rod at full width: the diameter never drops
        rng = np.random.default_rng(3)
        n = 600
        u = rng.uniform(0, 1, 4 * n)
        v = rng.uniform(-1, 1, 4 * n)
        keep = np.abs(v) <= np.sqrt(1 - u ** 2)
        u, v = u[keep][:n], v[keep][:n]
        blade = np.column_stack([0.2 * u, 0.09 * v, np.zeros(n)])
        rod = rng.uniform(-1, 1, (300, 3)) * [0.002, 0.055, 0.055]
        rod[:, 0] = np.linspace(-0.3, -0.002, 300)
        pts = np.vstack([rod, blade]) + rng.normal(0, 0.001, (900, 3))
        tip = int(np.argmax(pts[:, 0]))
        result, _ = self.run(pts, tip)
        assert result.flagged


class TestSegmentLeaves:
    def test_rosette_matches_ground_truth(self):
        plant = generate(PlantSpec(leaf_count=5, seed=1))
        cfg = SegmentationConfig(backend="dijkstra", tau=0.055)
        seg = segment_leaves(plant.cloud, plant.root_index, cfg)
        assert seg.leaf_count() == 5
        # per-leaf IoU against the generator labels
        for leaf in seg.leaves:
            gt_label = np.bincount(
                plant.labels[leaf.member_indices] + 1).argmax() - 1
            assert gt_label >= 0
            gt = set(np.flatnonzero(plant.labels == gt_label).tolist())
            pred = set(leaf.member_indices.tolist())
            assert len(gt & pred) / len(gt | pred) >= 0.9

    def test_single_leaf_plant(self):
        plant = generate(PlantSpec(leaf_count=1, seed=2))
        cfg = SegmentationConfig(backend="dijkstra", tau=0.055)
        seg = segment_leaves(plant.cloud, plant.root_index, cfg)
        assert seg.leaf_count() == 1
        assert (seg.labels == STEM).sum() > 0

    def test_partition_invariant(self):
        plant = generate(PlantSpec(leaf_count=4, seed=7))
        cfg = SegmentationConfig(backend="dijkstra", tau=0.055)
        seg = segment_leaves(plant.cloud, plant.root_index, cfg)
        total = (seg.labels == STEM).sum()
        for leaf in seg.leaves:
            total += leaf.member_indices.shape[0]
        assert total == len(plant.cloud)
        ids = np.unique(seg.labels)
        assert set(ids.tolist()) <= set([STEM] + [l.id for l in seg.leaves])

    def test_monotone_paths(self):
        plant = generate(PlantSpec(leaf_count=3, seed=0))
        cfg = SegmentationConfig(backend="dijkstra", tau=0.055)
        _, art = segment_leaves(plant.cloud, plant.root_index, cfg,
                                return_artifacts=True)
        d = art.root_field.distances
        for apex, path in art.tree.paths.items():
            merged = [i for i, v in enumerate(path)
                      if int(v) in art.tree.junctions]
            upto = merged[0] if merged else len(path) - 1
            seg_d = d[path[:upto + 1]]
            assert (np.diff(seg_d) < 0).all()

    def test_json_round_trip(self):
        plant = generate(PlantSpec(leaf_count=3, seed=0))
        cfg = SegmentationConfig(backend="dijkstra", tau=0.055)
        seg = segment_leaves(plant.cloud, plant.root_index, cfg)
        text = seg.to_json()
        back = Segmentation.from_json(text)
        assert np.array_equal(back.labels, seg.labels)
        assert back.root == seg.root
        assert [l.id for l in back.leaves] == [l.id for l in seg.leaves]
        assert back.to_json() == text

    def test_backend_agreement_single_plant(self):
        plant = generate(PlantSpec(leaf_count=4, seed=3, blade_shape="lobed"))
        segs = {}
        for backend in ("dijkstra", "heat"):
            cfg = SegmentationConfig(backend=backend, tau=0.055)
            segs[backend] = segment_leaves(plant.cloud, plant.root_index, cfg)
        assert segs["heat"].leaf_count() == segs["dijkstra"].leaf_count()
        same = (segs["heat"].labels == segs["dijkstra"].labels).mean()
        assert same >= 0.95

    def test_overlap_fixtures_flagged_not_crashed(self):
        for mode in ("horizontal", "vertical"):
            plant = generate(PlantSpec(leaf_count=4, overlap=mode, seed=8))
            cfg = SegmentationConfig(backend="dijkstra", tau=0.055)
            seg = segment_leaves(plant.cloud, plant.root_index, cfg)
            assert seg.leaf_count() >= 1  # completed without crashing
