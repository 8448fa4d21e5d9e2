import math

import numpy as np
import pytest

from geomatch.dense import dual_softmax, mnn_select, similarity
from geomatch.epipolar import IDENTITY_INTRINSICS, fundamental_from_poses, symmetric_epipolar_errors
from geomatch.synthetic import (
    PairSweepSpec,
    ViewpointParams,
    build_scene,
    camera_center,
    default_intrinsics,
    gt_matches,
    gt_point_matches,
    make_pair_sweep,
    place_camera,
    project_points,
    render_view,
    simulate_anchors,
)

SMALL = dict(image_size=(320, 240), coarse_cell_px=16, fine_cell_px=4)


def scene(amb=0.3, seed=0, **kw):
    return build_scene(200, amb, 32, seed, **kw)


class TestScene:
    def test_unique_without_ambiguity(self):
        s = scene(0.0)
        assert len(np.unique(s.group_ids)) == s.n_points

    def test_shared_count(self):
        s = build_scene(100, 0.5, 16, 3)
        sizes = np.bincount(s.group_ids)
        shared = sizes[s.group_ids] >= 2
        assert shared.sum() >= 50
        assert np.all(sizes[sizes > 1] >= 2)

    def test_deterministic(self):
        a, b = scene(seed=5), scene(seed=5)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.group_ids, b.group_ids)
        assert np.array_equal(a.descriptor_table, b.descriptor_table)
        assert not np.array_equal(a.points, scene(seed=6).points)

    def test_invariants(self):
        s = scene()
        assert np.allclose(np.linalg.norm(s.descriptor_table, axis=1), 1.0, atol=1e-12)
        assert np.all(np.isfinite(s.points))
        assert s.group_ids.min() >= 0 and s.group_ids.max() < len(s.descriptor_table)

    @pytest.mark.parametrize("amb", [-0.1, 1.0, 1.5])
    def test_invalid_fraction(self, amb):
        with pytest.raises(ValueError):
            build_scene(50, amb, 8, 0)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            build_scene(7, 0.0, 8, 0)

    def test_planar(self):
        s = scene(planar=True)
        assert np.all(s.points[:, 2] == -5.0)
        assert s.planar_patch is not None


class TestCamera:
    def test_front_anchor(self):
        p = place_camera(ViewpointParams(10, 0, 0))
        assert np.allclose(p.center, [0, 0, 10], atol=1e-12)
        assert np.allclose(p.rotation[2], [0, 0, -1], atol=1e-12)

    def test_side_anchor(self):
        p = place_camera(ViewpointParams(10, 0, 90))
        assert np.allclose(p.center, [10, 0, 0], atol=1e-12)
        assert np.allclose(p.rotation[2], [-1, 0, 0], atol=1e-12)

    def test_beta_is_axis_angle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            v = ViewpointParams(rng.uniform(1, 50), rng.uniform(-80, 80), rng.uniform(-170, 170))
            axis = place_camera(v).rotation[2]
            # the axis points at the origin, so its xz projection is opposite the centre's
            ang = math.degrees(math.atan2(-axis[0], -axis[2]))
            assert ang == pytest.approx(v.beta, abs=1e-9)
            assert np.allclose(place_camera(v).center, camera_center(v), atol=1e-12)

    def test_axis_hits_origin(self):
        v = ViewpointParams(7.0, 30.0, -45.0)
        p = place_camera(v)
        cam = p.transform(np.zeros((1, 3)))[0]
        assert abs(cam[0]) < 1e-12 and abs(cam[1]) < 1e-12 and cam[2] == pytest.approx(7.0)

    def test_gimbal(self):
        with pytest.raises(ValueError):
            place_camera(ViewpointParams(10, 90, 0))

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            ViewpointParams(0, 0, 0)
        with pytest.raises(ValueError):
            ViewpointParams(10, 95, 0)


class TestRender:
    def test_origin_at_principal_point(self):
        k = default_intrinsics(832, 624)
        proj, depth, vis = project_points(np.zeros((1, 3)), place_camera(ViewpointParams(10, 0, 0)), k, 832, 624)
        assert proj[0].tolist() == [416.0, 312.0]
        assert depth[0] == pytest.approx(10.0, abs=1e-12)
        assert vis[0]
        assert k.fx == k.fy == 0.8 * 832

    def test_visible_points_in_bounds(self):
        s = scene()
        v = render_view(s, ViewpointParams(10, 10, 25), 0.05, 1, **SMALL)
        p = v.projections[v.visible]
        assert np.all(v.depths[v.visible] > 0)
        assert np.all((p[:, 0] >= 0) & (p[:, 0] < 320) & (p[:, 1] >= 0) & (p[:, 1] < 240))

    def test_visibility_monotone_in_image_size(self):
        s = scene()
        pose = place_camera(ViewpointParams(10, 5, 20))
        k = default_intrinsics(320, 240)
        _, _, small = project_points(s.points, pose, k, 320, 240)
        _, _, big = project_points(s.points, pose, k, 640, 480)
        assert np.all(big[small])

    def test_shared_point_cells_identical(self):
        s = scene(0.0)
        a = render_view(s, ViewpointParams(10, 0, 0), 0.0, 1, **SMALL)
        b = render_view(s, ViewpointParams(10, 0, 20), 0.0, 2, **SMALL)
        m = gt_matches(a, b)
        assert len(m) > 20
        sim = similarity(a.coarse, b.coarse)[m.rows, m.cols]
        assert np.allclose(sim, 1.0, atol=1e-6)

    def test_deterministic(self):
        s = scene()
        a = render_view(s, ViewpointParams(10, 0, 15), 0.05, 9, **SMALL)
        b = render_view(s, ViewpointParams(10, 0, 15), 0.05, 9, **SMALL)
        assert a.coarse == b.coarse and a.fine == b.fine
        c = render_view(s, ViewpointParams(10, 0, 15), 0.05, 10, **SMALL)
        assert not a.coarse == c.coarse

    def test_grid_shapes(self):
        v = render_view(scene(), ViewpointParams(10, 0, 0), **SMALL)
        assert (v.coarse.width, v.coarse.height, v.coarse.cell_size_px) == (20, 15, 16)
        assert (v.fine.width, v.fine.height, v.fine.cell_size_px) == (80, 60, 4)
        assert v.coarse.extent_px == v.fine.extent_px

    def test_bad_cell_sizes(self):
        with pytest.raises(ValueError):
            render_view(scene(), ViewpointParams(10, 0, 0), image_size=(100, 80), coarse_cell_px=16)


class TestGroundTruth:
    def test_epipolar_consistency(self):
        s = scene()
        for beta, alpha, dist in ((20, 0, 10), (5, 15, 12), (35, -10, 8)):
            a = render_view(s, ViewpointParams(10, 0, 0), **SMALL)
            b = render_view(s, ViewpointParams(dist, alpha, beta), **SMALL)
            ms = gt_point_matches(a, b)
            assert len(ms) > 20
            pa = np.array([[m.a.x, m.a.y] for m in ms])
            pb = np.array([[m.b.x, m.b.y] for m in ms])
            # normalised image coordinates, identity intrinsics
            na, nb = a.intrinsics.normalize(pa), b.intrinsics.normalize(pb)
            f = fundamental_from_poses(a.pose, b.pose, IDENTITY_INTRINSICS, IDENTITY_INTRINSICS)
            assert np.max(symmetric_epipolar_errors(f, na, nb)) < 1e-10

    def test_identical_views(self):
        s = scene()
        a = render_view(s, ViewpointParams(10, 5, 10), 0.0, 1, **SMALL)
        b = render_view(s, ViewpointParams(10, 5, 10), 0.0, 2, **SMALL)
        for m in gt_point_matches(a, b):
            assert (m.a.x, m.a.y) == (m.b.x, m.b.y)
        cm = gt_matches(a, b)
        assert np.array_equal(cm.rows, cm.cols)

    def test_one_match_per_point(self):
        s = scene()
        a = render_view(s, ViewpointParams(10, 0, 0), **SMALL)
        b = render_view(s, ViewpointParams(10, 0, 30), **SMALL)
        m = gt_matches(a, b)
        assert len(set(m.rows.tolist())) == len(m) == len(set(m.cols.tolist()))
        assert np.array_equal(a.cell_owner[m.rows], b.cell_owner[m.cols])

    def test_disjoint_visibility(self):
        s = scene(planar=True)
        a = render_view(s, ViewpointParams(10, 0, 0), **SMALL)
        b = render_view(s, ViewpointParams(3, 0, 180), **SMALL)
        assert a.visible.any() and not b.visible.any()
        assert len(gt_matches(a, b)) == 0 and gt_point_matches(a, b) == []

    def test_oracle_contract_baseline_perfect(self):
        s = scene(0.0)
        a = render_view(s, ViewpointParams(10, 0, 0), 0.0, 1, **SMALL)
        b = render_view(s, ViewpointParams(10, 0, 15), 0.0, 2, **SMALL)
        gt = gt_matches(a, b)
        sim = similarity(a.coarse, b.coarse)
        for i, j, _ in gt:
            row, col = np.delete(sim[i], j), np.delete(sim[:, j], i)
            assert sim[i, j] > row.max() and sim[i, j] > col.max()
        assert gt.pairs() <= mnn_select(dual_softmax(sim), 0.0).pairs()

    def test_anchors(self):
        s = scene(0.3)
        a = render_view(s, ViewpointParams(10, 0, 0), **SMALL)
        b = render_view(s, ViewpointParams(10, 0, 20), **SMALL)
        an = simulate_anchors(s, a, b, count=30, pixel_noise=0.0, seed=1)
        assert 0 < len(an) <= 30
        assert all(0.6 <= m.confidence <= 1.0 for m in an)
        assert an == simulate_anchors(s, a, b, count=30, pixel_noise=0.0, seed=1)


class TestSweep:
    def test_full_protocol_counts(self):
        spec = PairSweepSpec("beta")
        pairs = make_pair_sweep(spec, range(25))
        assert len(spec.offsets()) == 36 and len(pairs) == 900
        assert spec.base == ViewpointParams(10.0, 0.0, 0.0)

    def test_offset_40(self):
        pairs = make_pair_sweep(PairSweepSpec("beta"), range(25))
        last = [p for p in pairs if p.offset == 40]
        assert len(last) == 25
        assert all(p.view_b == ViewpointParams(10.0, 0.0, 40.0) and p.view_a == ViewpointParams(10.0, 0.0, 0.0) for p in last)

    def test_other_variables_held(self):
        for var in ("distance", "alpha"):
            for p in make_pair_sweep(PairSweepSpec(var, step=5, pairs_per_step=2), range(2)):
                diff = {k: p.view_b.to_dict()[k] - p.view_a.to_dict()[k] for k in ("distance", "alpha", "beta")}
                assert diff[var] == p.offset and all(v == 0 for k, v in diff.items() if k != var)

    def test_seeds_distinguish_pairs(self):
        pairs = make_pair_sweep(PairSweepSpec("alpha", step=5, pairs_per_step=3), [4, 7, 9])
        assert len({p.pair_id for p in pairs}) == len(pairs)
        assert [p.scene_seed for p in pairs[:3]] == [4, 7, 9]

    def test_deterministic(self):
        spec = PairSweepSpec("distance", step=7, pairs_per_step=2)
        assert make_pair_sweep(spec, [1, 2]) == make_pair_sweep(spec, [1, 2])

    def test_not_enough_seeds(self):
        with pytest.raises(ValueError):
            make_pair_sweep(PairSweepSpec("beta"), range(3))

    @pytest.mark.parametrize("kw", [dict(variable="gamma"), dict(variable="beta", start=50), dict(variable="beta", pairs_per_step=0)])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            PairSweepSpec(**kw)
