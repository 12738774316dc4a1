import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svmshape.errors import EmptyMesh, UndefinedIoU
from svmshape.metrics import (MetricsReport, chamfer_l1, evaluate_mesh, f_score, inside, mesh_inside,
                              reports_csv, summarize, volumetric_iou)
from svmshape.shapes import ShapeSpec, make_shape
from svmshape.surface import Mesh, marching_cubes, sample_field


def sphere(r, center=(0.0, 0.0, 0.0)):
    return make_shape(ShapeSpec.sphere(r, center))


def sphere_mesh(r, resolution=48, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center)
    return marching_cubes(sample_field(lambda p: r - np.linalg.norm(p - c, axis=1), resolution))


@pytest.fixture(scope="module")
def box_pair():
    o = make_shape(ShapeSpec.box([0.3, 0.2, 0.25]))
    return o, marching_cubes(sample_field(lambda p: -o.signed_distance(p), 48))


class TestIoU:
    def test_self(self):
        o = sphere(0.3)
        assert volumetric_iou(o, o) == 1.0

    def test_disjoint(self):
        assert volumetric_iou(sphere(0.1, (0.3, 0, 0)), sphere(0.1, (-0.3, 0, 0))) == 0.0

    def test_concentric_closed_form(self):
        n = 100_000
        iou = volumetric_iou(sphere(0.3), sphere(0.4), n, seed=0)
        p = 0.421875
        union_fraction = 4 / 3 * math.pi * 0.4 ** 3
        sigma = math.sqrt(p * (1 - p) / (n * union_fraction))
        assert abs(iou - p) <= 3 * sigma

    def test_symmetric(self):
        a, b = sphere(0.3), make_shape(ShapeSpec.box([0.3, 0.1, 0.2]))
        assert volumetric_iou(a, b, 5000, 3) == volumetric_iou(b, a, 5000, 3)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            volumetric_iou(sphere(0.3), sphere(0.3), 999)

    def test_empty_union(self):
        with pytest.raises(UndefinedIoU):
            volumetric_iou(sphere(1e-3), sphere(1e-3, (0.2, 0, 0)), 1000)

    def test_mesh_against_oracle(self, box_pair):
        oracle, mesh = box_pair
        assert volumetric_iou(mesh, oracle, 20_000) > 0.99

    def test_seeded(self):
        a, b = sphere(0.3), sphere(0.35, (0.05, 0, 0))
        assert volumetric_iou(a, b, 5000, 7) == volumetric_iou(a, b, 5000, 7)


class TestInsideness:
    def test_mesh_matches_oracle(self, box_pair, rng):
        oracle, mesh = box_pair
        q = rng.uniform(-0.5, 0.5, (5000, 3))
        # Only points clear of the surface by a cell are unambiguous.
        clear = np.abs(oracle.signed_distance(q)) > 1 / 48
        np.testing.assert_array_equal(mesh_inside(mesh, q[clear]), oracle.indicator(q[clear]))

    def test_torus_hole_is_outside(self):
        o = make_shape(ShapeSpec.torus(0.25, 0.08))
        mesh = marching_cubes(sample_field(lambda p: -o.signed_distance(p), 48))
        assert mesh_inside(mesh, [[0, 0, 0], [0.25, 0, 0], [0.45, 0, 0]]).tolist() == [False, True, False]

    def test_empty_mesh_contains_nothing(self):
        assert not mesh_inside(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), [[0, 0, 0]]).any()

    def test_unknown_object(self):
        with pytest.raises(TypeError):
            inside("sphere", [[0, 0, 0]])


class TestChamfer:
    def test_self_is_zero(self):
        m = sphere_mesh(0.3, 24)
        assert chamfer_l1(m, m, 5000) == 0.0

    def test_concentric_spheres(self):
        assert chamfer_l1(sphere(0.4), sphere(0.35)) == pytest.approx(0.05, abs=0.005)

    def test_concentric_meshes(self):
        assert chamfer_l1(sphere_mesh(0.4), sphere(0.35), 20_000) == pytest.approx(0.05, abs=0.005)

    def test_triangle_order(self, rng):
        m = sphere_mesh(0.3, 24)
        shuffled = Mesh(m.vertices, m.triangles[rng.permutation(len(m.triangles))][:, [2, 0, 1]])
        o = sphere(0.31)
        assert chamfer_l1(m, o, 5000) == chamfer_l1(shuffled, o, 5000)

    def test_symmetric(self):
        a, b = sphere(0.3), make_shape(ShapeSpec.box([0.3, 0.2, 0.1]))
        assert chamfer_l1(a, b, 5000) == chamfer_l1(b, a, 5000)

    def test_empty_mesh(self):
        with pytest.raises(EmptyMesh):
            chamfer_l1(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), sphere(0.3), 100)


class TestFScore:
    def test_identical(self):
        o = sphere(0.3)
        assert f_score(o, o, n=5000) == 100.0

    def test_far_apart(self):
        assert f_score(sphere(0.1), sphere(0.4), n=5000) == 0.0

    def test_half_distance_shift(self):
        d = 0.02
        assert f_score(sphere(0.3, (d / 2, 0, 0)), sphere(0.3), d=d, n=20_000) == 100.0

    def test_bad_distance(self):
        with pytest.raises(ValueError):
            f_score(sphere(0.3), sphere(0.3), d=0.0)

    @settings(max_examples=20)
    @given(ds=st.lists(st.floats(1e-3, 0.2), min_size=2, max_size=6))
    def test_monotone_in_d(self, ds):
        a, b = sphere(0.3), make_shape(ShapeSpec.ellipsoid([0.3, 0.25, 0.35]))
        scores = [f_score(a, b, d=d, n=2000) for d in sorted(ds)]
        assert all(x <= y for x, y in zip(scores, scores[1:]))


class TestReports:
    def test_evaluate_mesh(self, box_pair):
        oracle, mesh = box_pair
        rep = evaluate_mesh("box", mesh, oracle, 20_000, 20_000)
        assert rep.iou > 0.99 and rep.f_score > 99 and rep.chamfer_l1 < 0.01 and not rep.failed

    def test_summary_skips_failures(self):
        reps = [MetricsReport("a", 0.5, 0.1, 50.0), MetricsReport("b", 1.0, 0.0, 100.0),
                MetricsReport.failure("c", "EmptySurface: none")]
        s = summarize(reps)
        assert s == {"iou": 0.75, "chamfer": 0.05, "fscore": 75.0, "count": 2, "failed": 1}

    def test_csv_layout(self):
        text = reports_csv([MetricsReport("0", 0.5, 0.25, 50.0), MetricsReport.failure("1", "x")])
        lines = text.splitlines()
        assert lines[0] == "task_id,iou,chamfer,fscore"
        assert lines[1] == "0,0.5,0.25,50.0"
        assert lines[2] == "1,nan,nan,nan"
        assert lines[3] == "mean,0.5,0.25,50.0"
