import subprocess
import sys

import numpy as np
import pytest

from svmshape import cli
from svmshape.fileio import format_points, format_spec
from svmshape.shapes import SVM_PM1, LabeledPointSet, ShapeSpec
from svmshape.surface import Mesh
from svmshape.svm_core import discriminant, parse_model

TINY = """n_points = 8
batch_tasks = 2
points_uniform_per_step = 64
points_near_surface_per_step = 64
lr = 0.001
family = sphere
n_shapes = 6
checkpoint_every = 1
"""


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def pair_file(tmp_path):
    path = tmp_path / "pair.pts"
    path.write_text(format_points(LabeledPointSet([[1, 0, 0], [-1, 0, 0]], [1, -1], SVM_PM1)))
    return path


@pytest.fixture
def sphere_points(tmp_path):
    pos = np.random.default_rng(0).normal(size=(20, 3))
    pos = 0.15 * pos / np.linalg.norm(pos, axis=1)[:, None]
    pts = np.vstack([pos, pos / 0.15 * 0.45])
    path = tmp_path / "sphere.pts"
    path.write_text(format_points(LabeledPointSet(pts, [1] * 20 + [-1] * 20, SVM_PM1)))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    (root / "cfg.txt").write_text(TINY)
    assert run("train", "--config", root / "cfg.txt", "--out", root / "run", "--steps", 2) == 0
    for name, spec in [("a", ShapeSpec.sphere(0.3)), ("b", ShapeSpec.box([0.3, 0.2, 0.25]))]:
        (root / f"{name}.shape").write_text(format_spec(spec))
    return root


class TestGenData:
    def test_count_and_determinism(self, tmp_path):
        assert run("gen-data", "--family", "torus", "--count", 10, "--out-dir", tmp_path / "a", "--seed", 3) == 0
        assert run("gen-data", "--family", "torus", "--count", 10, "--out-dir", tmp_path / "b", "--seed", 3) == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert len(files) == 10
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_samples(self, tmp_path):
        assert run("gen-data", "--family", "sphere", "--count", 2, "--out-dir", tmp_path, "--samples", 100) == 0
        assert len((tmp_path / "shape_0000.pts").read_text().splitlines()) == 101

    def test_unknown_family(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            run("gen-data", "--family", "teapot", "--count", 1, "--out-dir", tmp_path)
        assert info.value.code == 1


class TestFit:
    def test_symmetric_pair(self, pair_file, tmp_path, capsys):
        assert run("fit", "--points", pair_file, "--kernel", "iso", "--sigma", 1.0, "--c", 10,
                   "--out", tmp_path / "m.svm") == 0
        bias = float(capsys.readouterr().out.split()[1])
        assert abs(bias) < 1e-9

    def test_single_class_exit_code(self, tmp_path):
        path = tmp_path / "one.pts"
        path.write_text(format_points(LabeledPointSet(np.eye(3), [1, 1, 1], SVM_PM1)))
        assert run("fit", "--points", path, "--out", tmp_path / "m.svm") == 2
        assert not (tmp_path / "m.svm").exists()

    def test_model_round_trip(self, sphere_points, tmp_path):
        assert run("fit", "--points", sphere_points, "--kernel", "aniso", "--sigma", "0.1,0.12,0.15",
                   "--out", tmp_path / "m.svm") == 0
        m = parse_model((tmp_path / "m.svm").read_text())
        q = np.random.default_rng(1).uniform(-0.5, 0.5, (100, 3))
        from svmshape.svm_core import format_model
        again = parse_model(format_model(m))
        np.testing.assert_array_equal(discriminant(m, q), discriminant(again, q))

    @pytest.mark.parametrize("text", ["1 2 3\n", "a b c 1\n", "# labels=weird\n0 0 0 1\n"])
    def test_bad_points(self, tmp_path, text):
        path = tmp_path / "bad.pts"
        path.write_text(text)
        assert run("fit", "--points", path, "--out", tmp_path / "m.svm") == 1

    def test_missing_file(self, tmp_path):
        assert run("fit", "--points", tmp_path / "nope.pts", "--out", tmp_path / "m.svm") == 1

    def test_sigma_floor(self, pair_file, tmp_path):
        assert run("fit", "--points", pair_file, "--sigma", "1e-9", "--out", tmp_path / "m.svm") == 1


class TestReconstructAndEval:
    def test_sphere_model(self, sphere_points, tmp_path, capsys):
        run("fit", "--points", sphere_points, "--kernel", "iso", "--sigma", 0.1, "--out", tmp_path / "m.svm")
        assert run("reconstruct", "--model", tmp_path / "m.svm", "--resolution", 32, "--out", tmp_path / "m.obj") == 0
        assert Mesh.from_obj((tmp_path / "m.obj").read_text()).is_watertight()
        assert "watertight True" in capsys.readouterr().out

    def test_iso_override(self, sphere_points, tmp_path):
        run("fit", "--points", sphere_points, "--kernel", "iso", "--sigma", 0.1, "--out", tmp_path / "m.svm")
        run("reconstruct", "--model", tmp_path / "m.svm", "--resolution", 24, "--out", tmp_path / "a.obj")
        run("reconstruct", "--model", tmp_path / "m.svm", "--resolution", 24, "--iso", 0.3, "--out", tmp_path / "b.obj")
        ra = np.linalg.norm(Mesh.from_obj((tmp_path / "a.obj").read_text()).vertices, axis=1).mean()
        rb = np.linalg.norm(Mesh.from_obj((tmp_path / "b.obj").read_text()).vertices, axis=1).mean()
        assert rb < ra

    def test_resolution_too_small(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            run("reconstruct", "--model", "x", "--resolution", 4, "--out", tmp_path / "m.obj")
        assert info.value.code == 1

    def test_empty_surface_exit_code(self, pair_file, tmp_path):
        run("fit", "--points", pair_file, "--kernel", "iso", "--sigma", 1.0, "--out", tmp_path / "m.svm")
        assert run("reconstruct", "--model", tmp_path / "m.svm", "--iso", 50, "--resolution", 8,
                   "--out", tmp_path / "m.obj") == 3

    def test_needs_a_source(self, tmp_path):
        assert run("reconstruct", "--out", tmp_path / "m.obj") == 1

    def test_self_eval(self, tmp_path, capsys):
        spec = tmp_path / "s.shape"
        spec.write_text(format_spec(ShapeSpec.box([0.3, 0.2, 0.25])))
        import svmshape.surface as surface
        from svmshape.shapes import make_shape
        o = make_shape(ShapeSpec.box([0.3, 0.2, 0.25]))
        mesh = surface.marching_cubes(surface.sample_field(lambda p: -o.signed_distance(p), 48))
        (tmp_path / "gt.obj").write_text(mesh.to_obj())
        args = ("eval", "--pred", tmp_path / "gt.obj", "--gt-shape", spec, "--samples", 20000, "--seed", 5)
        assert run(*args, "--out", tmp_path / "r.csv") == 0
        first = capsys.readouterr().out
        row = first.splitlines()[1].split(",")
        assert float(row[1]) > 0.99 and float(row[3]) > 99
        assert run(*args) == 0
        assert capsys.readouterr().out == first == (tmp_path / "r.csv").read_text()

    def test_eval_missing_file(self, tmp_path):
        assert run("eval", "--pred", tmp_path / "x.obj", "--gt-shape", tmp_path / "x.shape") == 1


class TestTrainAndFriends:
    def test_outputs(self, trained):
        rows = (trained / "run" / "metrics.csv").read_text().splitlines()
        assert rows[0] == "step,loss,skipped" and len(rows) == 3

    def test_resume_continues(self, trained, tmp_path):
        import shutil
        shutil.copytree(trained / "run", tmp_path / "run")
        assert run("train", "--config", trained / "cfg.txt", "--out", tmp_path / "run", "--steps", 3,
                   "--resume") == 0
        rows = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows[1:]] == ["0", "1", "2"]
        assert rows[1:3] == (trained / "run" / "metrics.csv").read_text().splitlines()[1:]

    def test_bad_config_key(self, tmp_path, capsys):
        (tmp_path / "cfg.txt").write_text("learning_rate = 0.1\n")
        assert run("train", "--config", tmp_path / "cfg.txt", "--out", tmp_path / "o") == 1
        err = capsys.readouterr().err
        assert "learning_rate" in err and "valid keys" in err and "n_points" in err

    def test_ablate_grid(self, trained, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(TINY.replace("n_shapes = 6", "n_shapes = 4") + "batch_tasks = 1\n")
        assert run("ablate", "--config", cfg, "--steps", 1, "--iou-samples", 1000,
                   "--out", tmp_path / "grid.csv") == 0
        rows = (tmp_path / "grid.csv").read_text().splitlines()
        assert rows[0] == "n_points,kernel,embedding,seed,iou"
        assert len(rows) == 1 + 5 * 2 * 2

    def test_ablate_bad_embedding(self, tmp_path):
        assert run("ablate", "--embedding", "maybe", "--out", tmp_path / "g.csv") == 1

    def test_prune(self, trained, tmp_path, capsys):
        out = tmp_path / "prune"
        assert run("prune", "--checkpoint", trained / "run", "--shape", trained / "a.shape", "--polarity", "pos",
                   "--steps", 2, "--iou-samples", 2000, "--resolution", 16, "--out-dir", out) == 0
        assert len((out / "trace.csv").read_text().splitlines()) == 3
        assert "base_iou" in capsys.readouterr().out

    def test_prune_zero_steps(self, trained, tmp_path):
        out = tmp_path / "prune"
        assert run("prune", "--checkpoint", trained / "run", "--shape", trained / "a.shape", "--polarity", "neg",
                   "--steps", 0, "--iou-samples", 1000, "--out-dir", out) == 0
        assert (out / "trace.csv").read_text() == "step,removed_index,polarity,iou\n"

    def test_prune_too_many(self, trained, tmp_path):
        assert run("prune", "--checkpoint", trained / "run", "--shape", trained / "a.shape", "--polarity", "pos",
                   "--steps", 5, "--iou-samples", 1000, "--out-dir", tmp_path) == 2

    def test_interp(self, trained, tmp_path):
        out = tmp_path / "frames"
        assert run("interp", "--checkpoint", trained / "run", "--shape-a", trained / "a.shape",
                   "--shape-b", trained / "b.shape", "--frames", 1, "--resolution", 16, "--out-dir", out) == 0
        assert sorted(p.name for p in out.iterdir()) == ["frame_000.obj", "frame_001.obj"]
        direct = tmp_path / "direct.obj"
        run("reconstruct", "--checkpoint", trained / "run", "--shape", trained / "a.shape", "--resolution", 16,
            "--out", direct)
        assert (out / "frame_000.obj").read_bytes() == direct.read_bytes()

    def test_interp_same_shape(self, trained, tmp_path):
        out = tmp_path / "frames"
        run("interp", "--checkpoint", trained / "run", "--shape-a", trained / "a.shape",
            "--shape-b", trained / "a.shape", "--frames", 2, "--resolution", 16, "--out-dir", out)
        frames = [p.read_bytes() for p in sorted(out.iterdir())]
        assert len(frames) == 3 and frames[0] == frames[1] == frames[2]


class TestGradcheck:
    def test_passes(self, capsys):
        assert run("gradcheck", "--trials", 6, "--h", 1e-5) == 0
        assert "PASS" in capsys.readouterr().out

    def test_active_set_change_is_skipped(self, capsys):
        # A step this large moves points across the margin, so the one-sided
        # comparison is meaningless and the trial is counted as skipped.
        run("gradcheck", "--trials", 2, "--h", 0.2)
        assert "skipped 2" in capsys.readouterr().out


class TestProcess:
    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "svmshape", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for name in ("gen-data", "fit", "reconstruct", "eval", "train", "ablate", "prune", "gradcheck", "interp"):
            assert name in out.stdout

    def test_threads_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SVMSHAPE_THREADS", "zero")
        assert run("gen-data", "--family", "sphere", "--count", 1, "--out-dir", tmp_path) == 0
        (tmp_path / "cfg.txt").write_text(TINY)
        assert run("train", "--config", tmp_path / "cfg.txt", "--out", tmp_path / "o", "--steps", 1) == 1

    def test_help_documents_flags(self):
        out = subprocess.run([sys.executable, "-m", "svmshape", "train", "--help"], capture_output=True, text=True)
        for flag in ("--config", "--data", "--out", "--steps", "--resume", "--seed", "--threads"):
            assert flag in out.stdout
