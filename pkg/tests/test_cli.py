import json
import math

import numpy as np
import pytest

from coldopt import io
from coldopt.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from coldopt.density import build_density_model
from coldopt.model import MlpPredictor
from coldopt.objectives import thickness


@pytest.fixture
def enc_file(tmp_path, rng):
    means = rng.normal(size=(40, 3))
    variances = rng.uniform(0.5, 2.0, (40, 3))
    p = tmp_path / "enc.bin"
    io.write_encodings(p, means, variances)
    return p, means, variances


@pytest.fixture
def pts_file(tmp_path, rng):
    pts = rng.normal(size=(15, 3))
    p = tmp_path / "pts.bin"
    io.write_points(p, pts)
    return p, pts


def read_col(path, name):
    lines = path.read_text().splitlines()
    idx = lines[0].split(",").index(name)
    return [line.split(",")[idx] for line in lines[1:]]


class TestDensityCommand:
    def test_exact_matches_library(self, tmp_path, enc_file, pts_file):
        enc, means, variances = enc_file
        pts, points = pts_file
        out = tmp_path / "out.csv"
        rc = main(["density", "--encodings", str(enc), "--points", str(pts),
                   "--out", str(out)])
        assert rc == EXIT_OK
        got = np.array([float(v) for v in read_col(out, "log_density")])
        model = build_density_model(means, variances)
        np.testing.assert_array_equal(got, model.score_samples(points))

    def test_knn_requires_k(self, tmp_path, enc_file, pts_file):
        rc = main(["density", "--encodings", str(enc_file[0]),
                   "--points", str(pts_file[0]), "--mode", "knn",
                   "--out", str(tmp_path / "o.csv")])
        assert rc == EXIT_USAGE

    def test_k_forbidden_in_exact_mode(self, tmp_path, enc_file, pts_file):
        rc = main(["density", "--encodings", str(enc_file[0]),
                   "--points", str(pts_file[0]), "--k", "5",
                   "--out", str(tmp_path / "o.csv")])
        assert rc == EXIT_USAGE

    def test_missing_file_is_data_error(self, tmp_path):
        rc = main(["density", "--encodings", str(tmp_path / "nope"),
                   "--points", str(tmp_path / "nope2"), "--out", str(tmp_path / "o.csv")])
        assert rc == EXIT_DATA

    def test_wrong_format_is_data_error(self, tmp_path, enc_file):
        rc = main(["density", "--encodings", str(enc_file[0]),
                   "--points", str(enc_file[0]), "--out", str(tmp_path / "o.csv")])
        assert rc == EXIT_DATA

    def test_unknown_flag_is_usage_error(self, tmp_path):
        rc = main(["density", "--bogus", "x"])
        assert rc == EXIT_USAGE


class TestSampleCommand:
    def test_deterministic_per_seed(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        for out in (a, b):
            assert main(["sample", "--dim", "2", "--count", "10", "--b", "2.0",
                         "--seed", "9", "--out", str(out)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_bad_count(self, tmp_path):
        rc = main(["sample", "--dim", "2", "--count", "0", "--out", str(tmp_path / "o")])
        assert rc == EXIT_USAGE


class TestObjectiveCommand:
    def _write_img(self, path, img, maxval=255):
        io.write_pgm(path, img, maxval=maxval)

    def test_thickness_values(self, tmp_path, rng):
        imgs = []
        for i in range(3):
            img = rng.integers(0, 256, size=(8, 8)).astype(float)
            p = tmp_path / f"img{i}.pgm"
            self._write_img(p, img)
            imgs.append((p, img))
        out = tmp_path / "out.csv"
        rc = main(["objective", "--metric", "thickness",
                   "--images", *[str(p) for p, _ in imgs], "--out", str(out)])
        assert rc == EXIT_OK
        got = [float(v) for v in read_col(out, "value")]
        expect = [thickness(img, maxval=255) for _, img in imgs]
        np.testing.assert_array_equal(got, expect)

    def test_undefined_metric_reported_per_image(self, tmp_path):
        blank = tmp_path / "blank.pgm"
        self._write_img(blank, np.zeros((6, 6)))
        out = tmp_path / "out.csv"
        rc = main(["objective", "--metric", "aspect", "--images", str(blank),
                   "--out", str(out)])
        assert rc == EXIT_OK  # image parsed; metric undefined is data, not failure
        assert read_col(out, "value") == [""]
        assert "undefined" in read_col(out, "error")[0]

    def test_all_unreadable_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.pgm"
        bad.write_bytes(b"not a pgm")
        rc = main(["objective", "--metric", "thickness", "--images", str(bad),
                   "--out", str(tmp_path / "o.csv")])
        assert rc == EXIT_DATA


class TestDiversityCommand:
    def test_prints_value(self, tmp_path, capsys):
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        io.write_pgm(a, np.zeros((4, 4)))
        io.write_pgm(b, np.full((4, 4), 255.0))
        assert main(["diversity", "--images", str(a), str(b)]) == EXIT_OK
        val = float(capsys.readouterr().out.strip())
        # one pair, ||a - b||_F^2 = 16 * 255^2, divided by side^2 = 16
        assert val == pytest.approx(255.0**2)

    def test_needs_two_images(self, tmp_path):
        a = tmp_path / "a.pgm"
        io.write_pgm(a, np.zeros((4, 4)))
        assert main(["diversity", "--images", str(a)]) == EXIT_USAGE


class TestBenchKnnCommand:
    def test_combined_csv(self, tmp_path, enc_file, pts_file):
        out = tmp_path / "bench.csv"
        rc = main(["bench-knn", "--encodings", str(enc_file[0]),
                   "--points", str(pts_file[0]), "--ks", "5,40", "--out", str(out)])
        assert rc == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == ("k,approx_mean_log_density,exact_mean_log_density,"
                            "approx_seconds,exact_seconds")
        rows = [line.split(",") for line in lines[1:]]
        assert [r[0] for r in rows] == ["5", "40"]
        # k = N row reproduces the exact mean
        assert float(rows[1][1]) == pytest.approx(float(rows[1][2]), rel=1e-12)

    def test_k_out_of_range(self, tmp_path, enc_file, pts_file):
        rc = main(["bench-knn", "--encodings", str(enc_file[0]),
                   "--points", str(pts_file[0]), "--ks", "5,999",
                   "--out", str(tmp_path / "o.csv")])
        assert rc == EXIT_USAGE


def make_run_config(tmp_path, rng, eta=-8.0, extra=None):
    means = np.array([[0.0, 0.0], [6.0, 0.0], [12.0, 0.0]])
    enc = tmp_path / "enc.bin"
    io.write_encodings(enc, means, np.ones_like(means))

    # linear score -(z0 - 6)^2 is not expressible; use an identity-activation
    # single layer scoring z0 so optima slide along the x-axis
    pred = MlpPredictor(layers=[(np.array([[1.0, 0.0]]), np.array([0.0]))],
                        activations=["identity"])
    weights = tmp_path / "weights.json"
    pred.to_json(weights)

    cfg = {
        "encodings": str(enc),
        "predictor_weights": str(weights),
        "grid": {"count": 200, "b": 6.0, "seed": 5},
        "eta": eta,
        "t": 4,
        "output": {"report": str(tmp_path / "report.json"),
                   "starts": str(tmp_path / "starts.csv")},
        "decoder": "none",
        "true_score": "none",
        "mode": "exact",
    }
    if extra:
        cfg.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


class TestOptimizeCommand:
    def test_end_to_end_outputs(self, tmp_path, rng):
        cfg_path, cfg = make_run_config(tmp_path, rng)
        assert main(["optimize", "--config", str(cfg_path)]) == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["n_starts"] == 4
        assert report["truncated"] is False
        starts = (tmp_path / "starts.csv").read_text().splitlines()
        assert len(starts) == 5
        assert starts[0].startswith("start_0,start_1,opt_0,opt_1,log_density_start")
        # every optimum stays feasible and does not regress the start score
        for line in starts[1:]:
            vals = line.split(",")
            assert float(vals[5]) >= -8.0 - 1e-6  # log_density_opt
            assert float(vals[7]) >= float(vals[6]) - 1e-9  # score opt >= start

    def test_byte_identical_across_runs_and_workers(self, tmp_path, rng):
        cfg_path, cfg = make_run_config(tmp_path, rng)
        outputs = []
        for workers in ("1", "1", "8"):
            assert main(["optimize", "--config", str(cfg_path),
                         "--workers", workers]) == EXIT_OK
            outputs.append(((tmp_path / "report.json").read_bytes(),
                            (tmp_path / "starts.csv").read_bytes()))
        assert outputs[0] == outputs[1] == outputs[2]

    def test_minus_inf_eta(self, tmp_path, rng):
        cfg_path, _ = make_run_config(tmp_path, rng, eta="-inf")
        assert main(["optimize", "--config", str(cfg_path)]) == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["eta"] == "-inf"

    def test_no_feasible_starts_exit_3(self, tmp_path, rng):
        cfg_path, _ = make_run_config(tmp_path, rng, eta=1e9)
        assert main(["optimize", "--config", str(cfg_path)]) == EXIT_NUMERICAL

    def test_decoder_and_true_score(self, tmp_path, rng):
        side = 4
        decoder = {"kind": "toy-linear",
                   "weight": rng.uniform(0, 20, (side * side, 2)).tolist(),
                   "bias": np.full(side * side, 100.0).tolist(),
                   "image_side": side, "maxval": 255}
        cfg_path, _ = make_run_config(tmp_path, rng,
                                      extra={"decoder": decoder,
                                             "true_score": "thickness"})
        assert main(["optimize", "--config", str(cfg_path)]) == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["aggregates"]["frac_decoded"] == 1.0
        assert report["aggregates"]["mean_true_score"] is not None
        assert report["all_decodes_failed"] is False

    def test_missing_config_key_exit_2(self, tmp_path, rng):
        cfg_path, cfg = make_run_config(tmp_path, rng)
        cfg.pop("t")
        cfg_path.write_text(json.dumps(cfg))
        assert main(["optimize", "--config", str(cfg_path)]) == EXIT_DATA

    def test_invalid_json_exit_2(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["optimize", "--config", str(p)]) == EXIT_DATA

    def test_knn_mode(self, tmp_path, rng):
        cfg_path, _ = make_run_config(
            tmp_path, rng, extra={"mode": {"kind": "knn", "k": 3}})
        assert main(["optimize", "--config", str(cfg_path)]) == EXIT_OK


class TestWorkersEnv:
    def test_bad_env_value_is_usage_error(self, tmp_path, enc_file, pts_file,
                                          monkeypatch):
        monkeypatch.setenv("COLD_WORKERS", "lots")
        rc = main(["density", "--encodings", str(enc_file[0]),
                   "--points", str(pts_file[0]), "--out", str(tmp_path / "o.csv")])
        assert rc == EXIT_USAGE
