import json
import math
import os
import re

import numpy as np
import pytest

import deltapack as dp
from deltapack.cli import main
from deltapack.dtc import read_dtc


@pytest.fixture()
def fixture_dir(tmp_path):
    out = str(tmp_path / "fx")
    assert main(["gen-fixtures", "--out", out, "--seed", "0"]) == 0
    return out


def paths(fixture_dir):
    return (os.path.join(fixture_dir, "base.dtc"),
            os.path.join(fixture_dir, "finetuned.dtc"),
            os.path.join(fixture_dir, "calib.dtc"))


class TestExitCodes:
    def test_usage_error_is_1(self, capsys):
        assert main(["compress"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_unknown_command_is_1(self):
        assert main(["frobnicate"]) == 1

    def test_data_error_is_2(self, tmp_path, capsys):
        missing = str(tmp_path / "missing.dtc")
        out = str(tmp_path / "out.dtc")
        assert main(["split", missing, missing, out]) == 2
        assert "error" in capsys.readouterr().err

    def test_corrupt_file_is_2(self, tmp_path):
        bad = str(tmp_path / "bad.dtc")
        with open(bad, "wb") as fh:
            fh.write(b"garbage")
        assert main(["decompress", bad, str(tmp_path / "o.dtc")]) == 2


class TestSplitCmd:
    def test_identical_inputs_zero_delta(self, tmp_path, fixture_dir):
        base, _, _ = paths(fixture_dir)
        out = str(tmp_path / "d.dtc")
        assert main(["split", base, base, out]) == 0
        tensors, _ = read_dtc(out)
        assert all(np.all(t == 0) for t in tensors.values())

    def test_round_trip_byte_identical_payload(self, tmp_path, fixture_dir):
        base, finetuned, _ = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        rebuilt = str(tmp_path / "ft2.dtc")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["merge", base, delta, rebuilt]) == 0
        t1, _ = read_dtc(finetuned)
        t2, _ = read_dtc(rebuilt)
        assert set(t1) == set(t2)
        for name in t1:
            assert t1[name].tobytes() == t2[name].tobytes()

    def test_printed_norms_match_recomputation(self, tmp_path, fixture_dir, capsys):
        base, finetuned, _ = paths(fixture_dir)
        delta_path = str(tmp_path / "d.dtc")
        assert main(["split", base, finetuned, delta_path]) == 0
        printed = dict(re.findall(r"^(\S+): delta_norm=(\S+)$",
                                  capsys.readouterr().out, re.M))
        tensors, _ = read_dtc(delta_path)
        for name, t in tensors.items():
            expect = math.sqrt(float(np.sum(t.astype(np.float64) ** 2)))
            assert float(printed[name]) == pytest.approx(expect, rel=1e-5)


class TestCompressCmd:
    def test_lossless_alpha_one_within_quantizer_bound(self, tmp_path, fixture_dir):
        base, finetuned, _ = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        dq = str(tmp_path / "a.dq")
        rec = str(tmp_path / "rec.dtc")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["compress", delta, dq, "--alpha", "1", "--k", "8", "--m", "1"]) == 0
        assert main(["decompress", dq, rec]) == 0
        original, _ = read_dtc(delta)
        rebuilt, _ = read_dtc(rec)
        art = dp.read_dq(dq)
        for name in original:
            layer = art.layers[name]
            s = layer.params.s
            err = np.abs(rebuilt[name].astype(np.float64) - original[name].astype(np.float64))
            assert err.max() <= s / 2 + 2.0 ** -20

    def test_nominal_128_report(self, tmp_path, fixture_dir, capsys):
        base, finetuned, _ = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        dq = str(tmp_path / "a.dq")
        report = str(tmp_path / "r.json")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["compress", delta, dq, "--alpha", "8", "--group-size", "8",
                     "--k", "4", "--m", "8", "--report-json", report]) == 0
        out = capsys.readouterr().out
        assert "nominal_ratio=128" in out
        doc = json.loads(open(report).read())
        assert all(l["nominal_ratio"] == 128.0 for l in doc["layers"])

    def test_auto_group_size_matches_brute_force(self, tmp_path, fixture_dir, capsys):
        base, finetuned, calib = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        dq = str(tmp_path / "a.dq")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["compress", delta, dq, "--alpha", "8", "--group-size", "auto",
                     "--k", "4", "--m", "8", "--base", base,
                     "--probe-q", dp.fixtures.PROBE_WQ, "--probe-k", dp.fixtures.PROBE_WK,
                     "--calib", calib, "--calib-fraction", "1.0"]) == 0
        out = capsys.readouterr().out
        selected = int(re.search(r"selected group_size=(\d+)", out).group(1))
        base_ckpt = dp.load_checkpoint(base)
        delta_ckpt = dp.load_delta(delta)
        calib_x, _ = read_dtc(calib)
        res = dp.search_group_size(base_ckpt, delta_ckpt,
                                   dp.AttentionProbe(dp.fixtures.PROBE_WQ,
                                                     dp.fixtures.PROBE_WK, calib_x["X"]),
                                   alpha=8, seed=0, calib_fraction=1.0)
        assert selected == res.best
        assert dp.read_dq(dq).config.group_size == res.best

    def test_auto_without_probes_is_data_error(self, tmp_path, fixture_dir):
        base, finetuned, _ = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["compress", delta, str(tmp_path / "a.dq"), "--alpha", "8",
                     "--group-size", "auto"]) == 2

    def test_exclude_filter(self, tmp_path, fixture_dir):
        base, finetuned, _ = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        dq = str(tmp_path / "a.dq")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["compress", delta, dq, "--alpha", "4", "--k", "4", "--m", "2",
                     "--exclude", r"mlp\."]) == 0
        art = dp.read_dq(dq)
        assert art.layer_names() == sorted(n for n in dp.fixtures.LAYER_NAMES
                                           if "mlp." not in n)

    def test_all_zero_layer_is_degenerate_input_error(self, tmp_path):
        delta = dp.DeltaCheckpoint("b", {"dead": np.zeros((4, 4), np.float32)})
        path = str(tmp_path / "d.dtc")
        dp.save_delta(path, delta)
        assert main(["compress", path, str(tmp_path / "a.dq"),
                     "--alpha", "2", "--k", "4", "--m", "1"]) == 2


class TestDecompressCmd:
    def test_m1_and_m8_decompress_identically(self, tmp_path, fixture_dir):
        base, finetuned, _ = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        assert main(["split", base, finetuned, delta]) == 0
        payloads = []
        for m in ("1", "8"):
            dq = str(tmp_path / f"a{m}.dq")
            rec = str(tmp_path / f"rec{m}.dtc")
            assert main(["compress", delta, dq, "--alpha", "8", "--group-size", "8",
                         "--k", "4", "--m", m, "--seed", "3"]) == 0
            assert main(["decompress", dq, rec]) == 0
            payloads.append(open(rec, "rb").read())
        assert payloads[0] == payloads[1]

    def test_empty_layer_artifact_gives_zero_tensor(self, tmp_path):
        empty = dp.to_csr(np.zeros((4, 6), np.float32))
        art = dp.DqArtifact(
            config=dp.DqConfig(method="magnitude", alpha=2, seed=0),
            layers={"w": empty})
        dq = str(tmp_path / "e.dq")
        rec = str(tmp_path / "rec.dtc")
        dp.write_dq(dq, art)
        assert main(["decompress", dq, rec]) == 0
        tensors, _ = read_dtc(rec)
        assert np.array_equal(tensors["w"], np.zeros((4, 6), np.float32))


class TestForwardCmd:
    def _compressed(self, tmp_path, fixture_dir, alpha="8"):
        base, finetuned, calib = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        dq = str(tmp_path / "a.dq")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["compress", delta, dq, "--alpha", alpha, "--group-size", "8",
                     "--k", "4", "--m", "8"]) == 0
        return base, dq, calib

    def test_zero_delta_forward_equals_base_product(self, tmp_path, fixture_dir, capsys):
        base, _, calib = paths(fixture_dir)
        empty = dp.to_csr(np.zeros((64, 64), np.float32))
        art = dp.DqArtifact(config=dp.DqConfig(method="magnitude", alpha=1, seed=0),
                            layers={dp.fixtures.PROBE_WQ: empty})
        dq = str(tmp_path / "z.dq")
        dp.write_dq(dq, art)
        out = str(tmp_path / "y.dtc")
        assert main(["forward", base, dq, calib, "--layer", dp.fixtures.PROBE_WQ,
                     "--fused", "--out", out]) == 0
        printed = capsys.readouterr().out
        assert "fused_relative_diff=0.0" in printed
        y, _ = read_dtc(out)
        base_ckpt = dp.load_checkpoint(base)
        calib_x, _ = read_dtc(calib)
        expect = dp.matmul_dense(calib_x["X"], base_ckpt.tensors[dp.fixtures.PROBE_WQ])
        assert np.array_equal(y["Y"], expect)

    def test_separate_vs_fused_close(self, tmp_path, fixture_dir, capsys):
        base, dq, calib = self._compressed(tmp_path, fixture_dir)
        assert main(["forward", base, dq, calib, "--layer", dp.fixtures.PROBE_WQ,
                     "--fused"]) == 0
        rel = float(re.search(r"fused_relative_diff=(\S+)", capsys.readouterr().out).group(1))
        assert rel <= 1e-4

    def test_identity_input_reads_out_weights(self, tmp_path, fixture_dir):
        base, dq, _ = self._compressed(tmp_path, fixture_dir)
        ident = str(tmp_path / "ident.dtc")
        dp.write_dtc(ident, {"X": np.eye(64, dtype=np.float32)}, {})
        out = str(tmp_path / "y.dtc")
        assert main(["forward", base, dq, ident, "--layer", dp.fixtures.PROBE_WQ,
                     "--out", out]) == 0
        y, _ = read_dtc(out)
        art = dp.read_dq(dq)
        base_ckpt = dp.load_checkpoint(base)
        w_hat = base_ckpt.tensors[dp.fixtures.PROBE_WQ] + dp.densify(
            dp.dequantize(art.layers[dp.fixtures.PROBE_WQ]))
        assert np.allclose(y["Y"], w_hat.T, rtol=1e-5, atol=1e-6)


class TestEvalAndStats:
    def test_eval_alpha_one_losses_bounded(self, tmp_path, fixture_dir, capsys):
        base, finetuned, calib = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        dq = str(tmp_path / "a.dq")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["compress", delta, dq, "--alpha", "1", "--k", "8", "--m", "1"]) == 0
        capsys.readouterr()
        assert main(["eval", base, finetuned, dq, calib,
                     "--probe-q", dp.fixtures.PROBE_WQ,
                     "--probe-k", dp.fixtures.PROBE_WK]) == 0
        out = capsys.readouterr().out
        art = dp.read_dq(dq)
        calib_x, _ = read_dtc(calib)
        t, h_in = calib_x["X"].shape
        for name, loss_text in re.findall(r"^(\S+): layer_loss=(\S+)$", out, re.M):
            s = art.layers[name].params.s
            x_norm_sq = float(np.sum(calib_x["X"].astype(np.float64) ** 2))
            # coarse bound: per-element quantization error through the product
            bound = (s / 2 + 2.0 ** -20) ** 2 * h_in * x_norm_sq * 4
            assert float(loss_text) <= bound
        ep = float(re.search(r"proxy_error=(\S+)", out).group(1))
        assert ep < 1.0  # near zero: only 8-bit quantization noise remains

    def test_stats_echoes_config(self, tmp_path, fixture_dir, capsys):
        base, finetuned, _ = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        dq = str(tmp_path / "a.dq")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["compress", delta, dq, "--alpha", "8", "--group-size", "16",
                     "--k", "4", "--m", "8"]) == 0
        capsys.readouterr()
        assert main(["stats", dq]) == 0
        out = capsys.readouterr().out
        assert "alpha=8" in out and "k=4" in out and "m=8" in out
        assert "nominal_ratio=128" in out

    def test_baseline_magnitude_worse_than_pipeline_at_16x(self, tmp_path):
        # Sign-coherent deltas with non-centered inputs: the mass magnitude
        # pruning drops adds up coherently in each output element, while the
        # rescaled-dropout estimator stays unbiased.  Both sides get a 16x
        # storage budget (magnitude alpha=16; dropout alpha1=4 with k=4, m=1).
        losses = {"magnitude": 0.0, "pipeline": 0.0}
        for seed in range(20):
            gen = np.random.default_rng(seed)
            row_sign = gen.choice([-1.0, 1.0], (64, 1))
            delta_w = (row_sign * (0.02 + 0.004 * gen.normal(size=(64, 64)))).astype(np.float32)
            x = (1.0 + 0.5 * gen.normal(size=(8, 64))).astype(np.float32)
            sp = dp.apply_dropout(delta_w, dp.DropoutPlan(alpha=4, group_size=8, seed=seed), "w")
            codes, params = dp.quantize(sp, 4)
            rec = dp.dequantize(dp.decompose(codes, params, 1))
            assert dp.nominal_ratio(4, 4, 1) == 16
            losses["pipeline"] += dp.layer_loss(x, delta_w, rec)
            losses["magnitude"] += dp.layer_loss(x, delta_w, dp.magnitude_prune(delta_w, 16))
        assert losses["pipeline"] < losses["magnitude"]

    def test_baseline_cmd_writes_raw_artifact(self, tmp_path, fixture_dir, capsys):
        base, finetuned, _ = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        dq = str(tmp_path / "b.dq")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["baseline", delta, dq, "--method", "global-dropout",
                     "--alpha", "16", "--seed", "1"]) == 0
        art = dp.read_dq(dq)
        assert art.config.method == "global-dropout"
        assert all(isinstance(l, dp.CsrMatrix) for l in art.layers.values())

    def test_report_csv_output(self, tmp_path, fixture_dir):
        base, finetuned, _ = paths(fixture_dir)
        delta = str(tmp_path / "d.dtc")
        dq = str(tmp_path / "a.dq")
        csv_path = str(tmp_path / "r.csv")
        assert main(["split", base, finetuned, delta]) == 0
        assert main(["compress", delta, dq, "--alpha", "8", "--group-size", "8",
                     "--k", "4", "--m", "8", "--report-csv", csv_path]) == 0
        lines = open(csv_path).read().strip().splitlines()
        assert lines[0].startswith("name,rows,cols,stored")
        assert len(lines) == 1 + len(dp.fixtures.LAYER_NAMES)


class TestDeterminism:
    def test_two_runs_byte_identical(self, tmp_path, fixture_dir):
        base, finetuned, _ = paths(fixture_dir)
        blobs = []
        for tag in ("1", "2"):
            delta = str(tmp_path / f"d{tag}.dtc")
            dq = str(tmp_path / f"a{tag}.dq")
            assert main(["split", base, finetuned, delta]) == 0
            assert main(["compress", delta, dq, "--alpha", "4", "--group-size", "16",
                         "--k", "4", "--m", "4", "--seed", "9"]) == 0
            blobs.append((open(delta, "rb").read(), open(dq, "rb").read()))
        assert blobs[0] == blobs[1]

    def test_gen_fixtures_deterministic(self, tmp_path):
        a = str(tmp_path / "a")
        b = str(tmp_path / "b")
        assert main(["gen-fixtures", "--out", a, "--seed", "5"]) == 0
        assert main(["gen-fixtures", "--out", b, "--seed", "5"]) == 0
        for fname in ("base.dtc", "finetuned.dtc", "calib.dtc"):
            assert open(os.path.join(a, fname), "rb").read() == \
                open(os.path.join(b, fname), "rb").read()
