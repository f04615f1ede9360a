"""End-to-end command-line workflows: synth -> extract -> eval ->
tortuosity -> compare, plus exit codes and error reporting."""

from __future__ import annotations

import json
import math
import statistics

import numpy as np
import pytest

from vesselect.cli import main
from vesselect.metrics import ConfusionCounts, mcc
from vesselect.raster import load_image, load_mask, save_mask
from vesselect.tortuosity import INDEX_IDS


def data_rows(text: str) -> list[list[str]]:
    return [ln.split(",") for ln in text.splitlines() if ln and not ln.startswith("#")]


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    """One synth + extract run shared by the pipeline-facing tests."""
    root = tmp_path_factory.mktemp("cli_workflow")
    # one real vessel plus a streak that is visible in the image but absent
    # from the probability map: the extractor must keep the former only
    spec = {
        "size": 256,
        "kind": "scleral",
        "noise": 0.01,
        "seed": 3,
        "tubes": [
            {
                "shape": "sine", "width": 5, "start": [20, 100], "end": [236, 100],
                "amplitude": 10.0, "periods": 2.0,
            },
            {
                "shape": "line", "width": 5, "start": [20, 190], "end": [236, 190],
                "in_probability": False,
            },
        ],
    }
    spec_path = root / "phantom.json"
    spec_path.write_text(json.dumps(spec))
    synth_dir = root / "synth"
    assert main(["synth", str(spec_path), str(synth_dir)]) == 0

    cfg_path = root / "run.cfg"
    cfg_path.write_text("resize_target = 256\nwidths = 4-6\nalpha = 0.0\n")
    mask_path = root / "pred" / "phantom.png"
    mask_path.parent.mkdir()
    debug_dir = root / "debug"
    code = main(
        [
            "extract",
            str(synth_dir / "phantom.png"),
            str(synth_dir / "probability.png"),
            "--config", str(cfg_path),
            "--out", str(mask_path),
            "--debug", str(debug_dir),
        ]
    )
    assert code == 0
    return {
        "root": root,
        "spec_path": spec_path,
        "synth_dir": synth_dir,
        "mask_path": mask_path,
        "debug_dir": debug_dir,
    }


class TestSynth:
    def test_outputs_exist(self, workflow):
        synth_dir = workflow["synth_dir"]
        for name in ("phantom.png", "probability.png", "truth_all.png", "truth_w5.png"):
            assert (synth_dir / name).is_file(), name
        img = load_image(str(synth_dir / "phantom.png"))
        assert img.shape == (256, 256, 3)

    def test_bad_spec_fails_cleanly(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        assert main(["synth", str(bad), str(tmp_path / "out")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("vesselect synth: error:")
        assert "bad phantom description" in err

    def test_missing_spec_fails(self, tmp_path, capsys):
        assert main(["synth", str(tmp_path / "none.json"), str(tmp_path / "out")]) == 1
        assert "not found" in capsys.readouterr().err


class TestExtract:
    def test_mask_matches_truth(self, workflow):
        pred = load_mask(str(workflow["mask_path"]))
        truth = load_mask(str(workflow["synth_dir"] / "truth_all.png"))
        assert pred.shape == truth.shape
        inter = int((pred & truth).sum())
        union = int((pred | truth).sum())
        assert inter / union > 0.9  # measured 0.976; quality is gated elsewhere

    def test_image_only_streak_excluded(self, workflow):
        # the second tube exists in the image but not the probability map;
        # no extracted pixel may fall in its band
        pred = load_mask(str(workflow["mask_path"]))
        assert int(pred[183:198, :].sum()) == 0

    def test_stage_dumps_named_by_letter(self, workflow):
        names = {p.name for p in workflow["debug_dir"].iterdir()}
        assert {"stage_C.png", "stage_I.png"} <= names
        assert {"stage_D_w04.png", "stage_D_w05.png", "stage_D_w06.png"} <= names

    def test_widths_flag_overrides_preset(self, workflow, tmp_path, capsys):
        cfg = tmp_path / "small.cfg"
        cfg.write_text("resize_target = 256\n")
        out = tmp_path / "m.png"
        code = main(
            [
                "extract",
                str(workflow["synth_dir"] / "phantom.png"),
                str(workflow["synth_dir"] / "probability.png"),
                "--preset", "sbvpi",
                "--config", str(cfg),
                "--widths", "5-6",
                "--out", str(out),
            ]
        )
        assert code == 0
        assert "widths (5, 6)" in capsys.readouterr().out
        assert out.is_file()

    def test_missing_probability_named(self, workflow, tmp_path, capsys):
        missing = tmp_path / "nothing.png"
        code = main(
            ["extract", str(workflow["synth_dir"] / "phantom.png"), str(missing)]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("vesselect extract: error:")
        assert "probability map not found" in err
        assert str(missing) in err

    def test_unknown_preset_rejected(self, workflow, capsys):
        code = main(
            [
                "extract",
                str(workflow["synth_dir"] / "phantom.png"),
                str(workflow["synth_dir"] / "probability.png"),
                "--preset", "imaginary",
            ]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "unknown preset" in err and "sbvpi" in err

    def test_bad_widths_rejected(self, workflow, capsys):
        code = main(
            [
                "extract",
                str(workflow["synth_dir"] / "phantom.png"),
                str(workflow["synth_dir"] / "probability.png"),
                "--widths", "8-4",
            ]
        )
        assert code == 1
        assert "bad width range" in capsys.readouterr().err

    def test_mismatched_probability_stage_tagged(self, workflow, tmp_path, capsys):
        small = tmp_path / "small_prob.png"
        save_mask(str(small), np.zeros((40, 40), dtype=bool))
        cfg = tmp_path / "c.cfg"
        cfg.write_text("resize_target = 256\n")
        code = main(
            [
                "extract",
                str(workflow["synth_dir"] / "phantom.png"),
                str(small),
                "--config", str(cfg),
            ]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("vesselect extract: error:")
        assert "probability map" in err


class TestEval:
    def test_perfect_prediction_all_ones(self, workflow, tmp_path, capsys):
        truth_dir = tmp_path / "truth"
        truth_dir.mkdir()
        truth = load_mask(str(workflow["synth_dir"] / "truth_all.png"))
        save_mask(str(truth_dir / "phantom.png"), truth)
        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        save_mask(str(pred_dir / "phantom.png"), truth)
        assert main(["eval", str(pred_dir), str(truth_dir)]) == 0
        rows = data_rows(capsys.readouterr().out)
        byname = {r[0]: r for r in rows}
        assert [float(v) for v in byname["phantom"][1:]] == [1.0, 1.0, 1.0]
        assert [float(v) for v in byname["mean"][1:]] == [1.0, 1.0, 1.0]
        assert [float(v) for v in byname["stddev"][1:]] == [0.0, 0.0, 0.0]

    def test_known_mcc_pair_summary(self, tmp_path, capsys):
        # truth: first 100 of 200 pixels; predictions built for exact
        # marginals S = P = 1/2, where MCC = tp/50 - 1
        truth = np.zeros(200, dtype=bool)
        truth[:100] = True
        preds = {}
        for name, tp in (("img1", 85), ("img2", 95)):  # MCC 0.7 and 0.9
            pred = np.zeros(200, dtype=bool)
            pred[:tp] = True
            pred[100 : 100 + (100 - tp)] = True
            counts = ConfusionCounts(tp=tp, tn=tp, fp=100 - tp, fn=100 - tp)
            assert mcc(counts) == pytest.approx(tp / 50 - 1, abs=1e-12)
            preds[name] = pred.reshape(10, 20)
        truth_dir = tmp_path / "truth"
        pred_dir = tmp_path / "pred"
        truth_dir.mkdir(), pred_dir.mkdir()
        for name, pred in preds.items():
            save_mask(str(truth_dir / f"{name}.png"), truth.reshape(10, 20))
            save_mask(str(pred_dir / f"{name}.png"), pred)
        out = tmp_path / "table.csv"
        assert main(["eval", str(pred_dir), str(truth_dir), "--out", str(out)]) == 0
        assert "wrote" in capsys.readouterr().out
        text = out.read_text()
        assert "population standard deviation" in text
        byname = {r[0]: r for r in data_rows(text)}
        mccs = [float(byname["img1"][3]), float(byname["img2"][3])]
        assert mccs == pytest.approx([0.7, 0.9], abs=1e-9)
        assert float(byname["mean"][3]) == pytest.approx(0.8, abs=1e-9)
        assert float(byname["stddev"][3]) == pytest.approx(0.1, abs=1e-9)
        # summary rows are exactly the population statistics of the column
        for col in (1, 2, 3):
            vals = [float(byname["img1"][col]), float(byname["img2"][col])]
            assert float(byname["mean"][col]) == pytest.approx(
                statistics.fmean(vals), abs=1e-9
            )
            assert float(byname["stddev"][col]) == pytest.approx(
                statistics.pstdev(vals), abs=1e-9
            )

    def test_unmatched_stems_listed(self, tmp_path, capsys):
        truth_dir = tmp_path / "truth"
        pred_dir = tmp_path / "pred"
        truth_dir.mkdir(), pred_dir.mkdir()
        blob = np.zeros((8, 8), dtype=bool)
        blob[2:5, 2:5] = True
        save_mask(str(pred_dir / "a.png"), blob)
        save_mask(str(pred_dir / "b.png"), blob)
        save_mask(str(truth_dir / "b.png"), blob)
        save_mask(str(truth_dir / "c.png"), blob)
        assert main(["eval", str(pred_dir), str(truth_dir)]) == 1
        err = capsys.readouterr().err
        assert "unmatched file stems" in err
        assert "predictions without truth: a" in err
        assert "truths without prediction: c" in err

    def test_region_restricts_evaluation(self, tmp_path, capsys):
        truth = np.zeros((10, 10), dtype=bool)
        truth[:, :5] = True
        pred = np.zeros((10, 10), dtype=bool)
        pred[:, :5] = True
        pred[0, 9] = True  # false positive outside the region
        region = np.zeros((10, 10), dtype=bool)
        region[:, :8] = True
        for sub in ("pred", "truth", "region"):
            (tmp_path / sub).mkdir()
        save_mask(str(tmp_path / "pred" / "x.png"), pred)
        save_mask(str(tmp_path / "truth" / "x.png"), truth)
        save_mask(str(tmp_path / "region" / "x.png"), region)
        code = main(
            [
                "eval", str(tmp_path / "pred"), str(tmp_path / "truth"),
                "--region-dir", str(tmp_path / "region"),
            ]
        )
        assert code == 0
        rows = {r[0]: r for r in data_rows(capsys.readouterr().out)}
        assert [float(v) for v in rows["x"][1:]] == [1.0, 1.0, 1.0]


def straight_bar_mask() -> np.ndarray:
    mask = np.zeros((64, 96), dtype=bool)
    mask[30:33, 8:88] = True
    return mask


def sine_tube_mask() -> np.ndarray:
    # gentle wave: a steep sine digitizes into straight diagonal runs with
    # zero curvature, so keep the slope well under 1
    xs = np.arange(8, 88)
    centers = (32 + 6 * np.sin(2 * np.pi * (xs - 8) / 80)).round().astype(int)
    mask = np.zeros((64, 96), dtype=bool)
    for x, cy in zip(xs, centers):
        mask[cy - 1 : cy + 2, x] = True
    return mask


class TestTortuosity:
    @pytest.fixture()
    def mask_dir(self, tmp_path):
        d = tmp_path / "masks"
        d.mkdir()
        save_mask(str(d / "straight.png"), straight_bar_mask())
        save_mask(str(d / "wavy.png"), sine_tube_mask())
        save_mask(str(d / "empty.png"), np.zeros((32, 32), dtype=bool))
        return d

    def test_reports_and_aggregates(self, mask_dir, tmp_path, capsys):
        out_dir = tmp_path / "reports"
        code = main(["tortuosity", str(mask_dir), "--out-dir", str(out_dir)])
        assert code == 0
        assert "analyzed 3 masks" in capsys.readouterr().out
        for stem in ("straight", "wavy", "empty"):
            assert (out_dir / f"{stem}_tortuosity.csv").is_file()
        rows = {r[0]: r for r in data_rows((out_dir / "aggregates.csv").read_text())}
        # straight bar: every index zero
        straight = rows["straight"]
        assert int(straight[1]) >= 1
        for value in straight[3:]:
            assert abs(float(value)) <= 1e-6
        # empty mask: zero segments, empty value cells, not a failure
        assert rows["empty"][1] == "0"
        assert all(cell == "" for cell in rows["empty"][3:])
        # the wavy tube is strictly more tortuous than the straight bar
        tcal_col = 3 + INDEX_IDS.index("tcal")
        assert float(rows["wavy"][tcal_col]) > float(straight[tcal_col])
        arc_chord_col = 3 + INDEX_IDS.index("arc_chord")
        assert float(rows["wavy"][arc_chord_col]) > 0.0

    def test_subject_map_averages_images(self, mask_dir, tmp_path):
        subject_map = tmp_path / "subjects.txt"
        subject_map.write_text(
            "# stem,subject\nstraight,s1\nwavy,s1\nempty,s2\n"
        )
        out_dir = tmp_path / "reports"
        code = main(
            [
                "tortuosity", str(mask_dir),
                "--out-dir", str(out_dir),
                "--subject-map", str(subject_map),
            ]
        )
        assert code == 0
        aggregates = {r[0]: r for r in data_rows((out_dir / "aggregates.csv").read_text())}
        subjects = {r[0]: r for r in data_rows((out_dir / "subjects.csv").read_text())}
        # s1 mean of the two contributing images, per index
        assert subjects["s1"][1] == "2"
        for i, _ in enumerate(INDEX_IDS):
            expected = statistics.fmean(
                [float(aggregates["straight"][3 + i]), float(aggregates["wavy"][3 + i])]
            )
            # both files print 9 significant digits
            assert float(subjects["s1"][2 + i]) == pytest.approx(expected, rel=1e-7, abs=1e-9)
        # s2 only maps the empty mask: no contributing images
        assert subjects["s2"][1] == "0"

    def test_subject_map_unknown_stem_rejected(self, mask_dir, tmp_path, capsys):
        subject_map = tmp_path / "subjects.txt"
        subject_map.write_text("straight,s1\nmystery,s2\n")
        code = main(
            ["tortuosity", str(mask_dir), "--subject-map", str(subject_map),
             "--out-dir", str(tmp_path / "r")]
        )
        assert code == 1
        assert "mystery" in capsys.readouterr().err

    def test_malformed_subject_map_rejected(self, mask_dir, tmp_path, capsys):
        subject_map = tmp_path / "subjects.txt"
        subject_map.write_text("straight;s1\n")
        code = main(
            ["tortuosity", str(mask_dir), "--subject-map", str(subject_map),
             "--out-dir", str(tmp_path / "r")]
        )
        assert code == 1
        assert "expected 'image_stem,subject'" in capsys.readouterr().err

    def test_jobs_equivalent(self, mask_dir, tmp_path):
        out1 = tmp_path / "r1"
        out4 = tmp_path / "r4"
        assert main(["tortuosity", str(mask_dir), "--out-dir", str(out1)]) == 0
        assert main(["tortuosity", str(mask_dir), "--out-dir", str(out4), "--jobs", "4"]) == 0
        assert (out1 / "aggregates.csv").read_text() == (out4 / "aggregates.csv").read_text()

    def test_debug_dumps_skeleton(self, mask_dir, tmp_path):
        out_dir = tmp_path / "r"
        debug = tmp_path / "dbg"
        code = main(
            ["tortuosity", str(mask_dir), "--out-dir", str(out_dir), "--debug", str(debug)]
        )
        assert code == 0
        skel = load_mask(str(debug / "straight_stage_J.png"))
        assert skel.sum() > 0
        assert skel.sum() < straight_bar_mask().sum()


def groups_file(tmp_path, rows: list[str], header: str = "# columns: group,image,tcal"):
    path = tmp_path / "groups.csv"
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


class TestCompare:
    def test_disjoint_groups_exact_p(self, tmp_path, capsys):
        rows = [f"a,i{k},{k}" for k in range(1, 6)]
        rows += [f"b,j{k},{k + 10}" for k in range(1, 6)]
        path = groups_file(tmp_path, rows)
        assert main(["compare", str(path)]) == 0
        out_rows = data_rows(capsys.readouterr().out)
        assert len(out_rows) == 1
        row = out_rows[0]
        assert row[0] == "tcal"
        assert (row[1], row[2]) == ("a", "b")
        assert float(row[7]) == 0.0  # U: complete separation
        assert float(row[8]) == pytest.approx(2.0 / math.comb(10, 5), rel=1e-8)
        assert row[9] == "exact"

    def test_identical_groups_p_one(self, tmp_path, capsys):
        rows = [f"a,i{k},{k}" for k in range(1, 7)]
        rows += [f"b,j{k},{k}" for k in range(1, 7)]
        path = groups_file(tmp_path, rows)
        assert main(["compare", str(path)]) == 0
        row = data_rows(capsys.readouterr().out)[0]
        assert float(row[8]) == 1.0
        assert row[9] == "normal"  # tied pooled values

    def test_medians_reported(self, tmp_path, capsys):
        rows = ["a,i1,1", "a,i2,3", "a,i3,5", "b,j1,10", "b,j2,20", "b,j3,30"]
        path = groups_file(tmp_path, rows)
        assert main(["compare", str(path)]) == 0
        row = data_rows(capsys.readouterr().out)[0]
        assert float(row[5]) == 3.0
        assert float(row[6]) == 20.0

    def test_index_filter_and_absence(self, tmp_path, capsys):
        header = "# columns: group,image,tcal,eti"
        rows = ["a,i1,1,4", "a,i2,2,5", "a,i3,3,6", "b,j1,7,1", "b,j2,8,2", "b,j3,9,3"]
        path = groups_file(tmp_path, rows, header)
        assert main(["compare", str(path), "--index", "eti"]) == 0
        out_rows = data_rows(capsys.readouterr().out)
        assert [r[0] for r in out_rows] == ["eti"]
        assert main(["compare", str(path), "--index", "curliness"]) == 1
        err = capsys.readouterr().err
        assert "'curliness'" in err and "available: tcal, eti" in err

    def test_spearman_paired_mode(self, tmp_path, capsys):
        header = "# columns: group,image,tcal"
        rows = [f"retina,i{k},{k}" for k in range(1, 6)]
        rows += [f"sclera,i{k},{k * k}" for k in range(1, 6)]  # same ids, monotone
        path = groups_file(tmp_path, rows, header)
        assert main(["compare", str(path), "--spearman"]) == 0
        row = data_rows(capsys.readouterr().out)[0]
        assert row[0] == "tcal"
        assert int(row[1]) == 5
        assert float(row[2]) == 1.0
        assert float(row[3]) == 0.0

    def test_spearman_requires_matched_ids(self, tmp_path, capsys):
        header = "# columns: group,image,tcal"
        rows = ["a,i1,1", "a,i2,2", "a,i3,3", "b,i1,1", "b,i2,2", "b,other,3"]
        path = groups_file(tmp_path, rows, header)
        assert main(["compare", str(path), "--spearman"]) == 1
        err = capsys.readouterr().err
        assert "without a value in both groups" in err
        assert "i3" in err and "other" in err

    def test_spearman_needs_exactly_two_groups(self, tmp_path, capsys):
        header = "# columns: group,image,tcal"
        rows = ["a,i1,1", "a,i2,2", "b,i1,3", "b,i2,4", "c,i1,5", "c,i2,6"]
        path = groups_file(tmp_path, rows, header)
        assert main(["compare", str(path), "--spearman"]) == 1
        assert "exactly 2 groups" in capsys.readouterr().err

    def test_single_group_rejected(self, tmp_path, capsys):
        path = groups_file(tmp_path, ["a,i1,1", "a,i2,2"])
        assert main(["compare", str(path)]) == 1
        assert "at least 2 groups" in capsys.readouterr().err

    def test_bad_number_rejected(self, tmp_path, capsys):
        path = groups_file(tmp_path, ["a,i1,fast", "b,j1,2"])
        assert main(["compare", str(path)]) == 1
        assert "bad number 'fast'" in capsys.readouterr().err

    def test_empty_cells_skipped_and_group_without_values_rejected(self, tmp_path, capsys):
        # empty value cells (images with no segments) drop out; a group left
        # with no values for the index is an error naming the group
        path = groups_file(tmp_path, ["a,i1,", "a,i2,1", "b,j1,", "b,j2,"])
        assert main(["compare", str(path)]) == 1
        err = capsys.readouterr().err
        assert "'b'" in err and "no values" in err
