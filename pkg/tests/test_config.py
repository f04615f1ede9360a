"""Extraction configuration: width-set syntax, the flat key = value file
format, shipped presets, and parameter validation."""

from __future__ import annotations

import dataclasses

import pytest

from vesselect.config import (
    PRESETS,
    ExtractionConfig,
    format_widths,
    parse_config,
    parse_widths,
    read_config,
    serialize_config,
    write_config,
)


class TestWidthSyntax:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("4-8", (4, 5, 6, 7, 8)),
            ("3,5,8", (3, 5, 8)),
            ("7, 8, 9", (7, 8, 9)),
            ("2-4,9", (2, 3, 4, 9)),
            ("5", (5,)),
            ("", ()),
        ],
    )
    def test_parse(self, text, expected):
        assert parse_widths(text) == expected

    @pytest.mark.parametrize(
        "widths, expected",
        [
            ((4, 5, 6, 7, 8), "4-8"),
            ((3, 5, 8), "3,5,8"),
            ((2, 3, 4, 9), "2-4,9"),
            ((5,), "5"),
            ((), ""),
        ],
    )
    def test_format(self, widths, expected):
        assert format_widths(widths) == expected

    @pytest.mark.parametrize("widths", [(4, 5, 6, 7, 8), (3, 5, 8), (1,), (2, 9, 10)])
    def test_round_trip(self, widths):
        assert parse_widths(format_widths(widths)) == widths

    def test_bad_range_rejected(self):
        with pytest.raises(ValueError, match="bad width range"):
            parse_widths("8-4")

    def test_non_numeric_rejected(self):
        with pytest.raises(ValueError):
            parse_widths("4-x")


class TestFileFormat:
    def test_defaults_round_trip(self):
        cfg = ExtractionConfig()
        assert parse_config(serialize_config(cfg)) == cfg

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_round_trip(self, name):
        cfg = PRESETS[name]
        assert parse_config(serialize_config(cfg)) == cfg

    def test_custom_config_round_trips(self):
        cfg = ExtractionConfig(
            kind="retinal",
            widths=(3, 5, 9),
            guard_widths=(12, 13),
            alpha=0.25,
            t=0.125,
            strict_size_rule=True,
            map_mode="structural",
            clahe_clip=3.5,
            resize_target=256,
        )
        assert parse_config(serialize_config(cfg)) == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = PRESETS["drive"]
        path = tmp_path / "run.cfg"
        write_config(path, cfg)
        assert read_config(path) == cfg

    def test_comments_and_blanks_ignored(self):
        text = "\n# a comment\n\nt = 0.1  # trailing note\n\n"
        assert parse_config(text).t == 0.1

    def test_missing_keys_keep_base_values(self):
        base = PRESETS["sbvpi"]
        cfg = parse_config("alpha = 0.5\n", base=base)
        assert cfg.alpha == 0.5
        assert cfg.widths == base.widths
        assert cfg.t == base.t

    def test_unknown_key_rejected_with_line(self):
        with pytest.raises(ValueError, match="line 2.*unknown key"):
            parse_config("t = 0.1\nsigma = 3\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="expected 'key = value'"):
            parse_config("just some words\n")

    def test_bad_bool_rejected(self):
        with pytest.raises(ValueError, match="true or false"):
            parse_config("strict_size_rule = yes\n")

    def test_serialized_form_is_flat_key_value(self):
        lines = serialize_config(ExtractionConfig()).splitlines()
        assert lines[0].startswith("#")
        body = [ln for ln in lines if not ln.startswith("#")]
        # one line per field, every field present
        assert len(body) == len(dataclasses.fields(ExtractionConfig))
        for line in body:
            key, _, _ = line.partition(" = ")
            assert key.isidentifier()


class TestPresets:
    def test_shipped_parameter_sets(self):
        drive = PRESETS["drive"]
        assert drive.kind == "retinal"
        assert drive.widths == (7, 8, 9, 10, 11, 12)
        assert (drive.gamma_r, drive.gamma_s, drive.gamma_c) == (0.4, 0.7, 0.8)
        assert drive.t == 0.05

        sbvpi = PRESETS["sbvpi"]
        assert sbvpi.kind == "scleral"
        assert sbvpi.widths == (4, 5, 6, 7, 8)
        assert (sbvpi.gamma_r, sbvpi.gamma_s, sbvpi.gamma_c) == (0.7, 0.1, 0.9)
        assert sbvpi.t == 0.3

        fundus = PRESETS["fundus_highres"]
        assert fundus.kind == "retinal"
        assert fundus.widths == (7, 8, 9, 10, 11, 12)
        assert (fundus.gamma_r, fundus.gamma_s, fundus.gamma_c) == (0.9, 0.4, 0.5)
        assert fundus.t == 0.05

        eye = PRESETS["external_eye"]
        assert eye.kind == "scleral"
        assert eye.widths == (4, 5, 6, 7, 8)
        assert (eye.gamma_r, eye.gamma_s, eye.gamma_c) == (0.7, 0.7, 0.7)
        assert eye.t == 0.2

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_validate(self, name):
        PRESETS[name].validate()

    def test_presets_share_library_defaults_elsewhere(self):
        for cfg in PRESETS.values():
            assert cfg.alpha == 0.9
            assert cfg.beta == 0.5
            assert cfg.resize_target == 512


class TestValidation:
    def test_defaults_valid(self):
        ExtractionConfig().validate()

    @pytest.mark.parametrize(
        "overrides, message",
        [
            ({"kind": "xray"}, "kind"),
            ({"widths": ()}, "non-empty"),
            ({"widths": (0, 3)}, ">= 1"),
            ({"widths": (5, 4)}, "strictly increasing"),
            ({"widths": (4, 4, 5)}, "strictly increasing"),
            ({"guard_widths": (9, 8)}, "strictly increasing"),
            ({"widths": (4, 8), "guard_widths": (8, 9)}, "strictly exceed"),
            ({"widths": (4, 8), "guard_widths": (6,)}, "strictly exceed"),
            ({"alpha": 1.0}, "alpha"),
            ({"alpha": -0.1}, "alpha"),
            ({"beta": 0.0}, "positive"),
            ({"c_factor": -1.0}, "positive"),
            ({"gamma_r": -0.5}, "gamma_r"),
            ({"t": 0.0}, "t must"),
            ({"t": 1.5}, "t must"),
            ({"map_mode": "fancy"}, "map_mode"),
            ({"clahe_tiles": 0}, "clahe_tiles"),
            ({"clahe_clip": 0.0}, "clahe_clip"),
            ({"resize_target": 0}, "resize_target"),
            ({"min_segment_length": 0}, "min_segment_length"),
            ({"smooth_window": 4}, "odd"),
            ({"smooth_window": 0}, "odd"),
        ],
    )
    def test_bad_parameters_rejected(self, overrides, message):
        cfg = dataclasses.replace(ExtractionConfig(), **overrides)
        with pytest.raises(ValueError, match=message):
            cfg.validate()

    def test_guard_widths_above_max_accepted(self):
        cfg = dataclasses.replace(
            ExtractionConfig(), widths=(4, 5, 6), guard_widths=(9, 10)
        )
        cfg.validate()

    def test_parse_config_validates(self):
        with pytest.raises(ValueError, match="alpha"):
            parse_config("alpha = 1.0\n")
