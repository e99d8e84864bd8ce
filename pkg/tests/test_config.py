"""Config dialect: one key=value per line, every problem reported at once."""

import pytest

from medtree import config
from medtree.config import ConfigError, ExperimentConfig, apply_overrides, parse_config

GOOD = """\
# consensus curve at moderate depth
kind = theta
seed = 7
replicas = 2000
horizon = 4.0
radius = 14
budget = 0.25
"""


class TestParseConfig:
    def test_full_example(self):
        cfg = parse_config(GOOD)
        assert cfg.kind == "theta"
        assert cfg.seed == 7
        assert cfg.replicas == 2000
        assert cfg.horizon == 4.0
        assert cfg.radius == 14
        assert cfg.budget == 0.25
        # untouched keys keep their defaults
        assert cfg.p == 0.5
        assert cfg.mode == "median"

    def test_comments_and_blank_lines_are_skipped(self):
        cfg = parse_config("kind=simulate\n\n  # whole-line comment\np=0.3 # trailing\n")
        assert cfg.p == 0.3

    def test_negative_replicas_is_named(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("kind=theta\nreplicas=-1\n")
        assert exc.value.errors == ["line 2: replicas must be >= 1, got -1"]

    def test_duplicate_cites_both_lines(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("kind=theta\nseed=1\nseed=2\n")
        assert exc.value.errors == ["line 3: duplicate key 'seed', first set on line 2"]

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("kind=theta\ntemperature=0\n")
        assert "line 2: unknown key 'temperature'" in exc.value.errors

    def test_all_problems_collected_in_one_pass(self):
        text = "kind=theta\nreplicas=abc\nq=1.5\nwhat=ever\nreplicas=3\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        msgs = exc.value.errors
        assert len(msgs) == 4
        assert any("expected an integer" in m for m in msgs)
        assert any("q must be in [0, 1]" in m for m in msgs)
        assert any("unknown key" in m for m in msgs)
        assert any("duplicate key 'replicas'" in m for m in msgs)

    def test_missing_kind_is_an_error(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("seed=1\n")
        assert "missing required key 'kind'" in exc.value.errors

    def test_default_kind_fills_the_gap(self):
        cfg = parse_config("seed=1\n", default_kind="trace")
        assert cfg.kind == "trace"

    def test_explicit_kind_beats_the_default(self):
        cfg = parse_config("kind=audit\n", default_kind="trace")
        assert cfg.kind == "audit"

    def test_bad_kind_value(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("kind=annealing\n")
        assert any("must be one of" in m for m in exc.value.errors)

    def test_line_without_equals(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("kind=theta\njust words\n")
        assert any("expected key=value" in m for m in exc.value.errors)


class TestValueShapes:
    def test_booleans(self):
        for word, want in [("true", True), ("1", True), ("False", False), ("0", False)]:
            cfg = parse_config(f"kind=resample\nresample_clock={word}\n")
            assert cfg.resample_clock is want
        with pytest.raises(ConfigError):
            parse_config("kind=resample\nresample_clock=yes\n")

    def test_address_lists(self):
        cfg = parse_config("kind=simulate\ncertify=0, 10, 211\n")
        assert cfg.certify == ("0", "10", "211")

    def test_empty_list_entry_means_the_root(self):
        cfg = parse_config("kind=simulate\ncertify=\n")
        assert cfg.certify == ("",)

    def test_bad_address_rejected(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("kind=simulate\ntarget=3\n")
        assert any("target" in m for m in exc.value.errors)

    def test_p_values_stay_in_the_unit_interval(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("kind=commutation\np_values=0.2,1.7\n")
        assert any("must be in [0, 1], got 1.7" in m for m in exc.value.errors)

    def test_separations_must_be_even(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("kind=alpha\nseparations=2,3\n")
        assert any("even" in m for m in exc.value.errors)

    def test_times_must_be_sorted(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("kind=chains\ntimes=4,2\n")
        assert any("nondecreasing" in m for m in exc.value.errors)
        cfg = parse_config("kind=chains\ntimes=0,1,2,4\n")
        assert cfg.times == (0.0, 1.0, 2.0, 4.0)

    def test_epsilon_band(self):
        with pytest.raises(ConfigError):
            parse_config("kind=theta\nepsilon=0.3\n")
        with pytest.raises(ConfigError):
            parse_config("kind=theta\nepsilon=0\n")
        assert parse_config("kind=theta\nepsilon=0.25\n").epsilon == 0.25

    def test_direction_choices(self):
        assert parse_config("kind=alpha\ndirection=2\n").direction == 2
        with pytest.raises(ConfigError):
            parse_config("kind=alpha\ndirection=5\n")


class TestOverrides:
    def test_overrides_revalidate(self):
        cfg = parse_config("kind=theta\n")
        out = apply_overrides(cfg, {"replicas": "5000", "p": "0.25"})
        assert out.replicas == 5000
        assert out.p == 0.25
        assert out.kind == "theta"

    def test_bad_override_named_as_a_flag(self):
        cfg = parse_config("kind=theta\n")
        with pytest.raises(ConfigError) as exc:
            apply_overrides(cfg, {"replicas": "-2"})
        assert exc.value.errors == ["--replicas must be >= 1, got -2"]

    def test_underscore_keys_print_with_dashes(self):
        cfg = parse_config("kind=resample\n")
        with pytest.raises(ConfigError) as exc:
            apply_overrides(cfg, {"resample_clock": "maybe"})
        assert exc.value.errors[0].startswith("--resample-clock:")

    def test_original_config_is_untouched(self):
        cfg = parse_config("kind=theta\nseed=3\n")
        apply_overrides(cfg, {"seed": "9"})
        assert cfg.seed == 3


class TestSurface:
    def test_every_field_has_a_rule(self):
        import dataclasses
        fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
        assert fields == set(config.KEYS)

    def test_kinds_are_the_cli_surface(self):
        assert len(config.KINDS) == 10
        assert "theta" in config.KINDS and "neverflip" in config.KINDS
