"""Experiment configs in a small line-oriented key=value dialect.

The grammar is deliberately tiny: one `key=value` per line, `#` starts a
comment, lists are comma-separated.  Parsing never stops at the first
problem; every unknown key, bad value, and duplicate in the text is
collected and reported together, with line numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import tree

KINDS = ("simulate", "commutation", "theta", "alpha", "trace", "resample",
         "chains", "audit", "tailcheck", "neverflip")

MODES = ("median", "discrete")
BOUNDARIES = ("initial", "low", "high", "free")


class ConfigError(ValueError):
    """Every problem found in one config text, as one exception."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, fully specified.

    `horizon` is the run length T; the certifying kinds (theta, alpha)
    read it as the proxy time T*.  `times` is the snapshot grid for
    chains and the pair of horizons for neverflip; empty means the
    kind's default.  Addresses use the tree's digit strings, the root
    being the empty string.
    """

    kind: str
    seed: int = 0
    replicas: int = 1000
    radius: int = 12
    horizon: float = 8.0
    p: float = 0.5
    q: float = 0.5
    depth: int = 8
    margin: int = 7
    budget: float = 0.25
    epsilon: float = 0.02
    window: int = 4
    k: int = 20
    direction: int = 0
    mode: str = "median"
    boundary: str = "initial"
    target: str = ""
    resample_clock: bool = False
    certify: tuple = ()
    p_values: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    separations: tuple = (2, 4, 6, 8)
    times: tuple = ()


def _int(text: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"expected a number, got {text!r}") from None


_BOOL_WORDS = {"true": True, "1": True, "false": False, "0": False}


def _bool(text: str) -> bool:
    try:
        return _BOOL_WORDS[text.lower()]
    except KeyError:
        raise ValueError(f"expected true or false, got {text!r}") from None


def _address(text: str) -> str:
    tree.key_of(text)  # raises AddressError on non-addresses
    return text


def _addresses(text: str) -> tuple:
    return tuple(_address(part.strip()) for part in text.split(","))


def _floats(text: str) -> tuple:
    return tuple(_float(part.strip()) for part in text.split(","))


def _ints(text: str) -> tuple:
    return tuple(_int(part.strip()) for part in text.split(","))


def _at_least(lo):
    return lambda v: None if v >= lo else f"must be >= {lo}, got {v}"


def _in_unit(v):
    return None if 0.0 <= v <= 1.0 else f"must be in [0, 1], got {v}"


def _ok(v):
    return None


def _choice(options):
    return lambda v: None if v in options else "must be one of " + ", ".join(options)


def _unit_grid(vs):
    if not vs:
        return "needs at least one value"
    bad = [v for v in vs if not 0.0 <= v <= 1.0]
    return f"values must be in [0, 1], got {bad[0]}" if bad else None


def _even_separations(vs):
    if not vs:
        return "needs at least one value"
    bad = [v for v in vs if v < 2 or v % 2]
    return f"separations must be even and >= 2, got {bad[0]}" if bad else None


def _time_grid(vs):
    if any(v < 0 for v in vs):
        return "times must be >= 0"
    if list(vs) != sorted(vs):
        return "times must be nondecreasing"
    return None


# key -> (value parser, range check)
_RULES = {
    "kind": (str, _choice(KINDS)),
    "seed": (_int, _at_least(0)),
    "replicas": (_int, _at_least(1)),
    "radius": (_int, _at_least(0)),
    "horizon": (_float, _at_least(0.0)),
    "p": (_float, _in_unit),
    "q": (_float, _in_unit),
    "depth": (_int, _at_least(1)),
    "margin": (_int, _at_least(0)),
    "budget": (_float, _in_unit),
    "epsilon": (_float, lambda v: None if 0.0 < v <= 0.25 else
                f"must be in (0, 0.25], got {v}"),
    "window": (_int, _at_least(1)),
    "k": (_int, _at_least(1)),
    "direction": (_int, lambda v: None if v in (0, 1, 2) else
                  f"must be 0, 1, or 2, got {v}"),
    "mode": (str, _choice(MODES)),
    "boundary": (str, _choice(BOUNDARIES)),
    "target": (_address, _ok),
    "resample_clock": (_bool, _ok),
    "certify": (_addresses, _ok),
    "p_values": (_floats, _unit_grid),
    "separations": (_ints, _even_separations),
    "times": (_floats, _time_grid),
}


KEYS = tuple(_RULES)


def parse_config(text: str, *, default_kind: str | None = None) -> ExperimentConfig:
    """Parse and validate; raises ConfigError carrying all problems at once.

    `default_kind` fills in a missing kind line (the CLI passes its
    subcommand); without it, kind is required.
    """
    values: dict[str, object] = {}
    seen: dict[str, int] = {}
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, rhs = line.partition("=")
        key, rhs = key.strip(), rhs.strip()
        if not eq:
            errors.append(f"line {lineno}: expected key=value, got {line!r}")
            continue
        if key not in _RULES:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            errors.append(f"line {lineno}: duplicate key {key!r}, "
                          f"first set on line {seen[key]}")
            continue
        seen[key] = lineno
        parser, check = _RULES[key]
        try:
            value = parser(rhs)
        except ValueError as err:
            errors.append(f"line {lineno}: {key}: {err}")
            continue
        problem = check(value)
        if problem:
            errors.append(f"line {lineno}: {key} {problem}")
            continue
        values[key] = value
    if "kind" not in seen:
        if default_kind is not None:
            values["kind"] = default_kind
        else:
            errors.append("missing required key 'kind'")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(**values)


def apply_overrides(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Re-validate flag values through the same rule table as file keys."""
    values: dict[str, object] = {}
    errors: list[str] = []
    for key, rhs in overrides.items():
        parser, check = _RULES[key]
        try:
            value = parser(rhs)
        except ValueError as err:
            errors.append(f"--{key.replace('_', '-')}: {err}")
            continue
        problem = check(value)
        if problem:
            errors.append(f"--{key.replace('_', '-')} {problem}")
            continue
        values[key] = value
    if errors:
        raise ConfigError(errors)
    return replace(config, **values)
