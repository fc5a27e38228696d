"""Plain-text run configuration.

One ``key = value`` pair per line; ``#`` starts a comment; ``[section]``
headers are accepted and ignored so TOML-style files work for the flat keys
used here.  Values are parsed as JSON where possible (numbers, lists,
``true``/``false``, quoted strings) and kept as bare strings otherwise.
"""
from __future__ import annotations

import json
from pathlib import Path

from ..model import ModelParams, Segment, Torus

__all__ = ["ConfigError", "parse_config", "load_config", "params_from_config", "KNOWN_KEYS"]

KNOWN_KEYS = {
    "experiment": "experiment name",
    "N": "scale parameter",
    "L": "lattice size (torus sites, or segment half-width for geometry=segment)",
    "geometry": "torus (default) or segment",
    "alpha": "list of symmetric coefficients a_1..a_m",
    "gamma": "list of asymmetric coefficients g_1..g_m",
    "assumption2_constant": "constant in the asymmetry deviation threshold (default 1)",
    "T": "time horizon",
    "replicas": "number of independent replicas",
    "seed": "master seed (GLAB_SEED overrides)",
    "workers": "worker processes for replica loops (output does not depend on it)",
    "rho": "density (mean spin) of Bernoulli initial data",
    "vN": "override of the calibrated renormalisation constant",
}


class ConfigError(ValueError):
    pass


def _value(text: str):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if text[:1] in "'\"" and text[-1:] == text[:1]:
            return text[1:-1]
        return text


def parse_config(text: str) -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]") and "=" not in line):
            continue
        for token in _split_tokens(line):
            if "=" not in token:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, val = token.split("=", 1)
            cfg[key.strip()] = _value(val)
    return cfg


def _split_tokens(line: str) -> list:
    """A line holds one assignment, or several space-separated ``k=v`` tokens."""
    if " = " in line or line.count("=") <= 1:
        return [line]
    parts, depth, cur = [], 0, ""
    for ch in line:
        depth += ch in "[{"
        depth -= ch in "]}"
        if ch == " " and depth == 0:
            if cur:
                parts.append(cur)
            cur = ""
        else:
            cur += ch
    if cur:
        parts.append(cur)
    return parts


def load_config(path, overrides=()) -> dict:
    cfg = parse_config(Path(path).read_text())
    for item in overrides:
        cfg.update(parse_config(item))
    return cfg


def params_from_config(cfg: dict) -> ModelParams:
    try:
        N = int(cfg["N"])
    except KeyError:
        raise ConfigError("missing N") from None
    alpha = cfg.get("alpha", [1.0])
    gamma = cfg.get("gamma", [0.0] * len(alpha))
    L = int(cfg.get("L", N))
    if cfg.get("geometry", "torus") == "segment":
        geo = Segment.centered(L)
    else:
        geo = Torus(L)
    return ModelParams(N, tuple(alpha), tuple(gamma), geo, float(cfg.get("assumption2_constant", 1.0)))
