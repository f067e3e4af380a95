"""Run configuration: sectioned ``key = value`` files with typed, validated keys.

Precedence, lowest first: built-in defaults, the config file, environment
variables ``LATENTMOL_<SECTION>__<KEY>``, command-line flags ``--section.key``.
"""

from __future__ import annotations

import configparser
import io
import os
import sys

ENV_PREFIX = "LATENTMOL_"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(cast):
    def parse(text: str) -> tuple:
        text = text.strip()
        return tuple(cast(x.strip()) for x in text.split(",")) if text else ()

    return parse


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


INT, FLOAT, STR, BOOL = int, float, str, _bool
INTS, FLOATS, STRS = _list(int), _list(float), _list(str)

_ECHO = f"{sys.executable} -m latentmol.echo_oracle --mode affinity"

# section -> key -> (parser, default)
SCHEMA = {
    "model": {
        "n": (INT, 72), "d": (INT, 19), "m": (INT, 64), "embedding": (INT, 64),
        "hidden": (INTS, (512, 256, 256, 256)),
    },
    "train": {
        "epochs": (INT, 18), "lr": (FLOAT, 1e-3), "batch_size": (INT, 32), "seed": (INT, 0),
        "recon_weight": (FLOAT, 0.9), "kl_weight": (FLOAT, 0.1),
        "corpus_size": (INT, 5000), "corpus_seed": (INT, 0),
    },
    "predictor": {
        "oracle": (STR, "plogp"), "mode": (STR, "decoded"), "dataset_size": (INT, 5000),
        "epochs": (INT, 30), "lr": (FLOAT, 1e-3), "batch_size": (INT, 64), "width": (INT, 128),
        "seed": (INT, 0), "holdout": (FLOAT, 0.1),
    },
    "optimize": {
        "steps": (INT, 1000), "lr": (FLOAT, 0.1), "restarts": (INT, 200), "seed": (INT, 0),
        "weights": (FLOATS, (1.0,)), "directions": (STRS, ("maximize",)),
        "mask_weight": (FLOAT, 1000.0), "batch_size": (INT, 256),
    },
    "filter": {
        "qed_min": (FLOAT, 0.4), "sa_max": (FLOAT, 5.5), "ring_sizes": (INTS, (5, 6)),
    },
    "oracle": {
        "command": (STR, _ECHO), "name": (STR, "affinity"), "direction": (STR, "minimize"),
        "timeout": (FLOAT, 60.0), "max_in_flight": (INT, 8), "cache": (BOOL, True),
    },
    "sample": {"count": (INT, 1000), "seed": (INT, 0)},
    "bench": {
        "k": (INT, 1000), "seed": (INT, 0), "count": (INT, 200), "starts": (INT, 50),
        "deltas": (FLOATS, (0.0, 0.2, 0.4, 0.6)), "lo": (FLOAT, -2.5), "hi": (FLOAT, -2.0),
        "fixed_positions": (INTS, (0, 1, 2, 3, 4)), "direction": (STR, "maximize"),
        "affinity_mode": (STR, "multi"), "finetune_top": (INT, 10),
    },
    "paths": {
        "workdir": (STR, "."), "corpus": (STR, ""), "vae": (STR, ""),
        "predictors": (STRS, ()), "input": (STR, ""),
    },
}

CHOICES = {
    ("predictor", "mode"): ("decoded", "latent"),
    ("oracle", "direction"): ("maximize", "minimize"),
    ("bench", "direction"): ("maximize", "minimize"),
    ("bench", "affinity_mode"): ("single", "multi"),
}


class RunConfig:
    """Typed settings keyed by ``(section, key)``."""

    def __init__(self, values: dict | None = None):
        self.values = {(s, k): default for s, keys in SCHEMA.items() for k, (_, default) in keys.items()}
        if values:
            for (s, k), v in values.items():
                self.set(s, k, v)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def __getitem__(self, item):
        return self.values[item]

    def get(self, section: str, key: str):
        return self.values[(section, key)]

    def section(self, section: str) -> dict:
        return {k: v for (s, k), v in self.values.items() if s == section}

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key: {section}.{key}")
        parser, _ = SCHEMA[section][key]
        if isinstance(value, str):
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from None
        allowed = CHOICES.get((section, key))
        if allowed and value not in allowed:
            raise ConfigError(f"bad value for {section}.{key}: {value!r} not in {allowed}")
        self.values[(section, key)] = value

    def serialize(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for s in SCHEMA:
            cp[s] = {k: _fmt(self.values[(s, k)]) for k in SCHEMA[s]}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def canonical(self) -> str:
        """Serialization without machine-local paths, used for run ids."""
        return "\n".join(f"{s}.{k}={_fmt(v)}" for (s, k), v in sorted(self.values.items())
                         if s != "paths" and (s, k) != ("oracle", "command"))


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig(dict(base.values)) if base else RunConfig()
    for s in cp.sections():
        if s not in SCHEMA:
            raise ConfigError(f"unknown config section: {s}")
        for k, v in cp[s].items():
            cfg.set(s, k, v)
    return cfg


def load(path) -> RunConfig:
    with open(path) as fh:
        return parse(fh.read())


def apply_env(cfg: RunConfig, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            raise ConfigError(f"environment override {name} must look like {ENV_PREFIX}SECTION__KEY")
        section, key = rest.split("__", 1)
        cfg.set(section.lower(), key.lower(), value)
    return cfg


def apply_flags(cfg: RunConfig, flags) -> RunConfig:
    """Apply ``--section.key value`` (or ``--section.key=value``) pairs."""
    flags = list(flags)
    i = 0
    while i < len(flags):
        flag = flags[i]
        if not flag.startswith("--") or "." not in flag:
            raise ConfigError(f"unrecognized argument: {flag}")
        name = flag[2:]
        if "=" in name:
            name, value = name.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(flags):
                raise ConfigError(f"missing value for {flag}")
            value = flags[i + 1]
            i += 2
        section, key = name.split(".", 1)
        cfg.set(section, key.replace("-", "_"), value)
    return cfg
