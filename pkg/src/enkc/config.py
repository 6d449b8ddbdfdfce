"""Configuration files: parse, validate, apply overrides, emit, fingerprint.

The format is sectioned ``key = value`` text.  Every key is known ahead of
time; a misspelled or misplaced key is a hard error naming the offending
line, never a silently ignored default.  Emitting the effective config and
parsing it back reproduces the identical object, which is what makes an
output directory self-describing.

Seeds: a config needs six seeds (master plus five named streams).  Any
stream seed not given explicitly is derived from the master seed and the
fingerprint of the non-seed part of the config, so distinct experiment
cells fall on independent streams by construction.
"""

from __future__ import annotations

import hashlib
from typing import Optional, Sequence

from .control import ControlLocalization, ControlProblem, RandomSelection, Thresholding
from .enkf import LocalizationConfig, ObservationModel, even_grid_observations
from .experiment import EnsembleSettings, ExperimentConfig, RunSettings, SeedSet
from .lorenz96 import ModelConfig

DEFAULT_MASTER_SEED = 1729

STREAM_NAMES = (
    "nature_init",
    "obs_noise",
    "ensemble_init",
    "obs_perturbations",
    "random_sparsifier",
)

_SPARSIFIER_CHOICES = ("none", "localization", "thresholding", "random")

# section -> key -> (type tag, default)
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "model": {
        "K": ("int", 40),
        "F": ("float", 8.0),
        "dt": ("float", 0.05),
        "noise_sd": ("float", 0.0),
    },
    "obs": {
        "grids": ("grids", "even"),
        "variance": ("float", 1.0),
    },
    "localization": {
        "enabled": ("bool", True),
        "L": ("float", 2.0),
    },
    "ensemble": {
        "N": ("int", 40),
        "init_spread_sd": ("float", 1.0),
        "inflation": ("float", 1.0),
    },
    "control": {
        "trigger_threshold": ("float", 12.0),
        "reference": ("float", 12.0),
        "horizon_steps": ("int", 4),
        "weight_sd": ("float", 0.1),
        "aoei": ("bool", False),
        "min_trigger_grids": ("int", 1),
        "sparsifier": ("choice", "thresholding"),
    },
    "sparsifier": {
        "L_c": ("int", 2),
        "lambda_frac": ("float", 0.5),
        "n_L": ("int", 3),
        "localize_innovation_term": ("bool", False),
    },
    "run": {
        "spin_up_steps": ("int", 14600),
        "eval_steps": ("int", 146000),
        "nature_discard_steps": ("int", 10000),
        "log_cycles": ("bool", False),
    },
    "seeds": {
        "master": ("int", None),
        "nature_init": ("int", None),
        "obs_noise": ("int", None),
        "ensemble_init": ("int", None),
        "obs_perturbations": ("int", None),
        "random_sparsifier": ("int", None),
    },
}

# bare override keys resolve through this (all key names are unique)
_BARE_KEYS: dict[str, tuple[str, str]] = {}
for _sec, _keys in _SCHEMA.items():
    for _k in _keys:
        assert _k not in _BARE_KEYS, _k
        _BARE_KEYS[_k] = (_sec, _k)


class ConfigError(ValueError):
    """Anything wrong with a config: syntax, unknown key, bad value, invariant."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _parse_value(tag: str, raw: str, where: str, line: Optional[int]):
    raw = raw.strip()
    if tag == "int":
        try:
            return int(raw, 10)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {raw!r}", line) from None
    if tag == "float":
        try:
            v = float(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {raw!r}", line) from None
        if v != v:
            raise ConfigError(f"{where}: nan is not a usable value", line)
        return v
    if tag == "bool":
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{where}: expected true/false, got {raw!r}", line)
    if tag == "choice":
        low = raw.lower()
        if low not in _SPARSIFIER_CHOICES:
            raise ConfigError(
                f"{where}: expected one of {', '.join(_SPARSIFIER_CHOICES)}, got {raw!r}", line
            )
        return low
    if tag == "grids":
        if raw.lower() == "even":
            return "even"
        try:
            idx = tuple(int(part.strip(), 10) for part in raw.split(","))
        except ValueError:
            raise ConfigError(
                f"{where}: expected 'even' or comma-separated grid labels, got {raw!r}", line
            ) from None
        if not idx:
            raise ConfigError(f"{where}: empty grid list", line)
        return idx
    raise AssertionError(tag)


def _scan(text: str) -> dict[tuple[str, str], object]:
    """Raw parse: returns {(section, key): typed value}, line-checked."""
    out: dict[tuple[str, str], object] = {}
    seen_lines: dict[tuple[str, str], int] = {}
    section = None
    for ln, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", ln)
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", ln)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", ln)
        if section is None:
            raise ConfigError("key outside of any [section]", ln)
        key, _, raw_val = line.partition("=")
        key = key.strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", ln)
        if (section, key) in out:
            raise ConfigError(
                f"duplicate key {key!r} in section [{section}] "
                f"(first given on line {seen_lines[(section, key)]})",
                ln,
            )
        tag = _SCHEMA[section][key][0]
        out[(section, key)] = _parse_value(tag, raw_val, f"[{section}] {key}", ln)
        seen_lines[(section, key)] = ln
    return out


def apply_overrides(values: dict, overrides: Sequence[str]) -> None:
    """Apply ``key=value`` strings onto a raw value map, in order.

    Keys may be qualified (``control.weight_sd``) or bare when unambiguous
    (``lambda_frac``); every key name in the schema is unique, so bare keys
    always resolve unless they are simply unknown.
    """
    for item in overrides:
        key, sep, raw_val = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key = key.strip()
        if "." in key:
            sec, _, name = key.partition(".")
            sec, name = sec.strip(), name.strip()
            if sec not in _SCHEMA or name not in _SCHEMA[sec]:
                raise ConfigError(f"override names unknown key {key!r}")
        else:
            if key not in _BARE_KEYS:
                raise ConfigError(f"override names unknown key {key!r}")
            sec, name = _BARE_KEYS[key]
        tag = _SCHEMA[sec][name][0]
        values[(sec, name)] = _parse_value(tag, raw_val, f"[{sec}] {name}", None)


def _get(values: dict, sec: str, key: str):
    v = values.get((sec, key))
    return _SCHEMA[sec][key][1] if v is None else v


def _build_sparsifier(kind: str, values: dict):
    if kind == "none":
        return None
    if kind == "localization":
        return ControlLocalization(
            L_c=_get(values, "sparsifier", "L_c"),
            localize_innovation_term=_get(values, "sparsifier", "localize_innovation_term"),
        )
    if kind == "thresholding":
        return Thresholding(lambda_frac=_get(values, "sparsifier", "lambda_frac"))
    if kind == "random":
        return RandomSelection(n_L=_get(values, "sparsifier", "n_L"))
    raise AssertionError(kind)


def _wrap(section: str, build):
    try:
        return build()
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[{section}]: {exc}") from exc


def _assemble(values: dict, master_seed: Optional[int]) -> ExperimentConfig:
    model = _wrap(
        "model",
        lambda: ModelConfig(
            K=_get(values, "model", "K"),
            F=_get(values, "model", "F"),
            dt=_get(values, "model", "dt"),
            noise_sd=_get(values, "model", "noise_sd"),
        ),
    )
    grids = _get(values, "obs", "grids")
    variance = _get(values, "obs", "variance")
    if grids == "even":
        obs = _wrap("obs", lambda: even_grid_observations(model.K, variance))
    else:
        obs = _wrap(
            "obs",
            lambda: ObservationModel(
                K=model.K, indices=tuple(grids), variances=(float(variance),) * len(grids)
            ),
        )
    loc = _wrap(
        "localization",
        lambda: LocalizationConfig(
            L=_get(values, "localization", "L"),
            enabled=_get(values, "localization", "enabled"),
        ),
    )
    ensemble = _wrap(
        "ensemble",
        lambda: EnsembleSettings(
            N=_get(values, "ensemble", "N"),
            init_spread_sd=_get(values, "ensemble", "init_spread_sd"),
            inflation=_get(values, "ensemble", "inflation"),
        ),
    )
    sparsifier = _wrap(
        "sparsifier", lambda: _build_sparsifier(_get(values, "control", "sparsifier"), values)
    )
    ctrl = _wrap(
        "control",
        lambda: ControlProblem(
            horizon_steps=_get(values, "control", "horizon_steps"),
            trigger_threshold=_get(values, "control", "trigger_threshold"),
            reference_value=_get(values, "control", "reference"),
            weight_sd=_get(values, "control", "weight_sd"),
            aoei=_get(values, "control", "aoei"),
            sparsifier=sparsifier,
            min_trigger_grids=_get(values, "control", "min_trigger_grids"),
        ),
    )
    run = _wrap(
        "run",
        lambda: RunSettings(
            spin_up_steps=_get(values, "run", "spin_up_steps"),
            eval_steps=_get(values, "run", "eval_steps"),
            nature_discard_steps=_get(values, "run", "nature_discard_steps"),
            log_cycles=_get(values, "run", "log_cycles"),
        ),
    )
    partial = _wrap(
        "config",
        lambda: ExperimentConfig(
            model=model,
            obs=obs,
            localization=loc,
            ensemble=ensemble,
            control=ctrl,
            run=run,
            seeds=SeedSet(0, 0, 0, 0, 0, 0),
        ),
    )
    fp = fingerprint(partial)
    if master_seed is not None:
        master = master_seed
        given = {}
    else:
        master = values.get(("seeds", "master"))
        master = DEFAULT_MASTER_SEED if master is None else master
        given = {n: values.get(("seeds", n)) for n in STREAM_NAMES}
    derived = derive_seeds(master, fp)
    seeds = _wrap(
        "seeds",
        lambda: SeedSet(
            master=master,
            **{n: given.get(n)
               if given.get(n) is not None else getattr(derived, n) for n in STREAM_NAMES},
        ),
    )
    return ExperimentConfig(
        model=model,
        obs=obs,
        localization=loc,
        ensemble=ensemble,
        control=ctrl,
        run=run,
        seeds=seeds,
    )


def parse_config(
    text: str,
    overrides: Sequence[str] = (),
    master_seed: Optional[int] = None,
) -> ExperimentConfig:
    """Parse config text, apply overrides, validate, and resolve seeds.

    ``master_seed`` (the CLI ``--seed``) discards any seeds given in the
    text and re-derives all five stream seeds from the new master.
    """
    values = _scan(text)
    apply_overrides(values, overrides)
    return _assemble(values, master_seed)


def load_config(path, overrides: Sequence[str] = (), master_seed: Optional[int] = None):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text, overrides, master_seed)


def default_config() -> ExperimentConfig:
    """The default experiment: the reference cell of the standard setup."""
    return parse_config("")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _config_values(cfg: ExperimentConfig) -> dict[tuple[str, str], object]:
    """Invert a config object back into the raw value map."""
    sp = cfg.control.sparsifier
    if sp is None:
        kind = "none"
    elif isinstance(sp, ControlLocalization):
        kind = "localization"
    elif isinstance(sp, Thresholding):
        kind = "thresholding"
    elif isinstance(sp, RandomSelection):
        kind = "random"
    else:
        raise AssertionError(sp)
    even = tuple(range(2, cfg.model.K + 1, 2))
    values: dict[tuple[str, str], object] = {
        ("model", "K"): cfg.model.K,
        ("model", "F"): cfg.model.F,
        ("model", "dt"): cfg.model.dt,
        ("model", "noise_sd"): cfg.model.noise_sd,
        ("obs", "grids"): "even" if cfg.obs.indices == even else cfg.obs.indices,
        ("obs", "variance"): cfg.obs.variances[0],
        ("localization", "enabled"): cfg.localization.enabled,
        ("localization", "L"): cfg.localization.L,
        ("ensemble", "N"): cfg.ensemble.N,
        ("ensemble", "init_spread_sd"): cfg.ensemble.init_spread_sd,
        ("ensemble", "inflation"): cfg.ensemble.inflation,
        ("control", "trigger_threshold"): cfg.control.trigger_threshold,
        ("control", "reference"): cfg.control.reference_value,
        ("control", "horizon_steps"): cfg.control.horizon_steps,
        ("control", "weight_sd"): cfg.control.weight_sd,
        ("control", "aoei"): cfg.control.aoei,
        ("control", "min_trigger_grids"): cfg.control.min_trigger_grids,
        ("control", "sparsifier"): kind,
        ("run", "spin_up_steps"): cfg.run.spin_up_steps,
        ("run", "eval_steps"): cfg.run.eval_steps,
        ("run", "nature_discard_steps"): cfg.run.nature_discard_steps,
        ("run", "log_cycles"): cfg.run.log_cycles,
        ("seeds", "master"): cfg.seeds.master,
    }
    if isinstance(sp, ControlLocalization):
        values[("sparsifier", "L_c")] = sp.L_c
        values[("sparsifier", "localize_innovation_term")] = sp.localize_innovation_term
    elif isinstance(sp, Thresholding):
        values[("sparsifier", "lambda_frac")] = sp.lambda_frac
    elif isinstance(sp, RandomSelection):
        values[("sparsifier", "n_L")] = sp.n_L
    for n in STREAM_NAMES:
        values[("seeds", n)] = getattr(cfg.seeds, n)
    return values


def emit_config(cfg: ExperimentConfig, include_seeds: bool = True) -> str:
    """Canonical text for a config; parsing it back gives an equal object."""
    values = _config_values(cfg)
    lines = []
    for sec, keys in _SCHEMA.items():
        if sec == "seeds" and not include_seeds:
            continue
        body = []
        for key in keys:
            if (sec, key) in values:
                v = values[(sec, key)]
                if sec == "obs" and key == "grids" and isinstance(v, tuple):
                    v = ",".join(str(i) for i in v)
                body.append(f"{key} = {_fmt(v)}")
        if body:
            lines.append(f"[{sec}]")
            lines.extend(body)
            lines.append("")
    return "\n".join(lines)


def fingerprint(cfg: ExperimentConfig) -> str:
    """Hash of the non-seed part of a config; stable across seed choices."""
    text = emit_config(cfg, include_seeds=False)
    return hashlib.blake2b(text.encode(), digest_size=16).hexdigest()


def derive_seeds(master: int, fp: str) -> SeedSet:
    """Independent stream seeds from (master seed, config fingerprint)."""
    streams = {}
    for name in STREAM_NAMES:
        h = hashlib.blake2b(f"{master}:{fp}:{name}".encode(), digest_size=8)
        streams[name] = int.from_bytes(h.digest(), "big")
    return SeedSet(master=master, **streams)


def rederive_seeds(cfg: ExperimentConfig, master: Optional[int] = None) -> ExperimentConfig:
    """Replace all five stream seeds with fresh derivations.

    Used per sweep cell so that every cell gets independent streams tied
    to its own fingerprint.
    """
    from dataclasses import replace

    m = cfg.seeds.master if master is None else master
    return replace(cfg, seeds=derive_seeds(m, fingerprint(cfg)))
