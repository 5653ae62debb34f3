"""Experiment configuration from INI files.

Sections: [run], [market], [alm], [toy], [experiment]. Every key must be
known; a typo is reported with its line number rather than silently
ignored.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .alm import ALMParams
from .butterfly import ButterflyParams
from .errors import ConfigError
from .market import MarketParams, RateShock, load_shock_table

EXPERIMENTS = (
    "toy-bias",
    "toy-levelvar",
    "toy-rmse",
    "toy-lsmc",
    "alm-select",
    "alm-rmse",
    "alm-eta",
    "alm-frontier",
    "alm-sensitivity",
    "alm-premia",
)

# experiment knobs shared by all experiments; each uses the subset it needs
EXPERIMENT_DEFAULTS: dict[str, Any] = {
    "K_list": (16, 32, 64, 128, 256, 512, 1024),
    "J": 10_000,
    "reps": 4,
    "eps_list": (0.25, 0.125, 0.0625, 0.03125, 0.015625),
    "eta": 0.75,
    "eta_list": (0.5, 0.75, 1.0),
    "K0": 8,
    "J_list": (1000, 2000, 4000, 8000, 16000, 32000),
    "c_r": 1.0,
    "t": 10,
    "t_list": (0, 10, 20),
    "w_grid": (0.0, 0.025, 0.05, 0.075, 0.1),
    "K": 32,
    "n_r": 4,
    "max_vars": 3,
    "epsilon": 0.0625,
    "dS0": 0.01,
    "dr0": 0.001,
    "lambda_Z_list": (0.0, 0.1, 0.2),
    "lambda_W_list": (0.0, 0.1, 0.2),
}

# protocol defaults that differ from the shared ones
EXPERIMENT_OVERRIDES: dict[str, dict[str, Any]] = {
    "alm-select": {"J": 2000, "K": 10_000, "n_r": 5},
}


def experiment_defaults(experiment: str) -> dict[str, Any]:
    return {**EXPERIMENT_DEFAULTS, **EXPERIMENT_OVERRIDES.get(experiment, {})}


_RUN_DEFAULTS = {"seed": 0, "n_batch": 10, "budget": 1_000_000, "out": "results"}
_MARKET_EXTRA = {"shock_table": "", "shock_scale": 1.0}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    n_batch: int = 10
    budget: int = 1_000_000
    out: str = "results"
    market: MarketParams = field(default_factory=MarketParams)
    alm: ALMParams = field(default_factory=ALMParams)
    toy: ButterflyParams = field(default_factory=ButterflyParams)
    options: dict[str, Any] | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.options is None:
            self.options = experiment_defaults(self.experiment)
        if self.n_batch < 1:
            raise ConfigError("n_batch must be positive")
        if self.budget < 1:
            raise ConfigError("budget must be positive")

    def resolved(self) -> dict[str, Any]:
        """Plain-data view of every setting, for the run manifest."""

        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, (tuple, list)):
                return [plain(v) for v in obj]
            if isinstance(obj, dict):
                return {k: plain(v) for k, v in obj.items()}
            return obj

        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "n_batch": self.n_batch,
            "budget": self.budget,
            "out": self.out,
            "market": plain(self.market),
            "alm": plain(self.alm),
            "toy": plain(self.toy),
            "options": plain(self.options),
        }


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = ""
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = no
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        lines[(section, key)] = no
    return lines


def _convert(raw: str, default: Any, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            try:
                return int(raw)
            except ValueError:
                f = float(raw)  # allow 1e6
                if not f.is_integer():
                    raise
                return int(f)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s for s in re.split(r"[,\s]+", raw.strip()) if s]
            if not items:
                raise ValueError("empty list")
            elem = default[0] if default else 0.0
            return tuple(_convert(s, elem, where) for s in items)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({exc})") from None


def _fields(cls) -> dict[str, Any]:
    out = {}
    inst = cls()
    for f in dataclasses.fields(cls):
        out[f.name.lower()] = (f.name, getattr(inst, f.name))
    return out


def load_config(path: str | Path, experiment: str, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Parse an INI file; CLI values for seed and out override the file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, experiment, seed, out, source=str(path), base=path.parent)


def parse_config(
    text: str,
    experiment: str,
    seed: int | None = None,
    out: str | None = None,
    source: str = "<config>",
    base: Path | None = None,
) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _key_lines(text)

    def where(section, key=""):
        return f"{source}:{lines.get((section, key), '?')} [{section}]" + (f" {key}" if key else "")

    schemas = {
        "run": {k: (k, v) for k, v in _RUN_DEFAULTS.items()},
        "market": {**_fields(MarketParams), **{k: (k, v) for k, v in _MARKET_EXTRA.items()}},
        "alm": _fields(ALMParams),
        "toy": _fields(ButterflyParams),
        "experiment": {k.lower(): (k, v) for k, v in EXPERIMENT_DEFAULTS.items()},
    }
    schemas["market"].pop("shift", None)
    schemas["alm"].pop("rate_shock", None)

    values: dict[str, dict[str, Any]] = {s: {} for s in schemas}
    for section in parser.sections():
        if section not in schemas:
            raise ConfigError(f"{where(section)}: unknown section")
        for key, raw in parser.items(section):
            if key not in schemas[section]:
                raise ConfigError(f"{where(section, key)}: unknown key")
            name, default = schemas[section][key]
            if name == "w_S":
                default = 0.0 if "," not in raw else (0.0,)
            values[section][name] = _convert(raw, default, where(section, key))

    run = {**_RUN_DEFAULTS, **values["run"]}
    if seed is not None:
        run["seed"] = seed
    if out is not None:
        run["out"] = out

    market_kw = dict(values["market"])
    table = market_kw.pop("shock_table", "")
    scale = market_kw.pop("shock_scale", 1.0)
    try:
        market = MarketParams(**market_kw)
        shock = RateShock()
        if table:
            tpath = Path(table)
            if base is not None and not tpath.is_absolute():
                tpath = base / tpath
            shock = load_shock_table(tpath)
        shock = dataclasses.replace(shock, scale=scale)
        alm = ALMParams(**values["alm"], rate_shock=shock)
        toy = ButterflyParams(**values["toy"])
        options = {**experiment_defaults(experiment), **values["experiment"]}
        return ExperimentConfig(
            experiment=experiment,
            seed=int(run["seed"]),
            n_batch=int(run["n_batch"]),
            budget=int(run["budget"]),
            out=str(run["out"]),
            market=market,
            alm=alm,
            toy=toy,
            options=options,
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def _tuples(obj):
    if isinstance(obj, list):
        return tuple(_tuples(v) for v in obj)
    if isinstance(obj, dict):
        return {k: _tuples(v) for k, v in obj.items()}
    return obj


def config_from_resolved(data: dict[str, Any]) -> ExperimentConfig:
    """Inverse of ExperimentConfig.resolved, used to replay a run manifest."""
    from .market import ShiftCurve

    d = _tuples(data)
    market = dict(d["market"])
    market["shift"] = ShiftCurve(**market["shift"])
    alm = dict(d["alm"])
    alm["rate_shock"] = RateShock(**alm["rate_shock"])
    return ExperimentConfig(
        experiment=d["experiment"],
        seed=d["seed"],
        n_batch=d["n_batch"],
        budget=d["budget"],
        out=d["out"],
        market=MarketParams(**market),
        alm=ALMParams(**alm),
        toy=ButterflyParams(**d["toy"]),
        options=dict(d["options"]),
    )
