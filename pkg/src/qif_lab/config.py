"""Strict JSON experiment configs.

One document per run with a top-level ``command`` plus the block for that
command. Unknown keys anywhere are rejected so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .divergences import ClampPolicy
from .flow import FlowConfig, GridSpec, KernelConfig, SinkhornConfig
from .qrdrop import CONSISTENCY_KINDS, TrainConfig

COMMANDS = ("divergence", "flow", "train", "oracle-check")
BLOCK_NAMES = {"divergence": "divergence", "flow": "flow", "train": "train", "oracle-check": "oracle"}


class ConfigError(ValueError):
    pass


def _strict(block: Any, allowed: dict[str, Any], where: str) -> dict[str, Any]:
    """Merge ``block`` over the defaults in ``allowed``, rejecting unknown keys."""
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object, got {type(block).__name__}")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")
    out = dict(allowed)
    out.update(block)
    return out


def _int(v, where, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {v}")
    return v


def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    return float(v)


@dataclass
class DivergenceBlock:
    p: list[float] | None = None
    q: list[float] | None = None
    p_csv: str | None = None
    q_csv: str | None = None
    epsilon: float = 1e-13


@dataclass
class ShapeBlock:
    shape: str
    noise: float
    n: int


@dataclass
class FlowBlock:
    config: FlowConfig
    init: ShapeBlock
    target: ShapeBlock
    record_timing: bool = False
    svg: bool = False


@dataclass
class DatasetBlock:
    name: str | None = "two_moons"
    n_train: int = 1000
    n_test: int = 1000
    noise: float = 0.3
    train_csv: str | None = None
    test_csv: str | None = None


@dataclass
class TrainBlock:
    config: TrainConfig
    kinds: tuple[str, ...]
    sweep: bool
    dataset: DatasetBlock


@dataclass
class OracleBlock:
    dim: int = 8
    trials: int = 1000


@dataclass
class ExperimentConfig:
    command: str
    seed: int = 0
    output_dir: str | None = None
    divergence: DivergenceBlock | None = None
    flow: FlowBlock | None = None
    train: TrainBlock | None = None
    oracle: OracleBlock | None = None
    raw: dict = field(default_factory=dict)


def _parse_divergence(block, base: Path) -> DivergenceBlock:
    b = _strict(block, {"p": None, "q": None, "p_csv": None, "q_csv": None, "epsilon": 1e-13}, "divergence")
    for side in ("p", "q"):
        inline, path = b[side], b[f"{side}_csv"]
        if (inline is None) == (path is None):
            raise ConfigError(f"divergence: give exactly one of '{side}' or '{side}_csv'")
        if inline is not None and not (isinstance(inline, list) and all(not isinstance(v, bool) and isinstance(v, (int, float)) for v in inline)):
            raise ConfigError(f"divergence.{side}: expected a list of numbers")
        if path is not None:
            b[f"{side}_csv"] = str((base / path) if not Path(path).is_absolute() else Path(path))
    eps = _num(b["epsilon"], "divergence.epsilon")
    return DivergenceBlock(b["p"], b["q"], b["p_csv"], b["q_csv"], eps)


def _parse_shape(block, where, defaults) -> ShapeBlock:
    b = _strict(block, defaults, where)
    if not isinstance(b["shape"], str):
        raise ConfigError(f"{where}.shape: expected a string")
    return ShapeBlock(b["shape"], _num(b["noise"], f"{where}.noise"), _int(b["n"], f"{where}.n", 1))


def _parse_flow(block, seed: int) -> FlowBlock:
    b = _strict(
        block,
        {
            "divergence": "qif",
            "learning_rate": 0.01,
            "iterations": 3000,
            "n_particles": 1000,
            "init": {},
            "target": {},
            "grid": {},
            "sigma": 0.3,
            "snapshot_every": 100,
            "sinkhorn": {},
            "epsilon": 1e-13,
            "record_timing": False,
            "svg": False,
        },
        "flow",
    )
    n = _int(b["n_particles"], "flow.n_particles", 1)
    init = _parse_shape(b["init"], "flow.init", {"shape": "star", "noise": 0.02, "n": n})
    target = _parse_shape(b["target"], "flow.target", {"shape": "heart", "noise": 0.02, "n": n})
    g = _strict(b["grid"], {"bounds": [-1.5, 1.5, -1.5, 1.5], "resolution": 64}, "flow.grid")
    if not (isinstance(g["bounds"], list) and len(g["bounds"]) == 4):
        raise ConfigError("flow.grid.bounds: expected [xmin, xmax, ymin, ymax]")
    s = _strict(b["sinkhorn"], {"reg": 0.05, "max_iter": 500, "tol": 1e-9}, "flow.sinkhorn")
    try:
        cfg = FlowConfig(
            divergence=b["divergence"],
            learning_rate=_num(b["learning_rate"], "flow.learning_rate"),
            iterations=_int(b["iterations"], "flow.iterations", 1),
            grid=GridSpec(tuple(_num(v, "flow.grid.bounds") for v in g["bounds"]), _int(g["resolution"], "flow.grid.resolution")),
            kernel=KernelConfig(_num(b["sigma"], "flow.sigma")),
            seed=seed,
            snapshot_every=_int(b["snapshot_every"], "flow.snapshot_every", 1),
            clamp=ClampPolicy(_num(b["epsilon"], "flow.epsilon")),
            sinkhorn=SinkhornConfig(
                _num(s["reg"], "flow.sinkhorn.reg"),
                _int(s["max_iter"], "flow.sinkhorn.max_iter", 1),
                _num(s["tol"], "flow.sinkhorn.tol"),
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"flow: {exc}") from exc
    if not (s["reg"] > 0 and s["tol"] > 0):
        raise ConfigError("flow.sinkhorn: reg and tol must be positive")
    return FlowBlock(cfg, init, target, bool(b["record_timing"]), bool(b["svg"]))


def _parse_train(block, seed: int, base: Path) -> TrainBlock:
    b = _strict(
        block,
        {
            "layer_widths": [2, 32, 32, 2],
            "dropout_rate": 0.1,
            "beta": 1.0,
            "epochs": 200,
            "learning_rate": 0.1,
            "batch_size": 32,
            "consistency": "qif",
            "sweep": None,
            "epsilon": 1e-13,
            "dataset": {},
        },
        "train",
    )
    sweep = b["sweep"]
    if sweep is not None:
        if not (isinstance(sweep, list) and sweep and all(k in CONSISTENCY_KINDS for k in sweep)):
            raise ConfigError(f"train.sweep: expected a nonempty list drawn from {CONSISTENCY_KINDS}")
        if len(set(sweep)) != len(sweep):
            raise ConfigError("train.sweep: duplicate consistency kinds")
        kinds = tuple(sweep)
    else:
        kinds = (b["consistency"],)
    widths = b["layer_widths"]
    if not (isinstance(widths, list) and all(isinstance(w, int) and not isinstance(w, bool) for w in widths)):
        raise ConfigError("train.layer_widths: expected a list of integers")
    try:
        cfg = TrainConfig(
            layer_widths=tuple(widths),
            dropout_rate=_num(b["dropout_rate"], "train.dropout_rate"),
            beta=_num(b["beta"], "train.beta"),
            epochs=_int(b["epochs"], "train.epochs", 1),
            learning_rate=_num(b["learning_rate"], "train.learning_rate"),
            batch_size=_int(b["batch_size"], "train.batch_size", 1),
            consistency=kinds[0],
            seed=seed,
            clamp=ClampPolicy(_num(b["epsilon"], "train.epsilon")),
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc
    d = _strict(
        b["dataset"],
        {"name": None, "n_train": 1000, "n_test": 1000, "noise": 0.3, "train_csv": None, "test_csv": None},
        "train.dataset",
    )
    has_csv = d["train_csv"] is not None or d["test_csv"] is not None
    if has_csv:
        if d["train_csv"] is None or d["test_csv"] is None or d["name"] is not None:
            raise ConfigError("train.dataset: give both train_csv and test_csv, and no generator name")
        for k in ("train_csv", "test_csv"):
            d[k] = str(base / d[k]) if not Path(d[k]).is_absolute() else d[k]
    else:
        d["name"] = d["name"] or "two_moons"
    ds = DatasetBlock(
        d["name"],
        _int(d["n_train"], "train.dataset.n_train", 2),
        _int(d["n_test"], "train.dataset.n_test", 1),
        _num(d["noise"], "train.dataset.noise"),
        d["train_csv"],
        d["test_csv"],
    )
    return TrainBlock(cfg, kinds, sweep is not None, ds)


def _parse_oracle(block) -> OracleBlock:
    b = _strict(block, {"dim": 8, "trials": 1000}, "oracle")
    return OracleBlock(_int(b["dim"], "oracle.dim"), _int(b["trials"], "oracle.trials"))


def parse_config(doc: Any, base: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    command = doc.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"config.command must be one of {COMMANDS}, got {command!r}")
    block_name = BLOCK_NAMES[command]
    top = _strict(doc, {"command": None, "seed": 0, "output_dir": None, block_name: {}}, "config")
    seed = _int(top["seed"], "config.seed", 0)
    out = top["output_dir"]
    if out is not None and not isinstance(out, str):
        raise ConfigError("config.output_dir: expected a string path")
    cfg = ExperimentConfig(command, seed, out, raw=doc)
    if command == "divergence":
        if block_name not in doc:
            raise ConfigError("config: missing 'divergence' block")
        cfg.divergence = _parse_divergence(top[block_name], base)
    elif command == "flow":
        cfg.flow = _parse_flow(top[block_name], seed)
    elif command == "train":
        cfg.train = _parse_train(top[block_name], seed, base)
    else:
        cfg.oracle = _parse_oracle(top[block_name])
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc, path.parent)
