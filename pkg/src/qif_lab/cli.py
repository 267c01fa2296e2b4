"""``qif-lab`` command line.

Exit codes: 0 success, 2 input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import divergences as dv
from .config import COMMANDS, ConfigError, ExperimentConfig, load_config
from .datasets import GENERATORS, Dataset, DatasetError
from .flow import FlowDiverged, FlowError, run_flow
from .particles import ParticleSet
from .qrdrop import TrainingError, train, write_history
from .seeding import stream
from .shapes import make_init, make_target
from .sinkhorn import SinkhornError

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class InputError(Exception):
    pass


class NumericalAbort(Exception):
    pass


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _claim(out: Path, names: list[str], force: bool) -> None:
    """Create ``out`` and refuse to clobber existing outputs without ``force``."""
    out.mkdir(parents=True, exist_ok=True)
    existing = [n for n in names if (out / n).exists()]
    if existing and not force:
        raise InputError(f"{out}: would overwrite {', '.join(existing)}; pass --force to allow")


def read_distribution_csv(path: str) -> np.ndarray:
    """Weights, one per line, with an optional ``weight`` header line."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"distribution file not found: {path}")
    values = []
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        s = line.strip()
        if not s or (lineno == 1 and s.lower() == "weight"):
            continue
        for tok in s.split(","):
            try:
                values.append(float(tok))
            except ValueError:
                raise InputError(f"{path}:{lineno}: not a number: {tok!r}") from None
    return np.array(values)


def _g_of(d: float) -> float:
    # D log D, continuously extended with 0 at D = 0
    return dv.g_transform(d) if d > 0 else 0.0


def divergence_summary(p, q, clamp: dv.ClampPolicy) -> dict:
    kl = dv.kl(p, q, clamp)
    js = dv.js(p, q, clamp)
    return {
        "kl": kl,
        "kl_reverse": dv.kl(q, p, clamp),
        "js": js,
        "fidelity": dv.fidelity(p, q),
        "qif": dv.qif(p, q, clamp),
        "bhattacharyya": dv.bhattacharyya_distance(p, q, clamp),
        "g_of_kl": _g_of(kl),
        "g_of_js": _g_of(js),
    }


def cmd_divergence(cfg: ExperimentConfig, out: Path, force: bool) -> int:
    block = cfg.divergence
    try:
        clamp = dv.ClampPolicy(block.epsilon)
        raw_p = np.array(block.p, dtype=float) if block.p is not None else read_distribution_csv(block.p_csv)
        raw_q = np.array(block.q, dtype=float) if block.q is not None else read_distribution_csv(block.q_csv)
        p = dv.DiscreteDistribution(raw_p)
        q = dv.DiscreteDistribution(raw_q)
        summary = divergence_summary(p, q, clamp)
    except ValueError as exc:
        raise InputError(f"malformed distribution: {exc}") from exc
    _claim(out, ["summary.json"], force)
    doc = {"schema_version": SCHEMA_VERSION, "command": "divergence", "dimension": p.d, "epsilon": clamp.epsilon}
    doc.update(summary)
    _write_json(out / "summary.json", doc)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _svg_scatter(path: Path, cloud: ParticleSet, target: ParticleSet, bounds):
    xmin, xmax, ymin, ymax = bounds
    size = 400

    def px(p):
        return (p[0] - xmin) / (xmax - xmin) * size, (ymax - p[1]) / (ymax - ymin) * size

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">']
    for pts, colour in ((target.points, "#d62728"), (cloud.points, "#1f77b4")):
        for p in pts.tolist():
            x, y = px(p)
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5" fill="{colour}"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def cmd_flow(cfg: ExperimentConfig, out: Path, force: bool) -> int:
    block = cfg.flow
    fc = block.config
    try:
        init = make_init(block.init.shape, block.init.n, block.init.noise, stream(cfg.seed, "init"))
        target = make_target(block.target.shape, block.target.n, block.target.noise, stream(cfg.seed, "target"))
    except ValueError as exc:
        raise InputError(f"flow: {exc}") from exc
    _claim(out, ["trace.csv", "summary.json", "timing.csv", "snapshots"], force)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for old in snap_dir.glob("iter_*"):
        old.unlink()

    t0 = time.perf_counter()
    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": "flow",
        "divergence": fc.divergence,
        "n_particles": init.n,
        "n_target": target.n,
        "learning_rate": fc.learning_rate,
        "sigma": fc.kernel.sigma,
        "grid_resolution": fc.grid.resolution,
        "seed": cfg.seed,
    }
    try:
        result = run_flow(init, target, fc)
    except (FlowDiverged, FlowError, SinkhornError) as exc:
        trace = getattr(exc, "trace", None)
        if trace is not None:
            trace.to_csv(out / "trace.csv", include_timing=block.record_timing)
        summary.update(
            status="aborted",
            error=str(exc),
            iterations_completed=trace.rows[-1].iteration if trace is not None and trace.rows else 0,
            wall_ms=1000.0 * (time.perf_counter() - t0),
        )
        _write_json(out / "summary.json", summary)
        raise NumericalAbort(str(exc)) from exc

    trace = result.trace
    trace.to_csv(out / "trace.csv", include_timing=block.record_timing)
    with open(out / "timing.csv", "w", newline="") as f:
        f.write("iter,wall_ms\n")
        for r in trace.rows:
            f.write(f"{r.iteration},{r.wall_ms!r}\n")
    for it, cloud in result.snapshots:
        cloud.to_csv(snap_dir / f"iter_{it:06d}.csv")
        if block.svg:
            _svg_scatter(snap_dir / f"iter_{it:06d}.svg", cloud, target, fc.grid.bounds)
    summary.update(
        status="ok",
        iterations=fc.iterations,
        snapshots=len(result.snapshots),
        initial_objective=trace.rows[0].objective,
        final_objective=trace.rows[-1].objective,
        initial_sinkhorn=trace.rows[0].sinkhorn,
        final_sinkhorn=trace.rows[-1].sinkhorn,
        wall_ms=1000.0 * (time.perf_counter() - t0),
    )
    _write_json(out / "summary.json", summary)
    print(
        f"{fc.divergence}: sinkhorn {summary['initial_sinkhorn']:.4f} -> {summary['final_sinkhorn']:.4f} "
        f"in {fc.iterations} iterations ({summary['wall_ms'] / 1000:.1f} s)"
    )
    return EXIT_OK


def _load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.train.dataset
    n_classes = cfg.train.config.n_classes
    try:
        if ds.train_csv is not None:
            for p in (ds.train_csv, ds.test_csv):
                if not Path(p).is_file():
                    raise InputError(f"dataset file not found: {p}")
            return Dataset.from_csv(ds.train_csv, n_classes), Dataset.from_csv(ds.test_csv, n_classes)
        if ds.name not in GENERATORS:
            raise InputError(f"unknown dataset generator {ds.name!r}; choose from {sorted(GENERATORS)}")
        rng = stream(cfg.seed, "data")
        gen = GENERATORS[ds.name]
        return gen(ds.n_train, ds.noise, rng), gen(ds.n_test, ds.noise, rng)
    except DatasetError as exc:
        raise InputError(f"dataset schema violation: {exc}") from exc


def cmd_train(cfg: ExperimentConfig, out: Path, force: bool) -> int:
    block = cfg.train
    train_set, test_set = _load_datasets(cfg)
    names = {k: (f"history_{k}.csv" if block.sweep else "history.csv") for k in block.kinds}
    _claim(out, list(names.values()) + ["summary.json"], force)
    t0 = time.perf_counter()
    finals = {}
    for kind in block.kinds:
        tc = replace(block.config, consistency=kind)
        try:
            history, _ = train(train_set, test_set, tc)
        except DatasetError as exc:
            raise InputError(f"dataset schema violation: {exc}") from exc
        except TrainingError as exc:
            raise NumericalAbort(f"{kind}: {exc}") from exc
        write_history(out / names[kind], history)
        last = history[-1]
        finals[kind] = {
            "history_file": names[kind],
            "train_loss": last.train_loss,
            "test_loss": last.test_loss,
            "train_acc": last.train_acc,
            "test_acc": last.test_acc,
            "consistency_mean": last.consistency_loss_mean,
        }
        print(f"{kind}: test_acc={last.test_acc:.4f} test_loss={last.test_loss:.4f}")
    c = block.config
    _write_json(
        out / "summary.json",
        {
            "schema_version": SCHEMA_VERSION,
            "command": "train",
            "seed": cfg.seed,
            "epochs": c.epochs,
            "beta": c.beta,
            "dropout_rate": c.dropout_rate,
            "layer_widths": list(c.layer_widths),
            "final": finals,
            "wall_ms": 1000.0 * (time.perf_counter() - t0),
        },
    )
    return EXIT_OK


def oracle_deviation(dim: int, trials: int, rng: np.random.Generator) -> float:
    """Largest ``|fidelity - fidelity_oracle|`` over random Dirichlet pairs."""
    worst = 0.0
    for _ in range(trials):
        alpha = rng.uniform(0.1, 2.0)
        p = rng.dirichlet(np.full(dim, alpha))
        q = rng.dirichlet(np.full(dim, alpha))
        oracle = dv.fidelity_oracle(dv.PureStateOracleInput.from_distributions(p, q))
        worst = max(worst, abs(dv.fidelity(p, q) - oracle))
    return worst


def cmd_oracle_check(cfg: ExperimentConfig, out: Path, force: bool) -> int:
    block = cfg.oracle
    if not (1 <= block.dim <= dv.MAX_ORACLE_DIM):
        raise InputError(f"oracle.dim must lie in [1, {dv.MAX_ORACLE_DIM}], got {block.dim}")
    if block.trials < 1:
        raise InputError(f"oracle.trials must be >= 1, got {block.trials}")
    _claim(out, ["summary.json"], force)
    worst = oracle_deviation(block.dim, block.trials, stream(cfg.seed, "oracle"))
    passed = worst < 1e-10
    _write_json(
        out / "summary.json",
        {
            "schema_version": SCHEMA_VERSION,
            "command": "oracle-check",
            "dim": block.dim,
            "trials": block.trials,
            "seed": cfg.seed,
            "max_abs_deviation": worst,
            "passed": passed,
        },
    )
    print(f"d={block.dim} trials={block.trials} max |F - F_oracle| = {worst:.3e} ({'ok' if passed else 'FAIL'})")
    return EXIT_OK if passed else EXIT_NUMERICAL


HANDLERS = {
    "divergence": cmd_divergence,
    "flow": cmd_flow,
    "train": cmd_train,
    "oracle-check": cmd_oracle_check,
}


def _thread_limit():
    raw = os.environ.get("QIF_LAB_THREADS")
    if raw is None or raw == "":
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise InputError(f"QIF_LAB_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qif-lab", description="QIF divergence experiments")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", help="output directory (overrides output_dir in the config)")
    parser.add_argument("--force", action="store_true", help="overwrite existing output files")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        if cfg.command != args.command:
            raise InputError(f"config is for {cfg.command!r} but command line asked for {args.command!r}")
        out = Path(args.out or cfg.output_dir or f"runs/{cfg.command.replace('-', '_')}")
        with _thread_limit():
            return HANDLERS[cfg.command](cfg, out, args.force)
    except (InputError, ConfigError, FileNotFoundError) as exc:
        print(f"qif-lab: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalAbort as exc:
        print(f"qif-lab: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
