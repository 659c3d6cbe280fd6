"""Command-line entry point: ``steadywd {predict,simulate,train,sweep,report}``.

Configuration comes from a TOML file (or a JSON run manifest written by a
previous run) plus flag overrides; flags win. The fully resolved config is
persisted next to every run's outputs.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .lmo import NormFamily
from .optim import LayerSpec, scionc_lambda
from .schedule import effective_lr
from .steady import (
    SimConfig,
    appendix_a_config,
    predict_iid,
    predict_momentum_normalized,
    simulate,
)
from .train import SyntheticTask, TrainConfig, run_training

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

OUTPUT_ROOT_ENV = "STEADYWD_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

TRACE_SCHEMA = "steadywd.sim_trace/1"
METRICS_SCHEMA = "steadywd.train_metrics/1"
AGGREGATE_SCHEMA = "steadywd.sweep_aggregate/1"
REPORT_SCHEMA = "steadywd.report/1"

LAYER_COLUMNS = ("l2_norm", "family_norm", "grad_norm", "theta_dot_u", "lambda")
SWEEP_KINDS = ("simulate", "train")
DEFAULT_METRICS = {"simulate": ("steady_norm_mean",), "train": ("final_loss", "final_accuracy")}


class ConfigError(ValueError):
    """Invalid or unknown configuration; maps to exit code 2."""


class RunIOError(OSError):
    """Output could not be written; maps to exit code 4."""


# ---------------------------------------------------------------------------
# Config ingestion


def load_config_file(path: str | None) -> dict:
    """Parse a TOML config or a JSON run manifest into ``{section: table}``."""
    if path is None:
        return {}
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if p.suffix == ".json":
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict) or "subcommand" not in doc or "config" not in doc:
            raise ConfigError(f"{path}: not a run manifest")
        return {doc["subcommand"]: doc["config"]}
    try:
        return tomllib.loads(raw.decode())
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_value(text: str):
    """A TOML scalar or array if it parses as one, else the raw string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_sets(table: dict, assignments: list[str]) -> dict:
    out = json.loads(json.dumps(table))
    for item in assignments or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        set_path(out, key.strip(), parse_value(value.strip()))
    return out


def set_path(table: dict, key: str, value) -> None:
    """Assign ``value`` at a dotted ``key``, creating intermediate tables."""
    node = table
    *parents, leaf = key.split(".")
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {part} is not a table")
    node[leaf] = value


def _check_keys(table: dict, cls, where: str, extra: tuple[str, ...] = ()) -> None:
    allowed = {f.name for f in dataclasses.fields(cls)} | set(extra)
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {', '.join(unknown)}")


def build_sim_config(table: dict) -> SimConfig:
    table = dict(table)
    preset = table.pop("appendix_a", None)
    _check_keys(table, SimConfig, "simulate")
    try:
        if preset is not None:
            if not isinstance(preset, dict):
                raise ConfigError("appendix_a must be a table of preset arguments")
            allowed = {"eta", "dim", "per_element_var", "seeds", "half_lives", "warmup_half_lives", "cosine", "stride"}
            unknown = sorted(set(preset) - allowed)
            if unknown:
                raise ConfigError(f"unknown keys in [simulate.appendix_a]: {', '.join(unknown)}")
            if "eta" not in preset:
                raise ConfigError("appendix_a preset needs eta")
            preset = dict(preset)
            if "seeds" in preset:
                preset["seeds"] = tuple(preset["seeds"])
            base = appendix_a_config(**preset).to_dict()
            base.update(table)
            table = base
        for k in ("seeds", "gamma_trace", "alpha_trace"):
            if table.get(k) is not None:
                table[k] = tuple(table[k])
        return SimConfig(**table)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulate config: {exc}") from exc


def build_train_config(table: dict) -> TrainConfig:
    table = dict(table)
    _check_keys(table, TrainConfig, "train")
    task = table.get("task")
    if task is not None:
        if not isinstance(task, dict):
            raise ConfigError("[train.task] must be a table")
        _check_keys(task, SyntheticTask, "train.task")
    try:
        if task is not None:
            table["task"] = SyntheticTask(**task)
        return TrainConfig(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc


def config_hash(subcommand: str, config: dict) -> str:
    blob = json.dumps({"subcommand": subcommand, "config": config}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Output


def atomic_write(path: Path, text: str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise RunIOError(f"cannot write {path}: {exc}") from exc


def csv_text(schema: str, header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def read_csv(path: Path) -> tuple[str, list[dict]]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema:"):
            raise ConfigError(f"{path}: missing schema header")
        rows = list(csv.DictReader(fh))
    return first.split(":", 1)[1].strip(), rows


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_manifest(out: Path, subcommand: str, config: dict, files: list[str]) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "config_hash": config_hash(subcommand, config),
        "package_version": __version__,
        "files": sorted(files),
    }
    atomic_write(out / "manifest.json", _json(manifest))


def resolve_out_dir(arg: str | None, subcommand: str, config: dict) -> Path:
    if arg:
        return Path(arg)
    root = os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)
    return Path(root) / f"{subcommand}-{config_hash(subcommand, config)[:12]}"


def ensure_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=out, prefix=".probe.")
        os.close(fd)
        os.unlink(tmp)
    except OSError as exc:
        raise RunIOError(f"output directory {out} is not writable: {exc}") from exc


# ---------------------------------------------------------------------------
# simulate


def sim_prediction(cfg: SimConfig) -> float | None:
    """Predicted steady norm^2 at peak gamma, where a closed form applies."""
    eta = cfg.peak_eta
    if cfg.gamma == 0.0:
        return 0.0
    if not 0.0 < eta < 1.0:
        return None
    c_sq = float(cfg.dim)
    if cfg.update_kind == "gaussian_iid":
        return predict_iid(cfg.gamma, eta / cfg.gamma, c_sq).norm_sq
    if cfg.update_kind == "momentum_rms_normalized" and cfg.alpha is not None and cfg.alpha_trace is None:
        return predict_momentum_normalized(cfg.gamma, eta, cfg.alpha, c_sq).norm_sq
    return None


def run_simulate(cfg: SimConfig, out: Path) -> dict:
    res = simulate(cfg)
    header = ["step", "gamma", "alpha", "norm_mean"] + [f"norm_seed{s}" for s in cfg.seeds]
    alphas = res.alpha_trace
    rows = []
    for i, step in enumerate(res.steps):
        a = None if alphas is None else float(alphas[step - 1])
        rows.append([int(step), float(res.gamma_trace[i]), a, float(res.norm_trace[i])] + [float(x) for x in res.seed_norms[:, i]])
    summary = res.summary()
    pred_sq = sim_prediction(cfg)
    summary["predicted_norm_sq"] = pred_sq
    if pred_sq is None:
        summary["predicted_norm"] = summary["relative_error"] = None
    else:
        pred = math.sqrt(pred_sq)
        summary["predicted_norm"] = pred
        summary["relative_error"] = (res.steady_norm_mean - pred) / pred if pred > 0 else 0.0
    summary["status"] = "ok"
    atomic_write(out / "trace.csv", csv_text(TRACE_SCHEMA, header, rows))
    atomic_write(out / "summary.json", _json(summary))
    write_manifest(out, "simulate", cfg.to_dict(), ["trace.csv", "summary.json"])
    return summary


# ---------------------------------------------------------------------------
# train


def metrics_header(layer_names: list[str]) -> list[str]:
    head = ["step", "loss", "gamma", "alpha"]
    for name in layer_names:
        head += [f"{name}.{c}" for c in LAYER_COLUMNS]
    return head


def metrics_row(rec) -> list:
    row = [rec.step, rec.loss, rec.gamma, rec.alpha]
    for lm in rec.layers.values():
        row += [lm.l2_norm, lm.family_norm, lm.grad_norm, lm.theta_dot_u, lm.lam]
    return row


def run_train(cfg: TrainConfig, out: Path, progress: bool = False) -> dict:
    def show(rec):
        acc = "" if rec.train_accuracy is None else f" acc {rec.train_accuracy:.4f}"
        print(f"step {rec.step} loss {rec.loss:.6g} gamma {rec.gamma:.4g}{acc}", file=sys.stderr, flush=True)

    res = run_training(cfg, progress=show if progress else None)
    names = res.model.layer_names
    rows = [metrics_row(r) for r in res.records]
    last = res.records[-1] if res.records else None
    status = "diverged" if res.diverged else "ok"
    if cfg.check_norm_law and res.norm_law_violations:
        status = "norm_law_violation"
    summary = {
        "status": status,
        "initial_loss": res.initial_loss,
        "final_loss": res.final_loss,
        "final_accuracy": None if last is None else last.train_accuracy,
        "steps_completed": 0 if last is None else last.step,
        "norm_law_violations": res.norm_law_violations,
        "final_family_norms": {} if last is None else {n: last.layers[n].family_norm for n in names},
    }
    atomic_write(out / "metrics.csv", csv_text(METRICS_SCHEMA, metrics_header(names), rows))
    atomic_write(out / "summary.json", _json(summary))
    write_manifest(out, "train", cfg.to_dict(), ["metrics.csv", "summary.json"])
    return summary


# ---------------------------------------------------------------------------
# sweep


@dataclasses.dataclass(frozen=True)
class SweepSpec:
    kind: str
    grid: dict
    seeds: tuple[int, ...]
    workers: int = 1
    metrics: tuple[str, ...] = ()

    def points(self) -> list[dict]:
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]


def build_sweep(doc: dict) -> tuple[SweepSpec, dict]:
    table = dict(doc.get("sweep") or {})
    if not table:
        raise ConfigError("sweep needs a [sweep] table")
    unknown = sorted(set(table) - {"kind", "grid", "seeds", "workers", "metrics"})
    if unknown:
        raise ConfigError(f"unknown keys in [sweep]: {', '.join(unknown)}")
    kind = table.get("kind", "train")
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"sweep kind must be one of {SWEEP_KINDS}")
    grid = table.get("grid") or {}
    if not isinstance(grid, dict) or not grid or any(not isinstance(v, list) or not v for v in grid.values()):
        raise ConfigError("sweep grid must map each key to a non-empty list")
    seeds = table.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("sweep seeds must be a non-empty list of integers")
    workers = table.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("sweep workers must be an integer >= 1")
    metrics = tuple(table.get("metrics", DEFAULT_METRICS[kind]))
    spec = SweepSpec(kind, grid, tuple(seeds), workers, metrics)
    base = dict(doc.get(kind) or {})
    # validate every grid point up front
    for point in spec.points():
        for seed in spec.seeds:
            _sweep_config(spec.kind, base, point, seed)
    return spec, base


def _sweep_config(kind: str, base: dict, point: dict, seed: int):
    table = json.loads(json.dumps(base))
    for k, v in point.items():
        set_path(table, k, v)
    if kind == "train":
        table["init_seed"] = table["shuffle_seed"] = seed
        return build_train_config(table)
    table["seeds"] = [seed]
    return build_sim_config(table)


def _point_label(index: int, point: dict) -> str:
    parts = [f"{k}={v}" for k, v in point.items()]
    safe = "_".join(parts).replace("/", "-").replace(" ", "")
    return f"p{index:03d}_{safe}"


def _sweep_worker(job: tuple) -> dict:
    kind, base, point, seed, out = job
    out = Path(out)
    try:
        cfg = _sweep_config(kind, base, point, seed)
        ensure_writable(out)
        summary = run_train(cfg, out) if kind == "train" else run_simulate(cfg, out)
    except Exception as exc:  # recorded, not raised: one bad run must not sink the sweep
        summary = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
        try:
            atomic_write(out / "summary.json", _json(summary))
        except RunIOError:
            pass
    return summary


def aggregate_rows(spec: SweepSpec, results: dict) -> tuple[list[str], list[list]]:
    """One row per grid point: mean and sample std across successful seeds."""
    keys = list(spec.grid)
    header = keys + ["n_ok", "n_seeds", "status"]
    for m in spec.metrics:
        header += [f"{m}_mean", f"{m}_std"]
    rows = []
    for i, point in enumerate(spec.points()):
        summaries = [results[(i, s)] for s in spec.seeds]
        ok = [s for s in summaries if s.get("status") == "ok"]
        status = "ok" if len(ok) == len(summaries) else ("missing" if not ok else "partial")
        row = [point[k] for k in keys] + [len(ok), len(summaries), status]
        for m in spec.metrics:
            vals = [float(s[m]) for s in ok if s.get(m) is not None]
            mean = float(np.mean(vals)) if vals else None
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
            row += [mean, std]
        rows.append(row)
    return header, rows


def run_sweep(spec: SweepSpec, base: dict, out: Path) -> list[list]:
    jobs, index = [], []
    for i, point in enumerate(spec.points()):
        for seed in spec.seeds:
            run_dir = out / _point_label(i, point) / f"seed-{seed}"
            jobs.append((spec.kind, base, point, seed, str(run_dir)))
            index.append((i, seed))
    if spec.workers == 1:
        summaries = [_sweep_worker(j) for j in jobs]
    else:
        with cf.ProcessPoolExecutor(max_workers=spec.workers) as pool:
            summaries = list(pool.map(_sweep_worker, jobs))
    results = dict(zip(index, summaries))
    header, rows = aggregate_rows(spec, results)
    atomic_write(out / "aggregate.csv", csv_text(AGGREGATE_SCHEMA, header, rows))
    config = {"sweep": dataclasses.asdict(spec), spec.kind: base}
    write_manifest(out, "sweep", config, ["aggregate.csv"])
    return rows


# ---------------------------------------------------------------------------
# report


def _plateau(steps: np.ndarray, values: np.ndarray, total: int) -> float:
    sel = (steps >= total / 4) & (steps <= total / 2)
    return float(values[sel].mean()) if sel.any() else float(values[0])


def report_train(run_dir: Path) -> list[str]:
    """Family norms divided by their plateau (mean over the second quarter of training)."""
    _, rows = read_csv(run_dir / "metrics.csv")
    if not rows:
        raise ConfigError(f"{run_dir}: metrics.csv has no rows")
    steps = np.array([int(r["step"]) for r in rows])
    total = int(steps[-1])
    layers = [c[: -len(".family_norm")] for c in rows[0] if c.endswith(".family_norm")]
    cols, lines = {}, []
    for name in layers:
        fn = np.array([float(r[f"{name}.family_norm"]) for r in rows])
        plateau = _plateau(steps, fn, total)
        ratio = fn / plateau if plateau > 0 else np.zeros_like(fn)
        cols[name] = ratio
        tail = ratio[steps > total / 2]
        if tail.size:
            lines.append(f"{name}: plateau {plateau:.4g}  final-half min {tail.min():.3f} max {tail.max():.3f}")
    header = ["step", "loss"] + [f"{n}.family_norm_over_plateau" for n in layers]
    out_rows = [[int(s), float(r["loss"])] + [float(cols[n][i]) for n in layers] for i, (s, r) in enumerate(zip(steps, rows))]
    atomic_write(run_dir / "report.csv", csv_text(REPORT_SCHEMA, header, out_rows))
    return lines


def report_simulate(run_dir: Path) -> list[str]:
    _, rows = read_csv(run_dir / "trace.csv")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = build_sim_config(manifest["config"])
    steps = np.array([int(r["step"]) for r in rows])
    norms = np.array([float(r["norm_mean"]) for r in rows])
    summary = json.loads((run_dir / "summary.json").read_text())
    plateau = summary.get("plateau_mean") or summary.get("steady_norm_mean") or 1.0
    h = cfg.half_life
    header = ["step", "half_lives", "norm_mean", "norm_over_plateau"]
    out_rows = [[int(s), (s / h if math.isfinite(h) else None), float(n), float(n / plateau)] for s, n in zip(steps, norms)]
    atomic_write(run_dir / "report.csv", csv_text(REPORT_SCHEMA, header, out_rows))
    lines = [f"steady norm {summary['steady_norm_mean']:.6g}"]
    if summary.get("predicted_norm") is not None:
        lines.append(f"predicted {summary['predicted_norm']:.6g}  relative error {summary['relative_error']:+.3%}")
    return lines


def report_sweep(run_dir: Path) -> list[str]:
    _, rows = read_csv(run_dir / "aggregate.csv")
    return [", ".join(f"{k}={v}" for k, v in r.items()) for r in rows]


def run_report(run_dir: Path) -> list[str]:
    if (run_dir / "aggregate.csv").exists():
        return report_sweep(run_dir)
    if (run_dir / "metrics.csv").exists():
        return report_train(run_dir)
    if (run_dir / "trace.csv").exists():
        return report_simulate(run_dir)
    raise ConfigError(f"{run_dir} holds no run outputs")


# ---------------------------------------------------------------------------
# predict


def predict_table(gamma: float, alpha=None, c_sq=None, lam=None, eta=None) -> dict:
    """Closed-form quantities for whatever inputs are given."""
    if gamma < 0.0 or not math.isfinite(gamma):
        raise ConfigError("gamma must be finite and >= 0")
    if alpha is not None and not 0.0 < alpha <= 1.0:
        raise ConfigError("alpha must lie in (0, 1]")
    if c_sq is not None and c_sq <= 0.0:
        raise ConfigError("c_sq must be > 0")
    out: dict = {}
    if alpha is not None:
        out["gamma_eff"] = effective_lr(gamma, alpha)
        if c_sq is not None:
            layer = LayerSpec("predict", NormFamily.SPECTRAL, c_sq=c_sq)
            out["scionc_lambda"] = scionc_lambda(gamma, alpha, c_sq, layer, 0.0)
    if lam is not None and c_sq is not None:
        if gamma == 0.0:
            out["iid_norm_sq_exact"] = out["iid_norm_sq_approx"] = 0.0
        else:
            try:
                p = predict_iid(gamma, lam, c_sq)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            out["iid_norm_sq_exact"], out["iid_norm_sq_approx"] = p.exact, p.approx
    if eta is not None and alpha is not None and c_sq is not None:
        try:
            p = predict_momentum_normalized(gamma, eta, alpha, c_sq)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        out["momentum_norm_sq_exact"], out["momentum_norm_sq_approx"] = p.exact, p.approx
    if not out:
        raise ConfigError("nothing to predict: give --alpha, and --c-sq with --lam or --eta")
    return out


# ---------------------------------------------------------------------------
# argparse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="steadywd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("predict", help="closed-form steady-state predictions")
    pr.add_argument("--gamma", type=float, required=True)
    pr.add_argument("--alpha", type=float)
    pr.add_argument("--c-sq", type=float, dest="c_sq")
    pr.add_argument("--lam", type=float)
    pr.add_argument("--eta", type=float)
    pr.add_argument("--json", action="store_true", help="print JSON instead of a table")

    def common(sp):
        sp.add_argument("--config", help="TOML config or JSON run manifest")
        sp.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<command>-<hash>)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    sm = sub.add_parser("simulate", help="random-walk simulation of the weight norm")
    common(sm)
    sm.add_argument("--appendix-a-eta", type=float, help="start from the reference random system at this eta")
    sm.add_argument("--constant", action="store_true", help="with --appendix-a-eta: constant gamma after warmup")
    for flag, typ in (("dim", int), ("steps", int), ("gamma", float), ("lam", float), ("eta", float),
                      ("alpha", float), ("stride", int), ("max-lag", int), ("measure-window", float)):
        sm.add_argument(f"--{flag}", type=typ, dest=flag.replace("-", "_"))
    sm.add_argument("--decay-mode", choices=("coupled", "independent", "corrected"))
    sm.add_argument("--update-kind", choices=("gaussian_iid", "momentum_gaussian", "momentum_rms_normalized", "adam"))
    sm.add_argument("--gamma-shape", choices=("constant", "cosine"))
    sm.add_argument("--seeds", type=int, nargs="+")

    tr = sub.add_parser("train", help="train the toy model")
    common(tr)
    tr.add_argument("--optimizer", choices=("adamw", "adamc", "renorm-adamw", "scion", "scionc"))
    for flag, typ in (("steps", int), ("batch-size", int), ("alpha", float), ("log-every", int), ("warmup-steps", int)):
        tr.add_argument(f"--{flag}", type=typ, dest=flag.replace("-", "_"))
    tr.add_argument("--seed", type=int, help="sets both init_seed and shuffle_seed")
    tr.add_argument("--debug-norm-law", action="store_true", help="check the renormalized AdamW norm law every step")
    tr.add_argument("--quiet", action="store_true", help="no progress lines")

    sw = sub.add_parser("sweep", help="grid x seeds of simulate or train runs")
    common(sw)
    sw.add_argument("--workers", type=int)

    rp = sub.add_parser("report", help="plot-ready CSV and a short text summary of a run directory")
    rp.add_argument("run_dir")
    return p


def _flag_overrides(args, names: list[str]) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _cmd_predict(args) -> int:
    table = predict_table(args.gamma, args.alpha, args.c_sq, args.lam, args.eta)
    if args.json:
        print(json.dumps(table, indent=2))
    else:
        width = max(len(k) for k in table)
        for k, v in table.items():
            print(f"{k:<{width}}  {v:.6g}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    doc = load_config_file(args.config)
    table = dict(doc.get("simulate") or {})
    if args.appendix_a_eta is not None:
        table["appendix_a"] = {"eta": args.appendix_a_eta, "cosine": not args.constant}
    table.update(_flag_overrides(args, ["dim", "steps", "gamma", "lam", "eta", "alpha", "stride", "max_lag",
                                        "measure_window", "decay_mode", "update_kind", "gamma_shape", "seeds"]))
    cfg = build_sim_config(apply_sets(table, args.set))
    out = resolve_out_dir(args.out, "simulate", cfg.to_dict())
    ensure_writable(out)
    summary = run_simulate(cfg, out)
    msg = f"steady norm {summary['steady_norm_mean']:.6g}"
    if summary["relative_error"] is not None:
        msg += f"  predicted {summary['predicted_norm']:.6g}  relative error {summary['relative_error']:+.3%}"
    print(msg)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    doc = load_config_file(args.config)
    table = dict(doc.get("train") or {})
    table.update(_flag_overrides(args, ["optimizer", "steps", "batch_size", "alpha", "log_every", "warmup_steps"]))
    if args.seed is not None:
        table["init_seed"] = table["shuffle_seed"] = args.seed
    if args.debug_norm_law:
        table["check_norm_law"] = True
    cfg = build_train_config(apply_sets(table, args.set))
    out = resolve_out_dir(args.out, "train", cfg.to_dict())
    ensure_writable(out)
    summary = run_train(cfg, out, progress=not args.quiet)
    print(f"final loss {summary['final_loss']:.6g} (initial {summary['initial_loss']:.6g})  status {summary['status']}")
    print(f"wrote {out}")
    if summary["status"] == "diverged":
        print("error: training diverged", file=sys.stderr)
        return EXIT_DIVERGED
    if summary["status"] == "norm_law_violation":
        print(f"error: norm law violated on {summary['norm_law_violations']} tensor-steps", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_sweep(args) -> int:
    doc = load_config_file(args.config)
    doc = apply_sets(doc, args.set)
    if args.workers is not None:
        doc.setdefault("sweep", {})["workers"] = args.workers
    spec, base = build_sweep(doc)
    config = {"sweep": dataclasses.asdict(spec), spec.kind: base}
    out = resolve_out_dir(args.out, "sweep", config)
    ensure_writable(out)
    rows = run_sweep(spec, base, out)
    bad = sum(1 for r in rows if r[len(spec.grid) + 2] != "ok")
    print(f"{len(rows)} grid points, {bad} with failed runs")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise RunIOError(f"{run_dir} is not a directory")
    for line in run_report(run_dir):
        print(line)
    return EXIT_OK


COMMANDS = {
    "predict": _cmd_predict,
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunIOError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
