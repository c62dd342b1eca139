"""Declarative experiment configs, seeded sweeps and result maps."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import itertools
import json
import math
import multiprocessing
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DivergenceError
from .experiments import KINDS, CellOutput
from .mrr import PRESETS, MrrParams, StabilityMap, params_from_mapping
from .units import parse_quantity

WORKERS_ENV = "RINGRC_WORKERS"

_FEEDBACK_AXES = ("eta_F", "phi_F", "P", "delta_lambda", "delta_nu", "tau_F")
ALLOWED_AXES = {
    "stability_map": ("P", "delta_nu", "delta_lambda"),
    "logic_task": ("bitrate", "P", "delta_nu", "delta_lambda"),
    "xor_rc": ("bitrate",),
    "narma10": _FEEDBACK_AXES,
    "mackey_glass": _FEEDBACK_AXES,
    "memory_capacity": _FEEDBACK_AXES,
    "dcp_equalize": ("fiber_length", "bitrate"),
    "iris": ("n_virtual",),
}


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    kind: str
    preset: str
    seed: int
    output: Path
    params: MrrParams
    axes: dict                     # name -> tuple of floats, in sweep order
    settings: dict
    source_hash: str = ""

    @property
    def n_cells(self) -> int:
        return math.prod(len(v) for v in self.axes.values())

    def cells(self):
        names = list(self.axes)
        for idx, values in enumerate(itertools.product(*self.axes.values())):
            yield idx, dict(zip(names, values))


def parse_axis(text: str) -> tuple:
    """``a, b, c`` (explicit values) or ``min:max:steps`` (inclusive, evenly spaced)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("range must be min:max:steps")
        lo, hi = parse_quantity(parts[0]), parse_quantity(parts[1])
        steps = parse_quantity(parts[2])
        if steps != int(steps) or steps < 1:
            raise ValueError("steps must be an integer >= 1")
        if steps == 1:
            if lo != hi:
                raise ValueError("a single step needs min == max")
            return (float(lo),)
        return tuple(float(v) for v in np.linspace(lo, hi, int(steps)))
    values = tuple(parse_quantity(t) for t in text.split(",") if t.strip())
    if not values:
        raise ValueError("empty axis")
    return values


def _parse_setting(key, text, default):
    if isinstance(default, str):
        return text.strip()
    if isinstance(default, tuple):
        return tuple(int(parse_quantity(t)) for t in text.split(",") if t.strip())
    v = parse_quantity(text)
    if isinstance(default, int) and not isinstance(default, bool):
        if v != int(v):
            raise ValueError("must be an integer")
        return int(v)
    return float(v)


def _hash_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Parse and validate an INI experiment description; raise ConfigError listing every problem."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # axis names are case-sensitive (eta_F)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([("config", str(exc).splitlines()[0])]) from None
    problems = []
    if not cp.has_section("experiment"):
        raise ConfigError([("experiment", "missing section")])
    exp = cp["experiment"]
    kind_name = exp.get("kind", "").strip()
    if kind_name not in KINDS:
        raise ConfigError([("experiment.kind",
                            f"unknown kind {kind_name!r}; known: {', '.join(KINDS)}")])
    kind = KINDS[kind_name]
    preset_name = exp.get("preset", kind.default_preset).strip()
    if preset_name not in PRESETS:
        problems.append(("experiment.preset",
                         f"unknown preset {preset_name!r}; known: {', '.join(PRESETS)}"))
    seed = None
    if "seed" not in exp:
        problems.append(("experiment.seed", "required for reproducibility"))
    else:
        try:
            seed = int(exp["seed"])
            if seed < 0:
                raise ValueError
        except ValueError:
            problems.append(("experiment.seed", f"must be a non-negative integer, got {exp['seed']!r}"))
    for key in exp:
        if key not in ("kind", "preset", "seed", "output"):
            problems.append((f"experiment.{key}", "unknown key"))
    output = Path(exp.get("output", "out").strip())
    if base_dir is not None and not output.is_absolute():
        output = base_dir / output

    params = None
    if preset_name in PRESETS:
        device = dict(cp["device"]) if cp.has_section("device") else {}
        try:
            params = params_from_mapping(device, PRESETS[preset_name])
        except ConfigError as exc:
            problems += [(f"device.{k}", m) for k, m in exc.problems]
        except (TypeError, ValueError) as exc:
            problems.append(("device", str(exc)))

    axes = {k: tuple(v) for k, v in kind.axes.items()}
    if cp.has_section("sweep"):
        for key, text in cp["sweep"].items():
            if key not in ALLOWED_AXES[kind_name]:
                problems.append((f"sweep.{key}", f"not a sweepable axis for {kind_name}; "
                                 f"allowed: {', '.join(ALLOWED_AXES[kind_name])}"))
                continue
            try:
                values = parse_axis(text)
            except ValueError as exc:
                problems.append((f"sweep.{key}", str(exc)))
                continue
            if len(set(values)) != len(values):
                problems.append((f"sweep.{key}", "duplicate values"))
            if key in ("delta_nu", "delta_lambda"):
                other = "delta_lambda" if key == "delta_nu" else "delta_nu"
                axes.pop(other, None)
            axes[key] = values

    settings = dict(kind.defaults)
    if cp.has_section("task"):
        for key, text in cp["task"].items():
            if key in ("delta_nu", "delta_lambda"):
                settings.pop("delta_lambda" if key == "delta_nu" else "delta_nu", None)
                default = 0.0
            elif key not in settings:
                problems.append((f"task.{key}", f"unknown setting; known: {', '.join(sorted(settings))}"))
                continue
            else:
                default = settings[key]
            try:
                settings[key] = _parse_setting(key, text, default)
            except ValueError as exc:
                problems.append((f"task.{key}", str(exc)))
    # a swept quantity is not also a fixed setting
    for key in axes:
        settings.pop(key, None)
    if any(k in axes for k in ("delta_nu", "delta_lambda")):
        settings.pop("delta_nu", None)
        settings.pop("delta_lambda", None)
    for key in ("eta_F",):
        if key in axes and any(not 0 <= v <= 1 for v in axes[key]):
            problems.append((f"sweep.{key}", "values must lie in [0, 1]"))
    for key in ("P", "bitrate", "fiber_length", "n_virtual"):
        if key in axes and any(v < 0 or (key != "fiber_length" and v == 0) for v in axes[key]):
            problems.append((f"sweep.{key}", "values must be positive"))
    for name in cp.sections():
        if name not in ("experiment", "device", "sweep", "task"):
            problems.append((name, "unknown section"))
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(kind_name, preset_name, seed, output, params, axes, settings,
                            _hash_text(text))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([("path", f"cannot read {path}: {exc.strerror}")]) from None
    return parse_config(text, path.parent)


# ---------------------------------------------------------------- result maps

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse_value(text: str):
    if text.startswith("<"):
        return 0.0
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


@dataclass
class ResultMap:
    """One record per grid cell, in row-major order of ``axes``.

    ``floors`` maps each BER-like metric to its test length M. A value of 0 for
    such a metric means fewer than one error in M bits and is written as
    ``< 1/M`` with ``<metric>_floor`` set.
    """

    axes: dict
    metric_names: list
    records: list = field(default_factory=list)   # dicts: point, metrics, status, seed, cell_seed
    floors: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axes = {k: tuple(float(x) for x in v) for k, v in self.axes.items()}
        for k, v in self.axes.items():
            if len(v) < 1:
                raise ValueError(f"axis {k} is empty")

    @property
    def shape(self) -> tuple:
        return tuple(len(v) for v in self.axes.values())

    def check_complete(self) -> None:
        if len(self.records) != math.prod(self.shape):
            raise ValueError(f"{len(self.records)} records for a grid of {math.prod(self.shape)} cells")

    def values(self, metric: str) -> np.ndarray:
        """Metric as an array shaped like the grid (NaN for diverged cells)."""
        return np.array([float(r["metrics"].get(metric, math.nan)) for r in self.records]
                        ).reshape(self.shape)

    def at_floor(self, metric: str) -> np.ndarray:
        return (self.values(metric) == 0) & (metric in self.floors)

    def header(self) -> list:
        cols = list(self.axes) + ["status", "seed", "cell_seed"]
        for m in self.metric_names:
            cols.append(m)
            if m in self.floors:
                cols.append(f"{m}_floor")
        if self.floors:
            cols.append("n_test")
        return cols

    def to_csv_text(self) -> str:
        self.check_complete()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        n_test = set(self.floors.values())
        if len(n_test) > 1:
            raise ValueError("all floor metrics in one map must share the test length")
        for r in self.records:
            row = [_fmt(r["point"][k]) for k in self.axes]
            row += [r["status"], str(r["seed"]), str(r["cell_seed"])]
            for m in self.metric_names:
                v = r["metrics"].get(m, math.nan)
                if m in self.floors:
                    floor = r["status"] == "ok" and float(v) == 0.0
                    row += [f"< 1/{self.floors[m]}" if floor else _fmt(v), str(int(floor))]
                else:
                    row.append(_fmt(v))
            if self.floors:
                row.append(str(next(iter(n_test))))
            w.writerow(row)
        return buf.getvalue()

    def to_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text())

    @classmethod
    def from_csv_text(cls, text: str) -> "ResultMap":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty map file")
        header = rows[0]
        if "status" not in header:
            raise ValueError("map file has no status column")
        k = header.index("status")
        axis_names = header[:k]
        if header[k + 1:k + 3] != ["seed", "cell_seed"]:
            raise ValueError("expected seed and cell_seed after status")
        rest = header[k + 3:]
        has_n = bool(rest) and rest[-1] == "n_test"
        if has_n:
            rest = rest[:-1]
        metrics = [c for c in rest if not (c.endswith("_floor") and c[:-6] in rest)]
        floor_cols = [c[:-6] for c in rest if c.endswith("_floor") and c[:-6] in rest]
        records, axes = [], {a: [] for a in axis_names}
        n_test = None
        for row in rows[1:]:
            rec = dict(zip(header, row))
            point = {a: float(rec[a]) for a in axis_names}
            for a in axis_names:
                if point[a] not in axes[a]:
                    axes[a].append(point[a])
            if has_n:
                n_test = int(rec["n_test"])
            records.append({"point": point, "status": rec["status"], "seed": int(rec["seed"]),
                            "cell_seed": int(rec["cell_seed"]),
                            "metrics": {m: _parse_value(rec[m]) for m in metrics}})
        floors = {m: n_test for m in floor_cols} if n_test is not None else {}
        out = cls({a: tuple(v) for a, v in axes.items()}, metrics, records, floors)
        out.check_complete()
        return out

    @classmethod
    def from_csv(cls, path) -> "ResultMap":
        return cls.from_csv_text(Path(path).read_text())


def compare_baseline(map_out: ResultMap, map_in: ResultMap) -> ResultMap:
    """Cellwise ratio RB = BER_in / BER_out for every BER metric both maps share.

    A BER at the statistical floor enters as 1/M, so RB on such cells is a
    lower bound; ``rb_<metric>_floor`` flags them.
    """
    if map_out.axes != map_in.axes:
        raise ValueError("axis mismatch between the two maps")
    shared = [m for m in map_out.metric_names if m in map_out.floors and m in map_in.floors]
    if not shared:
        raise ValueError("maps share no BER metric")
    names = []
    for m in shared:
        names += [f"rb_{m}", f"rb_{m}_floor"]
    records = []
    for ro, ri in zip(map_out.records, map_in.records):
        metrics = {}
        ok = ro["status"] == "ok" and ri["status"] == "ok"
        for m in shared:
            bo, bi = float(ro["metrics"][m]), float(ri["metrics"][m])
            floor_o = ok and bo == 0
            eff_o = bo if bo > 0 else 1.0 / map_out.floors[m]
            eff_i = bi if bi > 0 else 1.0 / map_in.floors[m]
            metrics[f"rb_{m}"] = eff_i / eff_o if ok else math.nan
            metrics[f"rb_{m}_floor"] = int(floor_o)
        records.append({"point": dict(ro["point"]), "metrics": metrics,
                        "status": "ok" if ok else "diverged",
                        "seed": ro["seed"], "cell_seed": ro["cell_seed"]})
    return ResultMap(dict(map_out.axes), names, records)


def best_power_projection(rmap: ResultMap, metrics=None, power_axis: str = "P"):
    """Minimum of each BER metric over power, and the lowest power achieving it.

    Returns ``(best_map, power_map)`` over the remaining axes.
    """
    if power_axis not in rmap.axes:
        raise ValueError(f"map has no {power_axis} axis")
    metrics = list(metrics or [m for m in rmap.metric_names if m in rmap.floors] or rmap.metric_names)
    names = list(rmap.axes)
    pax = names.index(power_axis)
    rest = {k: v for k, v in rmap.axes.items() if k != power_axis}
    powers = rmap.axes[power_axis]
    order = np.argsort(powers, kind="stable")
    by_point = {tuple(r["point"][k] for k in names): r for r in rmap.records}
    best_recs, power_recs = [], []
    for combo in itertools.product(*rest.values()):
        point = dict(zip(rest, combo))
        bm, pm, seeds = {}, {}, None
        ok = False
        for m in metrics:
            best, p_best = math.inf, math.nan
            for i in order:
                key = list(combo)
                key.insert(pax, powers[i])
                r = by_point[tuple(key)]
                seeds = seeds or (r["seed"], r["cell_seed"])
                v = float(r["metrics"].get(m, math.nan))
                if r["status"] == "ok" and v < best:   # strict: ties keep the lower power
                    best, p_best = v, powers[i]
            ok = ok or math.isfinite(best)
            bm[m] = best if math.isfinite(best) else math.nan
            pm[m] = p_best
        status = "ok" if ok else "diverged"
        base = {"point": point, "status": status, "seed": seeds[0], "cell_seed": seeds[1]}
        best_recs.append(dict(base, metrics=bm))
        power_recs.append(dict(base, metrics=pm))
    floors = {m: rmap.floors[m] for m in metrics if m in rmap.floors}
    return (ResultMap(rest, metrics, best_recs, floors),
            ResultMap(rest, metrics, power_recs))


# ---------------------------------------------------------------- running

def cell_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _run_cell(job):
    kind_name, params, settings, point, seed, index, keep_trace = job
    kind = KINDS[kind_name]
    cs = cell_seed(seed, index)
    data_seed = seed if kind.shared_data else None
    try:
        out = kind.runner(params, settings, point, cs, keep_trace=keep_trace, data_seed=data_seed)
        status = "ok"
    except (DivergenceError, FloatingPointError) as exc:
        out, status = CellOutput({}, 0.0), "diverged"
        out.files = {"error.txt": f"{exc}\n"}
    return index, point, cs, status, out


def worker_count() -> int:
    text = os.environ.get(WORKERS_ENV, "1").strip() or "1"
    try:
        n = int(text)
    except ValueError:
        raise ConfigError([(WORKERS_ENV, f"must be an integer, got {text!r}")]) from None
    if n < 1:
        raise ConfigError([(WORKERS_ENV, "must be >= 1")])
    return n


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _trace_csv(fs: float, columns: dict) -> str:
    names = list(columns)
    n = min(len(np.asarray(c)) for c in columns.values())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + names)
    cols = [np.asarray(columns[c], dtype=float) for c in names]
    for i in range(n):
        w.writerow([repr(i / fs)] + [repr(float(c[i])) for c in cols])
    return buf.getvalue()


@dataclass
class RunSummary:
    result: ResultMap
    output: Path
    manifest: dict


def run_experiment(cfg: ExperimentConfig, dump_traces: bool = False,
                   workers: int | None = None, log=None) -> RunSummary:
    """Run every grid cell and write ``map.csv``, ``manifest.json`` and side files.

    Cells run in a process pool when ``workers > 1``; results are consumed in
    cell order so the output does not depend on scheduling.
    """
    workers = worker_count() if workers is None else workers
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.kind, cfg.params, cfg.settings, point, cfg.seed, idx, dump_traces)
            for idx, point in cfg.cells()]
    t0 = time.perf_counter()
    records, floors, names, rates = [], {}, [], set()
    baseline = []

    def consume(results):
        for index, point, cs, status, out in results:
            for m in out.metrics:
                if m not in names:
                    names.append(m)
            floors.update(out.floors)
            if out.sample_rate:
                rates.add(float(out.sample_rate))
            rec = {"point": point, "metrics": out.metrics, "status": status,
                   "seed": cfg.seed, "cell_seed": cs}
            records.append(rec)
            for rel, text in out.files.items():
                p = out_dir / "reports" / f"cell{index}_{rel}"
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_text(text)
            if dump_traces and out.trace is not None:
                p = out_dir / "trace" / f"cell{index}.csv"
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_text(_trace_csv(*out.trace))
            if log:
                log(f"cell {index + 1}/{len(jobs)} {status} "
                    + " ".join(f"{k}={_fmt(v)}" for k, v in out.metrics.items()
                               if not k.startswith("m_")))

    if workers > 1 and len(jobs) > 1:
        with multiprocessing.get_context("fork").Pool(min(workers, len(jobs))) as pool:
            consume(pool.imap(_run_cell, jobs, chunksize=1))
    else:
        consume(map(_run_cell, jobs))
    wall = time.perf_counter() - t0

    result = ResultMap(cfg.axes, names, records, floors)
    result.to_csv(out_dir / "map.csv")
    written = ["map.csv"]
    # input-only baseline for BER tasks, so that `compare map.csv baseline.csv` gives RB
    in_names = [m for m in names if m.startswith("ber_in")]
    if in_names:
        base_names = ["ber" + m[len("ber_in"):] for m in in_names]
        base_recs = [dict(r, metrics={b: r["metrics"].get(i, math.nan)
                                      for b, i in zip(base_names, in_names)}) for r in records]
        ResultMap(cfg.axes, base_names, base_recs,
                  {b: floors[i] for b, i in zip(base_names, in_names)}).to_csv(out_dir / "baseline.csv")
        written.append("baseline.csv")
    if "P" in cfg.axes and floors:
        best, at = best_power_projection(result)
        best.to_csv(out_dir / "best.csv")
        at.to_csv(out_dir / "best_power.csv")
        written += ["best.csv", "best_power.csv"]
    if cfg.kind == "stability_map" and list(cfg.axes) == ["P", "delta_nu"]:
        try:
            StabilityMap(np.array(cfg.axes["P"]), np.array(cfg.axes["delta_nu"]),
                         result.values("sp_freq_hz") > 0,
                         np.nan_to_num(result.values("sp_freq_hz"))).to_csv(out_dir / "stability.csv")
            written.append("stability.csv")
        except ValueError:
            pass   # axes not strictly increasing; map.csv still has everything

    statuses = [r["status"] for r in records]
    manifest = {
        "kind": cfg.kind,
        "preset": cfg.preset,
        "seed": cfg.seed,
        "config_sha256": cfg.source_hash,
        "code_version": __version__,
        "device": _jsonable(asdict(cfg.params)),
        "settings": _jsonable(cfg.settings),
        "axes": _jsonable(cfg.axes),
        "n_cells": len(records),
        "status_counts": {s: statuses.count(s) for s in sorted(set(statuses))},
        "simulated_sample_rate_hz": sorted(rates),
        "workers": workers,
        "wall_time_s": wall,
        "files": written,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunSummary(result, out_dir, manifest)
