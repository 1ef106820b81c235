"""Grid runner: train/evaluate every (scenario, method, delta_t, seed) cell and
assemble a CSV + SVG report from the persisted run records.

Grid config (JSON)::

    {
      "scenarios": ["scenarios/int1_varying.json",
                    {"synthetic": {"intersection": "int1", "route": "steady"}}],
      "methods": ["aap-ccda", "asp", "ft30"],
      "delta_ts": [0, 300],
      "seeds": [0, 1, 2],
      "train": {"episodes": 300, "batch_size": 128},
      "eval_episodes": 5,
      "eval_greedy": true,
      "workers": 1,
      "out_dir": "runs/grid"
    }

Relative paths resolve against the config file.  Methods are the learned
designs accepted by ``cyclelab train`` plus the baselines ``ft30``, ``ft40``
and ``webster``.  Each cell writes ``<out_dir>/<cell id>/record.json``; the
report is a pure function of those files.  ``eval_greedy: false`` evaluates
learned policies by sampling from them instead of taking the argmax.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import BASELINE_KINDS, make_controller
from .metrics import direction_groups, green_time_ratio
from .ppo import TrainConfig, evaluate, evaluate_controller, make_env, train
from .scenarios import Scenario, load_scenario, synthetic
from .sim import SpecificationError

log = logging.getLogger(__name__)

LEARNED_METHODS = ("aap-ccda", "aap-fc", "aap-fd", "cnp", "non", "spd", "asp")
METHODS = LEARNED_METHODS + BASELINE_KINDS

RUN_COLUMNS = ("scenario", "method", "delta_t", "seed", "status", "m_q", "m_s",
               "final_reward", "episodes", "elapsed_s", "error")
SUMMARY_COLUMNS = ("scenario", "method", "delta_t", "n_seeds", "n_failed",
                   "m_q_mean", "m_q_std", "m_s_mean", "m_s_std")


@dataclass
class RunRecord:
    scenario: str
    method: str
    delta_t: float
    seed: int
    status: str = "ok"
    rewards: list[float] = field(default_factory=list)
    m_q: float = float("nan")
    m_s: float = float("nan")
    eval_m_q: list[float] = field(default_factory=list)
    eval_m_s: list[float] = field(default_factory=list)
    durations: list[list[int]] = field(default_factory=list)
    green_ratio: dict[str, list[float]] = field(default_factory=dict)
    elapsed_s: float = 0.0
    error: str = ""

    @property
    def cell_id(self) -> str:
        return cell_id(self.scenario, self.method, self.delta_t, self.seed)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        d = json.loads(text)
        for k in ("m_q", "m_s"):
            d[k] = float("nan") if d[k] is None else d[k]
        d["eval_m_s"] = [float("nan") if v is None else v for v in d["eval_m_s"]]
        return cls(**d)


def _jsonable(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def cell_id(scenario: str, method: str, delta_t: float, seed: int) -> str:
    return f"{scenario}__{method}__dt{delta_t:g}__s{seed}"


# -- config --------------------------------------------------------------


@dataclass
class GridConfig:
    scenarios: list[Scenario]
    methods: list[str]
    delta_ts: list[float]
    seeds: list[int]
    train: dict = field(default_factory=dict)
    eval_episodes: int = 5
    eval_greedy: bool = True
    workers: int = 1
    out_dir: Path = Path("runs/grid")

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise SpecificationError(f"unknown methods {bad}; choose from {METHODS}")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise SpecificationError(f"scenario names must be unique, got {names}")
        TrainConfig(**self.train)  # validate early

    def cells(self):
        for sc in self.scenarios:
            for m in self.methods:
                for dt in self.delta_ts:
                    for s in self.seeds:
                        yield sc, m, float(dt), int(s)


def _scenario_entry(entry, base: Path) -> Scenario:
    if isinstance(entry, str):
        return load_scenario(base / entry)
    if isinstance(entry, dict) and "synthetic" in entry:
        kw = dict(entry["synthetic"])
        sc = synthetic(**kw)
        if "name" in entry:
            sc = replace(sc, name=entry["name"])
        return sc
    raise SpecificationError(f"scenario entry must be a path or {{'synthetic': {{...}}}}, got {entry!r}")


def load_grid_config(path) -> GridConfig:
    path = Path(path)
    d = json.loads(path.read_text())
    base = path.parent
    missing = {"scenarios", "methods", "delta_ts", "seeds"} - set(d)
    if missing:
        raise SpecificationError(f"grid config lacks {sorted(missing)}")
    return GridConfig(
        scenarios=[_scenario_entry(e, base) for e in d["scenarios"]],
        methods=list(d["methods"]),
        delta_ts=[float(x) for x in d["delta_ts"]],
        seeds=[int(x) for x in d["seeds"]],
        train=dict(d.get("train", {})),
        eval_episodes=int(d.get("eval_episodes", 5)),
        eval_greedy=bool(d.get("eval_greedy", True)),
        workers=int(d.get("workers", 1)),
        out_dir=base / d.get("out_dir", "runs/grid"),
    )


# -- one cell ------------------------------------------------------------


def run_cell(scenario: Scenario, method: str, delta_t: float, seed: int, train_kw: dict,
             eval_episodes: int, out_dir, eval_greedy: bool = True) -> RunRecord:
    """Train (or run a baseline) and evaluate one cell; failures land in the record."""
    rec = RunRecord(scenario.name, method, delta_t, seed)
    run_dir = Path(out_dir) / rec.cell_id
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if method in BASELINE_KINDS:
            res = evaluate_controller(make_controller(method), scenario, eval_episodes, seed, delta_t)
        else:
            env, topology = make_env(scenario, method, delta_t)
            cfg = TrainConfig(**{**train_kw, "seed": seed})
            result = train(env, cfg, topology, out_dir=run_dir)
            rec.rewards = [float(r) for r in result.rewards]
            res = evaluate(result.agent, env, eval_episodes, seed, greedy=eval_greedy)
        rec.eval_m_q = [float(v) for v in res.m_q]
        rec.eval_m_s = [float(v) for v in res.m_s]
        rec.m_q, rec.m_s = res.mean_m_q, res.mean_m_s
        rows = res.durations[0] if res.durations else []
        rec.durations = [list(map(int, r)) for r in rows]
        if rows:
            groups = direction_groups(scenario.spec)
            rec.green_ratio = {k: [float(x) for x in v] for k, v in green_time_ratio(rows, groups).items()}
    except Exception as exc:  # recorded, the grid carries on
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
        (run_dir / "error.txt").write_text(traceback.format_exc())
        log.warning("cell %s failed: %s", rec.cell_id, rec.error)
    rec.elapsed_s = round(time.perf_counter() - t0, 3)
    (run_dir / "record.json").write_text(rec.to_json())
    return rec


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment_grid(config: GridConfig, progress: bool = False) -> list[RunRecord]:
    """Run every cell, then write the report into ``config.out_dir``."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(sc, m, dt, s, config.train, config.eval_episodes, out, config.eval_greedy) for sc, m, dt, s in config.cells()]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(_run_cell_args, jobs))
    else:
        records = []
        for job in jobs:
            rec = _run_cell_args(job)
            if progress:
                log.info("%s %s m_q=%.3f m_s=%.4f (%.0fs)", rec.cell_id, rec.status, rec.m_q, rec.m_s, rec.elapsed_s)
            records.append(rec)
    write_report(records, out)
    return records


# -- report --------------------------------------------------------------


def load_records(runs_dir) -> list[RunRecord]:
    paths = sorted(Path(runs_dir).glob("*/record.json"))
    if not paths:
        raise SpecificationError(f"no run records under {runs_dir}")
    return [RunRecord.from_json(p.read_text()) for p in paths]


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if not np.isfinite(x) else repr(x)
    return str(x)


def _sort_key(r: RunRecord):
    return (r.scenario, r.method, r.delta_t, r.seed)


def runs_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    for r in sorted(records, key=_sort_key):
        final = r.rewards[-1] if r.rewards else float("nan")
        w.writerow([_fmt(v) for v in (r.scenario, r.method, r.delta_t, r.seed, r.status, r.m_q, r.m_s,
                                      final, len(r.rewards), r.elapsed_s, r.error)])
    return buf.getvalue()


def summarize(records: Sequence[RunRecord]) -> list[dict]:
    """Mean and (population) standard deviation over seeds per (scenario, method, delta_t)."""
    cells: dict[tuple, list[RunRecord]] = {}
    for r in sorted(records, key=_sort_key):
        cells.setdefault((r.scenario, r.method, r.delta_t), []).append(r)
    rows = []
    for (sc, m, dt), recs in cells.items():
        ok = [r for r in recs if r.status == "ok"]
        q = np.array([r.m_q for r in ok])
        s = np.array([r.m_s for r in ok if np.isfinite(r.m_s)])
        rows.append({
            "scenario": sc, "method": m, "delta_t": dt, "n_seeds": len(ok), "n_failed": len(recs) - len(ok),
            "m_q_mean": float(q.mean()) if len(q) else float("nan"),
            "m_q_std": float(q.std()) if len(q) else float("nan"),
            "m_s_mean": float(s.mean()) if len(s) else float("nan"),
            "m_s_std": float(s.std()) if len(s) else float("nan"),
        })
    return rows


def summary_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in summarize(records):
        w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def _figure_svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def _plot_context():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt, {"svg.hashsalt": "cyclelab", "svg.fonttype": "none", "figure.figsize": (7, 4)}


def learning_curve_svg(records: Sequence[RunRecord], scenario: str, delta_t: float) -> str:
    """Mean cumulative reward per episode (band = min/max over seeds), one line per method."""
    plt, rc = _plot_context()
    with plt.rc_context(rc):
        fig, ax = plt.subplots()
        by_method: dict[str, list[list[float]]] = {}
        for r in sorted(records, key=_sort_key):
            if r.scenario == scenario and r.delta_t == delta_t and r.rewards:
                by_method.setdefault(r.method, []).append(r.rewards)
        for method, curves in by_method.items():
            n = min(len(c) for c in curves)
            arr = np.array([c[:n] for c in curves])
            x = np.arange(1, n + 1)
            ax.plot(x, arr.mean(axis=0), label=method, lw=1.2)
            ax.fill_between(x, arr.min(axis=0), arr.max(axis=0), alpha=0.2)
        ax.set_xlabel("episode")
        ax.set_ylabel("cumulative reward")
        ax.set_title(f"{scenario}, dt = {delta_t:g} s")
        if by_method:
            ax.legend(fontsize=8)
        fig.tight_layout()
        svg = _figure_svg(fig)
        plt.close(fig)
    return svg


def green_ratio_svg(record: RunRecord) -> str:
    """Per-cycle green-time ratio of each direction group for one evaluation episode."""
    plt, rc = _plot_context()
    with plt.rc_context(rc):
        fig, ax = plt.subplots()
        for label in sorted(record.green_ratio):
            series = record.green_ratio[label]
            ax.plot(np.arange(1, len(series) + 1), series, label=label, lw=1.2)
        ax.set_xlabel("cycle")
        ax.set_ylabel("green-time ratio")
        ax.set_ylim(0, 1)
        ax.set_title(f"{record.scenario}, {record.method}, dt = {record.delta_t:g} s, seed {record.seed}")
        if record.green_ratio:
            ax.legend(fontsize=8)
        fig.tight_layout()
        svg = _figure_svg(fig)
        plt.close(fig)
    return svg


def write_report(records: Sequence[RunRecord], out_dir) -> dict[str, Path]:
    """Write runs.csv, summary.csv and SVG plots; identical records give identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}

    def put(name, text):
        path = out / name
        path.write_text(text, encoding="utf-8")
        written[name] = path

    put("runs.csv", runs_csv(records))
    put("summary.csv", summary_csv(records))
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    for sc, dt in sorted({(r.scenario, r.delta_t) for r in records}):
        if any(r.rewards for r in records if r.scenario == sc and r.delta_t == dt):
            put(f"plots/learning_{sc}_dt{dt:g}.svg", learning_curve_svg(records, sc, dt))
    for r in sorted(records, key=_sort_key):
        if r.status == "ok" and r.green_ratio:
            put(f"plots/green_ratio_{r.cell_id}.svg", green_ratio_svg(r))
    return written


def report(runs_dir, out_dir=None) -> dict[str, Path]:
    """Rebuild the report from the records persisted under ``runs_dir``."""
    return write_report(load_records(runs_dir), out_dir or runs_dir)


def agent_checkpoint_path(runs_dir, record: RunRecord) -> Path:
    return Path(runs_dir) / record.cell_id / "checkpoint.npz"
