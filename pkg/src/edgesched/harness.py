"""Repeated seeded runs of every scheduler, with cost measurement and export.

Runtime means different things per algorithm family. For the heuristics it is
schedule construction wall time plus the simulated provisioning time of the
resulting schedule. For the learners it is the full training wall time.
RAM is the peak resident-set growth over the pre-run baseline, sampled at
10 Hz. Energy is a linear CPU-time proxy, not a measurement.
"""
from __future__ import annotations

import csv
import json
import os
import statistics
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import psutil

from .agent import ConvergenceConfig, RewardConfig, train, train_vanilla
from .baselines import bestfit_schedule, edf_schedule
from .convergence import detect_convergence
from .dqn import DqnHyperparams
from .errors import InvalidConfig, NotFound
from .evaluation import DEFAULT_U_TH, hit_ratio, simulated_provisioning
from .scenario import Scenario

__all__ = ["ALGORITHMS", "AggregateReport", "ExperimentConfig", "RunMetrics", "detect_convergence",
           "energy_proxy", "execute", "export_csv", "run_experiment"]

ALGORITHMS = ("arl", "vrl", "edf", "bestfit")
DEFAULT_WATTS = 15.0
DEFAULT_REPETITIONS = 31

CSV_HEADER = ["row", "algorithm", "seed", "hit_ratio_final", "runtime_seconds", "convergence_episode",
              "peak_ram_bytes", "energy_joules_proxy", "cpu_seconds", "total_steps", "episodes",
              "simulated_provisioning_seconds"]
AGG_METRICS = CSV_HEADER[3:]
MEASURED = ("runtime_seconds", "peak_ram_bytes", "energy_joules_proxy", "cpu_seconds")


@dataclass(frozen=True)
class ExperimentConfig:
    u_th: float = DEFAULT_U_TH
    hyper: DqnHyperparams = field(default_factory=DqnHyperparams)
    reward: RewardConfig = field(default_factory=RewardConfig)
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)
    step_cap_factor: int = 50
    watts_per_core: float = DEFAULT_WATTS
    measure_ram: bool = True
    jobs: int = 1

    def to_dict(self) -> dict:
        return {
            "u_th": self.u_th,
            "hyper": self.hyper.to_dict(),
            "reward": asdict(self.reward),
            "convergence": asdict(self.convergence),
            "step_cap_factor": self.step_cap_factor,
            "watts_per_core": self.watts_per_core,
            "measure_ram": self.measure_ram,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "hyper" in d:
            d["hyper"] = DqnHyperparams.from_dict(d["hyper"])
        if "reward" in d:
            d["reward"] = RewardConfig(**d["reward"])
        if "convergence" in d:
            d["convergence"] = ConvergenceConfig(**d["convergence"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def energy_proxy(cpu_time_seconds: float, watts_per_core: float = DEFAULT_WATTS) -> float:
    """CPU seconds times a fixed per-core wattage; a proxy, never a measurement."""
    if cpu_time_seconds < 0:
        raise ValueError("cpu time must be >= 0")
    return cpu_time_seconds * watts_per_core


class PeakRss:
    """Context manager tracking peak RSS growth of this process above its entry value."""

    def __init__(self, hz: float = 10.0, enabled: bool = True):
        self.period = 1.0 / hz
        self.enabled = enabled
        self.peak_bytes = 0
        self._proc = psutil.Process(os.getpid())
        self._stop = threading.Event()

    def _sample(self):
        self._peak = max(self._peak, self._proc.memory_info().rss)

    def _loop(self):
        while not self._stop.wait(self.period):
            self._sample()

    def __enter__(self):
        if self.enabled:
            self._base = self._proc.memory_info().rss
            self._peak = self._base
            self._thread = threading.Thread(target=self._loop, daemon=True)
            self._thread.start()
        return self

    def __exit__(self, *exc):
        if self.enabled:
            self._stop.set()
            self._thread.join()
            self._sample()
            self.peak_bytes = self._peak - self._base
        return False


@dataclass
class RunMetrics:
    algorithm: str
    seed: int
    hit_ratio_final: float
    convergence_episode: int | None
    total_steps: int
    episodes: int
    simulated_provisioning_seconds: float
    schedule: list
    series: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0
    peak_ram_bytes: int = 0
    energy_joules_proxy: float = 0.0
    cpu_seconds: float = 0.0

    def row(self) -> dict:
        d = {k: getattr(self, k) for k in CSV_HEADER[1:]}
        d["row"] = "run"
        return d

    def to_dict(self, measured: bool = True) -> dict:
        d = {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "hit_ratio_final": self.hit_ratio_final,
            "convergence_episode": self.convergence_episode,
            "total_steps": self.total_steps,
            "episodes": self.episodes,
            "simulated_provisioning_seconds": self.simulated_provisioning_seconds,
            "schedule": self.schedule,
            "series": self.series,
        }
        if measured:
            d["measured"] = {k: getattr(self, k) for k in MEASURED}
        return d


def execute(scenario: Scenario, algorithm: str, seed: int, cfg: ExperimentConfig | None = None,
            debug_log=None) -> RunMetrics:
    """One run of one algorithm; returns its metrics."""
    cfg = cfg or ExperimentConfig()
    if algorithm not in ALGORITHMS:
        raise NotFound(f"unknown algorithm {algorithm!r}")
    with PeakRss(enabled=cfg.measure_ram) as ram:
        cpu0, wall0 = time.process_time(), time.perf_counter()
        if algorithm in ("edf", "bestfit"):
            fn = edf_schedule if algorithm == "edf" else bestfit_schedule
            schedule = fn(scenario, cfg.u_th)
            wall = time.perf_counter() - wall0
            prov = simulated_provisioning(schedule, scenario)
            m = RunMetrics(algorithm, seed, hit_ratio(schedule, scenario), None, 0, 0, prov,
                           schedule.to_dict()["assignments"], runtime_seconds=wall + prov)
        else:
            kwargs = dict(hyper=cfg.hyper, reward_cfg=cfg.reward, convergence_cfg=cfg.convergence,
                          seed=seed, u_th=cfg.u_th, debug_log=debug_log)
            if algorithm == "arl":
                res = train(scenario, **kwargs)
            else:
                res = train_vanilla(scenario, step_cap_factor=cfg.step_cap_factor, **kwargs)
            m = RunMetrics(algorithm, seed, res.final_hit_ratio, res.convergence_episode, res.total_steps,
                           res.episodes, simulated_provisioning(res.best_schedule, scenario),
                           res.best_schedule.to_dict()["assignments"], res.series,
                           runtime_seconds=res.learning_time_seconds)
        m.cpu_seconds = time.process_time() - cpu0
    m.peak_ram_bytes = ram.peak_bytes
    m.energy_joules_proxy = energy_proxy(m.cpu_seconds, cfg.watts_per_core)
    return m


def _stats(values: list) -> dict:
    if not values:
        return {"mean": None, "median": None, "stdev": None}
    return {"mean": statistics.mean(values), "median": statistics.median(values),
            "stdev": statistics.pstdev(values)}


def aggregate_rows(rows: list[dict]) -> dict:
    """Per algorithm, mean/median/population stdev of every metric (missing values skipped)."""
    out = {}
    for alg in dict.fromkeys(r["algorithm"] for r in rows):
        mine = [r for r in rows if r["algorithm"] == alg]
        out[alg] = {k: _stats([r[k] for r in mine if r[k] is not None]) for k in AGG_METRICS}
        out[alg]["count"] = len(mine)
    return out


@dataclass
class AggregateReport:
    algorithms: tuple
    repetitions: int
    base_seed: int
    config: dict
    runs: list[RunMetrics]

    @property
    def aggregates(self) -> dict:
        return aggregate_rows([r.row() for r in self.runs])

    def runs_of(self, algorithm: str) -> list[RunMetrics]:
        return [r for r in self.runs if r.algorithm == algorithm]

    def to_dict(self, measured: bool = True) -> dict:
        agg = {}
        for a, m in self.aggregates.items():
            agg[a] = {k: v for k, v in m.items() if k not in MEASURED}
            if measured:
                agg[a]["measured"] = {k: m[k] for k in MEASURED}
        return {
            "algorithms": list(self.algorithms),
            "repetitions": self.repetitions,
            "base_seed": self.base_seed,
            "config": self.config,
            "runs": [r.to_dict(measured) for r in self.runs],
            "aggregates": agg,
        }


def _job(args):
    scenario, alg, seed, cfg = args
    return execute(scenario, alg, seed, cfg)


def run_experiment(scenario: Scenario, algorithms=ALGORITHMS, repetitions: int = DEFAULT_REPETITIONS,
                   base_seed: int = 0, cfg: ExperimentConfig | None = None) -> AggregateReport:
    """Run every algorithm ``repetitions`` times with seeds ``base_seed + r``.

    Runs go to a process pool when ``cfg.jobs > 1``, unless RAM is measured;
    per-process RSS would be meaningless then, so that case stays sequential.
    """
    cfg = cfg or ExperimentConfig()
    if repetitions < 1:
        raise InvalidConfig("repetitions must be >= 1")
    algorithms = tuple(algorithms)
    for alg in algorithms:
        if alg not in ALGORITHMS:
            raise NotFound(f"unknown algorithm {alg!r}")
    jobs = [(scenario, alg, base_seed + r, cfg) for alg in algorithms for r in range(repetitions)]
    if cfg.jobs > 1 and not cfg.measure_ram:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            runs = list(pool.map(_job, jobs))
    else:
        runs = [_job(j) for j in jobs]
    return AggregateReport(algorithms, repetitions, base_seed, cfg.to_dict(), runs)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_csv(report: AggregateReport, path) -> dict:
    """Write the CSV plus a sibling ``.svg`` scatter and ``.json`` report.

    One ``run`` row per (algorithm, repetition), then ``mean``/``median``/``stdev``
    rows per algorithm. Floats are written with ``repr`` so they parse back exactly.
    Returns the three paths.
    """
    path = Path(path)
    rows = [r.row() for r in report.runs]
    agg = aggregate_rows(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_cell(r[k]) for k in CSV_HEADER])
        for alg, stats in agg.items():
            for stat in ("mean", "median", "stdev"):
                w.writerow([stat, alg, ""] + [_cell(stats[k][stat]) for k in AGG_METRICS])
    svg = path.with_suffix(".svg")
    plot_report(report, svg)
    js = path.with_suffix(".json")
    with open(js, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return {"csv": path, "svg": svg, "json": js}


def read_csv_runs(path) -> list[dict]:
    """Parse the ``run`` rows of an exported CSV back into typed dicts."""
    ints = {"seed", "convergence_episode", "peak_ram_bytes", "total_steps", "episodes"}
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec["row"] != "run":
                continue
            d = {"row": "run", "algorithm": rec["algorithm"]}
            for k in CSV_HEADER[2:]:
                v = rec[k]
                d[k] = None if v == "" else (int(v) if k in ints else float(v))
            out.append(d)
    return out


def plot_report(report: AggregateReport, path) -> None:
    """Hit-ratio against runtime, RAM and energy, one marker per run."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "edgesched", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
        panels = (("runtime_seconds", "runtime [s]"), ("peak_ram_bytes", "peak RAM growth [MiB]"),
                  ("energy_joules_proxy", "energy proxy [J]"))
        for ax, (key, label) in zip(axes, panels):
            for alg in report.algorithms:
                runs = report.runs_of(alg)
                xs = [getattr(r, key) / (2 ** 20 if key == "peak_ram_bytes" else 1) for r in runs]
                ax.scatter(xs, [r.hit_ratio_final for r in runs], label=alg, s=18)
            ax.set_xlabel(label)
            ax.set_ylabel("hit-ratio")
            if key == "runtime_seconds" and all(getattr(r, key) > 0 for r in report.runs):
                ax.set_xscale("log")
        axes[0].legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)

