"""Experiment orchestration: sweeps, seeds, result tables and beampatterns.

Result CSV columns (schema version 1)::

    schema, axis, value, method, rc, rs, cil, sil,
    complex_up, complex_up_literal, bits_up, bits_down, rounds

Wall-clock times go to a separate ``timing.csv`` so the result table is
byte-identical across runs with the same spec and seed.
"""
from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines, beamnet, federate, metrics
from .channel import Dataset, NetworkConfig, generate_dataset

SCHEMA_VERSION = 1
RESULT_COLUMNS = ["schema", "axis", "value", "method", "rc", "rs", "cil", "sil",
                  "complex_up", "complex_up_literal", "bits_up", "bits_down", "rounds"]
SWEEP_AXES = ("snr_db", "n_t", "rho", "prune_factor")
LEARNED = ("VFL", "HFL", "PerCellDL")
METHODS = LEARNED + ("MRT", "IMT", "CBF", "WMMSE")
TS_CORNERS = (0.99, 0.01)
WORKERS_ENV = "FEDISAC_WORKERS"


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    scenario: NetworkConfig = field(default_factory=NetworkConfig)
    train: federate.TrainConfig = field(default_factory=federate.TrainConfig)
    methods: list = field(default_factory=lambda: ["VFL", "HFL", "PerCellDL", "MRT"])
    rho: Optional[float] = None
    alpha: Optional[float] = None   # HFL leakage weights; default from the scenario
    beta: Optional[float] = None
    sweep: dict = field(default_factory=lambda: {"snr_db": [25.0]})
    n_train: int = 2000
    n_test: int = 500
    seed: int = 0
    out_dir: Optional[str] = None
    beampattern: bool = False
    beampattern_samples: int = 1
    pin_theta_deg: Optional[list] = None    # fixes target angles of the test set
    wmmse_iters: int = 100

    def validate(self) -> None:
        if len(self.sweep) != 1:
            raise SpecError("exactly one sweep axis is required")
        axis, vals = next(iter(self.sweep.items()))
        if axis not in SWEEP_AXES:
            raise SpecError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
        if not isinstance(vals, list) or not vals:
            raise SpecError("sweep values must be a nonempty list")
        if not self.methods:
            raise SpecError("methods must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise SpecError(f"unknown methods {bad}; expected a subset of {list(METHODS)}")
        if self.n_train < 1 or self.n_test < 1:
            raise SpecError("dataset sizes must be positive")
        if self.pin_theta_deg is not None and len(self.pin_theta_deg) != self.scenario.M:
            raise SpecError("pin_theta_deg needs one angle per BS")
        if axis == "prune_factor" and any(not 0 <= v < 1 for v in vals):
            raise SpecError("prune factors must lie in [0, 1)")

    @property
    def axis(self) -> str:
        return next(iter(self.sweep))

    @property
    def values(self) -> list:
        return list(next(iter(self.sweep.values())))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.to_dict()
        d["train"]["hidden"] = list(self.train.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown spec fields {sorted(unknown)}")
        if "scenario" in d:
            d["scenario"] = NetworkConfig.from_dict(d["scenario"])
        if "train" in d:
            t = dict(d["train"])
            bad = set(t) - set(federate.TrainConfig.__dataclass_fields__)
            if bad:
                raise SpecError(f"unknown train fields {sorted(bad)}")
            if "hidden" in t:
                t["hidden"] = tuple(t["hidden"])
            d["train"] = federate.TrainConfig(**t)
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class ResultRow:
    axis: str
    value: float
    method: str
    rc: float
    rs: float
    cil: float
    sil: float
    wall_time: float = 0.0
    ledger: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rc < 0 or self.rs < 0:
            raise ValueError("rates must be nonnegative")

    def csv_fields(self) -> list:
        lg = self.ledger
        return [SCHEMA_VERSION, self.axis, repr(float(self.value)), self.method,
                repr(self.rc), repr(self.rs), repr(self.cil), repr(self.sil),
                lg.get("complex_up", 0), lg.get("complex_up_literal", 0),
                lg.get("bits_up", 0), lg.get("bits_down", 0), lg.get("rounds", 0)]


def rows_to_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def rows_from_csv(text: str) -> list:
    rd = csv.DictReader(io.StringIO(text))
    if rd.fieldnames != RESULT_COLUMNS:
        raise ValueError(f"unexpected CSV columns {rd.fieldnames}")
    out = []
    for d in rd:
        ledger = {k: int(d[k]) for k in RESULT_COLUMNS[8:]}
        out.append(ResultRow(d["axis"], float(d["value"]), d["method"], float(d["rc"]),
                             float(d["rs"]), float(d["cil"]), float(d["sil"]), ledger=ledger))
    return out


# ---------------------------------------------------------------------------
# trained models and beams
# ---------------------------------------------------------------------------

@dataclass
class Trained:
    """A learned scheme ready for evaluation."""
    method: str
    models: list            # one per BS (HFL repeats the global model)
    per_cell: bool = False
    ledger: dict = field(default_factory=dict)

    def beams(self, H, G, cfg: NetworkConfig) -> np.ndarray:
        return np.stack([beamnet.predict(self.models[m], H[:, m], G[:, m], m, cfg,
                                         per_cell=self.per_cell)
                         for m in range(cfg.M)], axis=1)

    def pruned(self, factor: float) -> "Trained":
        return Trained(self.method, [beamnet.prune(m, factor) for m in self.models],
                       self.per_cell, dict(self.ledger))


def train_method(method: str, data: Dataset, train: federate.TrainConfig, rho: float,
                 alpha=None, beta=None, log_path=None) -> Trained:
    log = federate.TrainLog(log_path) if log_path else None
    if method == "VFL":
        s = federate.train_vfl(data, train, rho, log=log)
        return Trained(method, s.models, ledger=s.ledger.snapshot())
    if method == "HFL":
        s = federate.train_hfl(data, train, rho, alpha, beta, log=log)
        return Trained(method, [s.global_model] * data.config.M, ledger=s.ledger.snapshot())
    if method == "PerCellDL":
        return Trained(method, federate.train_per_cell(data, train, rho), per_cell=True)
    raise SpecError(f"{method} is not a learned method")


def baseline_beams(method: str, test: Dataset, cfg: NetworkConfig, wmmse_iters: int = 100):
    if method == "MRT":
        return baselines.mrt(test.H, cfg)
    if method == "IMT":
        return baselines.imt(test.H, test.G, cfg)[0]
    if method == "CBF":
        return baselines.cbf(test.theta, cfg)
    if method == "WMMSE":
        return baselines.wmmse_batch(test.H, cfg, max_iters=wmmse_iters)
    raise SpecError(f"{method} is not a closed-form baseline")


def beampattern_table(W_m: np.ndarray, step_deg: float = 0.1) -> np.ndarray:
    """(angle_deg, power_db) rows on a regular grid over [-90, 90] degrees.

    ``W_m`` is (n_t, K) or a stack (S, n_t, K); a stack is averaged in power.
    """
    grid_deg = np.round(np.linspace(-90.0, 90.0, int(round(180.0 / step_deg)) + 1), 10)
    W_m = np.asarray(W_m)
    if W_m.ndim == 2:
        W_m = W_m[None]
    p = np.mean([metrics.beampattern(w, np.deg2rad(grid_deg), normalize=False) for w in W_m], axis=0)
    p = np.maximum(p, 1e-300)
    return np.stack([grid_deg, 10.0 * np.log10(p / p.max())], axis=1)


def write_beampattern(path, table: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["angle_deg", "power_db"])
        for a, p in table:
            w.writerow([f"{a:.1f}", repr(float(p))])


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def point_seed(seed: int, index: int) -> int:
    """Training seed of sweep point ``index``; independent of the worker layout."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


def point_config(spec: ExperimentSpec, value) -> tuple[NetworkConfig, float]:
    cfg, rho = spec.scenario, spec.rho if spec.rho is not None else spec.scenario.rho
    if spec.axis == "snr_db":
        cfg = cfg.with_snr(float(value))
    elif spec.axis == "n_t":
        cfg = cfg.replace(n_t=int(value), n_r=int(value))
    elif spec.axis == "rho":
        rho = float(value)
    return cfg, rho


def datasets(spec: ExperimentSpec, cfg: NetworkConfig) -> tuple[Dataset, Dataset]:
    train = generate_dataset(cfg, spec.n_train, spec.seed)
    pin = None if spec.pin_theta_deg is None else np.deg2rad(spec.pin_theta_deg)
    test = generate_dataset(cfg, spec.n_test, spec.seed + 1, theta=pin)
    return train, test


def _evaluate_point(spec: ExperimentSpec, index: int, value, trained_cache=None):
    """All methods at one sweep point.  Returns (rows, beampatterns)."""
    cfg, rho = point_config(spec, value)
    train_ds, test = datasets(spec, cfg)
    tcfg = federate.TrainConfig(**{**asdict(spec.train), "seed": point_seed(spec.seed, index)})
    rows, patterns = [], {}
    for method in spec.methods:
        t0 = time.perf_counter()
        ledger = {}
        if method in LEARNED:
            if trained_cache is not None and method in trained_cache:
                tr = trained_cache[method]
            else:
                tr = train_method(method, train_ds, tcfg, rho, spec.alpha, spec.beta)
            if spec.axis == "prune_factor":
                tr = tr.pruned(float(value))
            W = tr.beams(test.H, test.G, cfg)
            ledger = tr.ledger
        else:
            W = baseline_beams(method, test, cfg, spec.wmmse_iters)
        ev = metrics.evaluate(test.H, test.G, W, cfg)
        rows.append(ResultRow(spec.axis, float(value), method, ev["rc"], ev["rs"], ev["cil"],
                              ev["sil"], time.perf_counter() - t0, ledger))
        if spec.beampattern:
            patterns[method] = beampattern_table(W[:spec.beampattern_samples, 0])
    return rows, patterns


def _worker(args):
    spec_dict, index, value = args
    return _evaluate_point(ExperimentSpec.from_dict(spec_dict), index, value)


def _prune_study(spec: ExperimentSpec):
    """Train once at the base scenario, then prune the same models at every factor."""
    cfg, rho = point_config(spec, None)
    train_ds, _ = datasets(spec, cfg)
    tcfg = federate.TrainConfig(**{**asdict(spec.train), "seed": point_seed(spec.seed, 0)})
    cache = {m: train_method(m, train_ds, tcfg, rho, spec.alpha, spec.beta)
             for m in spec.methods if m in LEARNED}
    return [_evaluate_point(spec, 0, v, cache) for v in spec.values]


def _tradeoff_extras(spec: ExperimentSpec, rows: list) -> tuple[list, list]:
    """Time-sharing segments and per-point distances for a rho sweep."""
    extra_spec = ExperimentSpec.from_dict({**spec.to_dict(), "sweep": {"rho": list(TS_CORNERS)},
                                           "beampattern": False, "out_dir": None})
    corner_rows = []
    have = {(r.method, r.value) for r in rows}
    for j, v in enumerate(TS_CORNERS):
        if all((m, v) in have for m in spec.methods):
            corner_rows += [r for r in rows if r.value == v]
        else:
            # corner points get their own seed indices beyond the sweep
            corner_rows += _evaluate_point(extra_spec, len(spec.values) + j, v)[0]
    segments, distances = [], []
    for method in spec.methods:
        if method not in LEARNED:
            continue
        cc = next(r for r in corner_rows if r.method == method and r.value == TS_CORNERS[0])
        cs = next(r for r in corner_rows if r.method == method and r.value == TS_CORNERS[1])
        for lam, (rc, rs) in zip(np.linspace(0, 1, 11),
                                 baselines.time_sharing_curve((cc.rc, cc.rs), (cs.rc, cs.rs), 11)):
            segments.append([method, f"{lam:.1f}", repr(float(rc)), repr(float(rs))])
        for r in rows:
            if r.method == method:
                d = baselines.above_segment((r.rc, r.rs), (cc.rc, cc.rs), (cs.rc, cs.rs))
                distances.append([method, repr(r.value), repr(r.rc), repr(r.rs), repr(d)])
    return segments, distances


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run the sweep; write CSVs under ``spec.out_dir`` when set.

    Returns ``{"rows": [...], "patterns": {...}, "tradeoff": [...], "segments": [...]}``.
    """
    spec.validate()
    t0 = time.perf_counter()
    if spec.axis == "prune_factor":
        results = _prune_study(spec)
    else:
        jobs = [(spec.to_dict(), i, v) for i, v in enumerate(spec.values)]
        workers = int(os.environ.get(WORKERS_ENV, "1"))
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_worker, jobs))
        else:
            results = [_evaluate_point(spec, i, v) for i, v in enumerate(spec.values)]
    rows = [r for rs, _ in results for r in rs]
    patterns = {(v, m): t for v, (_, pats) in zip(spec.values, results) for m, t in pats.items()}
    segments, tradeoff = ([], [])
    if spec.axis == "rho":
        segments, tradeoff = _tradeoff_extras(spec, rows)
    out = {"rows": rows, "patterns": patterns, "tradeoff": tradeoff, "segments": segments,
           "wall_time": time.perf_counter() - t0}
    if spec.out_dir:
        write_outputs(spec, out)
    return out


def write_outputs(spec: ExperimentSpec, out: dict) -> None:
    d = Path(spec.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "results.csv").write_text(rows_to_csv(out["rows"]))
    with open(d / "timing.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["axis", "value", "method", "wall_time"])
        for r in out["rows"]:
            w.writerow([r.axis, r.value, r.method, f"{r.wall_time:.3f}"])
    for (v, m), table in out["patterns"].items():
        write_beampattern(d / f"beampattern_{m}_{spec.axis}{v}.csv", table)
    if out["segments"]:
        with open(d / "timesharing.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["method", "lambda", "rc", "rs"])
            w.writerows(out["segments"])
        with open(d / "tradeoff.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["method", "rho", "rc", "rs", "distance_above_timesharing"])
            w.writerows(out["tradeoff"])
    with open(d / "spec.json", "w") as f:
        json.dump(spec.to_dict(), f, indent=2, sort_keys=True)
