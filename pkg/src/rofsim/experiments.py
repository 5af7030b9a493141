"""Seeded point evaluation, parameter sweeps and target calibration.

Every point is a sealed task: its payload, QoS bytes and noise all derive
from ``(seed, stream_id)``, so serial and parallel execution agree bit for bit.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import apply_overrides, get_path, set_path
from .errors import ConfigError, LockError
from .link import STREAM_PAYLOAD, STREAM_QOS_PAYLOAD, Scenario, qos_capacity_bytes, run
from .signals import RngHandle

QOS_PAYLOAD_BYTES = 16
MIN_SWEEP_SYMBOLS = 10_000


def point_inputs(scenario: Scenario, n_symbols: int) -> tuple[np.ndarray, bytes]:
    """Payload bits and QoS bytes for one run, drawn from the scenario seed."""
    if n_symbols < 1:
        raise ConfigError("must be >= 1", "symbols")
    k = scenario.modem.bits_per_symbol
    bits = RngHandle(scenario.seed, STREAM_PAYLOAD).generator().integers(0, 2, n_symbols * k, dtype=np.uint8)
    qos = b""
    if scenario.qos.enabled:
        n_samples = n_symbols * scenario.modem.samples_per_symbol
        cap = qos_capacity_bytes(n_samples, scenario.modem.sample_rate_hz, scenario.qos)
        nq = min(QOS_PAYLOAD_BYTES, cap)
        qos = RngHandle(scenario.seed, STREAM_QOS_PAYLOAD).generator().integers(0, 256, nq, dtype=np.uint8).tobytes()
    return bits, qos


def run_point(scenario: Scenario, n_symbols: int):
    bits, qos = point_inputs(scenario, n_symbols)
    return run(scenario, bits, qos)


def evaluate_point(scenario: Scenario, seed: int, n_symbols: int) -> dict:
    """One sweep/calibration row; never raises, failures are reported in the row."""
    sc = replace(scenario, seed=int(seed))
    try:
        r = run_point(sc, n_symbols)
    except LockError as exc:
        return {"seed": int(seed), "status": "failed", "error": f"lock lost: margin {exc.state.margin_ghz:.4g} GHz",
                "lock_margin_ghz": float(exc.state.margin_ghz)}
    except Exception as exc:  # a bad point must not stop the sweep
        return {"seed": int(seed), "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return {
        "seed": int(seed),
        "status": "ok",
        "downlink_evm_percent": r.downlink_report.evm_rms_percent,
        "uplink_evm_percent": r.uplink_report.evm_rms_percent,
        "downlink_verdict": r.downlink_report.verdict,
        "uplink_verdict": r.uplink_report.verdict,
        "lock_margin_ghz": r.lock_state.margin_ghz,
        "qos_crc_ok": r.qos_crc_ok,
    }


def max_workers() -> int:
    env = os.environ.get("ROFSIM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"expected a positive integer, got {env!r}", "ROFSIM_THREADS") from None
        if n < 1:
            raise ConfigError(f"expected a positive integer, got {env!r}", "ROFSIM_THREADS")
        return n
    return os.cpu_count() or 1


def _task(args):
    scenario, seed, n_symbols = args
    return evaluate_point(scenario, seed, n_symbols)


def map_points(tasks: list, workers: int | None = None) -> list[dict]:
    """Evaluate ``(scenario, seed, n_symbols)`` tasks; results in input order."""
    workers = max_workers() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_task, tasks))


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    parameter_path: str = "of1_fiber.length_km"
    values: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    seeds: tuple[int, ...] = (1, 2, 3)
    symbols_per_point: int = 100_000

    def __post_init__(self):
        if not self.values:
            raise ConfigError("must not be empty", "values")
        if not self.seeds:
            raise ConfigError("must not be empty", "seeds")
        if self.symbols_per_point < MIN_SWEEP_SYMBOLS:
            raise ConfigError(f"must be >= {MIN_SWEEP_SYMBOLS}", "symbols_per_point")
        if self.parameter_path.endswith("length_km") and any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("length sweeps need strictly increasing values", "values")


SWEEP_COLUMNS = ("row", "value", "seed", "status", "downlink_evm_percent", "uplink_evm_percent",
                 "downlink_verdict", "uplink_verdict", "lock_margin_ghz", "qos_crc_ok", "error")
_NUMERIC = ("downlink_evm_percent", "uplink_evm_percent", "lock_margin_ghz")


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)

    @property
    def any_failed(self) -> bool:
        return any(r["status"] != "ok" for r in self.rows)

    def mean_column(self, name: str) -> np.ndarray:
        return np.array([s[name] for s in self.summary if s["row"] == "mean"], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows + self.summary:
            w.writerow({k: _fmt(r.get(k, "")) for k in SWEEP_COLUMNS})
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def sweep(base: Scenario, spec: SweepSpec, workers: int | None = None) -> SweepResult:
    """One row per (value, seed) plus mean and std rows per value."""
    get_path(base, spec.parameter_path)
    scenarios = [set_path(base, spec.parameter_path, v) for v in spec.values]
    tasks = [(sc, seed, spec.symbols_per_point) for sc in scenarios for seed in spec.seeds]
    results = map_points(tasks, workers)
    res = SweepResult(spec)
    it = iter(results)
    for v in spec.values:
        group = []
        for _ in spec.seeds:
            row = {"row": "point", "value": float(v), **next(it)}
            res.rows.append(row)
            group.append(row)
        ok = [g for g in group if g["status"] == "ok"]
        for stat, fn in (("mean", np.mean), ("std", lambda a: np.std(a, ddof=1) if len(a) > 1 else 0.0)):
            s = {"row": stat, "value": float(v), "seed": "", "status": "ok" if ok else "failed"}
            for col in _NUMERIC:
                s[col] = float(fn([g[col] for g in ok])) if ok else math.nan
            res.summary.append(s)
    return res


def crossing_length(values, evm, threshold: float = 8.0) -> float:
    """First linear-interpolated point where ``evm`` reaches ``threshold`` (nan if never)."""
    values, evm = np.asarray(values, float), np.asarray(evm, float)
    if evm.size and evm[0] >= threshold:
        return float(values[0])
    for i in range(1, evm.size):
        if evm[i - 1] < threshold <= evm[i]:
            return float(values[i - 1] + (threshold - evm[i - 1]) * (values[i] - values[i - 1]) / (evm[i] - evm[i - 1]))
    return math.nan


# --------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class FreeParameter:
    path: str
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigError("lower bound must be below upper bound", self.path)


@dataclass(frozen=True)
class Target:
    observable: str  # "downlink_evm_percent" or "uplink_evm_percent"
    value: float
    weight: float = 1.0
    overrides: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.observable not in ("downlink_evm_percent", "uplink_evm_percent"):
            raise ConfigError(f"unknown observable {self.observable!r}", "observable")
        if not self.value > 0 or self.weight < 0:
            raise ConfigError("target value must be positive and weight non-negative", self.name or self.observable)


@dataclass(frozen=True)
class CalibrationSpec:
    free_parameters: tuple[FreeParameter, ...] = (
        FreeParameter("receiver.noise_floor_dbm_hz", -175.0, -130.0),
        FreeParameter("vcsel.injection_penalty_db_per_db", 0.0, 12.0),
        FreeParameter("vcsel.detector_responsivity_a_w", 0.05, 1.0),
    )
    targets: tuple[Target, ...] = (
        Target("downlink_evm_percent", 3.2, 1.0, {"of1_fiber.length_km": 0.0}, "downlink_b2b"),
        Target("uplink_evm_percent", 4.3, 1.0, {"of1_fiber.length_km": 0.0}, "uplink_b2b"),
        Target("uplink_evm_percent", 8.0, 1.0, {"of1_fiber.length_km": 5.0}, "uplink_5km"),
    )
    seeds: tuple[int, ...] = (101, 102)
    symbols_per_eval: int = 20_000
    max_evaluations: int = 200
    tolerance: float = 0.02
    fail_above: float = 0.10
    cycles: int = 12


@dataclass
class CalibrationResult:
    scenario: Scenario
    values: dict
    residuals: dict
    residual_rms: float
    evaluations: int
    converged: bool
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"values": self.values, "residuals": self.residuals, "residual_rms": self.residual_rms,
                "evaluations": self.evaluations, "converged": self.converged}


class _Objective:
    """Weighted squared relative target error with fixed seeds (deterministic)."""

    def __init__(self, base: Scenario, spec: CalibrationSpec, workers):
        self.base, self.spec, self.workers = base, spec, workers
        self.count = 0
        self.cache: dict = {}
        self.history: list = []

    def scenario(self, x) -> Scenario:
        sc = self.base
        for p, v in zip(self.spec.free_parameters, x):
            sc = set_path(sc, p.path, float(v))
        return sc

    def residuals(self, x) -> dict:
        key = tuple(float(v) for v in x)
        if key in self.cache:
            return self.cache[key]
        sc = self.scenario(x)
        tasks = [(apply_overrides(sc, t.overrides), s, self.spec.symbols_per_eval)
                 for t in self.spec.targets for s in self.spec.seeds]
        rows = map_points(tasks, self.workers)
        out = {}
        n = len(self.spec.seeds)
        for i, t in enumerate(self.spec.targets):
            vals = [r.get(t.observable, math.nan) if r["status"] == "ok" else math.nan for r in rows[i * n:(i + 1) * n]]
            obs = float(np.mean(vals))
            out[t.name or f"target{i}"] = (obs - t.value) / t.value if math.isfinite(obs) else math.inf
        self.count += 1
        self.cache[key] = out
        self.history.append({"x": list(key), "residuals": out})
        return out

    def __call__(self, x) -> float:
        r = self.residuals(x)
        w = [t.weight for t in self.spec.targets]
        return float(sum(wi * v * v for wi, v in zip(w, r.values())) / sum(w))


def _rms(res: dict) -> float:
    return float(math.sqrt(sum(v * v for v in res.values()) / len(res)))


def _golden(f, lo, hi, budget):
    """Golden-section minimization on ``[lo, hi]``; returns ``(x, f(x))``."""
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max(0, budget - 2)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def calibrate(base: Scenario, spec: CalibrationSpec | None = None, workers: int | None = None) -> CalibrationResult:
    """Coordinate search with golden-section line searches inside the bounds.

    Each cycle runs one line search per free parameter in a window that
    narrows around the incumbent, then one along the cycle's net
    displacement (a pattern move, which follows coupled valleys). Stops once
    the residual RMS is within ``spec.tolerance``, after ``spec.cycles``
    cycles, or when the evaluation budget would be exceeded.
    """
    spec = spec or CalibrationSpec()
    if not spec.free_parameters:
        raise ConfigError("nothing to fit", "free_parameters")
    if not spec.targets:
        raise ConfigError("no targets", "targets")
    obj = _Objective(base, spec, workers)
    lower = np.array([p.lower for p in spec.free_parameters])
    upper = np.array([p.upper for p in spec.free_parameters])
    x = np.clip([float(get_path(base, p.path)) for p in spec.free_parameters], lower, upper)
    fx = obj(x)
    per_line = 10
    for cycle in range(spec.cycles):
        if _rms(obj.residuals(x)) <= spec.tolerance:
            break
        start = x.copy()
        for i in range(x.size):
            if obj.count + per_line > spec.max_evaluations:
                break
            half = 0.5 * (upper[i] - lower[i]) * 0.6**cycle
            lo, hi = max(lower[i], x[i] - half), min(upper[i], x[i] + half)

            def line(v, i=i):
                y = x.copy()
                y[i] = v
                return obj(y)

            xi, fi = _golden(line, lo, hi, per_line)
            if fi < fx:
                x[i], fx = xi, fi
        d = x - start
        if np.any(d != 0) and obj.count + per_line <= spec.max_evaluations:
            # largest step along d that stays inside the box
            with np.errstate(divide="ignore", invalid="ignore"):
                room = np.where(d > 0, (upper - start) / d, np.where(d < 0, (lower - start) / d, np.inf))
            t_max = float(min(3.0, np.min(room)))
            t, ft = _golden(lambda t: obj(np.clip(start + t * d, lower, upper)), 0.0, t_max, per_line)
            if ft < fx:
                x, fx = np.clip(start + t * d, lower, upper), ft
    res = obj.residuals(x)
    rms = _rms(res)
    return CalibrationResult(
        scenario=obj.scenario(x),
        values={p.path: float(v) for p, v in zip(spec.free_parameters, x)},
        residuals=res,
        residual_rms=rms,
        evaluations=obj.count,
        converged=rms <= spec.fail_above,
        history=obj.history,
    )
