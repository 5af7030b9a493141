"""Command-line entry point: ``rofsim run | sweep | calibrate | schema``.

Exit codes: 0 all verdicts pass, 1 error (bad config, I/O), 2 a fail verdict,
a failed sweep point or loss of injection lock, 3 calibration did not converge.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import apply_overrides, dumps, from_dict, json_schema, load_scenario, save, to_dict
from .errors import ConfigError, ContractError, ForwardBiasError, LockError
from .experiments import CalibrationSpec, SweepSpec, calibrate, crossing_length, point_inputs, sweep
from .link import Scenario, build_testbed_scenario, link_budget, run
from .metrics import constellation_export
from .signals import psd_estimate, write_iq

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_NOT_CONVERGED = 0, 1, 2, 3
PSD_SEGMENT = 4096


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, bytes):
        return obj.hex()
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _scenario_from_args(args) -> Scenario:
    sc = load_scenario(args.config) if args.config else build_testbed_scenario()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"expected path=value, got {item!r}", "--set")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _parse_value(v)
    if getattr(args, "no_noise", False):
        overrides["noise.enabled"] = False
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return apply_overrides(sc, overrides)


def _write_psd(path: Path, wf) -> None:
    spec = psd_estimate(wf, min(PSD_SEGMENT, len(wf)))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("offset_hz,freq_hz,psd_dbm_hz\n")
        dbm = 10 * np.log10(np.maximum(spec.psd_w_hz, 1e-300) / 1e-3)
        for f, fa, p in zip(spec.freqs_hz, spec.absolute_freqs_hz, dbm):
            fh.write(f"{f!r},{fa!r},{p!r}\n")


def cmd_run(args) -> int:
    sc = _scenario_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bits, qos = point_inputs(sc, args.symbols)
    record = {"tool": "rofsim", "version": __version__, "seed": sc.seed, "symbols": args.symbols,
              "scenario": to_dict(sc), "link_budget": link_budget(sc)}
    try:
        r = run(sc, bits, qos)
    except LockError as exc:
        record.update(status="failed", error=exc.to_dict(), lock_state=exc.state.to_dict())
        write_json(out / "run.json", record)
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    artifacts = []
    for name, rep, syms in (("downlink", r.downlink_report, r.downlink_symbols_at_ru),
                            ("uplink", r.uplink_report, r.uplink_symbols_at_cu)):
        csv_path, _ = constellation_export(syms, out / f"constellation_{name}.csv", rep)
        artifacts += [csv_path.name, csv_path.name + ".json"]
    for tap, wf in r.tap_waveforms.items():
        _write_psd(out / f"psd_{tap}.csv", wf)
        artifacts.append(f"psd_{tap}.csv")
        if args.iq_dump:
            write_iq(out / f"iq_{tap}.rfiq", wf)
            artifacts.append(f"iq_{tap}.rfiq")
    verdicts = (r.downlink_report.verdict, r.uplink_report.verdict)
    record.update(
        status="pass" if all(v == "pass" for v in verdicts) else "fail",
        downlink=r.downlink_report.to_dict(),
        uplink=r.uplink_report.to_dict(),
        lock_state=r.lock_state.to_dict(),
        delays=r.delays,
        optical_powers_dbm=r.optical_powers_dbm,
        qos={"sent": r.qos_payload_sent, "recovered": r.qos_payload_recovered, "crc_ok": r.qos_crc_ok},
        diagnostics=r.diagnostics,
        artifacts=sorted(artifacts),
    )
    write_json(out / "run.json", record)
    print(f"downlink EVM {r.downlink_report.evm_rms_percent:.3f}% ({verdicts[0]}), "
          f"uplink EVM {r.uplink_report.evm_rms_percent:.3f}% ({verdicts[1]})")
    return EXIT_OK if record["status"] == "pass" else EXIT_FAIL


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def cmd_sweep(args) -> int:
    sc = _scenario_from_args(args)
    if args.spec:
        spec = from_dict(SweepSpec, json.loads(Path(args.spec).read_text(encoding="utf-8")))
    else:
        spec = SweepSpec()
    kw = {}
    if args.param:
        kw["parameter_path"] = args.param
    if args.values:
        kw["values"] = _floats(args.values)
    if args.seeds:
        kw["seeds"] = _ints(args.seeds)
    if args.symbols is not None:
        kw["symbols_per_point"] = args.symbols
    spec = replace(spec, **kw) if kw else spec
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = sweep(sc, spec, workers=1 if args.serial else None)
    (out / "sweep.csv").write_text(res.to_csv(), encoding="utf-8")
    means = res.mean_column("uplink_evm_percent")
    summary = {"spec": to_dict(spec), "any_failed": res.any_failed,
               "uplink_threshold_crossing": crossing_length(spec.values, means)}
    write_json(out / "sweep.json", summary)
    failed = sum(r["status"] != "ok" for r in res.rows)
    print(f"{len(res.rows)} points, {failed} failed; uplink 8% crossing at "
          f"{summary['uplink_threshold_crossing']:.3f}")
    return EXIT_FAIL if res.any_failed else EXIT_OK


def cmd_calibrate(args) -> int:
    sc = _scenario_from_args(args)
    spec = (from_dict(CalibrationSpec, json.loads(Path(args.spec).read_text(encoding="utf-8")))
            if args.spec else CalibrationSpec())
    if args.max_evals is not None:
        spec = replace(spec, max_evaluations=args.max_evals)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = calibrate(sc, spec, workers=1 if args.serial else None)
    save(res.scenario, out / "calibrated.json")
    write_json(out / "calibration.json", {**res.to_dict(), "history": res.history})
    print(f"residual RMS {100 * res.residual_rms:.2f}% after {res.evaluations} evaluations")
    for k, v in res.values.items():
        print(f"  {k} = {v:.6g}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_schema(args) -> int:
    text = dumps(build_testbed_scenario()) if args.defaults else json.dumps(json_schema(Scenario), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with every other error; 2 means a fail verdict
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rofsim", description="Radio-over-fiber fronthaul link simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, symbols_default):
        sp.add_argument("--config", help="scenario JSON (default: built-in testbed)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--symbols", type=int, default=symbols_default, help="QAM symbols per run")
        sp.add_argument("--no-noise", action="store_true", help="disable every noise source")
        sp.add_argument("--set", action="append", metavar="PATH=VALUE", help="dotted-path override (repeatable)")

    r = sub.add_parser("run", help="one end-to-end run")
    common(r, 100_000)
    r.add_argument("--iq-dump", action="store_true", help="write an RFIQ dump per tap")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="parameter sweep over values x seeds")
    common(s, None)
    s.add_argument("--spec", help="sweep spec JSON")
    s.add_argument("--param", help="dotted parameter path")
    s.add_argument("--values", help="comma-separated values")
    s.add_argument("--seeds", help="comma-separated seeds")
    s.add_argument("--serial", action="store_true", help="run points in this process")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("calibrate", help="fit free parameters to EVM targets")
    common(c, None)
    c.add_argument("--spec", help="calibration spec JSON")
    c.add_argument("--max-evals", type=int)
    c.add_argument("--serial", action="store_true")
    c.set_defaults(func=cmd_calibrate)

    sc = sub.add_parser("schema", help="print the scenario JSON schema")
    sc.add_argument("--out", help="write to a file instead of stdout")
    sc.add_argument("--defaults", action="store_true", help="print the default scenario instead")
    sc.set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ForwardBiasError as exc:
        print(f"error: {exc} (forward-bias invariant)", file=sys.stderr)
    except (ConfigError, ContractError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
