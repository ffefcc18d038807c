"""
Command-line front end.

Exit codes: 0 success, 1 self-check failure, 2 invalid input, 3 runtime failure, 4 identification stages run out
of order.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Sequence


from . import __version__, io, selfcheck
from .config import Config
from .hybrid import SimConfig, SimulationError, Trajectory, rest_state, simulate
from .hysteresis import demag_history
from .identify import (
    IdentificationError,
    derive_bh,
    extract_reversal_slopes,
    degauss_waveform,
    fit_gpm,
    fit_kec,
    fit_rev,
)
from .magnetics import InputError

EXIT_OK = 0
EXIT_SELFCHECK = 1
EXIT_INPUT = 2
EXIT_RUNTIME = 3
EXIT_ORDER = 4

_logger = logging.getLogger("reluctsim")


class _OrderError(Exception):
    pass


def _load_config(path: str | None) -> Config:
    return Config.load(path) if path else Config.default()


def _write_json(path: Path, doc: dict[str, Any]) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _report(command: str, cfg: Config, started: float, outputs: dict[str, str], summary: dict[str, Any]) -> dict:
    return {
        "command": command,
        "config_hash": cfg.digest(),
        "runtime_s": time.perf_counter() - started,
        "outputs": outputs,
        "summary": summary,
    }


def _trajectory_summary(tr: Trajectory) -> dict[str, Any]:
    kinds: dict[str, int] = {}
    for e in tr.events:
        kinds[e.kind] = kinds.get(e.kind, 0) + 1
    out: dict[str, Any] = {"records": len(tr), "jumps": len(tr.events), "jumps_by_kind": kinds,
                           "mode_sequence": tr.mode_sequence()}
    if tr.final is not None:
        f = tr.final
        out["final_state"] = {"q": int(f.q), "H": f.H, "z": f.z, "vz": f.vz}
    return out


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = _load_config(args.config)
    wave = io.read_waveform(args.waveform)
    sim = cfg.sim_config
    overrides = {k: v for k, v in (("dt", args.dt), ("t_end", args.t_end)) if v is not None}
    if overrides:
        try:
            sim = SimConfig(**{**cfg.data["simulation"], **overrides})
        except ValueError as ex:
            raise InputError(str(ex)) from ex
    p = cfg.actuator
    n, rng = cfg.demag
    start = rest_state(p, demag_history(n, rng))
    prefix = Path(args.out)
    paths = {
        "trajectory": str(prefix) + "_trajectory.csv",
        "events": str(prefix) + "_events.jsonl",
        "report": str(prefix) + "_report.json",
    }
    code = EXIT_OK
    try:
        tr = simulate(start, wave, p, sim)
        error = None
    except SimulationError as ex:
        tr = ex.trajectory
        error = str(ex)
        code = EXIT_RUNTIME
    io.write_trajectory(paths["trajectory"], tr)
    io.write_events(paths["events"], tr)
    summary = _trajectory_summary(tr)
    if error:
        summary["error"] = error
    _write_json(Path(paths["report"]), _report("simulate", cfg, started, paths, summary))
    if error:
        print(f"simulation failed: {error}", file=sys.stderr)
    return code


STAGE_SECTIONS = {"rev": ("mu1", "mu2", "H1", "H2"), "gpm": ("m_hc", "s_hc", "s_hm", "b_irr_sat"), "kec": ("k_ec",)}
PREREQUISITE = {"rev": None, "gpm": "rev", "kec": "gpm"}


def _stage_path(prefix: str, stage: str) -> Path:
    return Path(f"{prefix}_{stage}.json")


def _merged_config(cfg: Config, prefix: str, upto: str) -> Config:
    """The configuration with the results of every completed stage before ``upto`` applied."""
    order = ["rev", "gpm", "kec"]
    out = cfg
    for stage in order[: order.index(upto)]:
        doc = json.loads(_stage_path(prefix, stage).read_text())
        section = "eddy" if stage == "kec" else "gpm"
        out = out.updated(section, {k: doc["params"][k] for k in STAGE_SECTIONS[stage]})
    return out


def cmd_identify(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    stage = args.stage
    cfg = _load_config(args.config)
    need = PREREQUISITE[stage]
    if need is not None and not _stage_path(args.out, need).exists():
        raise _OrderError(f"stage {stage!r} needs the result of stage {need!r} ({_stage_path(args.out, need)})")
    files = sorted(f for f in glob.glob(args.data) if f.endswith(".csv"))
    if not files:
        raise InputError(f"no experiment files match {args.data!r}")
    records = [io.read_experiment(f) for f in files]
    cfg = _merged_config(cfg, args.out, stage)
    p = cfg.actuator
    n, rng = cfg.demag
    if stage == "rev":
        points = [pt for s in derive_bh(records, p.magnetic) for pt in extract_reversal_slopes(s)]
        if len(points) < 4:
            raise InputError(f"only {len(points)} reversal points found; at least four are needed")
        res = fit_rev(points, seed=args.seed)
    elif stage == "gpm":
        res = fit_gpm(derive_bh(records, p.magnetic), p.gpm.rev, rng, n, seed=args.seed)
    else:
        res = fit_kec(records, p, dt=cfg.sim_config.dt, n_demag=n, seed=args.seed)
    out_path = _stage_path(args.out, stage)
    doc = res.to_json()
    doc["stage"] = stage
    doc["files"] = files
    _write_json(out_path, doc)
    section = "eddy" if stage == "kec" else "gpm"
    merged = cfg.updated(section, {k: res.params[k] for k in STAGE_SECTIONS[stage]})
    merged_path = Path(f"{args.out}_params.json")
    merged.save(merged_path)
    report = _report(
        f"identify {stage}", cfg, started, {"result": str(out_path), "params": str(merged_path)},
        {"objective": res.objective, "converged": res.converged, "params": res.params},
    )
    _write_json(Path(f"{args.out}_{stage}_report.json"), report)
    print(json.dumps(res.params, sort_keys=True))
    return EXIT_OK


def cmd_degauss(args: argparse.Namespace) -> int:
    try:
        t, x = degauss_waveform(args.amplitude, args.decay, args.cycles, args.rate, args.frequency)
    except ValueError as ex:
        raise InputError(str(ex)) from ex
    path = f"{args.out}_degauss.csv"
    io.write_waveform(path, t, x, header=("t_s", "i_A"))
    print(path)
    return EXIT_OK


def cmd_selfcheck(args: argparse.Namespace) -> int:
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as ex:
            raise InputError(f"{args.config}: {ex}") from ex
        checks = selfcheck.run(raw, Path(args.config).parent)
    else:
        checks = selfcheck.run()
    print(selfcheck.format_table(checks))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_SELFCHECK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reluctsim", description=__doc__.splitlines()[1])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out: bool = True) -> None:
        p.add_argument("--config", metavar="PATH", help="JSON configuration (default: built-in valve)")
        if out:
            p.add_argument("--out", metavar="PREFIX", required=True, help="prefix of the output files")

    p = sub.add_parser("simulate", help="simulate the actuator under a voltage waveform")
    common(p)
    p.add_argument("--waveform", metavar="CSV", required=True, help="t_s,v_V samples, zero-order hold")
    p.add_argument("--dt", type=float, metavar="SECONDS")
    p.add_argument("--t-end", type=float, metavar="SECONDS")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="run one identification stage")
    p.add_argument("stage", choices=("rev", "gpm", "kec"))
    common(p)
    p.add_argument("--data", metavar="GLOB", required=True, help="experiment CSV files (with JSON sidecars)")
    p.add_argument("--seed", type=int, default=None, help="orientation of optimizer restarts")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("degauss", help="write a decaying sine for demagnetizing the core")
    p.add_argument("--out", metavar="PREFIX", required=True)
    p.add_argument("--amplitude", type=float, required=True)
    p.add_argument("--decay", type=float, required=True, help="ratio between consecutive peaks")
    p.add_argument("--cycles", type=int, required=True)
    p.add_argument("--rate", type=float, required=True, help="samples per second")
    p.add_argument("--frequency", type=float, default=10.0)
    p.set_defaults(func=cmd_degauss)

    p = sub.add_parser("selfcheck", help="run the fast invariant checks")
    common(p, out=False)
    p.set_defaults(func=cmd_selfcheck)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _OrderError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_ORDER
    except InputError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_INPUT
    except (SimulationError, IdentificationError, RuntimeError, ValueError, ArithmeticError) as ex:
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
