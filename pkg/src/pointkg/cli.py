"""Command-line runner: solve a scenario, run diagnostics and write CSV/JSON artifacts."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import struct
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .charges import ChargeHistory
from .diagnostics import (
    EnergyBox,
    apriori_check,
    check_box,
    convergence_study,
    default_box,
    energy_series,
    initial_energy,
)
from .errors import ConfigurationError, OracleFailure, PointKGError, SolverError
from .field import residual_series, snapshot
from .model import coercivity_radius, verify_coercivity
from .scenarios import BUILDERS, Scenario, load_scenario, scenario_to_json, shipped_scenario

log = logging.getLogger("pointkg")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 2, 3, 4
ORDER_WINDOW = (1.9, 2.1)
ORACLE_RELATIVE_TOL = 1e-4


def git_blob_sha1(data: bytes) -> str:
    """Content hash as ``git hash-object`` computes it."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunFlags:
    out: Path
    convergence: tuple[float, ...] = ()
    oracle: bool = False
    oracle_horizon: float = 1.0
    truncation: bool = True
    threads: int = 1
    sample_dt: float = 0.01


@dataclass
class RunOutcome:
    status: int
    manifest: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_charges(path: Path, history: ChargeHistory, times: np.ndarray, residuals: np.ndarray):
    n = history.n
    header = ["t"]
    header += [f"{part}_zeta_{j + 1}" for j in range(n) for part in ("re", "im")]
    header += [f"{part}_zdot_{j + 1}" for j in range(n) for part in ("re", "im")]
    header += [f"residual_{j + 1}_abs" for j in range(n)]
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i, t in enumerate(times):
            z, dz = history.eval(t, side="left")
            row = [_fmt(t)]
            row += [_fmt(v) for c in z for v in (c.real, c.imag)]
            row += [_fmt(v) for c in dz for v in (c.real, c.imag)]
            row += [_fmt(abs(r)) for r in residuals[i]]
            wr.writerow(row)


def write_energy(path: Path, report):
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "kinetic", "gradient", "mass_term", "potential", "total", "est_error"])
        for row in report.rows():
            wr.writerow([_fmt(v) for v in asdict(row).values()])


def write_snapshot(path: Path, snap, binary: bool = False) -> Path:
    g = snap.grid
    header = [
        f"# time {_fmt(snap.time)}",
        f"# grid half_width {_fmt(g['half_width'])} resolution {g['resolution']} spacing {_fmt(g['spacing'])} "
        f"center {_fmt(g['center'][0])} {_fmt(g['center'][1])} {_fmt(g['center'][2])}",
        f"# cone_exclusion {_fmt(snap.cone_exclusion)} flagged_points {int(np.count_nonzero(snap.near_cone))}",
    ]
    if binary:
        path = path.with_suffix(".bin")
        text = ("\n".join(header) + "\n").encode()
        with path.open("wb") as fh:
            fh.write(struct.pack("<I", len(text)))
            fh.write(text)
            packed = np.empty((snap.points.shape[0], 5), dtype="<f8")
            packed[:, :3] = snap.points
            packed[:, 3] = snap.values.real
            packed[:, 4] = snap.values.imag
            fh.write(packed.tobytes())
        return path
    with path.open("w") as fh:
        fh.write("\n".join(header) + "\n")
        fh.write("x,y,z,re_psi,im_psi\n")
        for p, v in zip(snap.points, snap.values):
            fh.write(",".join(_fmt(x) for x in (p[0], p[1], p[2], v.real, v.imag)) + "\n")
    return path


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _sample_times(horizon: float, spacing: float) -> np.ndarray:
    count = max(1, int(math.ceil(horizon / spacing - 1e-9)))
    return np.linspace(0.0, horizon, count + 1)


def _energy_box(sc: Scenario) -> EnergyBox:
    base = default_box(sc.system, sc.horizon, sc.energy.resolution)
    return EnergyBox(sc.energy.box_half_width or base.half_width, sc.energy.resolution)


def run_scenario(sc: Scenario, flags: RunFlags) -> RunOutcome:
    out = flags.out
    out.mkdir(parents=True, exist_ok=True)
    text = sc.source_text if sc.source_text is not None else json.dumps(scenario_to_json(sc), indent=2)
    manifest: dict = {
        "version": __version__,
        "scenario": scenario_to_json(sc),
        "scenario_sha1": git_blob_sha1(text.encode()),
        "flags": {"convergence": list(flags.convergence), "oracle": flags.oracle,
                  "truncation": flags.truncation, "sample_dt": flags.sample_dt},
        "invariants": {},
    }
    status = EXIT_OK
    sources = sc.sources()
    box = _energy_box(sc)
    check_box(box, sc.system, max(sc.energy.times, default=0.0))

    h0 = initial_energy(sc, box, flags.threads, sources)
    radius = coercivity_radius(sc.potential, h0)
    try:
        margin = verify_coercivity(sc.potential, sc.system.green, radius)
        manifest["invariants"]["coercivity_sampled"] = {"passed": True, "margin": margin}
    except ConfigurationError as exc:
        manifest["invariants"]["coercivity_sampled"] = {"passed": False, "message": str(exc)}
        raise
    manifest["initial_energy"] = h0
    manifest["apriori_radius"] = radius

    history = sc.solve(sources=sources, truncation_radius=radius, truncation_enabled=flags.truncation)
    manifest["solver"] = dict(history.info)
    manifest["breakpoints"] = history.breakpoints.tolist()

    times = _sample_times(sc.horizon, flags.sample_dt)
    residuals = residual_series(history, sources, sc.potential, times)
    write_charges(out / "charges.csv", history, times, residuals)
    worst = float(np.max(np.abs(residuals)))
    if sc.residual_times:
        requested = residual_series(history, sources, sc.potential, np.asarray(sc.residual_times))
        manifest["residuals"] = {"times": list(sc.residual_times),
                                 "abs": np.abs(requested).tolist()}
        worst = max(worst, float(np.max(np.abs(requested))))
    manifest["invariants"]["max_residual"] = worst

    bound = apriori_check(history, radius)
    manifest["apriori"] = asdict(bound)
    manifest["invariants"]["apriori_bound"] = bound.passed

    if sc.energy.times:
        report = energy_series(sc.energy.times, history, sources, sc.potential, box, flags.threads)
        write_energy(out / "energy.csv", report)
        drift = report.relative_drift()
        allowed = max(1e-3, report.estimated_quadrature_error / max(1.0, abs(report.total[0])))
        manifest["energy"] = {"box_half_width": box.half_width, "resolution": box.resolution,
                              "relative_drift": drift, "allowed": allowed,
                              "estimated_quadrature_error": report.estimated_quadrature_error}
        manifest["invariants"]["energy_drift"] = drift <= allowed

    snaps = []
    for t in sc.snapshots.times:
        snap = snapshot(t, history, sources, sc.snapshots.box_half_width, sc.snapshots.resolution)
        path = write_snapshot(out / f"snapshot_t{t:.6g}.txt", snap, sc.snapshots.binary)
        snaps.append(path.name)
    manifest["snapshots"] = snaps

    if flags.convergence:
        study = convergence_study(sc, flags.convergence, reference="richardson",
                                  truncation_radius=radius, truncation_enabled=flags.truncation)
        print(study.table())
        ok = study.status == "saturated" or (
            study.status == "ok" and all(ORDER_WINDOW[0] <= o <= ORDER_WINDOW[1] for o in study.orders))
        manifest["convergence"] = {"dts": study.dts, "errors": study.errors, "orders": study.orders,
                                   "status": study.status, "passed": ok}
        if not ok:
            status = EXIT_ACCEPTANCE

    if flags.oracle:
        from .oracle import brute_force_charges

        horizon = min(sc.horizon, flags.oracle_horizon)
        fine = brute_force_charges(sc, sc.params.dt / 100, horizon=horizon)
        odir = out / "oracle"
        odir.mkdir(exist_ok=True)
        otimes = _sample_times(horizon, flags.sample_dt)
        write_charges(odir / "charges.csv", fine, otimes, np.zeros((otimes.size, sc.system.n)))
        main = history.eval_many(fine.times)[0]
        dev = float(np.max(np.abs(main - fine.values)))
        scale = float(np.max(np.abs(fine.values)))
        ok = dev <= ORACLE_RELATIVE_TOL * max(scale, 1e-300) or dev == 0.0
        manifest["oracle"] = {"fine_dt": sc.params.dt / 100, "horizon": horizon, "max_deviation": dev,
                              "max_abs_charge": scale, "passed": ok}
        if not ok:
            status = EXIT_ACCEPTANCE

    manifest["status"] = status
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return RunOutcome(status, manifest)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _dt_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--convergence expects comma-separated step sizes, got {text!r}")
    if len(vals) < 3 or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("--convergence needs at least three positive step sizes")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pointkg", description=__doc__)
    ap.add_argument("--scenario", required=True,
                    help=f"scenario JSON path, or one of the shipped names {sorted(BUILDERS)}")
    ap.add_argument("--out", required=True, type=Path, help="output directory")
    ap.add_argument("--convergence", type=_dt_list, default=(), metavar="DT1,DT2,...",
                    help="run a convergence study over these step sizes")
    ap.add_argument("--oracle", action="store_true", help="also compare with the brute-force reference solver")
    ap.add_argument("--oracle-horizon", type=float, default=1.0,
                    help="horizon of the brute-force comparison (its cost grows quadratically)")
    ap.add_argument("--no-truncation", action="store_true", help="solve with the untruncated nonlinearity")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for grid sweeps")
    ap.add_argument("--sample-dt", type=float, default=0.01, help="spacing of the charges.csv rows")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = RunFlags(out=args.out, convergence=args.convergence, oracle=args.oracle,
                     oracle_horizon=args.oracle_horizon, truncation=not args.no_truncation,
                     threads=max(1, args.threads), sample_dt=args.sample_dt)
    try:
        if args.scenario in BUILDERS and not Path(args.scenario).exists():
            sc = shipped_scenario(args.scenario)
        else:
            sc = load_scenario(args.scenario)
        outcome = run_scenario(sc, flags)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, OracleFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        dump = getattr(exc, "diagnostics", {}) or {}
        print(json.dumps(dump, indent=2, default=str), file=sys.stderr)
        try:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "failure.json").write_text(json.dumps({"error": str(exc), "diagnostics": dump},
                                                              indent=2, default=str))
        except OSError:
            pass
        return EXIT_SOLVER
    except PointKGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
