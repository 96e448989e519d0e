"""Command line entry point: ``permanence {simulate,invade,certify,sweep}``.

Exit codes: 0 success (or certified), 1 runtime failure, 2 configuration
error, 3 no certificate, 4 certificate incomplete.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import certify as C
from .config import FORMATS, ConfigError, build_model, load_config
from .dynamics import (
    THREADS_ENV,
    ContractError,
    boundary_sample,
    default_threads,
    interior_starts,
    simulate,
    trajectory_csv,
)
from .invasion import invasion_rate_birkhoff, invasion_rate_measure, invasion_rate_norm
from .model import DomainError, ExtinctionFace, NumericOverflowError, StructuralError, proper_faces
from .robustness import robustness_sweep

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_INCOMPLETE = 4

log = logging.getLogger("permanence")


def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


class Report:
    """Collects output files in memory and writes them once at the end."""

    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self.body: dict = {}
        self.tables: dict[str, str] = {}
        self.lines: list[tuple[str, str]] = []

    def row(self, key: str, value) -> None:
        self.lines.append((key, value if isinstance(value, str) else json.dumps(_clean(value))))

    def document(self) -> dict:
        return {"command": self.command, "versions": C.tool_versions(),
                "config": self.config, **_clean(self.body)}

    def write(self, out_dir: Path, fmt: str) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if fmt in ("json", "both"):
            path = out_dir / f"{self.command}.json"
            path.write_text(json.dumps(self.document(), indent=2) + "\n")
            written.append(path)
        if fmt in ("csv", "both"):
            for name, text in self.tables.items():
                path = out_dir / f"{name}.csv"
                path.write_text(text)
                written.append(path)
        return written

    def print_table(self, stream) -> None:
        width = max((len(k) for k, _ in self.lines), default=0)
        for key, value in self.lines:
            print(f"{key:<{width}}  {value}", file=stream)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _faces(config: dict, m: int) -> list[ExtinctionFace]:
    faces = config["analysis"].get("faces")
    if faces is None:
        return proper_faces(m)
    out = []
    for present in faces:
        if any(i >= m for i in present):
            raise ConfigError(f"analysis.faces: species index out of range for {m} species")
        face = ExtinctionFace(frozenset(present), m)
        if face.is_interior:
            raise ConfigError("analysis.faces: a face must leave out at least one species")
        out.append(face)
    return out


def cmd_simulate(config: dict, threads: int) -> tuple[Report, int]:
    build = build_model(config)
    model = build.model
    a = config["analysis"]
    if "x0" not in a:
        raise ConfigError("analysis.x0 is required for simulate")
    if len(a["x0"]) != model.n:
        raise ConfigError(f"analysis.x0 must have {model.n} entries ({', '.join(model.labels)})")
    horizon = a["horizon"]
    burn_in = a.get("burn_in", horizon // 10)
    if burn_in >= horizon:
        raise ConfigError("analysis.burn_in must be smaller than analysis.horizon")
    traj = simulate(model, np.asarray(a["x0"], dtype=float), horizon, burn_in)
    summary = traj.summary()
    report = Report("simulate", config)
    report.body = {"model": model.name, "labels": list(model.labels), "summary": summary}
    report.tables["trajectory"] = trajectory_csv(traj)
    report.row("model", model.name)
    report.row("steps", summary["steps"])
    report.row("mean", summary["mean"])
    report.row("min_norms", summary["min_norms"])
    report.row("max_norms", summary["max_norms"])
    report.row("diverged", summary["diverged"])
    report.row("pattern_violations", summary["pattern_violations"])
    if traj.error:
        report.row("error", f"{traj.error} at step {traj.error_step}")
    return report, EXIT_OK


def cmd_invade(config: dict, threads: int) -> tuple[Report, int]:
    model = build_model(config).model
    a = config["analysis"]
    horizon = a["horizon"]
    burn_in = a.get("burn_in", horizon // 10)
    entries, notes, rows = [], [], []
    for face in _faces(config, model.m):
        try:
            mus = boundary_sample(model, face, a["n_starts"], horizon, burn_in, threads=threads)
        except ContractError as err:
            notes.append(str(err))
            continue
        for k, mu in enumerate(mus):
            for i in range(model.m):
                ests = {"measure": invasion_rate_measure(model, i, mu, face)}
                if mu.cycle is None or len(mu.trajectory.tail) >= 1000:
                    ests["vector-norm"] = invasion_rate_norm(model, i, mu.trajectory)
                    ests["birkhoff"] = invasion_rate_birkhoff(model, i, mu.trajectory)
                entry = {"face": sorted(face.present), "start": k, "species": i,
                         "estimates": {name: e.to_dict() for name, e in ests.items()}}
                entries.append(entry)
                for name, e in ests.items():
                    for comp in (e.components or (e,)):
                        rows.append([str(sorted(face.present)), k, i, name,
                                     "" if comp.component is None else comp.component,
                                     repr(float(comp.value)), repr(float(comp.uncertainty))])
                measure = ests["measure"]
                entry["summary"] = {"face": str(face), "start": k, "species": i, "rate": measure.value}
                if measure.components:
                    entry["summary"]["components"] = [c.value for c in measure.components]
    report = Report("invade", config)
    report.body = {"model": model.name, "rates": entries, "notes": notes}
    report.tables["invasion"] = _csv(["face", "start", "species", "method", "component", "value",
                                      "uncertainty"], rows)
    report.row("model", model.name)
    for entry in entries:
        s = entry["summary"]
        label = f"r_{s['species']} face {s['face']} start {s['start']}"
        report.row(label, s["rate"] if "components" not in s else {"max": s["rate"], "components": s["components"]})
    for note in notes:
        report.row("note", note)
    return report, EXIT_OK


def _certificate_table(cert: C.PermanenceCertificate) -> str:
    rows = []
    for ob in cert.objects:
        weighted = "" if cert.weights is None else repr(float(ob.growth @ cert.weights))
        rows.append([ob.label, ob.kind, str(sorted(ob.face.present)),
                     json.dumps(_clean(ob.growth)), weighted])
    return _csv(["object", "kind", "face", "growth", "weighted_sum"], rows)


def cmd_certify(config: dict, threads: int) -> tuple[Report, int]:
    build = build_model(config)
    model, family = build.model, build.family
    a = config["analysis"]
    report = Report("certify", config)
    closed = None
    if family == "lv":
        cert = C.certify_lv(build.spec.B, build.spec.c, a["p_max"], a["method"])
    else:
        cert = C.certify_sampled(model, a["n_starts"], a["horizon"], p_max=a["p_max"],
                                 method=a["method"], threads=threads)
        if family == "sir":
            closed = C.sir_threshold(build.spec)
        elif family == "meta":
            closed = C.meta_condition(build.spec)
    status = cert.status
    if family == "sir":
        # the closed-form threshold is the criterion; the sampled certificate is supporting data
        status = C.CERTIFIED if closed.certified else C.INFEASIBLE
    report.body = {"model": model.name, "status": status, "certificate": cert.to_dict(),
                   "closed_form": None if closed is None else closed.to_dict()}
    report.tables["certificate"] = _certificate_table(cert)
    report.row("model", model.name)
    report.row("status", status)
    report.row("weights", cert.weights)
    report.row("margin", cert.margin)
    if cert.kind == "sampled":
        report.row("margin_lower", cert.margin_lower)
    if "margin_gap" in cert.paths:
        report.row("route_gap", cert.paths["margin_gap"])
    if closed is not None:
        for key, value in closed.to_dict().items():
            report.row(key, value)
    for note in cert.notes:
        report.row("note", note)
    code = {C.CERTIFIED: EXIT_OK, C.INFEASIBLE: EXIT_INFEASIBLE, C.INCOMPLETE: EXIT_INCOMPLETE}[status]
    return report, code


def cmd_sweep(config: dict, threads: int) -> tuple[Report, int]:
    model = build_model(config).model
    a = config["analysis"]
    horizon = a["horizon"]
    starts = interior_starts(model, a["start_grid"])
    if a["sweep_analysis"] == "permanence_test" and len(starts) == 0:
        raise ConfigError("analysis.start_grid leaves no admissible interior start")
    eta = sorted(a["eta_grid"], reverse=True)
    sweep = robustness_sweep(model, sorted(a["deltas"]), a["sweep_analysis"], eta_grid=eta,
                             starts=starts, horizon=horizon, burn_in=a.get("burn_in"),
                             inflate=a["inflate"], threads=threads, tol=a["tolerance"])
    report = Report("sweep", config)
    report.body = {"model": model.name, "sweep": sweep.to_dict()}
    report.tables["sweep"] = sweep.to_csv()
    report.row("model", model.name)
    for cell in sweep.cells:
        report.row(f"delta={cell.delta:g} {cell.direction}",
                   cell.verdict if cell.status == "ok" else cell.status)
    report.row("delta_star", sweep.delta_star)
    report.row("summary", sweep.summary())
    return report, EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "iterate one initial state and write the trajectory"),
    "invade": (cmd_invade, "invasion rates on boundary faces"),
    "certify": (cmd_certify, "search for a permanence certificate"),
    "sweep": (cmd_sweep, "robustness sweep over perturbation sizes"),
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="permanence",
        description="Simulation, invasion rates and permanence certificates for structured maps.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, metavar="PATH", help="YAML run configuration")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, metavar="N",
                       help=f"worker threads (default: ${THREADS_ENV} or 1)")
        p.add_argument("--format", choices=FORMATS, help="report formats (overrides output.format)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        print("permanence: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = load_config(args.config)
        if args.out is not None:
            config["output"]["dir"] = args.out
        if args.format is not None:
            config["output"]["format"] = args.format
        report, code = COMMANDS[args.command][0](config, threads)
    except ConfigError as err:
        print(f"permanence: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractError, StructuralError, DomainError, NumericOverflowError) as err:
        print(f"permanence: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    written = report.write(Path(config["output"]["dir"]), config["output"]["format"])
    report.print_table(sys.stdout)
    for path in written:
        log.info("wrote %s", path)
    return code


if __name__ == "__main__":
    sys.exit(main())
