"""Batch front-end: build or load protocols, run the verification suites,
audit the no-signaling chain, run the optimizer, and emit machine-readable
reports (JSON for structured results, CSV for tables).

Every output embeds the run manifest: command, parameters, seeds, tolerance
overrides, toolkit version, and timestamp, so identical manifests produce
byte-identical reports.  Set SOURCE_DATE_EPOCH to pin the timestamp.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .engine import (
    PbtProtocol,
    bell_pbt_protocol,
    measure,
    protocol_from_dict,
    protocol_to_dict,
    success_probability,
    teleport_report,
    verify_port_decomposition,
    verify_psi_independence,
)
from .errors import ToolkitError
from .nocloning import pointer_form, verify_theorem
from .pauli import RNG_ALGORITHM, haar_states, sample_haar_state
from .primed import (
    build_primed,
    primed_from_dict,
    primed_to_dict,
    verify_eq5,
    verify_failure_marginal_twirl,
)
from .report import AuditReport
from .signaling import bound, compute_chain_exact, f_of_R, monte_carlo_check
from .optimizer import (
    SolverConfig,
    build_joint_sdp,
    build_sdp,
    certify,
    solve,
    solve_joint,
    standard_resource,
)
from .tensor import StateVector, SystemLayout

DEFAULT_TOLERANCES = {
    "eq3": 1e-10,
    "lemma_q": 1e-10,
    "lemma_residual": 1e-10,
    "theorem_q": 1e-10,
    "theorem_residual": 1e-10,
    "theorem_overlap": 1e-8,
    "eq5_marginal": 1e-10,
    "eq5_probability": 1e-12,
    "b9": 1e-10,
    "signaling": 1e-10,
}

OUTPUT_DIR_ENV = "PBTKIT_OUT"


class UsageError(Exception):
    """Bad flags or malformed input; mapped to exit code 2."""


@dataclass
class RunManifest:
    """Reproducibility record embedded in every output."""

    command: str
    parameters: dict
    input_paths: list[str]
    output_dir: str
    toolkit_version: str = __version__
    rng_algorithm: str = RNG_ALGORITHM
    timestamp: int = field(default_factory=lambda: int(
        os.environ.get("SOURCE_DATE_EPOCH", int(time.time()))))

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "parameters": self.parameters,
            "input_paths": self.input_paths,
            "output_dir": self.output_dir,
            "toolkit_version": self.toolkit_version,
            "rng_algorithm": self.rng_algorithm,
            "timestamp": self.timestamp,
        }


def _parse_tolerances(pairs: list[str]) -> dict[str, float]:
    out = dict(DEFAULT_TOLERANCES)
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--tolerance expects name=value, got {pair!r}")
        name, _, value = pair.partition("=")
        if name not in DEFAULT_TOLERANCES:
            raise UsageError(
                f"unknown tolerance {name!r}; known: {sorted(DEFAULT_TOLERANCES)}")
        try:
            out[name] = float(value)
        except ValueError as exc:
            raise UsageError(f"tolerance {name!r}: {value!r} is not a number") from exc
    return out


def _output_dir(args) -> Path:
    base = args.out or os.environ.get(OUTPUT_DIR_ENV) or "pbtkit-out"
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_input_protocol(args) -> tuple[PbtProtocol, Optional[dict], list[str]]:
    """Resolve --protocol/--builtin into a protocol; returns (proto, raw, paths)."""
    if args.protocol and args.builtin:
        raise UsageError("give either --protocol or --builtin, not both")
    if args.protocol:
        try:
            with open(args.protocol) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise UsageError(f"{args.protocol}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.protocol}: malformed JSON: {exc}") from exc
        try:
            if raw.get("primed"):
                proto = primed_from_dict(raw).base
            else:
                proto = protocol_from_dict(raw)
        except ToolkitError as exc:
            raise UsageError(f"{args.protocol}: {exc}") from exc
        return proto, raw, [args.protocol]
    if args.builtin == "bell":
        if args.qubits not in (None, 1):
            raise UsageError("the bell builtin is single-qubit (--qubits 1)")
        return bell_pbt_protocol(args.ports or 1), None, []
    raise UsageError("one of --protocol or --builtin is required")


def _psi_state(spec: str, n: int, seed: int) -> StateVector:
    d = 2**n
    lay = SystemLayout.of(("a", d))
    named = {
        "zero": np.eye(d)[:, 0],
        "one": np.eye(d)[:, min(1, d - 1)],
        "plus": np.full(d, 1.0 / np.sqrt(d)),
    }
    if spec in named:
        return StateVector(lay, named[spec].astype(complex))
    if spec == "haar":
        return sample_haar_state(d, seed)
    try:
        with open(spec) as fh:
            pairs = json.load(fh)
        amps = np.array([complex(re, im) for re, im in pairs])
    except FileNotFoundError as exc:
        raise UsageError(f"--psi {spec!r}: no such named state and no such file") from exc
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"--psi {spec!r}: expected [[re, im], ...]: {exc}") from exc
    if amps.size != d:
        raise UsageError(f"--psi file has dimension {amps.size}, protocol needs {d}")
    return StateVector(lay, amps / np.linalg.norm(amps))


def _report_exit(reports: list[AuditReport]) -> int:
    return 0 if all(r.passed for r in reports) else 1


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    proto, _, paths = _load_input_protocol(args)
    out_dir = _output_dir(args)
    psi = _psi_state(args.psi, proto.n, args.seed)
    branches = measure(proto, psi)
    rows = []
    for b in branches:
        row = {"k": b.k, "probability": b.probability}
        if b.k >= 1 and b.post_state is not None:
            fid, residual = teleport_report(b, psi, proto)
            row["teleport_fidelity"] = fid
            row["residual_extracted"] = residual is not None
        rows.append(row)
    manifest = RunManifest("simulate", {"psi": args.psi, "seed": args.seed,
                                        "n": proto.n, "N": proto.N},
                           paths, str(out_dir))
    payload = {
        "manifest": manifest.to_dict(),
        "success_probability": success_probability(branches),
        "branches": rows,
    }
    _write_json(out_dir / "simulate.json", payload)
    print(f"simulate: p = {payload['success_probability']:.12g} "
          f"({len(rows)} branches) -> {out_dir / 'simulate.json'}")
    return 0


def _verify_reports(proto: PbtProtocol, samples: int, seed: int,
                    tol: dict[str, float], parallel: bool) -> list[AuditReport]:
    def eq3_suite() -> AuditReport:
        rep = AuditReport(subject="port marginal decomposition", seed=seed)
        worst = 0.0
        for psi in haar_states(proto.port_dim, samples, seed):
            for j in range(1, proto.N + 1):
                sub = verify_port_decomposition(proto, psi, j, tolerance=tol["eq3"])
                worst = max(worst, sub.max_deviation())
        rep.add("decomposition residual over all ports and inputs", "Eq.3",
                worst, tol["eq3"], ports=proto.N, samples=samples)
        return rep

    def lemma_suite() -> AuditReport:
        return verify_psi_independence(proto, samples, seed,
                                       q_tolerance=tol["lemma_q"],
                                       fid_tolerance=tol["lemma_residual"])

    def theorem_suite() -> AuditReport:
        op = pointer_form(proto)
        return verify_theorem(op, samples, seed,
                              q_tolerance=tol["theorem_q"],
                              residual_tolerance=tol["theorem_residual"],
                              overlap_tolerance=tol["theorem_overlap"])

    suites = [eq3_suite, lemma_suite, theorem_suite]
    if parallel:
        with ThreadPoolExecutor(max_workers=len(suites)) as pool:
            return list(pool.map(lambda fn: fn(), suites))
    return [fn() for fn in suites]


def _cmd_verify(args) -> int:
    proto, _, paths = _load_input_protocol(args)
    out_dir = _output_dir(args)
    tol = _parse_tolerances(args.tolerance)
    reports = _verify_reports(proto, args.samples, args.seed, tol, args.parallel)
    manifest = RunManifest("verify", {"samples": args.samples, "seed": args.seed,
                                      "n": proto.n, "N": proto.N,
                                      "tolerances": tol},
                           paths, str(out_dir))
    payload = {"manifest": manifest.to_dict(),
               "reports": [r.to_dict() for r in reports]}
    _write_json(out_dir / "verify.json", payload)
    for rep in reports:
        status = "pass" if rep.passed else "FAIL"
        print(f"verify: [{status}] {rep.subject}")
    return _report_exit(reports)


def _cmd_prime(args) -> int:
    proto, _, paths = _load_input_protocol(args)
    out_dir = _output_dir(args)
    tol = _parse_tolerances(args.tolerance)
    primed = build_primed(proto)
    samples = haar_states(proto.port_dim, args.samples, args.seed)
    rep = verify_eq5(primed, samples,
                     marginal_tolerance=tol["eq5_marginal"],
                     probability_tolerance=tol["eq5_probability"])
    twirl_reports = [
        verify_failure_marginal_twirl(primed, samples[0], j, tolerance=tol["b9"])
        for j in range(1, proto.N + 1)
    ]
    manifest = RunManifest("prime", {"samples": args.samples, "seed": args.seed,
                                     "n": proto.n, "N": proto.N, "tolerances": tol},
                           paths, str(out_dir))
    doc = primed_to_dict(primed)
    doc["manifest"] = manifest.to_dict()
    _write_json(out_dir / "primed_protocol.json", doc)
    payload = {"manifest": manifest.to_dict(),
               "marginals": rep.to_dict(),
               "failure_twirl": [r.to_dict() for r in twirl_reports]}
    _write_json(out_dir / "eq5_report.json", payload)
    reports = [rep] + twirl_reports
    print(f"prime: marginal checks {'pass' if rep.passed else 'FAIL'} "
          f"-> {out_dir / 'primed_protocol.json'}")
    return _report_exit(reports)


def _cmd_audit_signaling(args) -> int:
    proto, _, paths = _load_input_protocol(args)
    out_dir = _output_dir(args)
    primed = build_primed(proto)
    messages = (list(range(1, 4**proto.n + 1)) if args.all_messages
                else [args.message])
    for m in messages:
        if not 1 <= m <= 4**proto.n:
            raise UsageError(f"message {m} out of range [1, {4 ** proto.n}]")

    def audit(m: int):
        return compute_chain_exact(primed, m)

    if args.parallel and len(messages) > 1:
        with ThreadPoolExecutor(max_workers=min(4, len(messages))) as pool:
            sig_reports = list(pool.map(audit, messages))
    else:
        sig_reports = [audit(m) for m in messages]

    mc_reports = []
    if args.mc_rounds:
        for m in messages[:1]:
            for j in range(1, proto.N + 1):
                mc_reports.append(monte_carlo_check(primed, m, j, args.mc_rounds,
                                                    args.seed))
    manifest = RunManifest("audit-signaling",
                           {"messages": messages, "seed": args.seed,
                            "mc_rounds": args.mc_rounds,
                            "n": proto.n, "N": proto.N},
                           paths, str(out_dir))
    payload = {"manifest": manifest.to_dict(),
               "signaling": [r.to_dict() for r in sig_reports],
               "monte_carlo": [r.to_dict() for r in mc_reports]}
    _write_json(out_dir / "signaling_report.json", payload)
    audits = [r.audit for r in sig_reports] + mc_reports
    for rep in sig_reports:
        status = "pass" if rep.audit.passed else "FAIL"
        print(f"audit-signaling: [{status}] message {rep.message}: "
              f"p'_j = {rep.ports[0].p_prime_simulated:.12g} (guess {4.0 ** -proto.n})")
    return _report_exit(audits)


def _cmd_optimize(args) -> int:
    out_dir = _output_dir(args)
    n = args.qubits or 1
    big_n = args.ports or 1
    cfg = SolverConfig(max_iterations=args.max_iterations, seed=args.seed)
    if args.fixed_resource:
        resource = standard_resource(n, big_n)
        result = solve(build_sdp(n, big_n, resource), cfg)
    else:
        result = solve_joint(build_joint_sdp(n, big_n), cfg)
    cert = certify(result.povm, result.resource, n, big_n, seed=args.seed)
    proto = result.protocol or PbtProtocol(n=n, N=big_n, resource=result.resource,
                                           povm=result.povm)
    manifest = RunManifest("optimize",
                           {"n": n, "N": big_n, "seed": args.seed,
                            "fixed_resource": bool(args.fixed_resource),
                            "max_iterations": args.max_iterations},
                           [], str(out_dir))
    doc = protocol_to_dict(proto)
    doc["manifest"] = manifest.to_dict()
    doc["p_opt"] = result.p_opt
    doc["q"] = [float(x) for x in result.q]
    _write_json(out_dir / "optimized_protocol.json", doc)
    with open(out_dir / "solver_trace.csv", "w", newline="") as fh:
        fh.write(f"# manifest: {json.dumps(manifest.to_dict(), sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective", "residual"])
        for it, obj, res in result.trace:
            writer.writerow([it, repr(obj), repr(res)])
    payload = {"manifest": manifest.to_dict(),
               "p_opt": result.p_opt,
               "bound": float(bound(n, big_n)),
               "converged": result.converged,
               "iterations": result.iterations,
               "residuals": result.residuals,
               "certification": cert.to_dict()}
    _write_json(out_dir / "certification.json", payload)
    print(f"optimize: p_opt = {result.p_opt:.9g} (bound {float(bound(n, big_n)):.9g}) "
          f"certified={'yes' if cert.passed else 'NO'}")
    return 0 if cert.passed else 1


def _cmd_bound_table(args) -> int:
    out_dir = _output_dir(args)
    n_lo = args.qubits or 1
    n_hi = args.max_qubits or n_lo
    if n_hi < n_lo:
        raise UsageError("--max-qubits must be >= --n")
    optimizer_values: dict[tuple[int, int], float] = {}
    paths = []
    for path in args.optimizer_json or []:
        paths.append(path)
        try:
            with open(path) as fh:
                doc = json.load(fh)
            optimizer_values[(int(doc["n"]), int(doc["N"]))] = float(doc["p_opt"])
        except FileNotFoundError as exc:
            raise UsageError(f"{path}: {exc.strerror}") from exc
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{path}: not an optimizer output: {exc}") from exc
    manifest = RunManifest("bound-table",
                           {"n": n_lo, "max_qubits": n_hi, "max_ports": args.max_ports},
                           paths, str(out_dir))
    rows = []
    for n in range(n_lo, n_hi + 1):
        for big_n in range(1, args.max_ports + 1):
            b = bound(n, big_n)
            pmax = Fraction(big_n, big_n + 3)
            rows.append({
                "n": n,
                "N": big_n,
                "bound": float(b),
                "p_max_n1_formula": float(pmax),
                "p_max_n1_pow_n": float(pmax) ** n,
                "optimizer_value": optimizer_values.get((n, big_n), ""),
            })
    table_path = out_dir / "bounds.csv"
    with open(table_path, "w", newline="") as fh:
        fh.write(f"# manifest: {json.dumps(manifest.to_dict(), sort_keys=True)}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                             for k, v in row.items()})
    # curve sanity: the balance function starts exactly at the bound
    for n in range(n_lo, n_hi + 1):
        for big_n in range(1, args.max_ports + 1):
            if f_of_R(n, big_n, 0.0).exact != bound(n, big_n):
                print("bound-table: balance curve mismatch", file=sys.stderr)
                return 1
    print(f"bound-table: {len(rows)} rows -> {table_path}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(parser: argparse.ArgumentParser, protocol_input: bool = True) -> None:
    if protocol_input:
        parser.add_argument("--protocol", help="protocol JSON file")
        parser.add_argument("--builtin", choices=["bell"], help="built-in protocol")
    parser.add_argument("--ports", type=int, help="number of ports N")
    parser.add_argument("--qubits", "--n", dest="qubits", type=int,
                        help="qubits per port n")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--samples", type=int, default=20)
    parser.add_argument("--tolerance", action="append", metavar="NAME=VALUE",
                        help="override a named tolerance (repeatable)")
    parser.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} "
                                      "or ./pbtkit-out)")
    parser.add_argument("--parallel", action="store_true",
                        help="run independent sweeps concurrently")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbtkit",
        description="Simulate and verify port-based teleportation protocols.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="run one protocol and report branches")
    _add_common(p)
    p.add_argument("--psi", default="haar",
                   help="input state: zero|one|plus|haar|<file.json>")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("verify", help="run the structural verification suites")
    _add_common(p)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("prime", help="emit the twirled protocol and its report")
    _add_common(p)
    p.set_defaults(func=_cmd_prime)

    p = sub.add_parser("audit-signaling", help="exact no-signaling chain audit")
    _add_common(p)
    p.add_argument("--message", type=int, default=1)
    p.add_argument("--all-messages", action="store_true")
    p.add_argument("--mc-rounds", type=int, default=0,
                   help="also sample this many chain rounds as a cross-check")
    p.set_defaults(func=_cmd_audit_signaling)

    p = sub.add_parser("optimize", help="maximize success probability")
    _add_common(p, protocol_input=False)
    p.add_argument("--fixed-resource", action="store_true",
                   help="keep the resource pinned to maximally entangled pairs")
    p.add_argument("--max-iterations", type=int, default=20_000)
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("bound-table", help="CSV of bounds over an (n, N) grid")
    _add_common(p, protocol_input=False)
    p.add_argument("--max-ports", type=int, required=True)
    p.add_argument("--max-qubits", type=int)
    p.add_argument("--optimizer-json", action="append",
                   help="optimizer output JSON to fill the optimizer column")
    p.set_defaults(func=_cmd_bound_table)
    return parser


def dispatch(argv: Optional[list[str]] = None) -> int:
    """Run one subcommand; exit code 0 = all checks pass, 1 = a verification
    failed, 2 = usage or input error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())
