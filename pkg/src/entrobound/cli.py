"""``entrobound`` command line.

Subcommands: ``solve``, ``sweep``, ``slice``, ``ed``, ``paircover`` and
``replay``. Instances, CSV columns and manifests are described in
``docs/formats.md``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import graphcover, hamiltonians as hm, relaxations as rx
from .quantum import HermitianOperator, LanczosError, SiteSystem
from .solver import SolverConfig, SolverDivergence, solve

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_LANCZOS = 3

RELAXATIONS = ("loc", "wm", "med", "loc-ti", "wm-ti")


class InputError(ValueError):
    pass


def fmt(x):
    """Round floats to 12 significant digits for output."""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if not math.isfinite(x) else float(f"{x:.12g}")
    if isinstance(x, dict):
        return {k: fmt(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [fmt(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    return x


def csv_cell(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return x


# --------------------------------------------------------------------------- #
# Instances
# --------------------------------------------------------------------------- #


def _matrix(data) -> np.ndarray:
    try:
        return np.array([[complex(re, im) for re, im in row] for row in data])
    except (TypeError, ValueError) as exc:
        raise InputError("matrices are lists of rows of [re, im] pairs") from exc


def load_instance(source) -> dict:
    if isinstance(source, dict):
        return source
    try:
        data = json.loads(Path(source).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {source}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict) or "kind" not in data:
        raise InputError("instance must be a JSON object with a 'kind' field")
    return data


def ti_term(inst: dict) -> hm.TIChainTerm:
    if inst.get("kind") != "ti_chain":
        raise InputError("this relaxation needs a ti_chain instance")
    if "term" in inst:
        return hm.TIChainTerm.from_matrix(_matrix(inst["term"]), int(inst.get("local_dim", 2)), "custom")
    return hm.build_xxz(float(inst.get("delta", 0.0)))


def local_hamiltonian(inst: dict) -> hm.LocalHamiltonian:
    kind = inst.get("kind")
    if kind == "three_site_epr":
        return hm.build_three_site_epr()
    if kind == "graph":
        return hm.build_quantum_maxcut(inst["edges"])
    if kind == "ghz_hyper":
        return hm.build_ghz_hyper(int(inst.get("l", 2)))
    if kind == "local":
        system = SiteSystem(inst["sites"], inst.get("dims", 2))
        terms = []
        for t in inst["terms"]:
            dims = [system.local_dims[p] for p in system.positions(t["sites"])]
            terms.append(HermitianOperator(_matrix(t["matrix"]), t["sites"], dims))
        return hm.LocalHamiltonian(system, tuple(terms))
    if kind == "ti_chain":
        raise InputError("ti_chain instances need --sites (ed) or a -ti relaxation")
    raise InputError(f"unknown instance kind {kind!r}")


def build_relaxation(inst: dict, relaxation: str, level: int | None, supports: str = "connected",
                     temperature: float | None = None) -> rx.RelaxationSpec:
    if relaxation not in RELAXATIONS:
        raise InputError(f"unknown relaxation {relaxation!r}")
    if relaxation in ("loc-ti", "wm-ti"):
        term = ti_term(inst)
        level = level or 3
        build = rx.build_loc_ti if relaxation == "loc-ti" else rx.build_wm_ti
        return build(level, term.local_dim, term)
    ham = local_hamiltonian(inst)
    width = max(len(s) for s in ham.supports)
    level = level or width
    if level < width:
        raise InputError(f"level {level} is below the interaction range {width}")
    if inst.get("kind") == "ghz_hyper":
        base = rx.build_loc_for(ham)
    else:
        base = rx.build_loc_for(ham, level, mode=supports)
    if relaxation == "loc":
        return base
    if relaxation == "wm":
        if inst.get("kind") == "ghz_hyper":
            l = int(inst.get("l", 2))
            return rx.build_wm(base, l, triples=[(l, range(1, l), range(l + 1, 2 * l))])
        return rx.build_wm(base, level)
    order = list(ham.system.site_ids)
    plan = rx.MarkovShieldPlan.previous(order, width=level - 1)
    if temperature is not None:
        return rx.build_med_free_energy(base, plan, temperature)
    return rx.build_med_constraints(base, plan)


# --------------------------------------------------------------------------- #
# Manifests
# --------------------------------------------------------------------------- #


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _git_commit() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


@dataclass
class RunManifest:
    command: str
    options: dict
    instance: dict | None
    config: dict
    wall_seconds: float = 0.0
    result: dict = field(default_factory=dict)
    version: str = field(default_factory=_version)
    git_commit: str | None = field(default_factory=_git_commit)

    def to_dict(self) -> dict:
        return fmt({
            "command": self.command,
            "options": self.options,
            "instance": self.instance,
            "config": self.config,
            "wall_seconds": self.wall_seconds,
            "result": self.result,
            "version": self.version,
            "git_commit": self.git_commit,
        })

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _load_config(path) -> SolverConfig:
    if not path:
        return SolverConfig()
    if isinstance(path, dict):
        return SolverConfig(**path)
    try:
        data = json.loads(Path(path).read_text())
        return SolverConfig(**data)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise InputError(f"bad config file {path}: {exc}") from exc


def _threads(n) -> int:
    if n:
        return max(1, int(n))
    env = os.environ.get("ENTROBOUND_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError as exc:
        raise InputError(f"ENTROBOUND_THREADS={env!r} is not an integer") from exc


def _map(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _emit(rows, header, out):
    if out:
        fh = open(out, "w", newline="")
    else:
        fh = io.StringIO()
    w = csv.writer(fh)
    w.writerow(header)
    for r in rows:
        w.writerow([csv_cell(r[h]) for h in header])
    if out:
        fh.close()
    else:
        sys.stdout.write(fh.getvalue())


def _manifest_path(command, args):
    if args.get("manifest"):
        return args["manifest"]
    if args.get("out"):
        return args["out"] + ".manifest.json"
    if command in ("sweep", "slice"):
        # CSV goes to stdout, so the manifest needs a file of its own
        return f"entrobound-{command}.manifest.json"
    return None


# --------------------------------------------------------------------------- #
# Commands. Each takes the instance (or None) and a plain options dict so a
# manifest can replay it.
# --------------------------------------------------------------------------- #


def cmd_solve(inst, opts) -> tuple[int, dict]:
    cfg = _load_config(opts.get("config"))
    spec = build_relaxation(inst, opts["relaxation"], opts.get("level"), opts.get("supports", "connected"),
                            opts.get("temperature"))
    res = solve(spec, cfg)
    out = {"relaxation": spec.name, **res.summary()}
    code = EXIT_OK if res.converged else EXIT_NOT_CONVERGED
    return code, out


def _sweep_job(inst, relaxation, level, config):
    t0 = time.perf_counter()
    try:
        spec = build_relaxation(inst, relaxation, level)
        res = solve(spec, SolverConfig(**config))
        return level, res.lower_bound_certified, res.status, time.perf_counter() - t0
    except Exception as exc:  # noqa: BLE001 - recorded in the status column
        return level, float("nan"), f"failed: {exc}", time.perf_counter() - t0


def _levels(text: str) -> list[int]:
    try:
        if ".." in text:
            a, b = text.split("..")
            levels = list(range(int(a), int(b) + 1))
        else:
            levels = [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise InputError(f"bad level range {text!r}") from exc
    if not levels or min(levels) < 1:
        raise InputError(f"bad level range {text!r}")
    return levels


def _e0_reference(inst, opts) -> float:
    if opts.get("e0") is not None:
        return float(opts["e0"])
    term = ti_term(inst)
    sizes = [int(s) for s in str(opts.get("e0_sizes", "12,16,20")).split(",")]
    try:
        return hm.extrapolate_energy_density(term, sizes)
    except LanczosError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_sweep(inst, opts) -> tuple[int, dict]:
    cfg = _load_config(opts.get("config"))
    levels = _levels(opts["levels"])
    e0 = _e0_reference(inst, opts) if inst.get("kind") == "ti_chain" else float("nan")
    jobs = [(inst, opts["relaxation"], lvl, cfg.to_dict()) for lvl in levels]
    rows = []
    for level, bound, status, wall in sorted(_map(_sweep_job, jobs, _threads(opts.get("threads")))):
        rows.append({"level": level, "bound": bound, "e0_ref": e0, "gap": e0 - bound,
                     "wall_seconds": wall, "status": status})
    _emit(rows, ["level", "bound", "e0_ref", "gap", "wall_seconds", "status"], opts.get("out"))
    ok = all(r["status"] == "converged" for r in rows)
    return (EXIT_OK if ok else EXIT_NOT_CONVERGED), {"rows": rows, "e0_ref": e0}


def _slice_job(relaxation, level, theta, config):
    spec = build_relaxation({"kind": "ti_chain", "delta": 0.0}, relaxation, level)
    return rx.slice_support_scan(spec, [theta], SolverConfig(**config))[0]


def cmd_slice(inst, opts) -> tuple[int, dict]:
    n = int(opts["angles"])
    if n < 4:
        raise InputError("--angles must be at least 4")
    if opts["relaxation"] not in ("loc-ti", "wm-ti"):
        raise InputError("slice needs --relaxation loc-ti or wm-ti")
    cfg = _load_config(opts.get("config"))
    delta = float(opts.get("delta", 0.0))
    thetas = [2 * math.pi * k / n for k in range(n)]
    jobs = [(opts["relaxation"], int(opts["level"]), th, cfg.to_dict()) for th in thetas]
    rows = sorted(_map(_slice_job, jobs, _threads(opts.get("threads"))), key=lambda r: r["theta"])
    for r in rows:
        # energy of -XX - YY - delta ZZ per bond at the support point
        r["energy"] = -2 * r["x"] - delta * r["z"]
    _emit(rows, ["theta", "x", "z", "support", "energy", "status"], opts.get("out"))
    ok = all(r["status"] == "converged" for r in rows)
    return (EXIT_OK if ok else EXIT_NOT_CONVERGED), {"rows": rows}


def cmd_ed(inst, opts) -> tuple[int, dict]:
    if inst.get("kind") == "ti_chain":
        m = opts.get("sites")
        if not m:
            raise InputError("ti_chain needs --sites")
        term = ti_term(inst)
        try:
            e = hm.ring_ground_state(term, int(m))[0]
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        return EXIT_OK, {"lambda_min": e, "energy_density": e / int(m), "sites": int(m)}
    ham = local_hamiltonian(inst)
    e = ham.min_eigenvalue()
    return EXIT_OK, {"lambda_min": e, "energy_density": e / len(ham.system), "sites": len(ham.system)}


def cmd_paircover(graph_text, opts) -> tuple[int, dict]:
    g = graphcover.parse_edge_list(graph_text)
    bound, pairing = graphcover.epr_wm_bound(g)
    return EXIT_OK, {
        "pairs": [[list(a), list(b)] for a, b in pairing.pairs],
        "unmatched": list(pairing.unmatched) if pairing.unmatched else None,
        "bound": bound,
        "repairing_steps": pairing.steps,
    }


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "slice": cmd_slice, "ed": cmd_ed, "paircover": cmd_paircover}


def run(command: str, inst, opts: dict) -> tuple[int, dict]:
    t0 = time.perf_counter()
    code, result = COMMANDS[command](inst, opts)
    cfg = _load_config(opts.get("config")).to_dict() if command in ("solve", "sweep", "slice") else {}
    manifest = RunManifest(command, {k: v for k, v in opts.items() if k != "manifest"}, inst, cfg,
                           time.perf_counter() - t0, result)
    path = _manifest_path(command, opts)
    if path:
        manifest.write(path)
    if command in ("solve", "ed", "paircover"):
        payload = dict(fmt(result))
        if not path:
            payload["manifest"] = manifest.to_dict()
        print(json.dumps(payload, indent=2))
    return code, manifest.to_dict()


# --------------------------------------------------------------------------- #
# argparse
# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entrobound", description="Certified lower bounds for local Hamiltonians.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--manifest", help="where to write the run manifest")
        if config:
            sp.add_argument("--config", help="JSON file with solver settings")

    s = sub.add_parser("solve", help="solve one relaxation and print the result as JSON")
    s.add_argument("instance")
    s.add_argument("--relaxation", choices=RELAXATIONS, required=True)
    s.add_argument("--level", type=int)
    s.add_argument("--supports", choices=("connected", "all"), default="connected")
    s.add_argument("--temperature", type=float, help="with med: bound the free energy at this temperature")
    common(s)

    s = sub.add_parser("sweep", help="bounds over a range of levels, as CSV")
    s.add_argument("instance")
    s.add_argument("--relaxation", choices=RELAXATIONS, required=True)
    s.add_argument("--levels", default="3..5")
    s.add_argument("--out")
    s.add_argument("--e0", type=float, help="reference energy density (default: ring extrapolation)")
    s.add_argument("--e0-sizes", default="12,16,20")
    s.add_argument("--threads", type=int)
    common(s)

    s = sub.add_parser("slice", help="support points of a relaxation in the (x, z) plane")
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--relaxation", choices=("loc-ti", "wm-ti"), required=True)
    s.add_argument("--level", type=int, required=True)
    s.add_argument("--angles", type=int, default=16)
    s.add_argument("--out")
    s.add_argument("--threads", type=int)
    common(s)

    s = sub.add_parser("ed", help="exact ground energy")
    s.add_argument("instance")
    s.add_argument("--sites", type=int, help="ring size for ti_chain instances")
    common(s, config=False)

    s = sub.add_parser("paircover", help="edge pairing and the weak-monotonicity bound")
    s.add_argument("graph", help="JSON edge list or whitespace-separated edge file")
    common(s, config=False)

    s = sub.add_parser("replay", help="rerun a command from its manifest")
    s.add_argument("manifest_file")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opts = {k: v for k, v in vars(args).items() if k not in ("command", "instance", "graph")}
    try:
        if args.command == "replay":
            data = json.loads(Path(args.manifest_file).read_text())
            command, inst, opts = data["command"], data["instance"], dict(data["options"])
            opts.pop("manifest", None)
            if data.get("config"):
                opts["config"] = data["config"]
        elif args.command == "paircover":
            command = "paircover"
            try:
                inst = Path(args.graph).read_text()
            except OSError as exc:
                raise InputError(f"cannot read {args.graph}: {exc}") from exc
        elif args.command == "slice":
            command, inst = "slice", None
        else:
            command, inst = args.command, load_instance(args.instance)
        code, _ = run(command, inst, opts)
        return code
    except LanczosError as exc:
        print(f"entrobound: Lanczos failed: {exc}", file=sys.stderr)
        return EXIT_LANCZOS
    except SolverDivergence as exc:
        print(f"entrobound: solver diverged: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ValueError, KeyError, TypeError) as exc:
        print(f"entrobound: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
