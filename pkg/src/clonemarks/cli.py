"""``clonemarks`` command line: generate, stats, communities, certify, simulate, report.

Every command recomputes what it needs from the input trace, so any stage can
be run on its own.  Each run writes ``manifest_<command>.json`` next to its
outputs with the configuration, input and output SHA-256 hashes, the seed and
the tool version; rerunning with the same arguments reproduces the same hashes.

Exit codes::

    0  success
    1  unexpected internal error
    2  bad command line (argparse)
    3  missing input file
    4  malformed input (trace / community / report CSV)
    5  invalid configuration value
    6  clique enumeration budget exceeded
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__, kernels
from .community import (CliqueBudgetExceeded, build_social_graph, k_clique_communities,
                        read_communities, write_communities)
from .identity import Authority
from .report import ccdf, emit_report, write_ccdf, write_false_positives, write_per_node
from .simulator import (CANDIDATE_KINDS, SimulationConfig, insider_table, issue_all,
                        run_false_positive_experiment, run_outsider_experiment)
from .synth import FIXTURES, SynthConfig, generate
from .trace import DAY, ContactTrace, TraceFormatError, read_contacts, split, trace_stats, write_contacts

log = logging.getLogger("clonemarks")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_BAD_INPUT = 4
EXIT_BAD_CONFIG = 5
EXIT_CLIQUE_BUDGET = 6

FIXTURE_PREFIX = "fixture:"


class MissingInput(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)     # name -> sha256
    outputs: dict = field(default_factory=dict)    # relative path -> sha256
    version: str = __version__
    backend: str = kernels.BACKEND

    def write(self, out_dir: Path) -> Path:
        path = out_dir / f"manifest_{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- inputs ---------------------------------------------------------------------

def load_trace(spec: str) -> tuple[ContactTrace, str]:
    """Trace from a CSV path or ``fixture:<name>``; returns (trace, content hash)."""
    if spec.startswith(FIXTURE_PREFIX):
        name = spec[len(FIXTURE_PREFIX):]
        if name not in FIXTURES:
            raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
        cfg = FIXTURES[name]
        digest = hashlib.sha256(cfg.to_json().encode()).hexdigest()
        return generate(cfg), digest
    path = Path(spec)
    if not path.is_file():
        raise MissingInput(f"trace not found: {path}")
    return read_contacts(path), sha256_file(path)


def sim_config(args) -> SimulationConfig:
    attack = args.attack_days
    if attack != "all":
        try:
            attack = int(attack)
        except ValueError:
            raise ValueError("--attack-days must be 'all' or a positive integer") from None
    return SimulationConfig(training_fraction=args.split_fraction, k_clique=args.kclique_k,
                            min_days=args.min_days, candidate_kinds=args.candidate_kinds,
                            seed=args.seed, attack_days=attack)


def _communities(args, cfg, parts, manifest):
    if getattr(args, "communities", None):
        path = Path(args.communities)
        if not path.is_file():
            raise MissingInput(f"communities file not found: {path}")
        manifest.inputs["communities"] = sha256_file(path)
        return read_communities(path)
    graph = build_social_graph(parts.training, cfg.min_days)
    return k_clique_communities(graph, cfg.k_clique, budget=args.clique_budget)


# -- commands ---------------------------------------------------------------------

def cmd_generate(args, out: Path, manifest: RunManifest) -> list[Path]:
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise MissingInput(f"config not found: {path}")
        cfg = SynthConfig.load(path)
        manifest.inputs["config"] = sha256_file(path)
    else:
        cfg = FIXTURES[args.fixture]
    if args.seed is not None:
        cfg = SynthConfig.from_dict({**asdict(cfg), "seed": args.seed})
    manifest.seed = cfg.seed
    manifest.config = json.loads(cfg.to_json())
    target = out / args.output
    write_contacts(generate(cfg), target)
    return [target]


def cmd_stats(args, out: Path, manifest: RunManifest) -> list[Path]:
    trace, _ = _trace(args, manifest)
    st = trace_stats(trace, args.split_fraction)
    target = out / "stats.csv"
    row = st.as_row()
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(row))
        w.writerow([_num(v) for v in row.values()])
    for k, v in row.items():
        print(f"{k}: {_num(v)}")
    return [target]


def cmd_communities(args, out: Path, manifest: RunManifest) -> list[Path]:
    trace, _ = _trace(args, manifest)
    cfg = sim_config(args)
    parts = split(trace, cfg.training_fraction)
    graph = build_social_graph(parts.training, cfg.min_days)
    comms = k_clique_communities(graph, cfg.k_clique, budget=args.clique_budget)
    paths = [out / "social_graph.csv", out / "communities.csv"]
    graph.write_edgelist(paths[0])
    write_communities(comms, paths[1])
    print(f"{len(graph.edges)} edges, {len(comms)} communities")
    return paths


def cmd_certify(args, out: Path, manifest: RunManifest) -> list[Path]:
    trace, _ = _trace(args, manifest)
    cfg = sim_config(args)
    parts = split(trace, cfg.training_fraction)
    k_policy = args.k if args.k is not None else "max-no-fp"
    certs = issue_all(Authority(seed=cfg.seed), parts, cfg, k_policy)
    target = out / "certificates.jsonl"
    with open(target, "w") as fh:
        for node in sorted(certs):
            fh.write(json.dumps(json.loads(certs[node].to_json()), sort_keys=True) + "\n")
    flagged = sum(c.flagged for c in certs.values())
    print(f"{len(certs)} certificates issued, {flagged} flagged (k forced to 1)")
    return [target]


def cmd_simulate(args, out: Path, manifest: RunManifest) -> list[Path]:
    trace, _ = _trace(args, manifest)
    cfg = sim_config(args)
    parts = split(trace, cfg.training_fraction)
    if args.experiment == "insider":
        comms = _communities(args, cfg, parts, manifest)
        reports = insider_table(parts, comms, cfg).reports()
        paths = emit_report(reports, out, "insider", step=args.ccdf_step)
        return list(paths.values())
    certs = issue_all(Authority(seed=cfg.seed), parts, cfg)
    if args.experiment == "outsider":
        reports = run_outsider_experiment(parts, certs, cfg)
        return list(emit_report(reports, out, "outsider", step=args.ccdf_step).values())
    fps = run_false_positive_experiment(parts, certs, k=args.k)
    target = out / "false_positives.csv"
    write_false_positives(fps, target)
    print(f"{sum(f.count > 0 for f in fps.values())} of {len(fps)} nodes have false positives")
    return [target]


def cmd_report(args, out: Path, manifest: RunManifest) -> list[Path]:
    """Per-node averages and CCDF recomputed from a ``*_reports.csv`` file."""
    path = Path(args.reports)
    if not path.is_file():
        raise MissingInput(f"reports not found: {path}")
    manifest.inputs["reports"] = sha256_file(path)
    acc: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"victim", "latency_s", "outcome"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise TraceFormatError(path, 1, f"expected columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            n, k, s = acc.get(row["victim"], (0, 0, 0))
            lat = row["latency_s"]
            if row["outcome"] != "not_detected" and lat:
                try:
                    s += int(lat)
                except ValueError:
                    raise TraceFormatError(path, lineno, f"bad latency {lat!r}") from None
                k += 1
            acc[row["victim"]] = (n + 1, k, s)
    averages = {_Named(v): (n, k, s / k / DAY if k else math.inf) for v, (n, k, s) in acc.items()}
    prefix = args.prefix or path.name.removesuffix("_reports.csv")
    paths = [out / f"{prefix}_per_node.csv", out / f"{prefix}_ccdf.csv"]
    write_per_node(averages, paths[0])
    write_ccdf(ccdf([a for _, _, a in averages.values()], args.ccdf_step), paths[1])
    return paths


@dataclass(frozen=True, order=True)
class _Named:
    id: str


def _trace(args, manifest):
    trace, digest = load_trace(args.trace)
    manifest.inputs["trace"] = digest
    return trace, digest


def _num(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


# -- argument parsing ------------------------------------------------------------

def _common(p: argparse.ArgumentParser, trace: bool = True) -> None:
    if trace:
        p.add_argument("--trace", required=True,
                       help="contact CSV (a,b,start,end) or fixture:<name>")
    p.add_argument("--split-fraction", type=float, default=0.25,
                   help="leading fraction of the trace used for training")
    p.add_argument("--kclique-k", type=int, default=3)
    p.add_argument("--min-days", type=int, default=3,
                   help="distinct meeting days needed for a social-graph edge")
    p.add_argument("--candidate-kinds", choices=sorted(CANDIDATE_KINDS), default="node")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--attack-days", default="all",
                   help="'all' evaluation days or a sample size per scenario family")
    p.add_argument("--clique-budget", type=int, default=1_000_000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clonemarks", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic contact trace")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON file with SynthConfig fields")
    src.add_argument("--fixture", choices=sorted(FIXTURES), default="tiny20")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--output", default="trace.csv")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", help="trace summary statistics")
    _common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("communities", help="social graph and k-clique communities")
    _common(p)
    p.set_defaults(func=cmd_communities)

    p = sub.add_parser("certify", help="issue community certificates")
    _common(p)
    p.add_argument("--k", type=int, default=None,
                   help="fixed validity threshold (default: largest k without false positives)")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="run an attack experiment")
    p.add_argument("experiment", choices=["insider", "outsider", "false-positives"])
    _common(p)
    p.add_argument("--communities", help="reuse a communities.csv instead of recomputing")
    p.add_argument("--k", type=int, default=1, help="threshold for false-positives")
    p.add_argument("--ccdf-step", type=float, default=0.25, help="CCDF grid step in days")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="per-node averages and CCDF from a reports CSV")
    p.add_argument("--reports", required=True)
    p.add_argument("--prefix", default=None)
    p.add_argument("--ccdf-step", type=float, default=0.25)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_report)
    return parser


def _config_snapshot(args) -> dict:
    skip = {"func", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and k != "out_dir"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse exits 0 for --help/--version, 2 on errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(args.out_dir)
    manifest = RunManifest(command=args.command if args.command != "simulate"
                           else f"simulate_{args.experiment.replace('-', '_')}",
                           config=_config_snapshot(args), seed=getattr(args, "seed", None) or 0)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = args.func(args, out, manifest)
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except TraceFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except CliqueBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CLIQUE_BUDGET
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except Exception as exc:           # pragma: no cover - last resort diagnostics
        log.exception("internal error")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    manifest.outputs = {p.name: sha256_file(p) for p in written}
    manifest.write(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
