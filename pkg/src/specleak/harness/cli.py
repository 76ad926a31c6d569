"""Command line: ``specleak analyze|sweep|corpus|oracle|trace``.

Exit codes: 0 clean, 2 leakage found, 1 error (or corpus/sweep mismatch).
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

from ..cache import ACCESS, TRACE, CacheConfig, check_residency, parse_trace
from ..cache.trace import TraceFormatError
from ..expr import WidthError
from ..ir import SpecIRError, load_program
from ..oracle import ground_truth
from .analyze import analyze
from .config import AnalysisConfig, ConfigError
from .corpus import run_corpus
from .report import render_text
from .sweep import sweep_eviction

log = logging.getLogger("specleak")

EXIT_CLEAN, EXIT_ERROR, EXIT_LEAK = 0, 1, 2


def _cache_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("cache geometry")
    g.add_argument("--cache", metavar="SETSxLINExWAYS", help="e.g. 256x64x2")
    g.add_argument("--cache-size", type=int, default=32768, help="bytes (default 32768)")
    g.add_argument("--line", type=int, default=64, help="line size in bytes (default 64)")
    g.add_argument("--ways", type=int, default=2, help="associativity (default 2)")


def _cache_from(ns) -> CacheConfig:
    try:
        if ns.cache:
            return CacheConfig.parse(ns.cache)
        return CacheConfig.from_size(ns.cache_size, ns.line, ns.ways)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _analysis_args(p: argparse.ArgumentParser):
    p.add_argument("--sew", type=int, default=50, help="speculative window (0 = classic mode)")
    _cache_args(p)
    p.add_argument("--attacker", choices=(ACCESS, TRACE), default=ACCESS)
    p.add_argument("--cache-model", choices=("on", "off"), default="on")
    p.add_argument("--solver", default="enum", help="enum | smt:<path>")
    p.add_argument("--search", default="dfs", help="dfs | bfs | random:<seed>")
    p.add_argument("--max-paths", type=int, default=100_000)
    p.add_argument("--max-inst", type=int, default=100_000)
    p.add_argument("--timeout", type=float, default=None, help="wall-clock budget in seconds")
    p.add_argument("--nested-window", choices=("shared", "fresh"), default="shared")


def _config_from(ns) -> AnalysisConfig:
    return AnalysisConfig(sew=ns.sew, cache=_cache_from(ns), attacker=ns.attacker,
                          cache_model=ns.cache_model == "on", solver=ns.solver,
                          search=ns.search, max_paths=ns.max_paths,
                          max_instructions=ns.max_inst, timeout=ns.timeout,
                          nested_window=ns.nested_window)


def _range(text: str) -> range:
    lo, sep, hi = text.partition("-")
    try:
        return range(int(lo), int(hi if sep else lo) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO-HI, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specleak", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="analyze one SpecIR program")
    a.add_argument("file")
    _analysis_args(a)
    a.add_argument("--report", choices=("json", "text"), default="text")
    a.add_argument("-o", "--output", help="write the report here instead of stdout")

    s = sub.add_parser("sweep", help="eviction sweep over N and associativity")
    s.add_argument("--assoc", default="2,4,8", help="comma-separated associativities")
    s.add_argument("--n", type=_range, default=range(1, 513), help="N range, e.g. 1-512")
    s.add_argument("--cache-size", type=int, default=32768)
    s.add_argument("--line", type=int, default=64)
    s.add_argument("--sew", type=int, default=50)
    s.add_argument("--attacker", choices=(ACCESS, TRACE), default=ACCESS)
    s.add_argument("--no-oracle", action="store_true", help="skip the concrete LRU confirmation")
    s.add_argument("--csv", help="write per-N verdicts to this file")

    c = sub.add_parser("corpus", help="check a directory against its sidecar expectations")
    c.add_argument("dir")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--report", choices=("json", "text"), default="text")

    o = sub.add_parser("oracle", help="ground truth by exhaustive concrete misprediction")
    o.add_argument("file")
    o.add_argument("--sew", type=int, default=50)
    o.add_argument("--secret-values", type=_range, default=range(256))
    o.add_argument("--max-input-bits", type=int, default=16)
    _cache_args(o)

    t = sub.add_parser("trace", help="residency check of a standalone trace file")
    t.add_argument("file")
    _cache_args(t)
    t.add_argument("--attacker", choices=(ACCESS, TRACE), default=ACCESS)
    t.add_argument("--solver", default="enum")
    return ap


def cmd_analyze(ns) -> int:
    report = analyze(ns.file, _config_from(ns))
    text = report.to_json() + "\n" if ns.report == "json" else render_text([report])
    if ns.output:
        Path(ns.output).write_text(text)
    else:
        sys.stdout.write(text)
    return report.exit_code


def cmd_sweep(ns) -> int:
    try:
        assoc = [int(x) for x in ns.assoc.split(",") if x]
    except ValueError:
        raise ConfigError(f"bad associativity list {ns.assoc!r}") from None
    res = sweep_eviction(assoc, ns.n, size=ns.cache_size, line=ns.line, sew=ns.sew,
                         attacker=ns.attacker, oracle=not ns.no_oracle)
    if ns.csv:
        Path(ns.csv).write_text(res.to_csv())
    print(res.summary())
    print(f"{len(res.rows)} points in {res.seconds:.1f}s")
    bad = res.disagreements()
    for r in bad:
        print(f"oracle disagreement at N={r.n} ways={r.ways}: tool {r.verdict}, oracle {r.oracle}")
    return EXIT_ERROR if bad else EXIT_CLEAN


def cmd_corpus(ns) -> int:
    if not Path(ns.dir).is_dir():
        raise ConfigError(f"{ns.dir} is not a directory")
    summary = run_corpus(ns.dir, jobs=ns.jobs)
    if ns.report == "json":
        print(json.dumps(summary.to_dict(), indent=2, sort_keys=True, default=str))
    else:
        sys.stdout.write(summary.render())
    return summary.exit_code


def input_domain(program, max_bits: int) -> list[dict]:
    """Every assignment of the entry function's parameters."""
    params = program.entry_function.params
    bits = sum(w for _, w in params)
    if bits > max_bits:
        raise ConfigError(f"{bits} input bits exceed --max-input-bits {max_bits}")
    names = [n for n, _ in params]
    return [dict(zip(names, vals))
            for vals in itertools.product(*(range(1 << w) for _, w in params))]


def cmd_oracle(ns) -> int:
    program = load_program(ns.file)
    cache = _cache_from(ns)
    geom = (cache.sets, cache.line_bytes, cache.ways)
    truth = ground_truth(program, input_domain(program, ns.max_input_bits), ns.sew,
                         secret_values=ns.secret_values, caches=[geom])

    def obj(iid):
        return program.instruction(iid).args[0]

    out = {"sew": ns.sew, "cache": cache.describe(),
           "secret_values": f"{ns.secret_values.start}-{ns.secret_values.stop - 1}",
           "ls": [obj(i) for i in truth["ls"]],
           "resident": [obj(i) for i in truth["resident"][geom]]}
    print(json.dumps(out, indent=2))
    return EXIT_LEAK if out["resident"] else EXIT_CLEAN


def cmd_trace(ns) -> int:
    trace = parse_trace(Path(ns.file).read_text())
    solver = AnalysisConfig(solver=ns.solver).make_solver()
    verdict = check_residency(trace, _cache_from(ns), ns.attacker, solver)
    print(f"{verdict.status} (attacker {ns.attacker}, observation {verdict.observation})")
    for idx, ev in sorted(verdict.events.items()):
        print(f"  event {idx}: {ev.status} via {ev.route}" + (f", model {ev.model}" if ev.model else ""))
    return EXIT_LEAK if verdict.leaks else EXIT_CLEAN


COMMANDS = {"analyze": cmd_analyze, "sweep": cmd_sweep, "corpus": cmd_corpus,
            "oracle": cmd_oracle, "trace": cmd_trace}


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[ns.command](ns)
    except (SpecIRError, ConfigError, TraceFormatError, WidthError, OSError) as exc:
        print(f"specleak: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
