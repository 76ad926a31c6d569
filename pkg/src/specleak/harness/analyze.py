"""End-to-end analysis of one SpecIR program."""
from __future__ import annotations

import logging
import time
from pathlib import Path

from ..cache import (EVICTED, INFEASIBLE, MAY_REMAIN, UNKNOWN_V, CacheTrace, check_residency)
from ..ir import Program, load_program, parse_program
from ..solver import Solver
from ..speculator import KINDS, LS, ExplorationResult, Explorer
from .config import AnalysisConfig
from .report import SCHEMA, TIMING_KEY, Report

log = logging.getLogger(__name__)


def _program(source, name):
    if isinstance(source, Program):
        return source, name or "program"
    p = Path(source)
    return load_program(p), name or p.stem


def residency_by_site(result: ExplorationResult, config: AnalysisConfig,
                      solver: Solver) -> dict[int, dict]:
    """Residency verdict for every LS instruction, aggregated over the Γ traces containing it.

    A site leaks when any of its secret-dependent accesses may remain cached
    in any Γ; undecided queries count as leaking.
    """
    sites: dict[int, dict] = {f.instr: {"status": None, "gammas": 0, "witness": None,
                                        "observation": None}
                              for f in result.of_kind(LS)}
    seen: dict = {}
    for g in result.omega.all():
        trace = CacheTrace.from_gamma(g)
        if not trace.n_s:
            continue
        key = (tuple((e.kind, e.sigma) for e in trace.events), trace.pi)
        verdict = seen.get(key)
        if verdict is None:
            verdict = check_residency(trace, config.cache, config.attacker, solver,
                                      route=config.residency_route)
            seen[key] = verdict
        for idx, ev in verdict.events.items():
            iid = trace.events[idx].instr
            site = sites.setdefault(iid, {"status": None, "gammas": 0, "witness": None,
                                          "observation": None})
            site["gammas"] += 1
            prev = site["status"]
            if ev.status in (MAY_REMAIN, UNKNOWN_V):
                if prev != MAY_REMAIN:
                    site["status"] = ev.status
                    site["observation"] = verdict.observation
                    site["witness"] = {"model": ev.model, "addresses": ev.addresses,
                                       "contents": ev.contents, "route": ev.route,
                                       "note": ev.note}
            elif ev.status == EVICTED and prev in (None, INFEASIBLE):
                site["status"] = EVICTED
            elif ev.status == INFEASIBLE and prev is None:
                site["status"] = INFEASIBLE
    for site in sites.values():
        if site["status"] is None:
            # no completed Γ reached this site (budget); stay conservative
            site["status"] = UNKNOWN_V
    return sites


def analyze(source, config: AnalysisConfig | None = None, *, name: str | None = None,
            solver: Solver | None = None) -> Report:
    """Explore ``source`` (path, SpecIR text via :func:`analyze_text`, or a Program)."""
    config = config or AnalysisConfig()
    program, name = _program(source, name)
    solver = solver or config.make_solver()
    t0 = time.perf_counter()
    result = Explorer(program, config.explorer_config(), solver).run()
    t1 = time.perf_counter()
    residency = None
    if config.cache_model and result.count(LS):
        residency = residency_by_site(result, config, solver)
    t2 = time.perf_counter()
    return build_report(name, program, config, result, residency,
                        {"wall": t2 - t0, "exploration": t1 - t0, "cache": t2 - t1,
                         "solver": solver.stats.time})


def analyze_text(text: str, config: AnalysisConfig | None = None, *, name: str = "program",
                 solver: Solver | None = None) -> Report:
    return analyze(parse_program(text), config, name=name, solver=solver)


def build_report(name: str, program: Program, config: AnalysisConfig, result: ExplorationResult,
                 residency: dict | None, timing: dict) -> Report:
    st = result.stats
    counts = {k: result.count(k) for k in KINDS}
    findings = []
    for f in result.findings:
        ins = program.instruction(f.instr)
        findings.append({
            "kind": f.kind, "instr": f.instr, "function": f.location[0], "block": f.location[1],
            "index": f.location[2], "line": ins.line, "branch": f.branch,
            "secrets": sorted(f.secrets), "witness": f.witness,
            "schedule": [list(d) for d in (f.schedule or [])],
        })
    data = {
        "schema": SCHEMA,
        "program": name,
        "config": config.to_dict(),
        "stats": {
            "explored_paths": st.normal_paths,
            "explored_speculative_paths": st.speculative_paths,
            "avg_speculative_instructions": round(st.avg_speculative_instructions, 4),
            "instructions": st.instructions,
            "gammas": st.gammas,
            "speculative_locations": len(result.spec_locations),
            "pruned_speculative": st.pruned_speculative,
            "memory_events": st.memory_events,
            "symbolic_address_pct": round(100.0 * st.symbolic_events / st.memory_events, 4)
            if st.memory_events else 0.0,
            "budget_exhausted": st.budget_exhausted,
            "terminations": dict(sorted(st.terminations.items())),
            "gamma_overflow": st.gamma_overflow,
        },
        "counts": counts,
        "findings": findings,
        "diagnostics": [{"kind": d.kind, "instr": d.instr, "phase": d.phase, "message": d.message}
                        for d in result.diagnostics],
    }
    if residency is not None:
        rows = []
        for iid in sorted(residency):
            v = residency[iid]
            rows.append({"instr": iid, "line": program.instruction(iid).line,
                         "status": v["status"], "attacker": config.attacker,
                         "observation": v["observation"], "gammas": v["gammas"],
                         "witness": v["witness"]})
        data["residency"] = rows
        ls_ids = {f.instr for f in result.of_kind(LS)}
        leaking = {r["instr"] for r in rows
                   if r["status"] in (MAY_REMAIN, UNKNOWN_V) and r["instr"] in ls_ids}
        data["leakages"] = len(leaking)
    else:
        data["leakages"] = counts[LS]
    data["leakage"] = data["leakages"] > 0
    wall = timing["wall"]
    data[TIMING_KEY] = {**{k: round(v, 6) for k, v in timing.items()},
                        "solver_pct": round(100.0 * timing["solver"] / wall, 2) if wall else 0.0}
    return Report(data)
