"""Run a directory of SpecIR programs against their expected-findings sidecars.

Each ``NAME.specir`` needs a ``NAME.expect.json`` next to it::

    {
      "schema": 1,
      "config": {"sew": 50, "cache_model": "off"},   # overrides of AnalysisConfig
      "expect": {"VB": 1, "UC_VB": 1, "RS": 1, "LS": 1},
      "sites": {"RS": ["array1"], "LS": ["array2"]},   # accessed globals per kind
      "leakage": true,
      "classic": {"VB": 0, ...},                       # optional: counts at sew=0
      "variants": [                                    # optional: further runs
        {"config": {"cache_model": "on"}, "leakages": 2,
         "leaking": ["t1", "t3"]}                      # globals of leaking LS sites
      ]
    }

Every key except ``config`` is optional; absent keys are not checked.
Keys such as ``original`` or ``note`` are commentary.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..cache import CacheConfig, MAY_REMAIN, UNKNOWN_V
from ..ir import Program, load_program
from .analyze import analyze
from .config import AnalysisConfig, ConfigError
from .report import Report

log = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".expect.json"


def config_from(overrides: dict, base: AnalysisConfig | None = None) -> AnalysisConfig:
    kw = dict(vars(base or AnalysisConfig()))
    for key, val in overrides.items():
        if key == "cache_model":
            val = val in (True, "on")
        elif key == "cache":
            val = CacheConfig.parse(val) if isinstance(val, str) else CacheConfig(**val)
        elif key not in kw:
            raise ConfigError(f"unknown config key {key!r} in sidecar")
        kw[key] = val
    return AnalysisConfig(**kw)


def _object(program: Program, iid: int) -> str:
    """Accessed global for memory sites, enclosing block for branches."""
    ins = program.instruction(iid)
    return ins.args[0] if ins.is_memory else ins.loc[1]


def site_objects(program: Program, report: Report, kind: str) -> list[str]:
    return sorted({_object(program, f["instr"]) for f in report.data["findings"]
                   if f["kind"] == kind})


def leaking_objects(program: Program, report: Report) -> list[str]:
    rows = report.data.get("residency") or []
    return sorted({_object(program, r["instr"]) for r in rows
                   if r["status"] in (MAY_REMAIN, UNKNOWN_V)})


def check(program: Program, report: Report, spec: dict) -> list[str]:
    """Differences between a report and one sidecar entry (empty when it passes)."""
    problems = []
    for kind, want in spec.get("expect", {}).items():
        got = report.counts.get(kind)
        if got != want:
            problems.append(f"{kind}: expected {want}, got {got}")
    for kind, want in spec.get("sites", {}).items():
        got = site_objects(program, report, kind)
        if got != sorted(want):
            problems.append(f"{kind} sites: expected {sorted(want)}, got {got}")
    if "leakage" in spec and report.leakage != spec["leakage"]:
        problems.append(f"leakage: expected {spec['leakage']}, got {report.leakage}")
    if "leakages" in spec and report.leakages != spec["leakages"]:
        problems.append(f"leakages: expected {spec['leakages']}, got {report.leakages}")
    if "leaking" in spec:
        got = leaking_objects(program, report)
        if got != sorted(spec["leaking"]):
            problems.append(f"leaking sites: expected {sorted(spec['leaking'])}, got {got}")
    return problems


@dataclass
class CorpusEntry:
    name: str
    path: str
    problems: list[str] = field(default_factory=list)
    error: str | None = None
    reports: list[Report] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None and not self.problems

    @property
    def status(self) -> str:
        return "ERROR" if self.error else ("PASS" if self.ok else "FAIL")


def run_file(path, base: AnalysisConfig | None = None) -> CorpusEntry:
    path = Path(path)
    name = path.name[:-len(".specir")] if path.name.endswith(".specir") else path.stem
    entry = CorpusEntry(name, str(path))
    sidecar = path.with_name(name + SIDECAR_SUFFIX)
    try:
        if not sidecar.exists():
            raise FileNotFoundError(f"missing sidecar {sidecar.name}")
        spec = json.loads(sidecar.read_text())
        program = load_program(path)
        runs = [(spec.get("config", {}), spec)]
        if "classic" in spec:
            runs.append(({**spec.get("config", {}), "sew": 0}, {"expect": spec["classic"]}))
        for v in spec.get("variants", []):
            runs.append(({**spec.get("config", {}), **v.get("config", {})}, v))
        for overrides, expected in runs:
            cfg = config_from(overrides, base)
            report = analyze(program, cfg, name=name)
            entry.reports.append(report)
            tag = "" if expected is spec else f"[{json.dumps(overrides, sort_keys=True)}] "
            entry.problems += [tag + p for p in check(program, report, expected)]
    except Exception as exc:       # per-file error; the rest of the corpus still runs
        entry.error = f"{type(exc).__name__}: {exc}"
        log.debug("corpus entry %s failed", path, exc_info=True)
    return entry


@dataclass
class CorpusSummary:
    entries: list[CorpusEntry]

    @property
    def passed(self) -> int:
        return sum(e.ok for e in self.entries)

    @property
    def exit_code(self) -> int:
        return 0 if all(e.ok for e in self.entries) else 1

    def render(self) -> str:
        lines = [f"{'program':<20} {'status':<6} {'VB':>3} {'UC_VB':>5} {'RS':>3} {'LS':>3}  notes"]
        for e in self.entries:
            c = e.reports[0].counts if e.reports else {}
            cells = [c.get(k, "-") for k in ("VB", "UC_VB", "RS", "LS")]
            note = e.error or "; ".join(e.problems)
            lines.append(f"{e.name:<20} {e.status:<6} {cells[0]!s:>3} {cells[1]!s:>5} "
                         f"{cells[2]!s:>3} {cells[3]!s:>3}  {note}")
        lines.append(f"{self.passed}/{len(self.entries)} passed")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"passed": self.passed, "total": len(self.entries),
                "entries": [{"name": e.name, "status": e.status, "problems": e.problems,
                             "error": e.error,
                             "reports": [r.data for r in e.reports]} for e in self.entries]}


def run_corpus(directory, base: AnalysisConfig | None = None, jobs: int = 1) -> CorpusSummary:
    files = sorted(Path(directory).glob("*.specir"))
    if jobs > 1 and len(files) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            entries = list(pool.map(run_file, files, [base] * len(files)))
    else:
        entries = [run_file(f, base) for f in files]
    return CorpusSummary(entries)
