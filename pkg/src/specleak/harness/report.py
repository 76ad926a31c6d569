"""Analysis report: JSON schema 1, determinism digest, table-style text rendering.

Layout of the JSON document::

    {
      "schema": 1,
      "program": str,
      "config": {...},                 # AnalysisConfig.to_dict()
      "stats": {"explored_paths", "explored_speculative_paths", "avg_speculative_instructions",
                "instructions", "gammas", "speculative_locations", "pruned_speculative", "memory_events",
                "symbolic_address_pct", "budget_exhausted", "terminations", "gamma_overflow"},
      "counts": {"VB", "UC_VB", "RS", "LS"},
      "findings": [{"kind", "instr", "function", "block", "index", "line", "branch",
                    "secrets", "witness", "schedule"}],
      "residency": [{"instr", "line", "status", "attacker", "observation", "gammas",
                     "witness"}],      # present when cache modelling is on
      "leakages": int,                 # LS sites still considered leaking
      "leakage": bool,
      "diagnostics": [{"kind", "instr", "phase", "message"}],
      "timing": {"wall", "exploration", "cache", "solver", "solver_pct"}
    }

Everything except ``timing`` is a deterministic function of the program and
the configuration; :func:`digest` hashes exactly that part.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

SCHEMA = 1
TIMING_KEY = "timing"


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (set, frozenset)):
        return sorted(_plain(v) for v in x)
    if hasattr(x, "item"):          # numpy scalars
        return x.item()
    return x


@dataclass
class Report:
    data: dict = field(default_factory=dict)

    @property
    def counts(self) -> dict:
        return self.data["counts"]

    @property
    def leakages(self) -> int:
        return self.data["leakages"]

    @property
    def leakage(self) -> bool:
        return self.data["leakage"]

    @property
    def exit_code(self) -> int:
        return 2 if self.leakage else 0

    def to_dict(self) -> dict:
        return self.data

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(_plain(self.data), indent=indent, sort_keys=True)

    def digest(self) -> str:
        return digest(self.data)

    def render_text(self) -> str:
        return render_text([self])


def digest(data: dict) -> str:
    body = {k: v for k, v in data.items() if k != TIMING_KEY}
    text = json.dumps(_plain(body), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


_COLUMNS = (("Program", 18), ("Paths", 7), ("Spec paths", 11), ("Avg #inst", 10), ("VB", 4),
            ("UC_VB", 6), ("RS", 4), ("LS", 4), ("Sym addr %", 11), ("Solver %", 9),
            ("Leakage", 8), ("Time", 8))


def render_text(reports) -> str:
    head = " ".join(name.rjust(w) if i else name.ljust(w) for i, (name, w) in enumerate(_COLUMNS))
    lines = [head, "-" * len(head)]
    for r in reports:
        d = r.data
        st, c, t = d["stats"], d["counts"], d[TIMING_KEY]
        leak = str(d["leakages"]) if d["config"]["cache_model"] == "on" else str(c["LS"])
        cells = (d["program"][:18], st["explored_paths"], st["explored_speculative_paths"],
                 f"{st['avg_speculative_instructions']:.2f}", c["VB"], c["UC_VB"], c["RS"], c["LS"],
                 f"{st['symbolic_address_pct']:.2f}", f"{t['solver_pct']:.2f}", leak,
                 f"{t['wall']:.2f}s")
        lines.append(" ".join(str(v).rjust(w) if i else str(v).ljust(w)
                              for i, (v, (_, w)) in enumerate(zip(cells, _COLUMNS))))
    for r in reports:
        res = r.data.get("residency")
        if res:
            lines.append("")
            lines.append(f"{r.data['program']}: cache residency ({r.data['config']['cache']}, "
                         f"{r.data['config']['attacker']}-based attacker)")
            for v in res:
                lines.append(f"  LS r{v['instr']} line {v['line']}: {v['status']}")
    return "\n".join(lines) + "\n"
