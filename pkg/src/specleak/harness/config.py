"""Analysis configuration shared by the CLI, the corpus runner and the sweep."""
from __future__ import annotations

import shutil
from dataclasses import asdict, dataclass, field

from ..cache import ACCESS, TRACE, CacheConfig
from ..solver import EnumerationBackend, SmtBackend, Solver
from ..speculator import ExplorerConfig


class ConfigError(ValueError):
    pass


@dataclass
class AnalysisConfig:
    """Everything one analysis run depends on.

    ``sew=0`` runs the classic (non-speculative) exploration, which is the
    baseline for the dead-code comparison.
    """
    sew: int = 50
    cache: CacheConfig = field(default_factory=lambda: CacheConfig.from_size(32768, 64, 2))
    attacker: str = ACCESS
    cache_model: bool = True
    solver: str = "enum"              # enum | smt:<path>
    search: str = "dfs"               # dfs | bfs | random:<seed>
    max_paths: int = 100_000
    max_instructions: int = 100_000
    timeout: float | None = None
    nested_window: str = "shared"
    enum_budget_bits: int = 16
    residency_route: str = "auto"

    def __post_init__(self):
        if self.sew < 0:
            raise ConfigError("--sew must be >= 0")
        if self.attacker not in (ACCESS, TRACE):
            raise ConfigError(f"unknown attacker {self.attacker!r}")
        if self.max_paths <= 0 or self.max_instructions <= 0:
            raise ConfigError("budgets must be positive")
        if self.timeout is not None and self.timeout <= 0:
            raise ConfigError("--timeout must be positive")
        if self.nested_window not in ("shared", "fresh"):
            raise ConfigError(f"unknown nested window mode {self.nested_window!r}")
        parse_search(self.search)
        if not (self.solver == "enum" or self.solver.startswith("smt:")):
            raise ConfigError(f"unknown solver {self.solver!r} (enum | smt:<path>)")

    def make_solver(self) -> Solver:
        if self.solver == "enum":
            return Solver(EnumerationBackend(self.enum_budget_bits))
        path = self.solver[4:]
        if not path:
            raise ConfigError("smt solver needs a path, e.g. smt:z3")
        if shutil.which(path) is None:
            raise ConfigError(f"external solver {path!r} not found")
        return Solver(SmtBackend(path))

    def explorer_config(self) -> ExplorerConfig:
        strategy, seed = parse_search(self.search)
        return ExplorerConfig(sew=self.sew, nested_window=self.nested_window, search=strategy,
                              seed=seed, max_paths=self.max_paths,
                              max_instructions=self.max_instructions, timeout=self.timeout)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cache"] = self.cache.describe()
        d["cache_model"] = "on" if self.cache_model else "off"
        return d


def parse_search(text: str) -> tuple[str, int]:
    if text in ("dfs", "bfs"):
        return text, 0
    if text == "random":
        return "random", 0
    if text.startswith("random:"):
        try:
            return "random", int(text[7:])
        except ValueError:
            raise ConfigError(f"bad random seed in {text!r}") from None
    raise ConfigError(f"unknown search strategy {text!r}")
