"""Cache side-channel model: geometry, exact LRU, may-cache filter, residency constraint."""
from .config import CacheConfig, block_id, set_index, tag
from .gamma import (ACCESS, EVICTED, INFEASIBLE, MAY_REMAIN, TRACE, UNKNOWN_V, EventVerdict,
                    GammaModel, NoSymbolicAccess, ResidencyVerdict, build_gamma_spectre,
                    check_residency)
from .lru import KERNEL, LRUCache, SimulationResult, concrete_lru_simulate, lru_batch
from .maycache import (DEFINITELY_EVICTED, POSSIBLY_RESIDENT, MayCache, MayCacheState,
                       maycache_filter)
from .trace import NORM, SPEC, CacheTrace, TraceEvent, format_trace, parse_trace

__all__ = [
    "CacheConfig", "set_index", "tag", "block_id",
    "build_gamma_spectre", "check_residency", "GammaModel", "EventVerdict", "ResidencyVerdict",
    "NoSymbolicAccess", "ACCESS", "TRACE", "MAY_REMAIN", "EVICTED", "UNKNOWN_V", "INFEASIBLE",
    "LRUCache", "concrete_lru_simulate", "lru_batch", "SimulationResult", "KERNEL",
    "maycache_filter", "MayCache", "MayCacheState", "POSSIBLY_RESIDENT", "DEFINITELY_EVICTED",
    "CacheTrace", "TraceEvent", "parse_trace", "format_trace", "SPEC", "NORM",
]
