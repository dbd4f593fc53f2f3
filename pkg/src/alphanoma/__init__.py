"""alpha-fair power allocation for K-user downlink NOMA.

Statistical-CSIT allocations (:mod:`.statistical`), per-block perfect-CSIT
allocations (:mod:`.perfect`), TDMA and fixed-power baselines
(:mod:`.baselines`), fairness-requirement search (:mod:`.fairness`) and a
Monte Carlo experiment harness (:mod:`.experiment`, :mod:`.cli`).
"""

from .baselines import (fixed_noma_powers, tdma_perfect_solve,
                        tdma_statistical_solve)
from .fairness import AlphaSearchSpec, search_alpha
from .model import (ChannelRealization, ConfigError, CumulativePowers,
                    PowerAllocation, SolveReport, SystemConfig)
from .perfect import solve_ao, solve_baseline, solve_perfect
from .statistical import solve_statistical

__version__ = "0.1.0"

__all__ = [
    "AlphaSearchSpec",
    "ChannelRealization",
    "ConfigError",
    "CumulativePowers",
    "PowerAllocation",
    "SolveReport",
    "SystemConfig",
    "fixed_noma_powers",
    "search_alpha",
    "solve_ao",
    "solve_baseline",
    "solve_perfect",
    "solve_statistical",
    "tdma_perfect_solve",
    "tdma_statistical_solve",
]
