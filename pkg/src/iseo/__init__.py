"""0-1 optimization with unknown knapsack constraints learned through membership queries."""

from .core import Instance, LabeledPools
from .framework import RunConfig, RunRecord, final_feasibility_probe, run
from .oracle import OracleSuite

__all__ = ["Instance", "LabeledPools", "OracleSuite", "RunConfig", "RunRecord",
           "final_feasibility_probe", "run"]
__version__ = "0.1.0"
