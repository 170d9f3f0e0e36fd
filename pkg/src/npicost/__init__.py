"""Pandemic NPI cost-effectiveness engine.

Stage one infers per-region SEIRD trajectories and weekly transmission rates
from clinical counts; stage two regresses those rates on intervention
schedules across regions; a dollar cost model, counterfactual simulator,
policy optimizer, and SICER analysis sit on top, exposed through a CLI and a
small HTTP service.
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
