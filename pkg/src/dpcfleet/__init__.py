"""Data-driven predictive control for multi-agent fleets.

The package learns plant behavior from closed-loop input/output records
(generalized Hankel matrices), relaxes probabilistic collision-avoidance
constraints to deterministic half spaces, and steers a fleet to its
targets through a receding-horizon coupled quadratic program.
"""

from . import behavior, chance, deepc, harness, linsys, qpsolve

__version__ = "0.1.0"

__all__ = ["behavior", "chance", "deepc", "harness", "linsys", "qpsolve", "__version__"]
