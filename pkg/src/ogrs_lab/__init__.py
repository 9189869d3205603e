"""Desk-scale lab for online classifier training under streaming label noise.

Builds a small end-to-end loop: noisy data streams, differentiable
classifiers, a gradient-based primal-dual sample selector with regret
instrumentation, trimmed-loss/naive/oracle baselines, and a CLI harness
that runs seeded comparisons and audits.
"""

from . import baselines, config, datastream, harness, models, selector, trainer

__version__ = "0.1.0"

__all__ = [
    "baselines",
    "config",
    "datastream",
    "harness",
    "models",
    "selector",
    "trainer",
    "__version__",
]
