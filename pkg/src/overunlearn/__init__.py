"""overunlearn: a desk-scale laboratory for over-unlearning threats.

Simulates a prediction service that honors unlearning requests, and the
black-box request manipulations (blending, boundary pushing) a malicious
data contributor can use to make the service unlearn more than it should.
"""

__version__ = "0.1.0"

from . import attacks, config, data, engine, metrics, pipeline, report, service, unlearn

__all__ = [
    "attacks",
    "config",
    "data",
    "engine",
    "metrics",
    "pipeline",
    "report",
    "service",
    "unlearn",
    "__version__",
]
