"""Tolerance analysis for planar ODEs with a stable node at the origin.

A perturbed orbit psi is tolerant with respect to a reference orbit phi when
its first component drops below phi's at some positive time.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DomainError,
    EstimateError,
    IntegrationError,
    ParseError,
    PreconditionError,
    SystemDefinitionError,
    ToleranceKitError,
)
from .integrate import IntegrationOptions, integrate  # noqa: E402
from .system import PlanarSystem, builtin, load_system  # noqa: E402
from .tolerance import ToleranceVerdict, detect_tolerance  # noqa: E402

__all__ = [
    "DomainError",
    "EstimateError",
    "IntegrationError",
    "IntegrationOptions",
    "ParseError",
    "PlanarSystem",
    "PreconditionError",
    "SystemDefinitionError",
    "ToleranceKitError",
    "ToleranceVerdict",
    "__version__",
    "builtin",
    "detect_tolerance",
    "integrate",
    "load_system",
]
