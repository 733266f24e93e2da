"""Geometry of two-dimensional conic pseudo-Finsler surfaces and their anisotropic conformal changes."""

from .core import (
    Geometry,
    SupportElement,
    frame_at,
    horizontal_decompose,
    is_dually_flat_at,
    is_projectively_flat_at,
    main_scalar,
    metric_at,
    spray_at,
    vertical_decompose,
)
from .errors import (
    DeclarationMismatchError,
    DegenerateMetricError,
    DegenerateTransformError,
    DomainError,
    FinslerError,
    SignatureFlipError,
    SingularEvaluationError,
    StencilDomainError,
    TruncationExceededError,
)
from .geodesic import GeodesicTrace, geodesic_trace
from .jets import Jet, seed

__version__ = "0.1.0"
