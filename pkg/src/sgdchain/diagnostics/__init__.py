"""Estimators, bound checks and reports."""

from .checks import BoundCheck  # noqa: F401
from .claims import CLAIMS, resolve  # noqa: F401
from .estimators import (  # noqa: F401
    ConcentrationEstimate,
    estimate_moments,
    estimate_psi1,
    estimate_psi1_tilde,
    estimate_psi2,
    estimate_psi2_tilde,
)
from .report import DiagnosticsReport  # noqa: F401
