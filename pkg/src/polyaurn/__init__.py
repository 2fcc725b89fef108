"""Multi-drawing, multi-colour Polya urns: exact step law, drift analysis,
limit theorems and Monte Carlo checks."""

from .urn_core import (
    ReplacementRule,
    SamplingMode,
    TenabilityError,
    TenabilityReport,
    UrnState,
    check_balance,
    check_diagonal,
    check_tenability,
    draw_probabilities,
    draw_probability,
    enumerate_compositions,
    sample_draw,
    step,
)
from .drift import (
    DiagonalRuleError,
    Stability,
    ZeroReport,
    drift_g,
    drift_gtilde,
    drift_h,
    find_zeros,
    flow_integrate,
    jacobian_h,
    lyapunov_test,
)

__version__ = "0.1.0"
