"""Sequential causal inference through point parameters.

Point effects are estimated per history stratum, tied to a small set of
net effects by linear constraints, and combined through generalized least
squares; sequential causal effects of regimes follow from the net effects
or directly from the G-formula.
"""

__version__ = "0.1.0"

from . import errors
from .errors import EstimationError, SeqCausalError, ValidationError
from .gformula import (
    Regime,
    SceEstimate,
    evaluate_gformula,
    q_coefficients,
    sce_from_gformula,
    sce_from_net_effects,
    validate_regime,
)
from .keys import (
    CovariateKey,
    FullCell,
    FullHistory,
    FullHistoryWithTreatment,
    Markov,
    MarkovWithTreatment,
    parse_key,
)
from .netfx import (
    PatternSpec,
    assign_classes,
    constraint_coefficients,
    estimate_net_effects,
    estimate_pattern,
    fitted_residual_test,
    markov_constraint_coefficients,
)
from .panel import PanelData, PanelSchema, Proportions, Skeleton, load_panel, write_panel
from .pointparam import (
    PointParams,
    StandardMeans,
    extract_point_params,
    markov_point_effect,
    point_effect_covariate,
    point_effect_treatment,
    reconstruct_standard_mean,
    reconstruct_standard_means,
)
from .simgen import (
    DesignSpec,
    SimConfig,
    confidence_interval,
    generate_outcomes,
    reference_config,
    reference_design,
    run_replicates,
    synthesize_design,
    synthesize_standard_means,
)

__all__ = [name for name in dir() if not name.startswith("_")]
