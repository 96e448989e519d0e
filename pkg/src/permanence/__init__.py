"""Structured population maps: simulation, invasion rates and permanence certificates."""
from .certify import (
    certificate_search,
    certify_lv,
    certify_sampled,
    lv_boundary_equilibria,
    margin_of,
    meta_condition,
    sir_threshold,
    two_species_check,
)
from .dynamics import (
    OccupationMeasure,
    Trajectory,
    boundary_sample,
    occupation_measure,
    permanence_test,
    simulate,
)
from .invasion import (
    InvasionEstimate,
    invasion_rate_birkhoff,
    invasion_rate_measure,
    invasion_rate_norm,
    rate_at_state,
    uniform_invasion_lower_bound,
)
from .model import (
    ExtinctionFace,
    SignPattern,
    StructuredModel,
    StructuredState,
    irreducible_components,
    step,
    validate,
)
from .robustness import PerturbationSpec, perturb, robustness_sweep
from .zoo import (
    AnnualPlantSpec,
    LotkaVolterraSpec,
    MetacommunitySpec,
    SirSpec,
    build_annual,
    build_lv,
    build_meta,
    build_sir,
)

__version__ = "0.1.0"
