"""blendnet: simulate and analyze discrete-time multi-agent systems under multi-step coupling."""

from .graph import (
    DirectedGraph,
    GraphError,
    Join,
    Leave,
    degree_sequence,
    generate_connected,
    is_primitive,
    is_strongly_connected,
    mutate,
    parse_edge_list,
    serialize_edge_list,
)
from .weights import (
    WeightError,
    WeightMatrix,
    WeightReport,
    average_coupling,
    custom_weights,
    metropolis_hastings,
    pagerank_coupling,
    validate,
    weights_from_csv,
    weights_to_csv,
)
from .spectral import (
    PerronPair,
    SpectralDecomposition,
    SpectralError,
    decompose,
    eigen_magnitudes,
    perron_pair,
)
from .simulator import (
    AssumptionViolation,
    BlendedDynamics,
    FractionalTime,
    NetworkState,
    NodeDynamics,
    Scenario,
    Segment,
    SimulationError,
    SimulationTrace,
    TransformedState,
    affine_dynamics,
    blended_step,
    blended_to_csv,
    build_blended,
    coupling_step,
    initial_box,
    initial_constant,
    initial_explicit,
    initial_zeros,
    macro_step,
    node_step,
    scenario_hash,
    simulate,
    trace_to_csv,
    transform,
    untransform,
)
from .analysis import (
    AnalysisError,
    BlendedBound,
    ContractionCertificate,
    CorollaryKmin,
    ErrorReport,
    KminConstants,
    Lemma4Result,
    blended_bound,
    contraction_affine,
    contraction_sampled,
    error_report,
    estimate_sup_f,
    family_bound,
    family_lipschitz,
    fraction_identities,
    kmin_analytic,
    kmin_constants,
    kmin_corollary,
    kmin_empirical,
    lemma4_check,
    measure_tail_error,
    tail_window,
)
from . import apps

__version__ = "0.1.0"
