"""ssflab: spectral shift functions for random lattice Schrodinger operators."""

__version__ = "0.1.0"

from .eig import (
    EnergyInterval,
    Spectrum,
    count_in,
    counting,
    eigen_decompose,
    weighted_heat_trace,
    weighted_projector_trace,
)
from .models import (
    BoxGeometry,
    ConfigurationError,
    DisorderDistribution,
    DisorderSample,
    ModelSpec,
    SiteProfile,
    SymmetricOperator,
    assemble_hamiltonian,
    build_free_hamiltonian,
    embed_sample,
    sample_disorder,
    sum_profile_potential,
    translate_sample,
    with_site_coupling,
)
from .ssf import (
    GaussianTestFunction,
    RankNPerturbation,
    SSFCurve,
    birman_solomyak_residual,
    integrate,
    rank_bound_report,
    spectral_averaging_value,
    ssf_from_spectra,
    sup_abs,
    total_integral,
    trace_formula_residual,
)

__all__ = [name for name in dir() if not name.startswith("_")]
