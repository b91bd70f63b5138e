"""Simulation and numerical verification of supercritical branching
populations counted with (possibly descendant-dependent) random
characteristics: growth exponents, renewal means, additive martingales,
fringe-tree statistics, and the fluctuation central limit theorem."""

from .models import (
    BirthLaw,
    Fragmentation,
    GaltonWatson,
    IntensityData,
    PoissonIntensity,
    intensity_data,
    sample_births,
)
from .spectral import MalthusianSolution, analyze, check_a7, compute_beta, scan_roots, solve_malthusian
from .genealogy import (
    Population,
    TimeHorizon,
    WeightThreshold,
    biggins,
    coming_generation,
    complex_martingale,
    nerman_w,
    simulate,
)
from .characteristics import (
    Characteristic,
    DeterministicCharacteristic,
    FringeCharacteristic,
    FringePattern,
    IndicatorCharacteristic,
    NermanCharacteristic,
    ProjectionContext,
    build_chi_context,
    chi,
    counted_process,
    fringe_characteristic,
    project,
    shifted_characteristic,
)
from .renewal import (
    MeanExpansion,
    RenewalKernel,
    SigmaSquared,
    check_e1,
    h_lambda_mean,
    key_renewal_limit,
    make_kernel,
    mean_process,
    sigma_squared,
)
from .harness import (
    CltReport,
    ReplicaRecord,
    run_clt,
    run_fringe_census,
    run_lln,
    run_martingale_suite,
)

__version__ = "0.1.0"
