"""ustatlab: concentration of U-statistics of uniformly ergodic Markov chains.

Simulates finite-state, AR(1) and ARCH chains, computes weighted degenerate
U-statistics and every constant in the associated exponential tail bounds,
and verifies the structural identities (martingale decomposition, Doeblin
sandwich, regeneration geometry, convergence rates) by exact enumeration and
seeded Monte Carlo.
"""

__version__ = "0.1.0"

from .chain import (
    AR1Model,
    ARCHModel,
    ChainError,
    ChainPath,
    ErgodicityConstants,
    FiniteChain,
    arch_envelopes,
    ergodicity_constants,
    simulate,
    stationary_distribution,
)
from .kernels import (
    CenteredKernel,
    KernelError,
    KernelFamily,
    hoeffding_project,
    pi_canonical_deviation,
    sup_constant_A,
    weighted_kernel,
)
from .ustat import (
    DecompositionResult,
    UStatError,
    UStatResult,
    martingale_decomposition,
    tau_ap,
    tau_kendall,
    u_stat,
    wilcoxon_weighted,
)
from .bounds import (
    BernsteinParams,
    BoundConstants,
    BoundsError,
    DensityRatioNorm,
    bernstein_mc_bound,
    compute_Bn,
    compute_Cn,
    compute_tn,
    density_ratio_norm,
    independent_Bn_Cn,
    remainder_bound,
    theorem_rhs,
)
from .splitting import (
    OrliczEstimate,
    SplitError,
    SplitTrace,
    block_sums,
    orlicz_norm_estimate,
    regeneration_times,
    split_simulate,
)
from .experiments import (
    ExperimentPlan,
    ExperimentReport,
    identity_suite,
    rate_experiment,
    regeneration_suite,
    tail_experiment,
)

__all__ = [name for name in dir() if not name.startswith("_")]
