"""Blocked generation of FLAPW Hamiltonian and overlap matrices.

The package assembles the muffin-tin contributions to the Hamiltonian (H) and
overlap (S) matrices from stacked matching-coefficient blocks and per-atom
coupling matrices through a short sequence of large level-3 updates, validates
the result against a naive entrywise oracle, and accounts for FLOPs, time,
and memory along the way.
"""

from .builder import (
    BuildConfig,
    BuildReport,
    StackedCoefficients,
    TMatrixSet,
    build_all,
    build_H_AA,
    build_H_ABBA_BB,
    build_S,
    estimate_memory,
    large_update_fraction,
    predict_flops,
)
from .errors import (
    ConfigurationError,
    ContractViolationError,
    InternalError,
    NotHPDError,
)
from .flapw import (
    RadialBoundaryData,
    RadialIntegrals,
    SystemSpec,
    assemble_T,
    compute_AB,
    match_factors,
    reduced_overlap_inputs,
    synth_coefficients,
    synth_radial_integrals,
    synth_system,
    synth_T,
)
from .kernels import (
    KernelBackend,
    OptimizedKernels,
    ReferenceKernels,
    get_backend,
    set_thread_count,
)
from .matrix import (
    AtomBlockLayout,
    ComplexDense,
    FlopLedger,
    HermitianAccumulator,
    cholesky_flops,
    read_hsm1,
    scale_rows,
    write_hsm1,
)
from .oracle import (
    ReducedOverlapInputs,
    compare_matrices,
    naive_flop_count,
    naive_H,
    naive_S,
    reduced_S_AA,
)
from .special import (
    gaunt,
    gaunt_tensor,
    legendre_all,
    lm_index,
    spherical_bessel_all,
    spherical_harmonic,
    spherical_harmonics_all,
)

__version__ = "0.1.0"

__all__ = [
    "AtomBlockLayout",
    "BuildConfig",
    "BuildReport",
    "ComplexDense",
    "ConfigurationError",
    "ContractViolationError",
    "FlopLedger",
    "HermitianAccumulator",
    "InternalError",
    "KernelBackend",
    "NotHPDError",
    "OptimizedKernels",
    "RadialBoundaryData",
    "RadialIntegrals",
    "ReducedOverlapInputs",
    "ReferenceKernels",
    "StackedCoefficients",
    "SystemSpec",
    "TMatrixSet",
    "assemble_T",
    "build_H_AA",
    "build_H_ABBA_BB",
    "build_S",
    "build_all",
    "cholesky_flops",
    "compare_matrices",
    "compute_AB",
    "estimate_memory",
    "gaunt",
    "gaunt_tensor",
    "get_backend",
    "large_update_fraction",
    "legendre_all",
    "lm_index",
    "match_factors",
    "naive_H",
    "naive_S",
    "naive_flop_count",
    "predict_flops",
    "read_hsm1",
    "reduced_S_AA",
    "reduced_overlap_inputs",
    "scale_rows",
    "set_thread_count",
    "spherical_bessel_all",
    "spherical_harmonic",
    "spherical_harmonics_all",
    "synth_T",
    "synth_coefficients",
    "synth_radial_integrals",
    "synth_system",
    "write_hsm1",
]
