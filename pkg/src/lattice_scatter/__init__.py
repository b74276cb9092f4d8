"""Long-range scattering on periodic lattices via Isozaki-Kitada modifiers.

Modules
-------
lattice_model
    Hopping kernels, presets, potentials and their smooth extensions.
band_structure
    Bands, projectors, group velocities, thresholds, Fermi surfaces and
    energy windows.
pdo_calculus
    Lattice states, the discrete Fourier transform, symbol quantization and
    the composition/adjoint calculus.
eikonal
    Hamilton flow and the eikonal phase functions.
modifiers
    Cutoffs and the Isozaki-Kitada modifiers ``J_+-``.
propagation
    Time evolution and the scattering experiments.
runner, cli
    JSON-configured experiment runner and the ``lattice-scatter`` command.
"""

__version__ = "0.1.0"

from .band_structure import (  # noqa: E402
    BandData,
    BandEvaluator,
    BandStructure,
    EnergyWindow,
    ThresholdError,
    TorusGrid,
    compute_bands,
    detect_thresholds,
    fermi_surface,
    window_margin,
)
from .eikonal import EikonalPhase, PhaseFunction, solve_phase, verify_phase  # noqa: E402
from .lattice_model import (  # noqa: E402
    HoppingKernel,
    Potential,
    ShortRangePart,
    build_potential,
    preset,
    preset_names,
    smooth_extension,
)
from .modifiers import (  # noqa: E402
    IsozakiKitadaModifier,
    Modifier,
    build_cutoffs,
    build_modifier,
    build_sum,
)
from .pdo_calculus import LatticeState, SymbolField, quantize, quantize_adjoint  # noqa: E402
from .propagation import EvolutionEngine, psi_bump  # noqa: E402

__all__ = [
    "__version__",
    "BandData",
    "BandEvaluator",
    "BandStructure",
    "EnergyWindow",
    "ThresholdError",
    "TorusGrid",
    "compute_bands",
    "detect_thresholds",
    "fermi_surface",
    "window_margin",
    "EikonalPhase",
    "PhaseFunction",
    "solve_phase",
    "verify_phase",
    "HoppingKernel",
    "Potential",
    "ShortRangePart",
    "build_potential",
    "preset",
    "preset_names",
    "smooth_extension",
    "IsozakiKitadaModifier",
    "Modifier",
    "build_cutoffs",
    "build_modifier",
    "build_sum",
    "LatticeState",
    "SymbolField",
    "quantize",
    "quantize_adjoint",
    "EvolutionEngine",
    "psi_bump",
]
