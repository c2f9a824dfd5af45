"""Bell-type jump processes for lattice quantum field theories."""
from .hilbert import DensityMatrix, OperatorMatrix, PhysicalConstants, PovmFamily, StateVector, Tolerances
from .fock import Configuration, FockSpace, LatticeSpec, SmearingProfile, Species, build_fock, gamma_povm
from .rates import JumpRateTable, current_matrix, minimal_rates
from .models import BellModel, build_bell_lattice, build_crea1, build_dirac_pair, preset_model, preset_state

__version__ = "0.1.0"

__all__ = [
    "BellModel", "Configuration", "DensityMatrix", "FockSpace", "JumpRateTable", "LatticeSpec", "OperatorMatrix",
    "PhysicalConstants", "PovmFamily", "SmearingProfile", "Species", "StateVector", "Tolerances",
    "build_bell_lattice", "build_crea1", "build_dirac_pair", "build_fock", "current_matrix", "gamma_povm",
    "minimal_rates", "preset_model", "preset_state",
]
