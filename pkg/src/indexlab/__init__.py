"""Spectral flow versus Chern index for Weyl-quantized matrix symbols."""

__version__ = "0.1.0"

from .symbols import (GapCertificate, GapSpec, Symbol, check_gap, direct_sum, evaluate,
                      normal_form, sorted_eigenvalues)
from .quantize import BasisSpec, QuantizedOperator, ladder_matrices, quantize, reliable_eigenpairs
from .flow import SpectrumSweep, SweepConfig, FlowIndex, fredholm_index, spectral_index, sweep
from .topology import (ChernResult, SphereMesh, chern_index, chern_s2_fhs, chern_s4,
                       clutching_winding, lower_band_projector, map_degree, projector_field)

__all__ = [
    "GapCertificate", "GapSpec", "Symbol", "check_gap", "direct_sum", "evaluate", "normal_form",
    "sorted_eigenvalues", "BasisSpec", "QuantizedOperator", "ladder_matrices", "quantize",
    "reliable_eigenpairs", "SpectrumSweep", "SweepConfig", "FlowIndex", "fredholm_index",
    "spectral_index", "sweep", "ChernResult", "SphereMesh", "chern_index", "chern_s2_fhs", "chern_s4",
    "clutching_winding", "lower_band_projector", "map_degree", "projector_field",
]
