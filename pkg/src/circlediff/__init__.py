"""Numerics for circle diffeomorphisms, their welding and loop measures."""
from __future__ import annotations

__version__ = "0.1.0"

from .bridge import BridgePath, sample_bridge
from .circle_maps import (BridgeDiffeo, CircleDiffeo, DomainError, GridDiffeo, InverseDiffeo,
                          MoebiusDiffeo, MoebiusElement, NumericalError, Rotation, TrigDiffeo,
                          bott_cocycle, compose, invert, virasoro_cocycle)
from .formal_series import FormalSeries, FormalVectorField
from .measures import (EnergyTable, MCEstimate, rn_derivative, sample_nu_bch, sample_nu_beta,
                       transfer_check)
from .operators import (ANTIPERIODIC, PERIODIC, VirasoroWeight, build_blocks, det_abs_A,
                        regularized_energy)
from .welding import WeldingError, WeldingTriple, verify_weld, weld

__all__ = [
    "ANTIPERIODIC", "PERIODIC", "BridgeDiffeo", "BridgePath", "CircleDiffeo", "DomainError",
    "EnergyTable", "FormalSeries", "FormalVectorField", "GridDiffeo", "InverseDiffeo",
    "MCEstimate", "MoebiusDiffeo", "MoebiusElement", "NumericalError", "Rotation", "TrigDiffeo",
    "VirasoroWeight", "WeldingError", "WeldingTriple", "bott_cocycle", "build_blocks", "compose",
    "det_abs_A", "invert", "regularized_energy", "rn_derivative", "sample_bridge",
    "sample_nu_bch", "sample_nu_beta", "transfer_check", "verify_weld", "virasoro_cocycle",
    "weld",
]
