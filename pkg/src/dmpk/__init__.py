"""Random transfer-matrix models of disordered wires: DMPK eigenvalue and matrix SDEs,
a microscopic strip model and its scaling limit, the conductance moment hierarchy,
and a reproducible Monte Carlo harness."""

from .errors import DmpkError
from .increments import EnsembleKind
from .linalg import FactoredTransfer, TransmissionSpectrum, transmission_spectrum
from .simulate import StepPolicy, simulate_eigenvalues

__all__ = [
    "DmpkError",
    "EnsembleKind",
    "FactoredTransfer",
    "StepPolicy",
    "TransmissionSpectrum",
    "simulate_eigenvalues",
    "transmission_spectrum",
]
