"""Simulation and time-tag analysis of single-photon path entanglement
from an NV-center emitter.

Subpackages
-----------
core        value types and stream validation
emitter     three-level kinetic Monte Carlo and rate calibration
optics      beamsplitter/interferometer routing and detector effects
correlate   g2 and lifetime histograms over tag streams
analysis    window populations, loss inversion, visibility, concurrence, fits
oracles     closed-form and quadrature reference results
pipeline    chunked end-to-end simulation runs
tagfile, config, cli   persistence and the command-line surface
"""

from nvpath._backend import BACKEND
from nvpath.core import (
    CalibrationError,
    Channel,
    ConcurrenceResult,
    DetectorModel,
    EmitterModel,
    FitError,
    G2Histogram,
    G2Model,
    NvpathError,
    PopulationEstimate,
    TagStream,
    TimeTag,
    ValidationError,
    merge_streams,
    validate_stream,
)

__version__ = "0.1.0"

REFERENCE_G2 = G2Model(beta=1.18, gamma1=0.035, gamma2=1.18e-4, rho=0.925)
REFERENCE_FLUX = 1.507e5  # photons/s entering the path-splitting stage
REFERENCE_ETA_D = 0.0402

__all__ = [
    "BACKEND",
    "CalibrationError",
    "Channel",
    "ConcurrenceResult",
    "DetectorModel",
    "EmitterModel",
    "FitError",
    "G2Histogram",
    "G2Model",
    "NvpathError",
    "REFERENCE_ETA_D",
    "REFERENCE_FLUX",
    "REFERENCE_G2",
    "PopulationEstimate",
    "TagStream",
    "TimeTag",
    "ValidationError",
    "merge_streams",
    "validate_stream",
]
