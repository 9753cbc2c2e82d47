"""Resolved-sideband optomechanical cooling: theory, spectra, fits and thermometry."""
from .errors import (
    AmbiguousDetuningSign, AnchorInconsistent, ComputationError, Degenerate, InstabilityError,
    MixedConfigurations, NegativeOccupancy, NoConvergence, OmcoolError, OverlappingSidebands,
    PeakNotFound,
)
from .model import (
    TWO_PI, DressedState, DriveConfig, HeatingModel, SystemParams, dressed_state,
    final_occupancy, occupancy_with_heating, scattering_rates,
)
from .spectra import Spectrum, SpectrumMeta, heterodyne_psd, synthesize
from .fitting import LorentzianFitResult, fit_coherent_response, fit_lorentzians

__version__ = "0.1.0"
