"""Fluctuation-enhanced sensing toolkit.

Synthesize physically grounded sensor noise, estimate spectra and
bispectra, simulate resistive gas sensors, and recover gas compositions
from their fluctuation fingerprints.
"""

__version__ = "0.1.0"

from .signal_synth import (  # noqa: F401
    Fluctuator,
    HoogeNoiseSpec,
    RtsParams,
    TimeSeries,
    build_one_over_f_bank,
    generate_rts,
    hooge_psd,
    johnson_current_psd,
    johnson_noise_psd,
    lorentzian_psd,
    render_bank,
    rts_to_fluctuator,
    superpose_psd,
)
from .spectral import (  # noqa: F401
    BispectrumEstimate,
    CaptureConfig,
    SpectrumEstimate,
    bispectrum,
    detect_plateau,
    normalize_per_bias,
    symmetry_reduce_count,
    welch_psd,
)
