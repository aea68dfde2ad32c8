"""Binaural rendering of ambisonic recordings with mask-and-phase networks."""
from .dsp import ComplexSpectrogram, StftConfig, TimeSignal, istft, stft
from .ambisonics import AmbisonicClip, Direction, Normalization

__version__ = "0.1.0"
