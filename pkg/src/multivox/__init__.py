from .audio import Waveform
