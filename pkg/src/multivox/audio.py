"""Signal processing: WAV I/O, log-mel analysis, mu-law companding, speed perturbation."""

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FactorOutOfRange,
    IndexOutOfRange,
    IoFailure,
    NotWav,
    SampleRateMismatch,
    TooShort,
    Truncated,
    UnsupportedFormat,
)

PCM_SCALE = 32768.0


@dataclass(eq=False)
class Waveform:
    """Mono audio. ``samples`` is a float64 vector, nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64).reshape(-1)
        self.sample_rate = int(self.sample_rate)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


def load_wav(path):
    """Read a mono PCM16 RIFF/WAVE file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n_frames = fh.getnframes()
            if channels != 1 or width != 2:
                raise UnsupportedFormat(
                    f"{path}: need mono 16-bit PCM, got {channels} channel(s) x {8 * width} bit"
                )
            raw = fh.readframes(n_frames)
    except FileNotFoundError as exc:
        raise IoFailure(f"{path}: {exc.strerror}") from exc
    except EOFError as exc:
        raise Truncated(f"{path}: header ends early") from exc
    except wave.Error as exc:
        msg = str(exc)
        if "RIFF" in msg or "WAVE" in msg:
            raise NotWav(f"{path}: {msg}") from exc
        raise UnsupportedFormat(f"{path}: {msg}") from exc
    if len(raw) < 2 * n_frames:
        raise Truncated(f"{path}: header declares {n_frames} frames, file holds {len(raw) // 2}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / PCM_SCALE, rate)


def to_pcm16(samples):
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.rint(x * PCM_SCALE), -32768, 32767).astype("<i2")


def save_wav(waveform, path):
    """Write ``waveform`` as mono PCM16, clamping to [-1, 1] and rounding to nearest."""
    if not np.all(np.isfinite(waveform.samples)):
        raise ValueError("cannot save non-finite samples")
    try:
        with open(path, "wb") as raw, wave.open(raw, "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(waveform.sample_rate)
            fh.writeframes(to_pcm16(waveform.samples).tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    frame_length: int = 800
    hop_length: int = 200
    fft_size: int = 1024
    n_mels: int = 80
    fmin: float = 40.0
    fmax: float = 7600.0
    preemphasis: float = 0.97
    log_floor: float = 1e-5

    def __post_init__(self):
        problems = []
        if self.sample_rate <= 0:
            problems.append("sample_rate must be positive")
        if not 0 < self.frame_length <= self.fft_size:
            problems.append("need 0 < frame_length <= fft_size")
        if not 0 < self.hop_length <= self.frame_length:
            problems.append("need 0 < hop_length <= frame_length")
        if self.n_mels <= 0:
            problems.append("n_mels must be positive")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            problems.append("need 0 <= fmin < fmax <= sample_rate/2")
        if not 0 <= self.preemphasis < 1:
            problems.append("preemphasis must lie in [0, 1)")
        if not self.log_floor > 0:
            problems.append("log_floor must be positive")
        if problems:
            raise ValueError("invalid MelConfig: " + "; ".join(problems))

    def n_frames(self, n_samples):
        if n_samples < self.frame_length:
            return 0
        return 1 + (n_samples - self.frame_length) // self.hop_length


@dataclass(eq=False)
class MelSpectrogram:
    data: np.ndarray  # frames x n_mels, natural-log energies
    config: MelConfig = field(default_factory=MelConfig)

    @property
    def n_frames(self):
        return self.data.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(config):
    """n_mels + 2 equally mel-spaced frequencies; filter i peaks at edges[i + 1]."""
    return mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))


def mel_center_frequencies(config):
    return mel_band_edges(config)[1:-1]


_FILTERBANKS = {}


def mel_filterbank(config):
    """Triangular filters, n_mels x (fft_size//2 + 1), unit peak height."""
    key = (config.sample_rate, config.fft_size, config.n_mels, config.fmin, config.fmax)
    fb = _FILTERBANKS.get(key)
    if fb is None:
        bins = np.fft.rfftfreq(config.fft_size, 1.0 / config.sample_rate)
        edges = mel_band_edges(config)
        lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        rising = (bins[None, :] - lo) / (mid - lo)
        falling = (hi - bins[None, :]) / (hi - mid)
        fb = np.maximum(0.0, np.minimum(rising, falling))
        fb.setflags(write=False)
        _FILTERBANKS[key] = fb
    return fb


def hann_window(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x, frame_length, hop_length):
    n = 1 + (len(x) - frame_length) // hop_length
    idx = np.arange(frame_length)[None, :] + hop_length * np.arange(n)[:, None]
    return x[idx]


def mel_spectrogram(waveform, config=None):
    """Log-mel energies: preemphasis, Hann framing (no padding), |FFT|, mel filters, ln."""
    config = config or MelConfig()
    if waveform.sample_rate != config.sample_rate:
        raise SampleRateMismatch(
            f"waveform at {waveform.sample_rate} Hz, config expects {config.sample_rate} Hz"
        )
    x = waveform.samples
    if len(x) < config.frame_length:
        raise TooShort(f"{len(x)} samples < frame_length {config.frame_length}")
    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - config.preemphasis * x[:-1]
    frames = frame_signal(emphasized, config.frame_length, config.hop_length)
    spectrum = np.abs(np.fft.rfft(frames * hann_window(config.frame_length), n=config.fft_size))
    energies = spectrum @ mel_filterbank(config).T
    return MelSpectrogram(np.log(np.maximum(energies, config.log_floor)), config)


def _check_channels(q):
    if q < 2:
        raise ValueError(f"quantization_channels must be >= 2, got {q}")


def mu_law_compand(x, quantization_channels=256):
    mu = quantization_channels - 1
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def mu_law_encode(x, quantization_channels=256):
    """Compand and quantize to class indices in [0, Q-1]. Scalars give ints."""
    _check_channels(quantization_channels)
    scaled = (mu_law_compand(x, quantization_channels) + 1.0) / 2.0 * (quantization_channels - 1)
    # scaled >= 0, so floor(v + 0.5) is round-half-away-from-zero
    idx = np.floor(scaled + 0.5).astype(np.int64)
    idx = np.clip(idx, 0, quantization_channels - 1)
    return int(idx) if idx.ndim == 0 else idx


def mu_law_decode(index, quantization_channels=256):
    """Inverse companding at the bin centre."""
    _check_channels(quantization_channels)
    idx = np.asarray(index)
    if np.any(idx < 0) or np.any(idx > quantization_channels - 1):
        raise IndexOutOfRange(f"class index outside [0, {quantization_channels - 1}]")
    mu = quantization_channels - 1
    y = 2.0 * idx.astype(np.float64) / mu - 1.0
    x = np.sign(y) * np.expm1(np.abs(y) * np.log1p(mu)) / mu
    return float(x) if x.ndim == 0 else x


def _kaiser(u, beta=8.6):
    u = np.clip(u, -1.0, 1.0)
    return np.i0(beta * np.sqrt(1.0 - u * u)) / np.i0(beta)


def speed_perturb(waveform, factor, zero_crossings=16, chunk=8192):
    """Play ``factor`` times faster at the same nominal rate.

    Windowed-sinc resampling by 1/factor: duration scales by 1/factor and pitch by
    factor. Output length is round(len / factor).
    """
    if not 0.5 <= factor <= 2.0:
        raise FactorOutOfRange(f"speed factor {factor} outside [0.5, 2.0]")
    x = waveform.samples
    if factor == 1.0:
        return Waveform(x.copy(), waveform.sample_rate)
    n = len(x)
    n_out = int(np.floor(n / factor + 0.5))
    cutoff = min(1.0, 1.0 / factor)
    half = int(np.ceil(zero_crossings / cutoff))
    offsets = np.arange(-half, half + 1)
    out = np.empty(n_out)
    for start in range(0, n_out, chunk):
        t = np.arange(start, min(start + chunk, n_out)) * factor
        base = np.floor(t).astype(np.int64)
        taps = base[:, None] + offsets[None, :]
        d = t[:, None] - taps
        h = cutoff * np.sinc(cutoff * d) * _kaiser(d / (half + 1))
        valid = (taps >= 0) & (taps < n)
        vals = np.where(valid, x[np.clip(taps, 0, max(n - 1, 0))] if n else 0.0, 0.0)
        out[start:start + len(t)] = np.sum(vals * h, axis=1)
    return Waveform(np.clip(out, -1.0, 1.0), waveform.sample_rate)
