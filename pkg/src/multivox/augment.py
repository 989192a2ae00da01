"""Training-time corruption: additive noise at a target SNR, reverberation, speed."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .audio import Waveform, load_wav, speed_perturb
from .errors import EmptyRir, FactorOutOfRange, IoFailure, ParseError, SampleRateMismatch, SilentNoise, SilentSignal


def power(x):
    return float(np.mean(np.square(x))) if len(x) else 0.0


def fit_noise(noise, n, rng=None):
    """Tile ``noise`` up to ``n`` samples, or crop it (random offset when ``rng`` given).

    Returns (segment, offset).
    """
    m = len(noise)
    if m >= n:
        offset = int(rng.integers(0, m - n + 1)) if rng is not None else 0
        return noise[offset: offset + n], offset
    reps = -(-n // m)
    return np.tile(noise, reps)[:n], 0


def scale_noise_to_snr(clean, noise, snr_db):
    """Scale ``noise`` so that 10 log10(P_clean / P_noise) equals ``snr_db``."""
    p_clean, p_noise = power(clean), power(noise)
    if p_clean <= 0:
        raise SilentSignal("clean signal has zero power")
    if p_noise <= 0:
        raise SilentNoise("noise has zero power")
    return noise * np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))


def add_noise(clean, noise, snr_db, rng=None, offset=None):
    """Mix ``noise`` into ``clean`` at ``snr_db``; peak-normalize only if the mix clips."""
    if clean.sample_rate != noise.sample_rate:
        raise SampleRateMismatch(f"clean {clean.sample_rate} Hz vs noise {noise.sample_rate} Hz")
    if power(clean.samples) <= 0:
        raise SilentSignal("clean signal has zero power")
    if offset is None:
        segment, _ = fit_noise(noise.samples, len(clean), rng)
    else:
        segment = noise.samples[offset: offset + len(clean)]
    mixed = clean.samples + scale_noise_to_snr(clean.samples, segment, snr_db)
    peak = np.max(np.abs(mixed))
    if peak > 1.0:
        mixed = mixed / peak
    return Waveform(mixed, clean.sample_rate)


def convolve_truncated(dry, rir):
    return fftconvolve(dry, rir, mode="full")[: len(dry)]


def add_reverb(dry, rir):
    """Convolve with an impulse response, keep the dry length, restore the dry RMS."""
    if dry.sample_rate != rir.sample_rate:
        raise SampleRateMismatch(f"dry {dry.sample_rate} Hz vs rir {rir.sample_rate} Hz")
    if len(rir) == 0:
        raise EmptyRir("impulse response is empty")
    if len(dry) == 0:
        return Waveform(np.zeros(0), dry.sample_rate)
    wet = convolve_truncated(dry.samples, rir.samples)
    wet_rms = np.sqrt(power(wet))
    if wet_rms > 0:
        wet = wet * (np.sqrt(power(dry.samples)) / wet_rms)
    return Waveform(wet, dry.sample_rate)


@dataclass
class AugmentSpec:
    noise_pool: list = field(default_factory=list)
    rir_pool: list = field(default_factory=list)
    snr_range: tuple = (5.0, 20.0)
    speed_factors: tuple = (0.9, 1.0, 1.1)
    p_noise: float = 0.5
    p_reverb: float = 0.5
    p_speed: float = 0.5

    def __post_init__(self):
        lo, hi = self.snr_range
        if lo > hi:
            raise ValueError(f"snr range [{lo}, {hi}] is reversed")
        for p in (self.p_noise, self.p_reverb, self.p_speed):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"apply probability {p} outside [0, 1]")
        if not self.speed_factors:
            raise ValueError("speed_factors must not be empty")
        for f in self.speed_factors:
            if not 0.5 <= f <= 2.0:
                raise FactorOutOfRange(f"speed factor {f} outside [0.5, 2.0]")


def augment(waveform, spec, rng):
    """Apply noise, reverb and speed, each independently with its probability.

    Returns the corrupted waveform and the list of applied operations (with every
    drawn parameter) so ``replay`` can reproduce it exactly.
    """
    record = []
    if spec.noise_pool and rng.random() < spec.p_noise:
        idx = int(rng.integers(len(spec.noise_pool)))
        snr = float(rng.uniform(*spec.snr_range))
        noise = spec.noise_pool[idx]
        _, offset = fit_noise(noise.samples, len(waveform), rng)
        record.append({"op": "noise", "index": idx, "snr_db": snr, "offset": offset})
    if spec.rir_pool and rng.random() < spec.p_reverb:
        record.append({"op": "reverb", "index": int(rng.integers(len(spec.rir_pool)))})
    if rng.random() < spec.p_speed:
        factor = float(spec.speed_factors[int(rng.integers(len(spec.speed_factors)))])
        record.append({"op": "speed", "factor": factor})
    return replay(waveform, spec, record), record


def replay(waveform, spec, record):
    out = waveform
    for entry in record:
        op = entry["op"]
        if op == "noise":
            noise = spec.noise_pool[entry["index"]]
            offset = entry["offset"] if len(noise) >= len(out) else None
            out = add_noise(out, noise, entry["snr_db"], offset=offset)
        elif op == "reverb":
            out = add_reverb(out, spec.rir_pool[entry["index"]])
        elif op == "speed":
            out = speed_perturb(out, entry["factor"])
        else:
            raise ValueError(f"unknown augmentation op {op!r}")
    if out is waveform:
        out = Waveform(waveform.samples.copy(), waveform.sample_rate)
    return out


def format_record(record):
    """One text line, e.g. ``noise:index=2,snr_db=7.5,offset=31;speed:factor=0.9``."""
    parts = []
    for entry in record:
        args = ",".join(f"{k}={v!r}" for k, v in entry.items() if k != "op")
        parts.append(f"{entry['op']}:{args}" if args else entry["op"])
    return ";".join(parts)


def parse_record(line):
    record = []
    line = line.strip()
    if not line:
        return record
    for part in line.split(";"):
        op, _, args = part.partition(":")
        entry = {"op": op}
        for item in filter(None, args.split(",")):
            key, _, value = item.partition("=")
            entry[key] = float(value) if ("." in value or "e" in value) else int(value)
        record.append(entry)
    return record


def load_pool(path):
    """Waveforms listed in a pool manifest, one path per line (relative to the list)."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    pool = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        wav = Path(line)
        if not wav.is_absolute():
            wav = path.parent / wav
        if not wav.exists():
            raise ParseError(f"missing pool file {wav}", lineno)
        pool.append(load_wav(wav))
    return pool
