"""Synthetic verification corpus.

Speaker k has fundamental 120 + 40k Hz and a two-pole resonance at 500 + 300k Hz.
The resonance is added on top of the dry harmonic source as a formant peak.
Harmonics fall off as 1/sqrt(h) and reach 7.8 kHz so the upper mel bands stay
above the 8-bit mu-law noise floor. An utterance is 3-8 digit tokens; each digit
is a fixed-length harmonic segment whose pitch offset and glide depend on the
digit. Everything derives from the seed, so regeneration is bit-identical.
"""

from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from ..audio import Waveform, save_wav
from ..errors import InsufficientSpeakers, IoFailure
from .manifest import ManifestRow, write_manifest

SAMPLE_RATE = 16000
TOKEN_SECONDS = 0.1


def speaker_f0(k):
    return 120.0 + 40.0 * k


def speaker_resonance(k):
    return 500.0 + 300.0 * k


def digit_contour(d, n, f0):
    """Per-sample frequency for one digit segment."""
    ratio = 2.0 ** ((d - 4.5) / 12.0)
    glide = 0.1 if d % 2 else -0.1
    t = np.arange(n) / n
    return f0 * ratio * (1.0 + glide * (t - 0.5))


def render_digits(digits, k, sample_rate=SAMPLE_RATE, token_seconds=TOKEN_SECONDS):
    n = int(round(token_seconds * sample_rate))
    f0 = speaker_f0(k)
    freq = np.concatenate([digit_contour(d, n, f0) for d in digits])
    env = np.concatenate([0.35 + 0.65 * np.sin(np.pi * (np.arange(n) + 0.5) / n) ** 2] * len(digits))
    phase = 2.0 * np.pi * np.cumsum(freq) / sample_rate
    top = int(7800.0 // freq.max())
    source = env * sum(np.sin(h * phase) / np.sqrt(h) for h in range(1, top + 1))
    r = 0.97
    theta = 2.0 * np.pi * speaker_resonance(k) / sample_rate
    voiced = source + lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r], source)
    voiced = 0.5 * voiced / np.max(np.abs(voiced))
    return Waveform(voiced, sample_rate)


def toy_utterances(n_speakers, per_speaker, seed):
    """(utt_id, speaker_id, speaker_index, digits) for every toy utterance."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_speakers):
        for u in range(per_speaker):
            digits = rng.integers(0, 10, size=int(rng.integers(3, 9))).tolist()
            out.append((f"spk{k}_{u:03d}", f"spk{k}", k, digits))
    return out


def _write_pools(out_dir, seed):
    rng = np.random.default_rng([seed, 1])
    pool_dir = out_dir / "pools"
    pool_dir.mkdir(parents=True, exist_ok=True)
    white = 0.3 * rng.standard_normal(SAMPLE_RATE)
    brown = np.cumsum(rng.standard_normal(SAMPLE_RATE))
    brown = 0.3 * (brown - brown.mean()) / np.max(np.abs(brown - brown.mean()))
    noises = {"white.wav": white, "brown.wav": brown}
    rirs = {}
    for i, decay in enumerate((0.02, 0.05)):
        n = int(0.12 * SAMPLE_RATE)
        tail = rng.standard_normal(n) * np.exp(-np.arange(n) / (decay * SAMPLE_RATE))
        tail[0] = 1.0
        rirs[f"rir{i}.wav"] = 0.9 * tail / np.max(np.abs(tail))
    for name, x in {**noises, **rirs}.items():
        save_wav(Waveform(np.clip(x, -1, 1), SAMPLE_RATE), pool_dir / name)
    (out_dir / "noise.lst").write_text("".join(f"pools/{n}\n" for n in noises), encoding="utf-8")
    (out_dir / "rir.lst").write_text("".join(f"pools/{n}\n" for n in rirs), encoding="utf-8")


def generate_toy_corpus(out_dir, n_speakers=4, per_speaker=20, seed=7, pools=True):
    """Write toy WAVs and ``manifest.tsv`` under ``out_dir``; returns the manifest rows."""
    if n_speakers < 2:
        raise InsufficientSpeakers(f"toy corpus needs at least 2 speakers, got {n_speakers}")
    out_dir = Path(out_dir)
    try:
        (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{out_dir}: {exc}") from exc
    rows = []
    for utt, spk, k, digits in toy_utterances(n_speakers, per_speaker, seed):
        wav_path = out_dir / "wavs" / f"{utt}.wav"
        save_wav(render_digits(digits, k), wav_path)
        rows.append(ManifestRow(utt, spk, wav_path, "".join(map(str, digits))))
    write_manifest(rows, out_dir / "manifest.tsv")
    if pools:
        _write_pools(out_dir, seed)
    return rows
