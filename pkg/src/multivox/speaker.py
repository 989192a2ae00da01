"""Speaker encoder: stacked bi-LSTM, mean pooling, two FC layers, unit-norm embedding.

Trained as a speaker classifier; the classification head is used only in training.
"""

from dataclasses import dataclass, replace

import numpy as np

from .audio import MelSpectrogram, Waveform, mel_spectrogram
from .augment import augment
from .errors import (
    EmptyInput,
    EmptyList,
    InsufficientSpeakers,
    SampleRateMismatch,
    ShapeMismatch,
    TargetOutOfRange,
)
from .numgrad import ParamSet, Tape, load_checkpoint, ops, uniform_init
from .training import (
    LossLog,
    add_feature_stats,
    feature_stats,
    make_optimizer,
    restore_training_state,
    save_training_state,
    set_feature_stats,
    step_rng,
)


@dataclass(frozen=True)
class SpeakerEncoderConfig:
    n_mels: int = 80
    lstm_hidden: int = 128
    fc1_dim: int = 256
    embed_dim: int = 128
    n_speakers: int = 2

    def __post_init__(self):
        if min(self.n_mels, self.lstm_hidden, self.fc1_dim, self.embed_dim) < 1:
            raise ValueError("speaker encoder dimensions must be positive")
        if self.n_speakers < 2:
            raise ValueError("n_speakers must be >= 2")


def _lstm_params(params, prefix, n_in, hidden, rng):
    for direction in ("fwd", "bwd"):
        params.add(f"{prefix}.{direction}.Wx", uniform_init(rng, n_in, (n_in, 4 * hidden)))
        params.add(f"{prefix}.{direction}.U", uniform_init(rng, hidden, (hidden, 4 * hidden)))
        bias = np.zeros(4 * hidden)
        bias[hidden: 2 * hidden] = 1.0  # forget gate
        params.add(f"{prefix}.{direction}.b", bias)


def init_speaker_encoder(config, seed=0):
    rng = np.random.default_rng(seed)
    H = config.lstm_hidden
    p = ParamSet("speaker-encoder")
    add_feature_stats(p, config.n_mels)
    _lstm_params(p, "lstm1", config.n_mels, H, rng)
    _lstm_params(p, "lstm2", 2 * H, H, rng)
    p.add("fc1.W", uniform_init(rng, 2 * H, (2 * H, config.fc1_dim)))
    p.add("fc1.b", np.zeros(config.fc1_dim))
    p.add("fc2.W", uniform_init(rng, config.fc1_dim, (config.fc1_dim, config.embed_dim)))
    p.add("fc2.b", np.zeros(config.embed_dim))
    p.add("head.W", uniform_init(rng, config.embed_dim, (config.embed_dim, config.n_speakers)))
    p.add("head.b", np.zeros(config.n_speakers))
    return p


def _bilstm(params, prefix, x):
    def side(direction):
        return tuple(params[f"{prefix}.{direction}.{k}"] for k in ("Wx", "U", "b"))

    return ops.bidirectional_wrap(ops.lstm_sequence, x, side("fwd"), side("bwd"))


def encoder_forward(params, mels):
    """mels (B, T, n_mels) raw log-mels -> (embeddings (B, E), logits (B, n_speakers))."""
    x = (np.asarray(mels) - params["norm.mean"].data) / params["norm.std"].data
    h = _bilstm(params, "lstm2", _bilstm(params, "lstm1", x))
    pooled = ops.mean_over_time(h, axis=1)
    hidden = ops.relu(ops.affine(pooled, params["fc1.W"], params["fc1.b"]))
    emb = ops.l2_normalize(ops.affine(hidden, params["fc2.W"], params["fc2.b"]))
    logits = ops.affine(emb, params["head.W"], params["head.b"])
    return emb, logits


def _mel_array(mel, n_mels):
    data = mel.data if isinstance(mel, MelSpectrogram) else np.asarray(mel, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != n_mels:
        raise ShapeMismatch(f"expected frames x {n_mels} mel matrix, got {data.shape}")
    if data.shape[0] == 0:
        raise EmptyInput("mel spectrogram has no frames")
    return data


def embed_utterance(mel, params, config):
    """Unit-norm speaker embedding of one utterance (no dropout, deterministic)."""
    data = _mel_array(mel, config.n_mels)
    emb, _ = encoder_forward(params, data[None])
    return emb.data[0]


def embed_waveform(waveform, params, config, mel_config):
    return embed_utterance(mel_spectrogram(waveform, mel_config), params, config)


def speaker_loss(logits, targets):
    """Batch-mean cross-entropy of softmax(logits) against integer speaker ids."""
    logits_data = logits.data if hasattr(logits, "data") else np.asarray(logits)
    if logits_data.ndim != 2:
        raise ShapeMismatch(f"logits must be batch x n_speakers, got {logits_data.shape}")
    t = np.asarray(targets)
    if t.shape != (logits_data.shape[0],):
        raise ShapeMismatch(f"{logits_data.shape[0]} logit rows but targets shaped {t.shape}")
    if np.any(t < 0) or np.any(t >= logits_data.shape[1]):
        raise TargetOutOfRange(f"speaker ids must lie in [0, {logits_data.shape[1]})")
    return ops.softmax_cross_entropy(logits, t)


def cosine_similarity(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1.0, 1.0))


def splice_reference_audio(waveforms):
    """Concatenate all of a speaker's reference clips, in order."""
    waveforms = list(waveforms)
    if not waveforms:
        raise EmptyList("no reference waveforms to splice")
    rate = waveforms[0].sample_rate
    for w in waveforms[1:]:
        if w.sample_rate != rate:
            raise SampleRateMismatch(f"reference clips mix {rate} Hz and {w.sample_rate} Hz")
    return Waveform(np.concatenate([w.samples for w in waveforms]), rate)


def speaker_index(manifest):
    """Sorted speaker ids -> class index; enforces >= 2 speakers with >= 2 clips each."""
    counts = {}
    for row in manifest:
        counts[row.speaker_id] = counts.get(row.speaker_id, 0) + 1
    if len(counts) < 2:
        raise InsufficientSpeakers(f"need at least 2 speakers, manifest has {len(counts)}")
    thin = sorted(s for s, c in counts.items() if c < 2)
    if thin:
        raise InsufficientSpeakers(f"speakers with fewer than 2 utterances: {', '.join(thin)}")
    return {s: i for i, s in enumerate(sorted(counts))}


def load_speaker_encoder(path, config):
    """Load weights; n_speakers is taken from the stored classification head."""
    saved = load_checkpoint(path, "speaker-encoder")
    n_spk = saved["head.W"].shape[1] if "head.W" in saved else config.n_speakers
    config = replace(config, n_speakers=max(2, n_spk))
    params = init_speaker_encoder(config)
    params.load_state(saved)
    return params, config


@dataclass
class SpeakerTrainResult:
    params: ParamSet
    config: SpeakerEncoderConfig
    log: LossLog
    train_accuracy: float


def _crop(mel, frames, rng):
    if mel.shape[0] <= frames:
        return mel
    start = int(rng.integers(0, mel.shape[0] - frames + 1))
    return mel[start: start + frames]


def train_speaker_encoder(manifest, config, options, mel_config, augment_spec=None,
                          checkpoint_path=None, log_path=None, resume=False, load_audio=None):
    """Speaker-classification training on uniformly sampled, randomly cropped utterances.

    ``manifest`` is a sequence of rows with ``speaker_id`` and ``wav_path``;
    ``load_audio`` maps a row to a Waveform.
    """
    from .pipeline.manifest import load_row_audio

    load_audio = load_audio or load_row_audio
    speakers = speaker_index(manifest)
    config = replace(config, n_mels=mel_config.n_mels, n_speakers=len(speakers))
    waves = [load_audio(row) for row in manifest]
    labels = np.array([speakers[row.speaker_id] for row in manifest])
    clean_mels = [mel_spectrogram(w, mel_config).data for w in waves]

    params = init_speaker_encoder(config, options.seed)
    set_feature_stats(params, *feature_stats(clean_mels))
    opt = make_optimizer(params, options)
    start = 0
    if resume and checkpoint_path is not None:
        start = restore_training_state(params, opt, checkpoint_path)
    log = LossLog(("step", "loss", "accuracy"), log_path, append=resume and start > 0)

    for step in range(start, options.steps):
        rng = step_rng(options.seed, step)
        picks = rng.integers(0, len(waves), size=options.batch_size)
        mels = []
        for i in picks:
            if augment_spec is not None:
                wav, _ = augment(waves[i], augment_spec, rng)
                mel = mel_spectrogram(wav, mel_config).data if len(wav) >= mel_config.frame_length else clean_mels[i]
            else:
                mel = clean_mels[i]
            mels.append(mel)
        frames = min(options.crop_frames, *(m.shape[0] for m in mels))
        batch = np.stack([_crop(m, frames, rng) for m in mels])
        with Tape() as tape:
            _, logits = encoder_forward(params, batch)
            loss = speaker_loss(logits, labels[picks])
        tape.backward(loss)
        opt.step()
        acc = float(np.mean(np.argmax(logits.data, axis=1) == labels[picks]))
        log.add(step, loss.data, acc)

    if checkpoint_path is not None:
        save_training_state(params, opt, checkpoint_path, options.steps)
    correct = [np.argmax(encoder_forward(params, m[None])[1].data[0]) == y for m, y in zip(clean_mels, labels)]
    return SpeakerTrainResult(params, config, log, float(np.mean(correct)))
