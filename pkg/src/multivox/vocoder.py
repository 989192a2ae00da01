"""WaveRNN-style vocoder over 8-bit mu-law classes.

Each step embeds the previous class, appends the frame-rate conditioning row,
runs one GRU step and maps the state through affine+relu and affine+softmax to a
distribution over Q classes. Training is teacher-forced on random crops; generation
runs sample by sample through the compiled kernel.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .audio import MelSpectrogram, Waveform, mel_spectrogram, mu_law_decode, mu_law_encode
from .errors import EmptyInput, ShapeMismatch, TargetOutOfRange, TooShort
from .numgrad import ParamSet, Tape, Tensor, load_checkpoint, ops, uniform_init
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
class VocoderConfig:
    n_mels: int = 80
    cond_dim: int = 128
    gru_hidden: int = 256
    fc_hidden: int = 256
    quantization_channels: int = 256
    hop_length: int = 200
    embed_dim: int = 64

    def __post_init__(self):
        if self.quantization_channels < 2:
            raise ValueError(f"quantization_channels must be >= 2, got {self.quantization_channels}")
        if self.hop_length < 1:
            raise ValueError("hop_length must be positive")
        if min(self.n_mels, self.cond_dim, self.gru_hidden, self.fc_hidden, self.embed_dim) < 1:
            raise ValueError("vocoder dimensions must be positive")

    @property
    def start_class(self):
        return int(mu_law_encode(0.0, self.quantization_channels))


@dataclass
class VocoderState:
    hidden: np.ndarray
    prev_class: int


def init_vocoder(config, seed=0):
    rng = np.random.default_rng(seed)
    c = config
    Q, H = c.quantization_channels, c.gru_hidden
    p = ParamSet("vocoder")
    add_feature_stats(p, c.n_mels)
    p.add("cond.W", uniform_init(rng, c.n_mels, (c.n_mels, c.cond_dim)))
    p.add("cond.b", np.zeros(c.cond_dim))
    p.add("embedding", rng.normal(scale=0.3, size=(Q, c.embed_dim)))
    n_in = c.embed_dim + c.cond_dim
    p.add("gru.Wx", uniform_init(rng, n_in, (n_in, 3 * H)))
    p.add("gru.U", uniform_init(rng, H, (H, 3 * H)))
    p.add("gru.b", np.zeros(3 * H))
    p.add("fc1.W", uniform_init(rng, H, (H, c.fc_hidden)))
    p.add("fc1.b", np.zeros(c.fc_hidden))
    p.add("fc2.W", uniform_init(rng, c.fc_hidden, (c.fc_hidden, Q)))
    p.add("fc2.b", np.zeros(Q))
    return p


def load_vocoder(path, config):
    params = init_vocoder(config)
    params.load_state(load_checkpoint(path, "vocoder"))
    return params


def _mel_data(mel, n_mels):
    data = mel.data if isinstance(mel, MelSpectrogram) else np.asarray(mel, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise EmptyInput(f"mel must be a non-empty frames x bins matrix, got {data.shape}")
    if data.shape[1] != n_mels:
        raise ShapeMismatch(f"mel has {data.shape[1]} bins, vocoder expects {n_mels}")
    return data


def condition_upsample(mel, params, config):
    """Project each mel frame to cond_dim, then repeat it hop_length times."""
    data = _mel_data(mel, config.n_mels)
    x = (data - params["norm.mean"].data) / params["norm.std"].data
    projected = ops.affine(x, params["cond.W"], params["cond.b"])
    return ops.repeat(projected, config.hop_length, axis=0)


def _head(params, h):
    hidden = ops.relu(ops.affine(h, params["fc1.W"], params["fc1.b"]))
    return ops.affine(hidden, params["fc2.W"], params["fc2.b"])


def step_distribution(prev_classes, cond_rows, hidden, params):
    """Differentiable single step for a batch: returns (probs (B, Q), next hidden (B, H))."""
    x = ops.concat([ops.embedding_lookup(params["embedding"], prev_classes), cond_rows], axis=-1)
    h = ops.gru_cell(x, hidden, params["gru.Wx"], params["gru.U"], params["gru.b"])
    return ops.softmax(_head(params, h), axis=-1), h


def vocoder_step(state, cond_row, params, config):
    """(class distribution (Q,), next VocoderState with prev_class unchanged)."""
    H = config.gru_hidden
    hidden = np.asarray(state.hidden, dtype=np.float64)
    cond_row = np.asarray(cond_row.data if isinstance(cond_row, Tensor) else cond_row, dtype=np.float64)
    if hidden.shape != (H,) or cond_row.shape != (config.cond_dim,):
        raise ShapeMismatch(f"hidden {hidden.shape} / conditioning {cond_row.shape} vs ({H},) / ({config.cond_dim},)")
    if not 0 <= state.prev_class < config.quantization_channels:
        raise TargetOutOfRange(f"previous class {state.prev_class} outside [0, {config.quantization_channels})")
    probs, h = step_distribution([state.prev_class], cond_row[None], hidden[None], params)
    return probs.data[0], VocoderState(h.data[0], state.prev_class)


def vocoder_loss(probs, targets):
    """Mean categorical cross-entropy of step distributions against true classes."""
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    t = np.asarray(targets)
    if probs.shape[:-1] != t.shape:
        raise ShapeMismatch(f"{probs.shape[:-1]} distributions vs {t.shape} targets")
    Q = probs.shape[-1]
    if t.size and (t.min() < 0 or t.max() >= Q):
        raise TargetOutOfRange(f"target classes must lie in [0, {Q})")
    return ops.categorical_nll(probs, t)


def generate_classes(mel, params, config, seed=0, mode="argmax"):
    """Free-running class sequence of length frames * hop_length."""
    if mode not in ("argmax", "sample"):
        raise ValueError(f"mode must be 'argmax' or 'sample', got {mode!r}")
    cond = condition_upsample(mel, params, config).data
    Wx = params["gru.Wx"].data
    E = config.embed_dim
    cond_gx = np.ascontiguousarray(cond @ Wx[E:] + params["gru.b"].data)
    emb_gx = np.ascontiguousarray(params["embedding"].data @ Wx[:E])
    uniforms = None
    if mode == "sample":
        uniforms = np.random.default_rng(seed).random(cond.shape[0])
    return kernels.wavernn_generate(
        cond_gx, emb_gx, params["gru.U"].data,
        params["fc1.W"].data, params["fc1.b"].data, params["fc2.W"].data, params["fc2.b"].data,
        uniforms, config.start_class,
    )


def generate(mel, params, config, seed=0, mode="argmax", sample_rate=16000):
    classes = generate_classes(mel, params, config, seed, mode)
    return Waveform(np.asarray(mu_law_decode(classes, config.quantization_channels), dtype=np.float64), sample_rate)


@dataclass
class VocoderClip:
    mel: np.ndarray
    classes: np.ndarray   # target class per sample, frames * hop long


def prepare_clip(waveform, mel_config, config):
    if mel_config.hop_length != config.hop_length or mel_config.n_mels != config.n_mels:
        raise ShapeMismatch("vocoder hop_length / n_mels must match the mel configuration")
    mel = mel_spectrogram(waveform, mel_config).data
    n = mel.shape[0] * config.hop_length
    return VocoderClip(mel, np.asarray(mu_law_encode(waveform.samples[:n], config.quantization_channels)))


def batch_loss(params, config, crops, length, cond_cache=None):
    prev, conds, targets = [], [], []
    for clip, start in crops:
        cls = clip.classes
        prev.append(np.concatenate([[config.start_class], cls[:-1]])[start: start + length])
        targets.append(cls[start: start + length])
        cond = condition_upsample(clip.mel, params, config) if cond_cache is None else cond_cache
        conds.append(ops.getitem(cond, slice(start, start + length)))
    x = ops.concat([ops.embedding_lookup(params["embedding"], np.stack(prev)), ops.stack(conds)], axis=-1)
    h = ops.gru_sequence(x, params["gru.Wx"], params["gru.U"], params["gru.b"])
    probs = ops.softmax(_head(params, h), axis=-1)
    return vocoder_loss(probs, np.stack(targets)), probs


def teacher_forced_loss(params, config, clip):
    return float(batch_loss(params, config, [(clip, 0)], len(clip.classes))[0].data)


@dataclass
class VocoderTrainResult:
    params: ParamSet
    log: LossLog
    clips: list


def train_vocoder(manifest, config, options, mel_config, checkpoint_path=None, log_path=None,
                  resume=False, load_audio=None):
    """Teacher-forced training on ``batch_size`` crops of ``crop_samples`` per step.

    The first crop of every step starts at sample 0 so the model also sees the
    zero-state start that free-running generation begins from.
    """
    from .pipeline.manifest import load_row_audio

    load_audio = load_audio or load_row_audio
    clips = []
    for row in manifest:
        wav = load_audio(row)
        if len(wav) < mel_config.frame_length:
            raise TooShort(f"{row.utt_id}: shorter than one mel frame")
        clips.append(prepare_clip(wav, mel_config, config))
    if not clips:
        raise EmptyInput("vocoder manifest is empty")
    params = init_vocoder(config, options.seed)
    set_feature_stats(params, *feature_stats([c.mel for c in clips]))
    opt = make_optimizer(params, options)
    start = 0
    if resume and checkpoint_path is not None:
        start = restore_training_state(params, opt, checkpoint_path)
    log = LossLog(("step", "loss"), log_path, append=resume and start > 0)
    length = min(options.crop_samples, min(len(c.classes) for c in clips))
    for step in range(start, options.steps):
        rng = step_rng(options.seed, step)
        crops = []
        for b, i in enumerate(rng.integers(0, len(clips), size=options.batch_size)):
            clip = clips[i]
            offset = 0 if b == 0 else int(rng.integers(0, len(clip.classes) - length + 1))
            crops.append((clip, offset))
        with Tape() as tape:
            loss, _ = batch_loss(params, config, crops, length)
        tape.backward(loss)
        opt.step()
        log.add(step, loss.data)
    if checkpoint_path is not None:
        save_training_state(params, opt, checkpoint_path, options.steps)
    return VocoderTrainResult(params, log, clips)
