"""Text -> mel sequence-to-sequence model.

Encoder: character embedding, PreNet, CBHG (conv bank, max pool, conv projections
with residual, highway stack, bidirectional GRU), then the speaker embedding is
appended to every encoder frame. Decoder: PreNet on the previous frame, additive
attention queried by the previous LSTM state, one LSTM layer, and a projection to
``reduction`` mel frames plus a stop logit per step.
"""

from dataclasses import dataclass

import numpy as np

from .audio import mel_spectrogram
from .errors import (
    CheckpointIncompatible,
    EmptyMemory,
    EmptyTokens,
    ShapeMismatch,
    TooShort,
    UnknownToken,
)
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

PAD, EOS = "<pad>", "<eos>"
CHARSET = " abcdefghijklmnopqrstuvwxyz0123456789'.,?!-"


class Vocabulary:
    """Character vocabulary with PAD (id 0) and EOS (id 1)."""

    def __init__(self, charset=CHARSET):
        self.tokens = [PAD, EOS, *charset]
        self.ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @property
    def eos_id(self):
        return self.ids[EOS]

    def encode(self, text):
        """Lower-cased characters followed by exactly one EOS."""
        chars = text.lower()
        if not chars:
            raise EmptyTokens("text is empty")
        unknown = sorted({c for c in chars if c not in self.ids})
        if unknown:
            raise UnknownToken(f"characters outside the vocabulary: {''.join(unknown)!r}")
        return [self.ids[c] for c in chars] + [self.eos_id]

    def decode(self, ids):
        return "".join(self.tokens[i] for i in ids if i > 1)


VOCAB = Vocabulary()


@dataclass(frozen=True)
class SynthesizerConfig:
    vocab_size: int = len(VOCAB)
    n_mels: int = 80
    speaker_dim: int = 128
    embed_dim: int = 256
    prenet_dims: tuple = (256, 128)
    prenet_dropout: float = 0.5
    conv_bank_k: int = 8
    bank_channels: int = 128
    highway_layers: int = 4
    gru_hidden: int = 128
    attention_dim: int = 128
    decoder_hidden: int = 256
    reduction: int = 2
    max_decoder_steps: int = 1000
    stop_threshold: float = 0.5
    cyc_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "prenet_dims", tuple(int(d) for d in self.prenet_dims))
        if len(self.prenet_dims) != 2 or min(self.prenet_dims) < 1:
            raise ValueError("prenet_dims must be two positive sizes")
        if self.reduction < 1 or self.max_decoder_steps < 1:
            raise ValueError("need reduction >= 1 and max_decoder_steps >= 1")
        if not 0.0 < self.stop_threshold < 1.0:
            raise ValueError("stop_threshold must lie in (0, 1)")
        if not 0.0 <= self.prenet_dropout < 1.0:
            raise ValueError("prenet_dropout must lie in [0, 1)")
        if self.cyc_weight < 0:
            raise ValueError("cyc_weight must be >= 0")
        dims = (self.vocab_size, self.n_mels, self.speaker_dim, self.embed_dim, self.conv_bank_k,
                self.bank_channels, self.gru_hidden, self.attention_dim, self.decoder_hidden)
        if min(dims) < 1 or self.highway_layers < 0:
            raise ValueError("synthesizer dimensions must be positive")

    @property
    def memory_dim(self):
        return 2 * self.gru_hidden + self.speaker_dim


def _dense(p, name, n_in, n_out, rng, bias=0.0):
    p.add(f"{name}.W", uniform_init(rng, n_in, (n_in, n_out)))
    p.add(f"{name}.b", np.full(n_out, bias))


def init_synthesizer(config, seed=0):
    rng = np.random.default_rng(seed)
    c = config
    p1, p2 = c.prenet_dims
    p = ParamSet("synthesizer")
    add_feature_stats(p, c.n_mels)
    p.add("embedding", rng.normal(scale=0.3, size=(c.vocab_size, c.embed_dim)))
    _dense(p, "enc_prenet.0", c.embed_dim, p1, rng)
    _dense(p, "enc_prenet.1", p1, p2, rng)
    for k in range(1, c.conv_bank_k + 1):
        p.add(f"bank.{k}.W", uniform_init(rng, k * p2, (k, p2, c.bank_channels)))
        p.add(f"bank.{k}.b", np.zeros(c.bank_channels))
    bank_out = c.conv_bank_k * c.bank_channels
    p.add("proj1.W", uniform_init(rng, 3 * bank_out, (3, bank_out, c.bank_channels)))
    p.add("proj1.b", np.zeros(c.bank_channels))
    p.add("proj2.W", uniform_init(rng, 3 * c.bank_channels, (3, c.bank_channels, p2)))
    p.add("proj2.b", np.zeros(p2))
    for i in range(c.highway_layers):
        _dense(p, f"highway.{i}.H", p2, p2, rng)
        _dense(p, f"highway.{i}.T", p2, p2, rng, bias=-1.0)
    G = c.gru_hidden
    for d in ("fwd", "bwd"):
        p.add(f"gru.{d}.Wx", uniform_init(rng, p2, (p2, 3 * G)))
        p.add(f"gru.{d}.U", uniform_init(rng, G, (G, 3 * G)))
        p.add(f"gru.{d}.b", np.zeros(3 * G))
    Dm, D, A = c.memory_dim, c.decoder_hidden, c.attention_dim
    p.add("attn.Wq", uniform_init(rng, D, (D, A)))
    p.add("attn.Wm", uniform_init(rng, Dm, (Dm, A)))
    p.add("attn.b", np.zeros(A))
    p.add("attn.v", uniform_init(rng, A, (A,)))
    _dense(p, "dec_prenet.0", c.n_mels, p1, rng)
    _dense(p, "dec_prenet.1", p1, p2, rng)
    p.add("dec_lstm.Wx", uniform_init(rng, p2 + Dm, (p2 + Dm, 4 * D)))
    p.add("dec_lstm.U", uniform_init(rng, D, (D, 4 * D)))
    bias = np.zeros(4 * D)
    bias[D: 2 * D] = 1.0
    p.add("dec_lstm.b", bias)
    _dense(p, "mel_out", D + Dm, c.reduction * c.n_mels, rng)
    _dense(p, "stop_out", D + Dm, 1, rng)
    return p


def load_synthesizer(path, config):
    params = init_synthesizer(config)
    params.load_state(load_checkpoint(path, "synthesizer"))
    return params


def _prenet(params, prefix, x, dropout, rng, training):
    for i in range(2):
        x = ops.relu(ops.affine(x, params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"]))
        x = ops.dropout(x, dropout, rng, training)
    return x


def cbhg(params, config, x):
    """x (B, L, P2) -> (B, L, 2 * gru_hidden)."""
    bank = ops.concat(
        [ops.relu(ops.conv1d(x, params[f"bank.{k}.W"], params[f"bank.{k}.b"]))
         for k in range(1, config.conv_bank_k + 1)],
        axis=-1,
    )
    y = ops.maxpool1d(bank)
    y = ops.relu(ops.conv1d(y, params["proj1.W"], params["proj1.b"]))
    y = ops.add(ops.conv1d(y, params["proj2.W"], params["proj2.b"]), x)
    for i in range(config.highway_layers):
        h = ops.relu(ops.affine(y, params[f"highway.{i}.H.W"], params[f"highway.{i}.H.b"]))
        t = ops.sigmoid(ops.affine(y, params[f"highway.{i}.T.W"], params[f"highway.{i}.T.b"]))
        y = ops.add(y, ops.mul(t, ops.sub(h, y)))

    def side(d):
        return tuple(params[f"gru.{d}.{k}"] for k in ("Wx", "U", "b"))

    return ops.bidirectional_wrap(ops.gru_sequence, y, side("fwd"), side("bwd"))


def encode_text(tokens, speaker_embedding, params, config, rng=None, training=False):
    """Encoder memory (B, L, 2 * gru_hidden + speaker_dim) for token ids (L,) or (B, L)."""
    ids = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    if ids.shape[1] == 0:
        raise EmptyTokens("token sequence is empty")
    spk = np.atleast_2d(np.asarray(speaker_embedding, dtype=np.float64))
    if spk.shape != (ids.shape[0], config.speaker_dim):
        raise ShapeMismatch(f"speaker embedding {spk.shape} vs expected (B, {config.speaker_dim})")
    norms = np.linalg.norm(spk, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ShapeMismatch(f"speaker embedding must have unit norm, got {norms.min():.6g}")
    rng = rng if rng is not None else np.random.default_rng(0)
    x = ops.embedding_lookup(params["embedding"], ids)
    x = _prenet(params, "enc_prenet", x, config.prenet_dropout, rng, training)
    h = cbhg(params, config, x)
    spk_frames = np.repeat(spk[:, None, :], ids.shape[1], axis=1)
    return ops.concat([h, spk_frames], axis=-1)


def attention_keys(params, memory):
    return ops.affine(memory, params["attn.Wm"], params["attn.b"])


def attention_step(query, memory, params, keys=None):
    """Additive attention: score_j = v . tanh(Wq q + Wm m_j + b).

    query (B, D), memory (B, L, Dm) -> (context (B, Dm), weights (B, L)).
    """
    memory = memory if isinstance(memory, Tensor) else Tensor(memory)
    if memory.ndim != 3 or memory.shape[1] == 0:
        raise EmptyMemory(f"attention needs a non-empty (B, L, D) memory, got {memory.shape}")
    keys = attention_keys(params, memory) if keys is None else keys
    q = ops.affine(query, params["attn.Wq"])
    B, _, A = keys.shape
    energy = ops.tanh(ops.add(keys, ops.reshape(q, (B, 1, A))))
    scores = ops.reshape(ops.matmul(energy, ops.reshape(params["attn.v"], (A, 1))), (B, -1))
    weights = ops.softmax(scores, axis=-1)
    context = ops.matmul(ops.reshape(weights, (B, 1, -1)), memory)
    return ops.reshape(context, (B, -1)), weights


@dataclass
class DecodeResult:
    mel: Tensor             # (B, frames, n_mels)
    stop_logits: Tensor     # (B, steps)
    alignments: np.ndarray  # (B, steps, L)
    hit_max_steps: bool

    @property
    def stop_reason(self):
        return "max_steps" if self.hit_max_steps else "stop_token"


def pad_to_reduction(frames, r):
    """Repeat the last frame so the frame count is a multiple of r."""
    extra = (-frames.shape[-2]) % r
    if extra:
        tail = np.repeat(frames[..., -1:, :], extra, axis=-2)
        frames = np.concatenate([frames, tail], axis=-2)
    return frames


def decode(memory, teacher, params, config, rng=None, stop_threshold=None, max_steps=None):
    """Autoregressive decoding.

    With ``teacher`` (B, T, n_mels) the previous ground-truth frame feeds each step
    and the output covers T padded up to a multiple of the reduction factor.
    Without it, decoding stops once sigmoid(stop logit) exceeds the threshold or
    after ``max_steps``. The decoder PreNet keeps dropout on in both modes.
    """
    c = config
    r, M = c.reduction, c.n_mels
    memory = memory if isinstance(memory, Tensor) else Tensor(memory)
    if memory.ndim != 3 or memory.shape[1] == 0:
        raise EmptyMemory("decoder needs a non-empty encoder memory")
    if memory.shape[2] != c.memory_dim:
        raise ShapeMismatch(f"memory width {memory.shape[2]} vs config {c.memory_dim}")
    B = memory.shape[0]
    rng = rng if rng is not None else np.random.default_rng(0)
    threshold = c.stop_threshold if stop_threshold is None else stop_threshold
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"stop threshold {threshold} outside [0, 1)")
    mean, std = params["norm.mean"].data, params["norm.std"].data

    if teacher is not None:
        teacher = np.asarray(teacher, dtype=np.float64)
        if teacher.ndim == 2:
            teacher = teacher[None]
        if teacher.shape[0] != B or teacher.shape[2] != M or teacher.shape[1] == 0:
            raise ShapeMismatch(f"teacher frames {teacher.shape} vs (B={B}, T, {M})")
        padded = (teacher - mean) / std
        padded = pad_to_reduction(padded, r)
        n_steps = padded.shape[1] // r
    else:
        n_steps = c.max_decoder_steps if max_steps is None else max_steps

    keys = attention_keys(params, memory)
    D = c.decoder_hidden
    h = Tensor(np.zeros((B, D)))
    cell = Tensor(np.zeros((B, D)))
    prev = np.zeros((B, M))
    outs, stops, aligns = [], [], []
    hit_max = teacher is None
    for step in range(n_steps):
        x = _prenet(params, "dec_prenet", prev, c.prenet_dropout, rng, True)
        context, weights = attention_step(h, memory, params, keys)
        h, cell = ops.lstm_cell(ops.concat([x, context], axis=-1), h, cell,
                                params["dec_lstm.Wx"], params["dec_lstm.U"], params["dec_lstm.b"])
        state = ops.concat([h, context], axis=-1)
        frames = ops.reshape(ops.affine(state, params["mel_out.W"], params["mel_out.b"]), (B, r, M))
        stop = ops.affine(state, params["stop_out.W"], params["stop_out.b"])
        outs.append(frames)
        stops.append(stop)
        aligns.append(weights.data)
        if teacher is not None:
            prev = padded[:, (step + 1) * r - 1]
        else:
            prev = frames.data[:, -1]
            if np.all(0.5 * (1.0 + np.tanh(0.5 * stop.data)) > threshold):
                hit_max = False
                break
    normalized = ops.concat(outs, axis=1)
    mel = ops.add(ops.mul(normalized, std), mean)
    stop_logits = ops.concat(stops, axis=-1)
    return DecodeResult(mel, stop_logits, np.stack(aligns, axis=1), hit_max)


def periodic_mask(waveform, mel_config, threshold=0.45, n_frames=None,
                  min_lag_s=0.0025, max_lag_s=0.0125):
    """Per-mel-frame voicing flag from the peak normalized autocorrelation.

    Frame i covers the same samples as mel frame i; lags span 2.5-12.5 ms. A frame
    is marked 1 when its peak normalized autocorrelation reaches ``threshold``.
    """
    x = waveform.samples
    fl, hop = mel_config.frame_length, mel_config.hop_length
    available = mel_config.n_frames(len(x))
    n_frames = available if n_frames is None else n_frames
    if n_frames > available or available == 0:
        raise TooShort(f"{len(x)} samples cover {available} frames, need {max(n_frames, 1)}")
    lo = max(1, int(round(min_lag_s * waveform.sample_rate)))
    hi = min(fl - 1, int(round(max_lag_s * waveform.sample_rate)))
    mask = np.zeros(n_frames)
    for i in range(n_frames):
        frame = x[i * hop: i * hop + fl]
        energy = np.cumsum(frame * frame)
        if energy[-1] <= 0:
            continue
        ac = np.correlate(frame, frame, mode="full")[fl - 1:]
        best = 0.0
        for lag in range(lo, hi + 1):
            head = energy[fl - lag - 1]           # sum of frame[:fl-lag]^2
            tail = energy[-1] - energy[lag - 1]   # sum of frame[lag:]^2
            if head > 0 and tail > 0:
                best = max(best, ac[lag] / np.sqrt(head * tail))
        mask[i] = 1.0 if best >= threshold else 0.0
    return mask


def synthesis_loss(mel_predict, mel_target, mask, cyc_weight, stop_logits, stop_targets):
    """(total, L1, masked L1, stop BCE); total = L1 + cyc_weight * masked L1 + stop BCE.

    ``mask`` has one entry per frame. With cyc_weight 0 the masked term is
    reported but kept out of the graph.
    """
    pred = mel_predict if isinstance(mel_predict, Tensor) else Tensor(mel_predict)
    target = np.asarray(mel_target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (target.shape[-2],):
        raise ShapeMismatch(f"mask length {mask.shape} vs {target.shape[-2]} frames")
    l_syn = ops.l1_loss(pred, target)
    frame_mask = mask[:, None]
    if cyc_weight == 0:
        l_cyc = ops.masked_l1_loss(Tensor(pred.data), target, frame_mask)
        weighted = None
    else:
        l_cyc = ops.masked_l1_loss(pred, target, frame_mask)
        weighted = ops.scale(l_cyc, cyc_weight)
    l_stop = ops.bce_with_logits(stop_logits, stop_targets)
    total = ops.add(l_syn, l_stop) if weighted is None else ops.add(ops.add(l_syn, weighted), l_stop)
    return total, l_syn, l_cyc, l_stop


def stop_targets(n_steps):
    t = np.zeros(n_steps)
    t[-1] = 1.0
    return t


def monotonic_fraction(alignment):
    """Share of adjacent decoder steps whose attention argmax does not move backwards."""
    peaks = np.argmax(np.asarray(alignment), axis=-1)
    if peaks.shape[-1] < 2:
        return 1.0
    return float(np.mean(np.diff(peaks, axis=-1) >= 0))


@dataclass
class SynthExample:
    tokens: list
    mel: np.ndarray         # frames x n_mels target
    mask: np.ndarray        # per padded frame
    embedding: np.ndarray


def prepare_examples(manifest, speaker_params, speaker_config, mel_config, config,
                     load_audio, voicing_threshold=0.45):
    from .speaker import embed_utterance

    out = []
    for row in manifest:
        wav = load_audio(row)
        mel = mel_spectrogram(wav, mel_config).data
        mask = periodic_mask(wav, mel_config, voicing_threshold, n_frames=mel.shape[0])
        padded = np.zeros(mel.shape[0] + (-mel.shape[0]) % config.reduction)
        padded[: mask.shape[0]] = mask
        emb = embed_utterance(mel, speaker_params, speaker_config)
        out.append(SynthExample(VOCAB.encode(row.text), mel, padded, emb))
    return out


def example_loss(params, config, ex, rng):
    memory = encode_text(ex.tokens, ex.embedding, params, config, rng, training=True)
    result = decode(memory, ex.mel[None], params, config, rng)
    target = pad_to_reduction(ex.mel, config.reduction)[None]
    losses = synthesis_loss(result.mel, target, ex.mask, config.cyc_weight,
                            result.stop_logits, stop_targets(result.stop_logits.shape[1])[None])
    return losses, result


@dataclass
class SynthTrainResult:
    params: ParamSet
    log: LossLog
    examples: list


def train_synthesizer(manifest, speaker_params, speaker_config, config, options, mel_config,
                      checkpoint_path=None, log_path=None, resume=False, load_audio=None):
    """Teacher-forced training against a frozen speaker encoder.

    Each step accumulates gradients over ``batch_size`` uniformly drawn utterances.
    """
    from .pipeline.manifest import load_row_audio

    if speaker_config.embed_dim != config.speaker_dim:
        raise CheckpointIncompatible(
            f"speaker encoder emits {speaker_config.embed_dim}-dim embeddings, "
            f"synthesizer expects {config.speaker_dim}"
        )
    if config.n_mels != mel_config.n_mels or speaker_config.n_mels != mel_config.n_mels:
        raise CheckpointIncompatible("n_mels differs between mel, speaker and synthesizer configs")
    examples = prepare_examples(manifest, speaker_params, speaker_config, mel_config, config,
                                load_audio or load_row_audio)
    params = init_synthesizer(config, options.seed)
    set_feature_stats(params, *feature_stats([ex.mel for ex in examples]))
    opt = make_optimizer(params, options)
    start = 0
    if resume and checkpoint_path is not None:
        start = restore_training_state(params, opt, checkpoint_path)
    log = LossLog(("step", "total", "l_synthesis", "l_cyc", "l_stop"), log_path,
                  append=resume and start > 0)
    for step in range(start, options.steps):
        rng = step_rng(options.seed, step)
        sums = np.zeros(4)
        for i in rng.integers(0, len(examples), size=options.batch_size):
            with Tape() as tape:
                losses, _ = example_loss(params, config, examples[i], rng)
            tape.backward(losses[0], np.asarray(1.0 / options.batch_size))
            sums += [float(t.data) for t in losses]
        opt.step()
        log.add(step, *(sums / options.batch_size))
    if checkpoint_path is not None:
        save_training_state(params, opt, checkpoint_path, options.steps)
    return SynthTrainResult(params, log, examples)
