"""Full inference chain: reference clips -> speaker embedding -> mel -> waveform."""

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import CheckpointIncompatible, EmptyText
from ..speaker import embed_waveform, load_speaker_encoder, splice_reference_audio
from ..synthesizer import VOCAB, decode, encode_text, load_synthesizer
from ..vocoder import generate, load_vocoder


@dataclass
class SynthesisRecord:
    text: str
    n_tokens: int
    decoder_steps: int
    mel_frames: int
    n_samples: int
    stop_reason: str

    def as_dict(self):
        return asdict(self)


@dataclass
class Models:
    speaker_params: object
    speaker_config: object
    synth_params: object
    synth_config: object
    vocoder_params: object
    vocoder_config: object
    mel_config: object


def load_models(run_config, encoder_ckpt, synth_ckpt, vocoder_ckpt):
    """Load the three independently trained checkpoints and check they fit together."""
    speaker_params, speaker_config = load_speaker_encoder(encoder_ckpt, run_config.encoder_config)
    synth_config = run_config.synth_config
    if speaker_config.embed_dim != synth_config.speaker_dim:
        raise CheckpointIncompatible("speaker embedding size does not match the synthesizer")
    return Models(
        speaker_params, speaker_config,
        load_synthesizer(synth_ckpt, synth_config), synth_config,
        load_vocoder(vocoder_ckpt, run_config.vocoder_config), run_config.vocoder_config,
        run_config.mel,
    )


def synthesize(text, references, models, seed=0, mode="argmax", max_steps=None):
    """Returns (waveform, mel frames, SynthesisRecord).

    ``references`` are the target speaker's clips; they are spliced into one
    reference before embedding.
    """
    if not text or not text.strip():
        raise EmptyText("nothing to synthesize")
    m = models
    reference = splice_reference_audio(references)
    embedding = embed_waveform(reference, m.speaker_params, m.speaker_config, m.mel_config)
    tokens = VOCAB.encode(text)
    rng = np.random.default_rng(seed)
    memory = encode_text(tokens, embedding, m.synth_params, m.synth_config, rng)
    result = decode(memory, None, m.synth_params, m.synth_config, rng, max_steps=max_steps)
    mel = result.mel.data[0]
    wav = generate(mel, m.vocoder_params, m.vocoder_config, seed=seed, mode=mode,
                   sample_rate=m.mel_config.sample_rate)
    record = SynthesisRecord(text, len(tokens), result.alignments.shape[1], mel.shape[0], len(wav),
                             result.stop_reason)
    return wav, mel, record
