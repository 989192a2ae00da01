"""Run configuration: a UTF-8 file of ``section.key = value`` lines.

Each section is backed by a dataclass, so types, defaults and validation come from
the module configs. Keys that are derived from another section (for example the
synthesizer's ``n_mels`` comes from ``mel.n_mels``) are not settable. ``dump``
writes every key in a fixed order, so a dumped file reloads to an equal config.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..audio import MelConfig
from ..augment import AugmentSpec, load_pool
from ..errors import ConfigInvalid, IoFailure
from ..speaker import SpeakerEncoderConfig
from ..synthesizer import SynthesizerConfig
from ..training import TrainOptions
from ..vocoder import VocoderConfig


@dataclass(frozen=True)
class RunSection:
    checkpoint_dir: str = "checkpoints"


@dataclass(frozen=True)
class AugmentSection:
    enabled: bool = True
    noise_list: str = ""
    rir_list: str = ""
    snr_min: float = 5.0
    snr_max: float = 20.0
    speed_factors: tuple = (0.9, 1.0, 1.1)
    p_noise: float = 0.5
    p_reverb: float = 0.5
    p_speed: float = 0.5

    def __post_init__(self):
        if self.snr_min > self.snr_max:
            raise ValueError("snr_min must not exceed snr_max")
        if not all(0.0 <= p <= 1.0 for p in (self.p_noise, self.p_reverb, self.p_speed)):
            raise ValueError("augmentation probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class EvalSection:
    detector_steps: int = 400
    detector_lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.detector_steps < 1 or self.detector_lr <= 0:
            raise ValueError("detector_steps must be >= 1 and detector_lr > 0")


SECTIONS = {
    "run": RunSection,
    "mel": MelConfig,
    "encoder": SpeakerEncoderConfig,
    "synth": SynthesizerConfig,
    "vocoder": VocoderConfig,
    "augment": AugmentSection,
    "eval": EvalSection,
    "train_encoder": TrainOptions,
    "train_synth": TrainOptions,
    "train_vocoder": TrainOptions,
}

DERIVED = {
    "encoder": {"n_mels", "n_speakers"},
    "synth": {"n_mels", "speaker_dim", "vocab_size"},
    "vocoder": {"n_mels", "hop_length"},
}

DEFAULT_OVERRIDES = {
    "train_encoder": dict(steps=300, lr=3e-3, batch_size=8, crop_frames=40),
    "train_synth": dict(steps=500, lr=1e-3, batch_size=1),
    "train_vocoder": dict(steps=1000, lr=3e-3, batch_size=4, crop_samples=1000),
}


def settable(section):
    return [f for f in fields(SECTIONS[section]) if f.name not in DERIVED.get(section, ())]


def _default_sections():
    return {name: cls(**DEFAULT_OVERRIDES.get(name, {})) for name, cls in SECTIONS.items()}


def _parse_value(text, default, where):
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in text.split(",") if v.strip())
        return type(default)(text)
    except ValueError:
        raise ConfigInvalid(f"{where}: cannot read {text!r} as {type(default).__name__}") from None


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class RunConfig:
    sections: dict = field(default_factory=_default_sections)

    def __getattr__(self, name):
        try:
            return self.__dict__["sections"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def encoder_config(self):
        return replace(self.encoder, n_mels=self.mel.n_mels)

    @property
    def synth_config(self):
        return replace(self.synth, n_mels=self.mel.n_mels, speaker_dim=self.encoder.embed_dim)

    @property
    def vocoder_config(self):
        return replace(self.vocoder, n_mels=self.mel.n_mels, hop_length=self.mel.hop_length)

    def augment_spec(self, base=Path(".")):
        a = self.augment
        if not a.enabled or not (a.noise_list or a.rir_list):
            return None
        noise = load_pool(Path(base) / a.noise_list) if a.noise_list else []
        rirs = load_pool(Path(base) / a.rir_list) if a.rir_list else []
        return AugmentSpec(noise, rirs, (a.snr_min, a.snr_max), a.speed_factors,
                           a.p_noise if noise else 0.0, a.p_reverb if rirs else 0.0, a.p_speed)

    def with_values(self, values):
        """New config with ``{"section.key": value}`` overrides applied and validated."""
        grouped = {}
        for dotted, value in values.items():
            section, _, key = dotted.partition(".")
            if section not in SECTIONS:
                raise ConfigInvalid(f"unknown section {section!r} in {dotted!r}")
            if key not in {f.name for f in settable(section)}:
                raise ConfigInvalid(f"unknown key {dotted!r}")
            grouped.setdefault(section, {})[key] = value
        sections = dict(self.sections)
        for section, changes in grouped.items():
            try:
                sections[section] = replace(sections[section], **changes)
            except (ValueError, TypeError) as exc:
                raise ConfigInvalid(f"section {section}: {exc}") from None
        return RunConfig(sections)

    def dumps(self):
        lines = []
        for section in SECTIONS:
            for f in settable(section):
                lines.append(f"{section}.{f.name} = {_format_value(getattr(self.sections[section], f.name))}")
        return "\n".join(lines) + "\n"

    def dump(self, path):
        try:
            Path(path).write_text(self.dumps(), encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"{path}: {exc}") from exc


def parse_config(text, source="<config>"):
    base = RunConfig()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or "." not in key:
            raise ConfigInvalid(f"{where}: expected 'section.key = value'")
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigInvalid(f"{where}: unknown section {section!r}")
        known = {f.name: f for f in settable(section)}
        if name not in known:
            raise ConfigInvalid(f"{where}: unknown key {key!r}")
        if key in values:
            raise ConfigInvalid(f"{where}: {key!r} set twice")
        default = getattr(base.sections[section], name)
        values[key] = _parse_value(value, default, where)
    return base.with_values(values)


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))

