"""Plumbing shared by the three training loops: options, seeded step RNGs, logs, resume."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoFailure
from .numgrad import Adam, ParamSet, load_checkpoint, save_checkpoint


@dataclass(frozen=True)
class TrainOptions:
    seed: int = 0
    steps: int = 300
    lr: float = 1e-3
    batch_size: int = 8
    clip: float = 1.0
    crop_frames: int = 40
    crop_samples: int = 1000

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("need steps >= 0, batch_size >= 1, lr > 0")
        if self.crop_frames < 1 or self.crop_samples < 1:
            raise ValueError("crop sizes must be positive")


def step_rng(seed, step):
    """Independent stream per (seed, step): resuming at step k replays step k exactly."""
    return np.random.default_rng([seed, step])


def optimizer_path(checkpoint_path):
    return Path(str(checkpoint_path) + ".opt")


def save_training_state(params, opt, checkpoint_path, step):
    save_checkpoint(params, checkpoint_path)
    state = opt.state_params()
    state.add("train.step", np.asarray(float(step)))
    save_checkpoint(state, optimizer_path(checkpoint_path))


def restore_training_state(params, opt, checkpoint_path):
    """Load weights and optimizer moments in place; returns the next step index."""
    params.load_state(load_checkpoint(checkpoint_path))
    saved = load_checkpoint(optimizer_path(checkpoint_path))
    opt.load_state_params(saved)
    return int(saved["train.step"].data)


def make_optimizer(params, options):
    return Adam(params, lr=options.lr, clip=options.clip)


class LossLog:
    """Tab-separated rows, one per step; written when ``path`` is set."""

    def __init__(self, columns, path=None, append=False):
        self.columns = columns
        self.rows = []
        self.path = Path(path) if path else None
        if self.path is not None and not append:
            self._write("w", "")

    def _write(self, mode, text):
        try:
            with open(self.path, mode, encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoFailure(f"{self.path}: {exc}") from exc

    def add(self, step, *values):
        row = (step, *(float(v) for v in values))
        self.rows.append(row)
        if self.path is not None:
            self._write("a", "\t".join([str(step), *(f"{v:.6f}" for v in row[1:])]) + "\n")

    def column(self, name):
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])


def feature_stats(mels):
    """Per-bin mean and std over every frame of a list of (frames x bins) arrays."""
    allframes = np.concatenate(mels, axis=0)
    return allframes.mean(axis=0), allframes.std(axis=0) + 1e-3


def set_feature_stats(params, mean, std):
    params.set_value("norm.mean", mean)
    params.set_value("norm.std", std)


def add_feature_stats(params: ParamSet, n):
    params.add("norm.mean", np.zeros(n), trainable=False)
    params.add("norm.std", np.ones(n), trainable=False)
