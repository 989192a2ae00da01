"""EER / DSR / WDSR metrics, score files, a baseline detector and report tables.

Score polarity everywhere: higher means more genuine.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import mel_spectrogram
from .errors import (
    EmptyTrials,
    IoFailure,
    MissingWeight,
    OneClassOnly,
    ParseError,
    ZeroWeightSum,
)
from .numgrad import Adam, ParamSet, Tape, ops

LABELS = ("genuine", "spoof")


@dataclass(frozen=True)
class TrialScore:
    utt_id: str
    label: str
    score: float

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be genuine or spoof, got {self.label!r}")
        if not math.isfinite(self.score):
            raise ValueError(f"score for {self.utt_id} is not finite")


@dataclass(frozen=True)
class DetectorReport:
    detector: str
    eer: float
    eer_threshold: float
    dsr: float


def _split(trials):
    genuine = np.array([t.score for t in trials if t.label == "genuine"], dtype=np.float64)
    spoof = np.array([t.score for t in trials if t.label == "spoof"], dtype=np.float64)
    if genuine.size == 0 or spoof.size == 0:
        raise OneClassOnly(
            f"EER needs both classes (genuine={genuine.size}, spoof={spoof.size})"
        )
    return genuine, spoof


def error_rates(genuine, spoof, thresholds):
    """FAR = share of spoofs scored >= t; FRR = share of genuine scored < t."""
    genuine, spoof = np.sort(genuine), np.sort(spoof)
    far = 1.0 - np.searchsorted(spoof, thresholds, side="left") / spoof.size
    frr = np.searchsorted(genuine, thresholds, side="left") / genuine.size
    return far, frr


def compute_eer(trials):
    """Equal error rate and its threshold.

    Thresholds sweep every distinct score plus one sentinel just above the
    maximum; the FAR/FRR crossing is linearly interpolated between adjacent
    thresholds when they do not meet exactly.
    """
    genuine, spoof = _split(trials)
    scores = np.unique(np.concatenate([genuine, spoof]))
    thresholds = np.append(scores, np.nextafter(scores[-1], np.inf))
    far, frr = error_rates(genuine, spoof, thresholds)
    diff = far - frr  # non-increasing in the threshold; ends at -1
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0 or k == 0:
        return float(far[k]), float(thresholds[k])
    a = diff[k - 1] / (diff[k - 1] - diff[k])
    eer = far[k - 1] + a * (far[k] - far[k - 1])
    threshold = thresholds[k - 1] + a * (thresholds[k] - thresholds[k - 1])
    return float(eer), float(threshold)


def compute_dsr(fake_scores, threshold):
    """Deception success rate: share of generated samples scored >= threshold."""
    scores = np.array([t.score if isinstance(t, TrialScore) else t for t in fake_scores], dtype=np.float64)
    if scores.size == 0:
        raise EmptyTrials("DSR needs at least one generated sample")
    return float(np.mean(scores >= threshold))


def compute_wdsr(dsrs, weights):
    """Weighted mean sum(w_d dsr_d) / sum(w_d) over detectors."""
    dsrs, weights = dict(dsrs), dict(weights)
    missing = sorted(set(dsrs) - set(weights))
    if missing:
        raise MissingWeight(f"no weight for detector(s) {', '.join(missing)}")
    if any(weights[d] < 0 for d in dsrs):
        raise ValueError("weights must be non-negative")
    total = sum(weights[d] for d in dsrs)
    if total <= 0:
        raise ZeroWeightSum("detector weights sum to zero")
    return sum(weights[d] * dsrs[d] for d in dsrs) / total


def write_scores(trials, path):
    lines = [f"{t.utt_id}\t{t.label}\t{t.score!r}\n" for t in trials]
    try:
        Path(path).write_text("".join(lines), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_scores(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    trials = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
        utt, label, raw = fields
        if label not in LABELS:
            raise ParseError(f"label must be genuine or spoof, got {label!r}", lineno)
        try:
            score = float(raw)
        except ValueError:
            raise ParseError(f"score {raw!r} is not a number", lineno) from None
        if not math.isfinite(score):
            raise ParseError(f"score {raw!r} is not finite", lineno)
        trials.append(TrialScore(utt, label, score))
    return trials


# baseline detector: logistic regression on per-bin mel mean and variance


def mel_stat_features(waveform, mel_config):
    mel = mel_spectrogram(waveform, mel_config).data
    return np.concatenate([mel.mean(axis=0), mel.var(axis=0)])


def baseline_detector_train(examples, mel_config, steps=400, lr=0.05, seed=0):
    """Fit the detector on ``examples``: (waveform, label) pairs.

    Returns a ParamSet holding the feature standardizer and the logistic weights.
    """
    labels = [lab for _, lab in examples]
    if "genuine" not in labels or "spoof" not in labels:
        raise OneClassOnly("detector training needs genuine and spoof examples")
    X = np.stack([mel_stat_features(w, mel_config) for w, _ in examples])
    y = np.array([1.0 if lab == "genuine" else 0.0 for lab in labels])
    mu = X.mean(axis=0)
    sd = X.std(axis=0) + 1e-6
    Z = (X - mu) / sd
    rng = np.random.default_rng(seed)
    params = ParamSet("baseline-detector")
    params.add("feat.mean", mu, trainable=False)
    params.add("feat.std", sd, trainable=False)
    w = params.add("w", rng.normal(scale=0.01, size=(Z.shape[1], 1)))
    b = params.add("b", np.zeros(1))
    opt = Adam(params, lr=lr)
    for _ in range(steps):
        with Tape() as tape:
            loss = ops.bce_with_logits(ops.reshape(ops.affine(Z, w, b), (-1,)), y)
        tape.backward(loss)
        opt.step()
    return params


def baseline_detector_score(waveform, params, mel_config):
    """Pre-sigmoid logit; higher = more genuine."""
    z = (mel_stat_features(waveform, mel_config) - params["feat.mean"].data) / params["feat.std"].data
    return float(z @ params["w"].data[:, 0] + params["b"].data[0])


# reports


def format_eer_table(rows):
    """Text table shaped Detector | Dataset | Method | EER(%).

    ``rows`` are (detector, dataset, method, eer_fraction).
    """
    header = ("Detector", "Dataset", "Method", "EER(%)")
    body = [(d, ds, m, f"{100.0 * e:.2f}") for d, ds, m, e in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(4)]
    fmt = " | ".join(f"{{:<{w}}}" for w in widths)
    rule = "-+-".join("-" * w for w in widths)
    return "\n".join(line.rstrip() for line in [fmt.format(*header), rule, *(fmt.format(*r) for r in body)])


def format_summary(reports, wdsr):
    lines = [f"DSR {r.detector} {r.dsr:.4f} (threshold {r.eer_threshold:.6g})" for r in reports]
    lines.append(f"WDSR {wdsr:.4f}")
    return "\n".join(lines)
