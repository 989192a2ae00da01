import contextlib
import io
import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from multivox.audio import MelConfig, Waveform
from multivox.pipeline.cli import main
from multivox.pipeline.manifest import parse_manifest
from multivox.pipeline.toy import generate_toy_corpus
from multivox.speaker import SpeakerEncoderConfig, train_speaker_encoder
from multivox.training import TrainOptions

ACCEPTANCE = {}


def record_acceptance(number, name, passed, detail=""):
    ACCEPTANCE[number] = (name, bool(passed), detail)


def pytest_collection_modifyitems(items):
    # anything touching the shared training run is slow
    for item in items:
        if "e2e" in getattr(item, "fixturenames", ()):
            item.add_marker(pytest.mark.slow)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d}. {name}: {detail}")


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    generate_toy_corpus(out)
    return out


@pytest.fixture(scope="session")
def toy_rows(toy_dir):
    return parse_manifest(toy_dir / "manifest.tsv")


@pytest.fixture(scope="session")
def mel_config():
    return MelConfig()


@pytest.fixture(scope="session")
def small_encoder(toy_rows, mel_config):
    """A quickly trained small speaker encoder shared by the synthesizer tests."""
    config = SpeakerEncoderConfig(lstm_hidden=32, fc1_dim=64, embed_dim=32)
    return train_speaker_encoder(toy_rows, config, TrainOptions(steps=100, lr=3e-3, crop_frames=20), mel_config)


def sine(freq, n, sample_rate=16000, amp=0.5):
    return Waveform(amp * np.sin(2 * np.pi * freq * np.arange(n) / sample_rate), sample_rate)


def run_cli(*argv):
    """Run the CLI in-process; returns (exit code, stdout, stderr, seconds)."""
    out, err = io.StringIO(), io.StringIO()
    start = time.perf_counter()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            code = main([str(a) for a in argv])
        except SystemExit as exc:
            code = exc.code
    return code, out.getvalue(), err.getvalue(), time.perf_counter() - start


E2E_CONFIG = """\
run.checkpoint_dir = ckpt
augment.noise_list = toy/noise.lst
augment.rir_list = toy/rir.lst
synth.max_decoder_steps = 60
"""

# the first five toy rows all belong to spk0; synthesizer and vocoder are overfit on them
OVERFIT_ROWS = 5


@dataclass
class EndToEnd:
    workdir: object
    rows: list
    calls: dict = field(default_factory=dict)
    synthesized: list = field(default_factory=list)

    def run(self, name, *argv):
        result = run_cli("--workdir", self.workdir, "--config", "run.cfg", *argv)
        self.calls[name] = result
        return result


@pytest.fixture(scope="session")
def e2e(tmp_path_factory):
    """The full CLI chain on the toy corpus, shared by the pipeline and acceptance tests."""
    work = tmp_path_factory.mktemp("e2e")
    (work / "run.cfg").write_text(E2E_CONFIG)
    run = EndToEnd(work, [])
    run.run("toy-data", "toy-data", "--out", "toy")
    run.rows = parse_manifest(work / "toy" / "manifest.tsv")
    manifest = "toy/manifest.tsv"
    run.run("train-encoder", "train-encoder", "--manifest", manifest)
    run.run("train-synth", "train-synth", "--manifest", manifest, "--limit", OVERFIT_ROWS)
    run.run("train-vocoder", "train-vocoder", "--manifest", manifest, "--limit", OVERFIT_ROWS)
    for row in run.rows[:OVERFIT_ROWS]:
        out = work / "out" / f"{row.utt_id}.wav"
        run.run(f"synthesize:{row.utt_id}", "synthesize", "--text", row.text, "--reference", row.wav_path,
                "--out", out)
        run.synthesized.append((row, out))
    fakes = [str(out) for _, out in run.synthesized]
    run.run("evaluate", "evaluate", "--manifest", manifest, "--fake", *fakes,
            "--scores-out", "scores.tsv", "--report-out", "report.txt")
    return run
