import json

import numpy as np
import pytest

from multivox.audio import load_wav, mel_spectrogram
from multivox.errors import ConfigInvalid, DuplicateUttId, EmptyText, InsufficientSpeakers, MissingFile, ParseError
from multivox.pipeline.config import RunConfig, load_config, parse_config
from multivox.pipeline.manifest import ManifestRow, by_speaker, parse_manifest, write_manifest
from multivox.pipeline.synth import load_models, synthesize
from multivox.pipeline.toy import generate_toy_corpus

from conftest import OVERFIT_ROWS, run_cli


# manifests


def _wav_dir(tmp_path, names=("a", "b", "c")):
    for n in names:
        (tmp_path / f"{n}.wav").write_bytes(b"")
    return tmp_path


def test_manifest_three_rows(tmp_path):
    _wav_dir(tmp_path)
    (tmp_path / "m.tsv").write_text("u1\ts1\ta.wav\tone\nu2\ts1\tb.wav\ttwo\nu3\ts2\tc.wav\tthree\n")
    rows = parse_manifest(tmp_path / "m.tsv")
    assert [r.utt_id for r in rows] == ["u1", "u2", "u3"]
    assert rows[0].wav_path == tmp_path / "a.wav"


def test_manifest_comments_and_blanks(tmp_path):
    _wav_dir(tmp_path)
    (tmp_path / "m.tsv").write_text("# header\n\nu1\ts1\ta.wav\tone\n   \n# done\n")
    assert len(parse_manifest(tmp_path / "m.tsv")) == 1


def test_manifest_duplicate(tmp_path):
    _wav_dir(tmp_path)
    (tmp_path / "m.tsv").write_text("u1\ts1\ta.wav\tx\nu1\ts1\tb.wav\ty\n")
    with pytest.raises(DuplicateUttId, match="u1"):
        parse_manifest(tmp_path / "m.tsv")


def test_manifest_bad_line_and_missing_file(tmp_path):
    _wav_dir(tmp_path)
    (tmp_path / "m.tsv").write_text("u1\ts1\ta.wav\tx\nu2\ts1\n")
    with pytest.raises(ParseError) as info:
        parse_manifest(tmp_path / "m.tsv")
    assert info.value.line == 2
    (tmp_path / "n.tsv").write_text("u1\ts1\tnothere.wav\tx\n")
    with pytest.raises(MissingFile):
        parse_manifest(tmp_path / "n.tsv")


def test_manifest_round_trip(tmp_path):
    _wav_dir(tmp_path)
    rows = [ManifestRow("u1", "s1", tmp_path / "a.wav", "hello there"), ManifestRow("u2", "s2", tmp_path / "b.wav", "")]
    write_manifest(rows, tmp_path / "m.tsv")
    assert parse_manifest(tmp_path / "m.tsv") == rows


# toy corpus


def test_toy_counts(toy_dir, toy_rows):
    assert len(toy_rows) == 80
    assert len(list((toy_dir / "wavs").glob("*.wav"))) == 80
    assert sorted(by_speaker(toy_rows)) == ["spk0", "spk1", "spk2", "spk3"]


def test_toy_bit_identical(tmp_path, toy_dir, toy_rows):
    generate_toy_corpus(tmp_path)
    assert (tmp_path / "manifest.tsv").read_bytes() == (toy_dir / "manifest.tsv").read_bytes()
    for row in toy_rows:
        assert (tmp_path / "wavs" / row.wav_path.name).read_bytes() == row.wav_path.read_bytes()


def test_toy_speakers_have_distinct_peaks(toy_rows):
    peaks = {}
    for spk, rows in by_speaker(toy_rows).items():
        x = load_wav(rows[0].wav_path).samples
        spectrum = np.abs(np.fft.rfft(x * np.hanning(len(x))))
        peaks[spk] = round(float(np.argmax(spectrum)) * 16000 / len(x))
    assert len(set(peaks.values())) == len(peaks)


def test_toy_needs_two_speakers(tmp_path):
    with pytest.raises(InsufficientSpeakers):
        generate_toy_corpus(tmp_path, n_speakers=1)


# config


def test_config_round_trip(tmp_path):
    cfg = parse_config("synth.reduction = 3\ntrain_vocoder.lr = 0.002\naugment.speed_factors = 0.8,1.2\n")
    assert cfg.synth.reduction == 3 and cfg.augment.speed_factors == (0.8, 1.2)
    cfg.dump(tmp_path / "c.txt")
    again = load_config(tmp_path / "c.txt")
    assert again == cfg
    assert again.dumps() == cfg.dumps()


def test_config_default_round_trip():
    assert parse_config(RunConfig().dumps()) == RunConfig()


@pytest.mark.parametrize("text", [
    "synth.nope = 1",
    "bogus.key = 1",
    "synth.reduction = two",
    "synth.reduction = 2\nsynth.reduction = 3",
    "synth.n_mels = 40",
    "just words",
    "synth.stop_threshold = 1.5",
])
def test_config_rejections(text):
    with pytest.raises(ConfigInvalid):
        parse_config(text)


def test_derived_dims_follow_sources():
    cfg = parse_config("mel.n_mels = 40\nencoder.embed_dim = 16\nmel.hop_length = 160\n")
    assert cfg.synth_config.n_mels == 40 and cfg.synth_config.speaker_dim == 16
    assert cfg.vocoder_config.hop_length == 160 and cfg.encoder_config.n_mels == 40


# cli


def test_cli_eer_on_separated_scores(tmp_path):
    (tmp_path / "s.tsv").write_text("a\tgenuine\t2\nb\tgenuine\t3\nc\tspoof\t0\nd\tspoof\t1\n")
    code, out, _, _ = run_cli("--workdir", tmp_path, "evaluate", "--scores", "s.tsv")
    assert code == 0
    assert out.splitlines()[0] == "EER 0.0000"


def test_cli_unknown_subcommand():
    code, _, err, _ = run_cli("frobnicate")
    assert code == 2
    assert "usage" in err


def test_cli_missing_encoder(tmp_path, toy_dir):
    code, _, err, _ = run_cli("--workdir", tmp_path, "train-synth", "--manifest", toy_dir / "manifest.tsv")
    assert code == 1
    assert err.startswith("error: CheckpointIncompatible:")
    assert len(err.strip().splitlines()) == 1


def test_cli_bad_config(tmp_path):
    (tmp_path / "bad.cfg").write_text("synth.wings = 2\n")
    code, _, err, _ = run_cli("--workdir", tmp_path, "--config", "bad.cfg", "evaluate", "--scores", "x")
    assert code == 1 and err.startswith("error: ConfigInvalid:")


def test_cli_report(tmp_path):
    (tmp_path / "a.tsv").write_text("a\tgenuine\t2\nb\tgenuine\t3\nc\tspoof\t0\nd\tspoof\t2.5\n")
    (tmp_path / "b.tsv").write_text("a\tgenuine\t1\nb\tgenuine\t3\nc\tspoof\t2\nd\tspoof\t4\n")
    code, out, _, _ = run_cli("--workdir", tmp_path, "report", "--row", "det1,toy,m,a.tsv",
                              "--row", "det2,toy,m,b.tsv", "--weight", "det1=3", "--weight", "det2=1")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split("|")[0].strip() == "Detector"
    assert lines[-1].startswith("WDSR ")
    code, _, _, _ = run_cli("--workdir", tmp_path, "report", "--row", "det1,toy,m,a.tsv", "--weight", "det1")
    assert code == 2


def test_cli_augment(tmp_path, toy_dir, toy_rows):
    (tmp_path / "a.cfg").write_text(f"augment.noise_list = {toy_dir / 'noise.lst'}\n"
                                    f"augment.rir_list = {toy_dir / 'rir.lst'}\n"
                                    "augment.p_noise = 1.0\naugment.p_reverb = 0.0\naugment.p_speed = 0.0\n")
    args = ("--workdir", tmp_path, "--config", "a.cfg", "augment", "--in", toy_rows[0].wav_path, "--seed", "4")
    code, out, _, _ = run_cli(*args, "--out", "x.wav")
    assert code == 0 and "noise" in out
    run_cli(*args, "--out", "y.wav")
    assert (tmp_path / "x.wav").read_bytes() == (tmp_path / "y.wav").read_bytes()


# end-to-end (shared session run)


def test_e2e_commands_succeed(e2e):
    for name, (code, _, err, _) in e2e.calls.items():
        assert code == 0, f"{name}: {err}"


def test_e2e_checkpoint_side_files(e2e):
    for name in ("encoder", "synth", "vocoder"):
        ckpt = e2e.workdir / "ckpt" / f"{name}.ckpt"
        assert ckpt.exists()
        assert load_config(ckpt.with_suffix(".config.txt")) == load_config(e2e.workdir / "run.cfg")
        assert ckpt.with_suffix(".log.tsv").read_text().strip()


def test_e2e_length_arithmetic(e2e):
    hop = RunConfig().mel.hop_length
    for row, out in e2e.synthesized:
        record = json.loads((out.parent / (out.name + ".json")).read_text())
        assert record["n_tokens"] == len(row.text) + 1
        assert record["mel_frames"] == 2 * record["decoder_steps"]
        assert record["n_samples"] == record["mel_frames"] * hop == len(load_wav(out))


def test_e2e_overfit_mel_error(e2e):
    mel_config = RunConfig().mel
    for row, out in e2e.synthesized:
        target = mel_spectrogram(load_wav(row.wav_path), mel_config).data
        got = mel_spectrogram(load_wav(out), mel_config).data
        n = min(len(target), len(got))
        assert np.mean(np.abs(target[:n] - got[:n])) <= 1.5, row.utt_id


def test_e2e_report_file(e2e):
    text = (e2e.workdir / "report.txt").read_text()
    assert text.splitlines()[0].replace(" ", "") == "Detector|Dataset|Method|EER(%)"
    assert "WDSR" in text
    assert e2e.calls["evaluate"][1].strip() == text.strip()


def test_synthesize_api(e2e):
    ckpt = e2e.workdir / "ckpt"
    cfg = load_config(e2e.workdir / "run.cfg")
    models = load_models(cfg, ckpt / "encoder.ckpt", ckpt / "synth.ckpt", ckpt / "vocoder.ckpt")
    row = e2e.rows[0]
    with pytest.raises(EmptyText):
        synthesize("  ", [load_wav(row.wav_path)], models)
    wav, mel, record = synthesize(row.text, [load_wav(row.wav_path)], models, max_steps=3)
    assert record.decoder_steps <= 3 and mel.shape[0] == 2 * record.decoder_steps
    assert len(wav) == mel.shape[0] * cfg.mel.hop_length


def test_overfit_rows_single_speaker(e2e):
    assert {r.speaker_id for r in e2e.rows[:OVERFIT_ROWS]} == {"spk0"}
