"""Dataset manifests: UTF-8, one ``utt_id<TAB>speaker_id<TAB>wav_path<TAB>text`` row per line.

``#`` lines and blank lines are skipped. Relative wav paths resolve against the
manifest's directory.
"""

from dataclasses import dataclass
from pathlib import Path

from ..audio import load_wav
from ..errors import DuplicateUttId, IoFailure, MissingFile, ParseError


@dataclass(frozen=True)
class ManifestRow:
    utt_id: str
    speaker_id: str
    wav_path: Path
    text: str


def parse_manifest(path, check_files=True):
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    rows, seen = [], set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", lineno)
        utt, spk, wav, text = fields
        if not utt or not spk or not wav:
            raise ParseError("empty utt_id, speaker_id or wav_path", lineno)
        if utt in seen:
            raise DuplicateUttId(f"duplicate utt_id {utt!r} at line {lineno}")
        seen.add(utt)
        wav_path = Path(wav)
        if not wav_path.is_absolute():
            wav_path = path.parent / wav_path
        if check_files and not wav_path.exists():
            raise MissingFile(f"line {lineno}: {wav_path} does not exist")
        rows.append(ManifestRow(utt, spk, wav_path, text))
    return rows


def write_manifest(rows, path, relative_to=None):
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    out = []
    for r in rows:
        try:
            wav = Path(r.wav_path).relative_to(base)
        except ValueError:
            wav = Path(r.wav_path)
        out.append(f"{r.utt_id}\t{r.speaker_id}\t{wav.as_posix()}\t{r.text}\n")
    try:
        path.write_text("".join(out), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def load_row_audio(row):
    return load_wav(row.wav_path)


def by_speaker(rows):
    groups = {}
    for row in rows:
        groups.setdefault(row.speaker_id, []).append(row)
    return groups
