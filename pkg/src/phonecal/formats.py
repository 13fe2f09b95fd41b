"""On-disk formats.

Matrices (one file per utterance)
    4-byte magic ``FPM1`` (posteriors) or ``FLL1`` (log-likelihoods), then
    uint32 T and uint32 D, then T*D float32, all little-endian, row-major.
    Files ending in ``.csv`` hold the same matrix as comma-separated rows and
    are only accepted below 1 MB.
Alignment
    CSV with header ``utt,phone,start,end,stress``; ``end`` is exclusive and
    ``stress`` may be blank.
pdf map / priors / phone set
    ``pdf_id<TAB>phone_label`` lines; one decimal per line; one label per line.
Trials
    JSON lines ``{"phone": label, "n": int, "stress": int|null, "llk": [...]}``.
Heatmap
    binary PGM (P5), one byte per cell.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import FormatError, PdfMap, PhoneSet
from .pooling import NO_STRESS, PhoneSegment, TrialSet

MAGIC_POSTERIOR = b"FPM1"
MAGIC_LOGLIK = b"FLL1"
BINARY_SUFFIX = {MAGIC_POSTERIOR: ".fpm", MAGIC_LOGLIK: ".fll"}
CSV_LIMIT = 1 << 20
_HEADER = struct.Struct("<4sII")


def write_matrix(path, values, magic: bytes) -> None:
    path = Path(path)
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("matrix must be 2-D")
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in arr:
                w.writerow([np.format_float_positional(v, unique=True, trim="-") for v in row])
        return
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_matrix(path, magic: bytes | None = None) -> np.ndarray:
    """Read a matrix file; returns float32 values as stored."""
    path = Path(path)
    if path.suffix == ".csv":
        size = path.stat().st_size
        if size >= CSV_LIMIT:
            raise FormatError(f"{path}: CSV matrices must be under 1 MB (got {size} bytes)")
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row:
                    continue
                try:
                    rows.append([np.float32(v) for v in row])
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: non-numeric value") from None
                if len(rows[-1]) != len(rows[0]):
                    raise FormatError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(row)}")
        if not rows:
            raise FormatError(f"{path}: empty matrix")
        return np.array(rows, dtype=np.float32)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    got, t, d = _HEADER.unpack_from(data)
    if got not in (MAGIC_POSTERIOR, MAGIC_LOGLIK):
        raise FormatError(f"{path}: bad magic {got!r} at offset 0")
    if magic is not None and got != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {got!r}")
    expected = _HEADER.size + 4 * t * d
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data) - _HEADER.size} bytes, header implies {4 * t * d}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(t, d).astype(np.float32)


def matrix_files(directory) -> dict[str, Path]:
    """utterance id -> matrix file in ``directory`` (.fpm, .fll or .csv)."""
    out: dict[str, Path] = {}
    for p in sorted(Path(directory).iterdir()):
        if p.suffix in (".fpm", ".fll", ".csv"):
            if p.stem in out:
                raise FormatError(f"{directory}: two files for utterance {p.stem!r}")
            out[p.stem] = p
    return out


def read_phones(path) -> PhoneSet:
    labels = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        return PhoneSet(labels)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def write_phones(path, phones: PhoneSet) -> None:
    Path(path).write_text("".join(lab + "\n" for lab in phones.labels))


def read_pdf_map(path, phones: PhoneSet) -> PdfMap:
    entries: dict[int, int] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'pdf_id<TAB>phone_label'")
        try:
            pdf = int(parts[0])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad pdf id {parts[0]!r}") from None
        try:
            entries[pdf] = phones.index(parts[1].strip())
        except KeyError as e:
            raise FormatError(f"{path}:{lineno}: {e.args[0]}") from None
    if sorted(entries) != list(range(len(entries))):
        raise FormatError(f"{path}: pdf ids must cover 0..D-1 exactly once")
    return PdfMap([entries[i] for i in range(len(entries))])


def write_pdf_map(path, pdf_map: PdfMap, phones: PhoneSet) -> None:
    Path(path).write_text("".join(f"{i}\t{phones.labels[f]}\n" for i, f in enumerate(pdf_map.pdf_to_phone)))


def read_priors(path) -> np.ndarray:
    vals = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip():
            try:
                vals.append(float(line))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad prior value {line!r}") from None
    return np.array(vals)


def write_priors(path, values) -> None:
    Path(path).write_text("".join(repr(float(v)) + "\n" for v in values))


ALIGN_FIELDS = ["utt", "phone", "start", "end", "stress"]


def read_alignment(path, phones: PhoneSet) -> list[PhoneSegment]:
    segs = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ALIGN_FIELDS:
            raise FormatError(f"{path}:1: header must be {','.join(ALIGN_FIELDS)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                stress = int(row[4]) if row[4].strip() else None
                segs.append(PhoneSegment(row[0], phones.index(row[1]), int(row[2]), int(row[3]), stress))
            except (KeyError, ValueError) as e:
                msg = e.args[0] if e.args else str(e)
                raise FormatError(f"{path}:{lineno}: {msg}") from None
    return segs


def write_alignment(path, segments: Iterable[PhoneSegment], phones: PhoneSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALIGN_FIELDS)
        for s in segments:
            w.writerow([s.utterance_id, phones.labels[s.phone], s.start_frame, s.end_frame,
                        "" if s.stress is None else s.stress])


def write_trials(path, trials: TrialSet, phones: PhoneSet) -> None:
    if trials.n_classes != phones.N:
        raise ValueError("trial vectors do not match the phone set")
    with open(path, "w") as fh:
        for t in trials:
            fh.write(json.dumps({"phone": phones.labels[t.true_phone], "n": t.duration,
                                 "stress": t.stress, "llk": [float(v) for v in t.llk]}) + "\n")


def read_trials(path, phones: PhoneSet) -> TrialSet:
    labels, llk, durs, stress = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                vec = [float(v) for v in rec["llk"]]
                lab = phones.index(rec["phone"])
                n = int(rec["n"])
                st = rec.get("stress")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise FormatError(f"{path}:{lineno}: bad trial record ({e})") from None
            if len(vec) != phones.N:
                raise FormatError(f"{path}:{lineno}: llk has {len(vec)} entries, phone set has {phones.N}")
            if n < 1:
                raise FormatError(f"{path}:{lineno}: duration must be >= 1")
            labels.append(lab)
            llk.append(vec)
            durs.append(n)
            stress.append(NO_STRESS if st is None else int(st))
    if not labels:
        raise FormatError(f"{path}: no trials")
    try:
        return TrialSet(labels, np.array(llk), durs, stress)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def write_pgm(path, eer: np.ndarray, saturate: float = 0.25) -> None:
    """Grey level 0 at EER 0 up to 255 at ``saturate`` and above; NaN -> 0."""
    vals = np.nan_to_num(np.asarray(eer, dtype=np.float64), nan=0.0)
    img = np.clip(np.rint(vals / saturate * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(x) for x in fields[1:])
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM not supported")
    pos += 1
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def confusion_csv(cm, labels: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["target"] + [labels[g] for g in cm.hypotheses])
    for name, row in zip(cm.row_labels(labels), cm.eer):
        w.writerow([name] + ["" if np.isnan(v) else repr(float(v)) for v in row])
    return buf.getvalue()
