"""SPG1 spectrogram files, annotation CSVs and 16-bit PCM WAV ingestion."""

from __future__ import annotations

import csv
import io
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mel import AudioClip

SPG_MAGIC = b"SPG1"
FRAMES_PER_SECOND = 40


class FormatError(ValueError):
    """Malformed input file; the message names the byte offset or row."""


@dataclass
class Spectrogram:
    values: np.ndarray            # (mel_bins, frames)
    metadata: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return self.values.shape


# ---------------------------------------------------------------- SPG1


def _meta_text(metadata: dict) -> str:
    lines = []
    for k, v in metadata.items():
        k, v = str(k), str(v)
        if "=" in k or "\n" in k or "\n" in v:
            raise ValueError(f"metadata entry {k!r} cannot contain '=' in the key or newlines")
        lines.append(f"{k}={v}")
    return "\n".join(lines)


def spectrogram_bytes(values: np.ndarray, metadata: dict | None = None) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"spectrogram must be 2-D, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("spectrogram contains non-finite values")
    meta = _meta_text(metadata or {}).encode("utf-8")
    return b"".join([
        SPG_MAGIC,
        struct.pack("<II", *values.shape),
        np.ascontiguousarray(values, dtype="<f4").tobytes(),
        struct.pack("<I", len(meta)),
        meta,
    ])


def write_spectrogram(path, values, metadata: dict | None = None) -> None:
    if isinstance(values, Spectrogram):
        values, metadata = values.values, {**values.metadata, **(metadata or {})}
    Path(path).write_bytes(spectrogram_bytes(values, metadata))


def parse_spectrogram(buf: bytes) -> Spectrogram:
    def need(offset, n, what):
        if offset + n > len(buf):
            raise FormatError(f"truncated SPG1 data: {what} needs {n} bytes at byte offset {offset}, "
                              f"file has {len(buf)} bytes")

    need(0, 4, "magic")
    if buf[:4] != SPG_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r} at byte offset 0 (expected {SPG_MAGIC!r})")
    need(4, 8, "dimensions")
    rows, cols = struct.unpack_from("<II", buf, 4)
    n = rows * cols * 4
    need(12, n, "values")
    values = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=12).reshape(rows, cols)
    pos = 12 + n
    need(pos, 4, "metadata length")
    (m,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    need(pos, m, "metadata")
    try:
        text = buf[pos:pos + m].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"metadata at byte offset {pos} is not UTF-8: {exc}") from None
    if pos + m != len(buf):
        raise FormatError(f"unexpected trailing data at byte offset {pos + m}")
    metadata = {}
    for line in text.splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    return Spectrogram(values.astype(np.float32), metadata)


def read_spectrogram(path) -> Spectrogram:
    return parse_spectrogram(Path(path).read_bytes())


# ---------------------------------------------------------------- annotations


@dataclass
class AnnotationSet:
    clip_id: str
    intervals: list = field(default_factory=list)   # [(start_sec, end_sec)], half-open
    labels: list = field(default_factory=list)
    frame_rate: int = FRAMES_PER_SECOND

    def validate(self, min_seconds: float = 1.0) -> None:
        spans = sorted(self.intervals)
        for start, end in spans:
            if end <= start:
                raise ValueError(f"{self.clip_id}: interval [{start}, {end}) is empty")
            if end - start < min_seconds - 1e-9:
                raise ValueError(f"{self.clip_id}: interval [{start}, {end}) shorter than {min_seconds} s")
        for (_, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ValueError(f"{self.clip_id}: overlapping intervals at {s1} s")

    def frame_intervals(self) -> list:
        return [(int(round(s * self.frame_rate)), int(round(e * self.frame_rate))) for s, e in self.intervals]


ANNOTATION_HEADER = ["clip_id", "start_sec", "end_sec", "label"]


def annotations_text(annotations) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ANNOTATION_HEADER)
    for ann in annotations:
        labels = ann.labels or [""] * len(ann.intervals)
        for (s, e), label in zip(ann.intervals, labels):
            w.writerow([ann.clip_id, repr(float(s)), repr(float(e)), label])
    return buf.getvalue()


def write_annotations(path, annotations) -> None:
    Path(path).write_text(annotations_text(annotations), encoding="utf-8")


def parse_annotations(text: str, min_seconds: float = 1.0) -> dict:
    """Parse annotation CSV text into ``{clip_id: AnnotationSet}``.

    Row numbers in errors count the header as row 1.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ANNOTATION_HEADER:
        raise FormatError(f"row 1: expected header {','.join(ANNOTATION_HEADER)}")
    out: dict = {}
    for rowno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise FormatError(f"row {rowno}: expected 4 fields, got {len(row)}")
        clip_id, start, end, label = (c.strip() for c in row)
        if not clip_id:
            raise FormatError(f"row {rowno}: empty clip_id")
        try:
            s, e = float(start), float(end)
        except ValueError:
            raise FormatError(f"row {rowno}: start/end are not numbers ({start!r}, {end!r})") from None
        if not (np.isfinite(s) and np.isfinite(e)) or s < 0:
            raise FormatError(f"row {rowno}: invalid interval [{start}, {end})")
        if e < s:
            raise FormatError(f"row {rowno}: end_sec {e} is before start_sec {s}")
        ann = out.setdefault(clip_id, AnnotationSet(clip_id))
        ann.intervals.append((s, e))
        ann.labels.append(label)
    for ann in out.values():
        try:
            ann.validate(min_seconds)
        except ValueError as exc:
            raise FormatError(str(exc)) from None
    return out


def read_annotations(path, min_seconds: float = 1.0) -> dict:
    return parse_annotations(Path(path).read_text(encoding="utf-8"), min_seconds)


# ---------------------------------------------------------------- WAV


def read_wav(path) -> AudioClip:
    """Mono 16-bit PCM WAV -> samples scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise FormatError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise FormatError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit samples")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(clip.sample_rate))
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------- PGM


def pgm_bytes(values: np.ndarray) -> bytes:
    """8-bit binary PGM (P5) scaled by the map's maximum; low mel bins at the bottom."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D array, got shape {values.shape}")
    top = values.max() if values.size else 0.0
    scaled = values / top if top > 0 else np.zeros_like(values)
    pixels = np.round(np.clip(scaled, 0.0, 1.0) * 255).astype(np.uint8)[::-1]
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(path, values) -> None:
    Path(path).write_bytes(pgm_bytes(values))
