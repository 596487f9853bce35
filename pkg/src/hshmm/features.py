"""Frame-level features and the text/binary files that carry them.

Features are MFCCs with first and second order regression deltas. The
binary archive layout is::

    b"AUDF" version(u8)
    repeated: id_len(u16) id(utf-8) n_frames(u32) dim(u32) data(f32[n*dim])

All integers and floats are little-endian.
"""

from __future__ import annotations

import logging
import os
import struct
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, rfft

from .errors import (
    AlignmentError,
    BadMagicError,
    DataError,
    DimensionMismatchError,
    FeatureError,
    TruncatedRecordError,
)

logger = logging.getLogger(__name__)

ARCHIVE_MAGIC = b"AUDF"
ARCHIVE_VERSION = 1


@dataclass
class FeatureMatrix:
    """Features of one utterance, ``n_frames x dim``, stored as float32."""

    utterance_id: str
    frames: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise FeatureError(
                f"{self.utterance_id}: expected a non-empty 2-d frame matrix, "
                f"got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise FeatureError(f"{self.utterance_id}: non-finite feature values")
        if self.frame_shift_ms <= 0:
            raise FeatureError("frame shift must be positive")
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (self.utterance_id == other.utterance_id
                and self.frame_shift_ms == other.frame_shift_ms
                and self.frames.shape == other.frames.shape
                and np.array_equal(self.frames, other.frames))


@dataclass(frozen=True)
class FeatureConfig:
    window_ms: float = 25.0
    shift_ms: float = 10.0
    n_mels: int = 26
    n_ceps: int = 13
    preemphasis: float = 0.97
    low_freq: float = 20.0
    high_freq: float | None = None
    lifter: int = 0
    delta_window: int = 2
    mean_norm: bool = False


def frame_count(n_samples: int, window: int, hop: int) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int,
                   low_freq: float, high_freq: float) -> np.ndarray:
    """Triangular filters on the mel scale, shape ``(n_mels, n_fft // 2 + 1)``."""
    edges = _mel_inv(np.linspace(_mel(low_freq), _mel(high_freq), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fbank = np.zeros((n_mels, bins.size))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (bins - lo) / (mid - lo)
        down = (hi - bins) / (hi - mid)
        fbank[i] = np.maximum(0.0, np.minimum(up, down))
    return fbank


def extract_features(waveform, sample_rate: int,
                     config: FeatureConfig = FeatureConfig(),
                     utterance_id: str = "") -> FeatureMatrix:
    """MFCC + delta + delta-delta features (39 dims with the default config)."""
    x = np.asarray(waveform, dtype=np.float64).ravel()
    if sample_rate < 8000:
        raise FeatureError(f"sample rate {sample_rate} Hz is below 8000 Hz")
    if not np.all(np.isfinite(x)):
        raise FeatureError(f"{utterance_id}: non-finite samples in waveform")
    window = int(round(config.window_ms * sample_rate / 1000.0))
    hop = int(round(config.shift_ms * sample_rate / 1000.0))
    n_frames = frame_count(x.size, window, hop)
    if n_frames < 1:
        raise FeatureError(f"{utterance_id}: utterance too short")

    if config.preemphasis:
        x = np.append(x[:1], x[1:] - config.preemphasis * x[:-1])
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hamming(window)

    n_fft = 1 << (window - 1).bit_length()
    power = np.abs(rfft(frames, n=n_fft, axis=1)) ** 2
    high = config.high_freq or sample_rate / 2.0
    fbank = mel_filterbank(config.n_mels, n_fft, sample_rate, config.low_freq, high)
    logmel = np.log(np.maximum(power @ fbank.T, np.finfo(np.float64).eps))
    ceps = dct(logmel, type=2, axis=1, norm="ortho")[:, :config.n_ceps]
    if config.lifter > 0:
        n = np.arange(config.n_ceps)
        ceps *= 1.0 + (config.lifter / 2.0) * np.sin(np.pi * n / config.lifter)
    if config.mean_norm:
        ceps -= ceps.mean(axis=0)

    static = FeatureMatrix(utterance_id, ceps, frame_shift_ms=config.shift_ms)
    return add_deltas(static, config.delta_window)


def _regression_delta(c: np.ndarray, window: int) -> np.ndarray:
    n = c.shape[0]
    padded = np.concatenate([np.repeat(c[:1], window, axis=0), c,
                             np.repeat(c[-1:], window, axis=0)])
    num = np.zeros_like(c)
    for k in range(1, window + 1):
        num += k * (padded[window + k:window + k + n] - padded[window - k:window - k + n])
    return num / (2.0 * sum(k * k for k in range(1, window + 1)))


def add_deltas(static: FeatureMatrix, window: int = 2) -> FeatureMatrix:
    """Append regression deltas and delta-deltas (edges replicated)."""
    if window < 1:
        raise FeatureError("delta window must be a positive integer")
    c = np.asarray(static.frames, dtype=np.float64)
    if c.shape[0] < 1:
        raise FeatureError("cannot compute deltas of an empty sequence")
    d1 = _regression_delta(c, window)
    d2 = _regression_delta(d1, window)
    return FeatureMatrix(static.utterance_id, np.hstack([c, d1, d2]),
                         frame_shift_ms=static.frame_shift_ms)


# ---------------------------------------------------------------------------
# Binary feature archive.

def write_feature_archive(features, path) -> None:
    """Write a mapping ``utterance_id -> FeatureMatrix`` (or iterable of them)."""
    mats = list(features.values()) if isinstance(features, dict) else list(features)
    if not mats:
        raise ArchiveError("refusing to write an empty feature archive")
    dims = {m.dim for m in mats}
    if len(dims) != 1:
        raise DimensionMismatchError(f"archive needs a uniform dimension, got {sorted(dims)}")
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC + bytes([ARCHIVE_VERSION]))
        for m in mats:
            uid = m.utterance_id.encode("utf-8")
            f.write(struct.pack("<H", len(uid)))
            f.write(uid)
            f.write(struct.pack("<II", m.n_frames, m.dim))
            f.write(np.ascontiguousarray(m.frames, dtype="<f4").tobytes())


def read_feature_archive(path, frame_shift_ms: float = 10.0) -> dict[str, FeatureMatrix]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 5 or data[:4] != ARCHIVE_MAGIC:
        raise BadMagicError(f"{path}: bad magic")
    if data[4] != ARCHIVE_VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {data[4]}")
    out: dict[str, FeatureMatrix] = {}
    pos, dim = 5, None
    while pos < len(data):
        if pos + 2 > len(data):
            raise TruncatedRecordError(f"{path}: truncated record header")
        (id_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + id_len + 8 > len(data):
            raise TruncatedRecordError(f"{path}: truncated record header")
        uid = data[pos:pos + id_len].decode("utf-8")
        pos += id_len
        n_frames, rec_dim = struct.unpack_from("<II", data, pos)
        pos += 8
        if dim is not None and rec_dim != dim:
            raise DimensionMismatchError(
                f"{path}: record {uid!r} has dim {rec_dim}, expected {dim}")
        dim = rec_dim
        nbytes = 4 * n_frames * rec_dim
        if pos + nbytes > len(data):
            raise TruncatedRecordError(f"{path}: truncated record {uid!r}")
        frames = np.frombuffer(data, dtype="<f4", count=n_frames * rec_dim, offset=pos)
        pos += nbytes
        if uid in out:
            raise ArchiveError(f"{path}: duplicate utterance id {uid!r}")
        out[uid] = FeatureMatrix(uid, frames.reshape(n_frames, rec_dim).astype(np.float32),
                                 frame_shift_ms=frame_shift_ms)
    return out


# ---------------------------------------------------------------------------
# Text formats.

def _warn_unknown(ids, known, what):
    if known is None:
        return
    unknown = sorted(set(ids) - set(known))
    if unknown:
        logger.warning("%s: %d unknown utterance id(s), e.g. %s",
                       what, len(unknown), unknown[0])


def read_transcripts(path, known_ids=None) -> dict[str, list[str]]:
    """Parse ``id<TAB>tok tok ...`` lines."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(None, 1)
            out[parts[0]] = parts[1].split() if len(parts) > 1 else []
    _warn_unknown(out, known_ids, path)
    return out


def write_transcripts(transcripts: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for uid, toks in transcripts.items():
            f.write(f"{uid}\t{' '.join(toks)}\n")


def read_alignments(path, known_ids=None) -> dict[str, list[tuple[float, float, str]]]:
    """Parse ``id start_ms end_ms label`` lines into time-ordered segments."""
    raw = defaultdict(list)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise AlignmentError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            uid, start, end, label = parts
            raw[uid].append((float(start), float(end), label))
    out = {uid: check_segments(uid, segs) for uid, segs in raw.items()}
    _warn_unknown(out, known_ids, path)
    return out


def check_segments(uid, segments):
    segs = sorted(segments, key=lambda s: (s[0], s[1]))
    prev_end = None
    for start, end, _ in segs:
        if end <= start:
            raise AlignmentError(f"{uid}: reversed or empty segment ({start}, {end})")
        if prev_end is not None and start < prev_end:
            raise AlignmentError(f"{uid}: overlapping segments at {start} ms")
        prev_end = end
    return segs


def write_alignments(alignments: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for uid, segs in alignments.items():
            for start, end, label in segs:
                f.write(f"{uid} {start:.10g} {end:.10g} {label}\n")


# ---------------------------------------------------------------------------
# Manifest.

@dataclass
class ManifestEntry:
    utterance_id: str
    feature_path: str
    transcript_path: str | None = None


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def ids(self):
        return [e.utterance_id for e in self.entries]


def read_manifest(path) -> CorpusManifest:
    base = os.path.dirname(os.path.abspath(path))
    entries, seen = [], set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split("\t")
            if not parts or not parts[0].strip():
                continue
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: expected id and feature path")
            uid = parts[0].strip()
            if uid in seen:
                raise DataError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
            seen.add(uid)
            feats = os.path.join(base, parts[1].strip())
            trans = None
            if len(parts) > 2 and parts[2].strip():
                trans = os.path.join(base, parts[2].strip())
            for p in (feats, trans):
                if p is not None and not os.path.exists(p):
                    raise DataError(f"{path}:{lineno}: no such file {p}")
            entries.append(ManifestEntry(uid, feats, trans))
    return CorpusManifest(entries)


def write_manifest(manifest: CorpusManifest, path) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest.entries:
            cols = [e.utterance_id, os.path.relpath(e.feature_path, base)]
            if e.transcript_path:
                cols.append(os.path.relpath(e.transcript_path, base))
            f.write("\t".join(cols) + "\n")


def load_manifest_data(manifest: CorpusManifest):
    """Return ``(features, transcripts)`` for every manifest entry, in order."""
    archives, transcript_files = {}, {}
    feats, trans = {}, {}
    dim = None
    for e in manifest.entries:
        if e.feature_path not in archives:
            archives[e.feature_path] = read_feature_archive(e.feature_path)
        try:
            fm = archives[e.feature_path][e.utterance_id]
        except KeyError:
            raise DataError(f"{e.feature_path}: no utterance {e.utterance_id!r}") from None
        if dim is not None and fm.dim != dim:
            raise DimensionMismatchError(f"{e.utterance_id}: dim {fm.dim} != {dim}")
        dim = fm.dim
        feats[e.utterance_id] = fm
        if e.transcript_path:
            if e.transcript_path not in transcript_files:
                transcript_files[e.transcript_path] = read_transcripts(e.transcript_path)
            toks = transcript_files[e.transcript_path].get(e.utterance_id)
            if toks is None:
                raise DataError(f"{e.transcript_path}: no transcript for {e.utterance_id!r}")
            trans[e.utterance_id] = toks
    return feats, trans
