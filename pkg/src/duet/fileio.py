"""Binary sequence files, dataset manifests, and weight checkpoints.

``.mdseq`` layout (all integers little-endian, payload float64 row-major):

    offset  size  field
    0       4     magic b"MDSQ"
    4       4     format version (currently 1)
    8       4     modality: 0 matrix, 1 music, 2 dance
    12      4     frame count T (rows)
    16      4     channels (columns)
    20      4     frames per second (0 for plain matrices)
    24      ...   T * channels float64 values, row-major

Checkpoint layout shares the header discipline (magic b"MDWT", version),
then a JSON metadata block and named float64 tensors:

    magic b"MDWT" | version u32 | tensor count u32 | metadata length u32
    metadata JSON (utf-8) | repeated per tensor:
        name length u16 | name utf-8 | ndim u32 | dims u32 * ndim | data f64

Both formats round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import (
    DANCE_CHANNELS,
    MUSIC_CHANNELS,
    MUSIC_COMPACT_CHANNELS,
    DanceSequence,
    MusicSequence,
    PairedDataset,
    PairedSample,
)
from .errors import (
    BadMagicError,
    BadVersionError,
    ChannelCountError,
    DataError,
    TruncatedPayloadError,
)

MDSEQ_MAGIC = b"MDSQ"
MDSEQ_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

MODALITY_MATRIX = 0
MODALITY_MUSIC = 1
MODALITY_DANCE = 2

CHECKPOINT_MAGIC = b"MDWT"
CHECKPOINT_VERSION = 1


def _write_mdseq(path, modality: int, frames: np.ndarray, fps: int):
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    header = _HEADER.pack(MDSEQ_MAGIC, MDSEQ_VERSION, modality,
                          frames.shape[0], frames.shape[1], int(fps))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.astype("<f8").tobytes())


def _read_mdseq(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than the 24-byte header")
    magic, version, modality, t, channels, fps = _HEADER.unpack_from(raw)
    if magic != MDSEQ_MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r} is not {MDSEQ_MAGIC!r}")
    if version != MDSEQ_VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + t * channels * 8
    if len(raw) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(raw) - _HEADER.size} bytes, header promises "
            f"{expected - _HEADER.size}")
    frames = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(t, channels).copy()
    return modality, frames, fps


def save_sequence(seq, path):
    """Write a MusicSequence or DanceSequence as .mdseq (lossless)."""
    if isinstance(seq, MusicSequence):
        _write_mdseq(path, MODALITY_MUSIC, seq.frames, seq.fps)
    elif isinstance(seq, DanceSequence):
        _write_mdseq(path, MODALITY_DANCE, seq.frames, seq.fps)
    else:
        raise DataError(f"cannot save object of type {type(seq).__name__}")


def load_sequence(path, modality: str):
    """Load .mdseq as ``modality`` ("music" or "dance"); save/load is identity."""
    mod, frames, fps = _read_mdseq(path)
    if modality == "music":
        if mod != MODALITY_MUSIC or frames.shape[1] not in (MUSIC_CHANNELS, MUSIC_COMPACT_CHANNELS):
            raise ChannelCountError(
                f"{path}: expected a music file ({MUSIC_CHANNELS} or "
                f"{MUSIC_COMPACT_CHANNELS} channels), found modality {mod} with "
                f"{frames.shape[1]} channels")
        return MusicSequence(frames, fps=fps)
    if modality == "dance":
        if mod != MODALITY_DANCE or frames.shape[1] != DANCE_CHANNELS:
            raise ChannelCountError(
                f"{path}: expected a dance file ({DANCE_CHANNELS} channels), found "
                f"modality {mod} with {frames.shape[1]} channels")
        return DanceSequence(frames, fps=fps)
    raise DataError(f"unknown modality {modality!r}")


def save_matrix(matrix: np.ndarray, path):
    """Write a plain 2-D float64 matrix (e.g. an embedding batch)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DataError(f"save_matrix needs a 2-D array, got shape {matrix.shape}")
    _write_mdseq(path, MODALITY_MATRIX, matrix, 0)


def load_matrix(path) -> np.ndarray:
    mod, frames, _ = _read_mdseq(path)
    if mod != MODALITY_MATRIX:
        raise ChannelCountError(f"{path}: expected a plain matrix file, found modality {mod}")
    return frames


# ---------------------------------------------------------------------------
# dataset manifests


def save_manifest(dataset: PairedDataset, directory) -> Path:
    """Write every pair as .mdseq plus a manifest.json listing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(dataset):
        music_name = f"pair{i:04d}_music.mdseq"
        dance_name = f"pair{i:04d}_dance.mdseq"
        save_sequence(sample.music, directory / music_name)
        save_sequence(sample.dance, directory / dance_name)
        entries.append({"music": music_name, "dance": dance_name,
                        "genre": sample.genre, "split": sample.split})
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"pairs": entries}, indent=2))
    return manifest


def load_manifest(path) -> PairedDataset:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    pairs = doc.get("pairs")
    if not isinstance(pairs, list) or not pairs:
        raise DataError(f"manifest {path} has no 'pairs' list")
    base = path.parent
    samples = []
    for entry in pairs:
        try:
            music = load_sequence(base / entry["music"], "music")
            dance = load_sequence(base / entry["dance"], "dance")
            samples.append(PairedSample(
                music=music, dance=dance,
                genre=entry.get("genre", "unknown"),
                split=entry.get("split", "train")))
        except KeyError as exc:
            raise DataError(f"manifest entry missing field {exc}") from exc
    return PairedDataset(samples)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, tensors: dict, meta: dict):
    """Write named float64 arrays plus a JSON metadata block."""
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                             len(tensors), len(meta_bytes)))
        fh.write(meta_bytes)
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    head = struct.Struct("<4sIII")
    if len(raw) < head.size:
        raise TruncatedPayloadError(f"{path}: shorter than the checkpoint header")
    magic, version, count, meta_len = head.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r} is not {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise BadVersionError(f"{path}: unsupported checkpoint version {version}")
    offset = head.size
    try:
        meta = json.loads(raw[offset:offset + meta_len].decode("utf-8"))
        offset += meta_len
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            end = offset + size * 8
            if end > len(raw):
                raise TruncatedPayloadError(f"{path}: tensor {name!r} payload truncated")
            tensors[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
            offset = end
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TruncatedPayloadError(f"{path}: corrupt checkpoint ({exc})") from exc
    return tensors, meta
