"""Sequence data model and synthetic paired-data generation.

Frame layouts (channel indices, float64 row-major):

  music, full (53 channels):   [0..20) MFCC, [20..40) MFCC delta,
                               [40..52) chroma, [52] beat flag
  music, compact (13 channels): [0..12) chroma, [12] beat flag
                               (generator output: MFCC is input-only)
  dance (147 channels):        [0..3) root translation in meters, then 24
                               blocks of 6 values, one 6D rotation per joint

The compact music layout is exactly the tail of the full layout, so a
compact sequence expands to full by prepending 40 zero channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rotations as rt
from .errors import DataError, ShapeError
from .rng import substream

MUSIC_CHANNELS = 53
MUSIC_COMPACT_CHANNELS = 13
DANCE_CHANNELS = 147
MFCC = slice(0, 20)
MFCC_DELTA = slice(20, 40)
CHROMA = slice(40, 52)
BEAT = 52

CHORD_ROOTS = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
MAJOR_TRIAD = (0, 4, 7)
MINOR_TRIAD = (0, 3, 7)


@dataclass(frozen=True)
class ChordSeed:
    """A chord root (pitch class 0..11, C=0) and quality (major/minor)."""

    root: int
    quality: str

    def __post_init__(self):
        if not (0 <= int(self.root) < 12):
            raise DataError(f"chord root must be a pitch class 0..11, got {self.root}")
        if self.quality not in ("major", "minor"):
            raise DataError(f"chord quality must be 'major' or 'minor', got {self.quality!r}")

    @classmethod
    def from_name(cls, name: str, quality: str) -> "ChordSeed":
        if name not in CHORD_ROOTS:
            raise DataError(f"unknown chord root {name!r}")
        return cls(root=CHORD_ROOTS.index(name), quality=quality)

    @property
    def name(self) -> str:
        return CHORD_ROOTS[self.root]

    @classmethod
    def random(cls, rng: np.random.Generator) -> "ChordSeed":
        return cls(root=int(rng.integers(0, 12)), quality=("major", "minor")[int(rng.integers(0, 2))])


def chord_to_chroma(seed: ChordSeed) -> np.ndarray:
    """Indicator 12-vector of the triad, rotated to the chord root."""
    offsets = MAJOR_TRIAD if seed.quality == "major" else MINOR_TRIAD
    out = np.zeros(12)
    for off in offsets:
        out[(seed.root + off) % 12] = 1.0
    return out


@dataclass
class MusicSequence:
    """T x 53 (full) or T x 13 (compact) frame matrix plus frame rate."""

    frames: np.ndarray
    fps: int = 25
    chord: ChordSeed | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] not in (MUSIC_CHANNELS, MUSIC_COMPACT_CHANNELS):
            raise ShapeError(
                f"music frames must be (T, {MUSIC_CHANNELS}) or (T, {MUSIC_COMPACT_CHANNELS}), "
                f"got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise DataError("music sequence needs at least one frame")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def compact(self) -> bool:
        return self.frames.shape[1] == MUSIC_COMPACT_CHANNELS

    def chroma(self) -> np.ndarray:
        return self.frames[:, 0:12] if self.compact else self.frames[:, CHROMA]

    def beats(self) -> np.ndarray:
        return self.frames[:, 12] if self.compact else self.frames[:, BEAT]

    def compact_frames(self) -> np.ndarray:
        """(T, 13) chroma+beat view of the frames."""
        if self.compact:
            return self.frames
        return np.concatenate([self.frames[:, CHROMA], self.frames[:, BEAT:BEAT + 1]], axis=1)

    def full_frames(self) -> np.ndarray:
        """(T, 53) frames; compact sequences get zero MFCC channels."""
        if not self.compact:
            return self.frames
        out = np.zeros((self.length, MUSIC_CHANNELS))
        out[:, CHROMA] = self.frames[:, 0:12]
        out[:, BEAT] = self.frames[:, 12]
        return out

    def validate(self):
        """Strict dataset-ingestion checks (generated output may violate them)."""
        chroma = self.chroma()
        beats = self.beats()
        if np.any((chroma < 0.0) | (chroma > 1.0)):
            raise DataError("chroma channels must lie in [0, 1]")
        if not np.all(np.isin(beats, (0.0, 1.0))):
            raise DataError("beat channel must be 0 or 1")
        return self


@dataclass
class DanceSequence:
    """T x 147 frame matrix: root translation plus 24 6D joint rotations."""

    frames: np.ndarray
    fps: int = 25

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != DANCE_CHANNELS:
            raise ShapeError(f"dance frames must be (T, {DANCE_CHANNELS}), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise DataError("dance sequence needs at least one frame")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def translation(self) -> np.ndarray:
        return self.frames[:, 0:3]

    def joint_sixd(self) -> np.ndarray:
        """(T, 24, 6) view of the per-joint rotation blocks."""
        return self.frames[:, 3:].reshape(self.length, rt.JOINT_COUNT, 6)

    def rotations(self) -> np.ndarray:
        """(T, 24, 3, 3); raises DegenerateRotationError on invalid blocks."""
        return rt.from_sixd(self.joint_sixd())

    def validate(self):
        self.rotations()
        return self


@dataclass(frozen=True)
class PairedSample:
    music: MusicSequence
    dance: DanceSequence
    genre: str = "unknown"
    split: str = "train"

    def __post_init__(self):
        if self.music.length != self.dance.length:
            raise DataError(
                f"paired sequences must have equal frame counts, got "
                f"{self.music.length} vs {self.dance.length}")
        if self.music.fps != self.dance.fps:
            raise DataError("paired sequences must share one frame rate")


@dataclass
class PairedDataset:
    samples: list = field(default_factory=list)

    def split(self, name: str) -> "PairedDataset":
        return PairedDataset([s for s in self.samples if s.split == name])

    def genres(self):
        return sorted({s.genre for s in self.samples})

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


# ---------------------------------------------------------------------------
# synthetic paired data
#
# The synthesized motion is driven by a per-frame angular speed profile with
# engineered strict minima, so the ground-truth beat alignment of each pair
# is known by construction.


@dataclass(frozen=True)
class GenreTemplate:
    beat_period: int              # frames between beats (>= 12 so off-beat
                                  # minima sit > 5 frames from every beat)
    progression: tuple            # (root, quality) chord cycle
    axis: tuple                   # root rotation axis
    translation: tuple            # constant root position
    pose_scale: float             # static joint pose spread, radians

    def __post_init__(self):
        if self.beat_period < 12:
            raise DataError("beat_period must be >= 12 frames")


GENRES = {
    "waltz": GenreTemplate(
        beat_period=15,
        progression=((0, "major"), (7, "major"), (9, "minor"), (5, "major")),
        axis=(0.0, 0.0, 1.0),
        translation=(0.0, 0.95, 0.0),
        pose_scale=0.15,
    ),
    "tango": GenreTemplate(
        beat_period=12,
        progression=((9, "minor"), (2, "minor"), (4, "major"), (9, "minor")),
        axis=(0.0, 1.0, 0.0),
        translation=(0.1, 0.9, 0.0),
        pose_scale=0.25,
    ),
    "house": GenreTemplate(
        beat_period=13,
        progression=((5, "major"), (5, "major"), (10, "major"), (0, "major")),
        axis=(1.0, 0.0, 0.0),
        translation=(0.0, 1.0, 0.1),
        pose_scale=0.35,
    ),
    "ballad": GenreTemplate(
        beat_period=18,
        progression=((4, "minor"), (0, "major"), (7, "major"), (4, "minor")),
        axis=(0.0, 0.7071067811865476, 0.7071067811865476),
        translation=(-0.1, 0.9, 0.0),
        pose_scale=0.1,
    ),
}

_EDGE_MARGIN = 4      # keep engineered minima away from sequence boundaries
_BUMP_HALF_WIDTH = 3  # triangular dip half-width in frames
_BASE_SPEED = 0.30    # rad/frame between dips
_DIP_DEPTH = 0.26     # speed reduction at a dip peak


def _smooth_noise(rng, length, channels, rho=0.93, scale=1.0):
    out = np.zeros((length, channels))
    state = rng.normal(0.0, 1.0, channels)
    for t in range(length):
        state = rho * state + np.sqrt(1.0 - rho * rho) * rng.normal(0.0, 1.0, channels)
        out[t] = state
    return scale * out


def synth_pair(seed: int, length: int, genre: str = "waltz",
               beat_coincidence: float = 1.0) -> tuple:
    """Deterministically synthesize one paired (music, dance) sequence.

    The music carries a periodic beat pattern and the genre's chord
    progression; the dance rotates the skeleton root with an angular speed
    that dips to a strict local minimum either exactly on a music beat or
    half a period away from every beat.  ``beat_coincidence`` is the
    fraction of kinematic minima placed on beats, so the pair's beat
    alignment is known by construction.
    """
    if length < 2:
        raise DataError("synth_pair needs length >= 2")
    if genre not in GENRES:
        raise DataError(f"unknown genre {genre!r}; choose from {sorted(GENRES)}")
    if not (0.0 <= beat_coincidence <= 1.0):
        raise DataError("beat_coincidence must lie in [0, 1]")
    template = GENRES[genre]
    rng = substream(seed, f"synth/{genre}")

    # --- music ---
    frames = np.zeros((length, MUSIC_CHANNELS))
    period = template.beat_period
    phase = int(rng.integers(0, period))
    beat_frames = np.arange(phase, length, period)
    frames[beat_frames, BEAT] = 1.0

    progression = template.progression
    beats_per_chord = 2
    chord_idx = 0
    root, quality = progression[0]
    current = chord_to_chroma(ChordSeed(root, quality))
    beats_seen = 0
    beat_set = set(int(b) for b in beat_frames)
    for t in range(length):
        if t in beat_set:
            if beats_seen and beats_seen % beats_per_chord == 0:
                chord_idx = (chord_idx + 1) % len(progression)
                root, quality = progression[chord_idx]
                current = chord_to_chroma(ChordSeed(root, quality))
            beats_seen += 1
        frames[t, CHROMA] = current

    mfcc = _smooth_noise(rng, length, 20)
    frames[:, MFCC] = mfcc
    frames[1:, MFCC_DELTA] = np.diff(mfcc, axis=0)
    music = MusicSequence(frames, chord=ChordSeed(progression[0][0], progression[0][1]))

    # --- dance ---
    # candidate minima: one per beat period, either on the beat or at the
    # half-period offset (distance >= 6 frames from both neighbors)
    candidates = [int(b) for b in beat_frames if _EDGE_MARGIN <= b < length - _EDGE_MARGIN]
    n_match = int(round(beat_coincidence * len(candidates)))
    order = rng.permutation(len(candidates))
    dip_frames = []
    for rank, idx in enumerate(order):
        beat = candidates[idx]
        if rank < n_match:
            dip_frames.append(beat)
        else:
            shifted = beat + period // 2
            if shifted >= length - _EDGE_MARGIN:
                shifted = beat - (period - period // 2)
            if shifted >= _EDGE_MARGIN:
                dip_frames.append(shifted)
    dip_frames = sorted(set(dip_frames))

    speed = np.full(length, _BASE_SPEED)
    for center in dip_frames:
        lo = max(center - _BUMP_HALF_WIDTH, 0)
        hi = min(center + _BUMP_HALF_WIDTH, length - 1)
        for t in range(lo, hi + 1):
            bump = 1.0 - abs(t - center) / (_BUMP_HALF_WIDTH + 1.0)
            speed[t] = min(speed[t], _BASE_SPEED - _DIP_DEPTH * bump)

    axis = np.asarray(template.axis) / np.linalg.norm(template.axis)
    theta = np.concatenate([[0.0], np.cumsum(speed[1:])])
    root_rots = rt.axis_angle_to_matrix(axis[None, :] * theta[:, None])

    pose_rng = substream(seed, f"synth/{genre}/pose")
    static = pose_rng.uniform(-template.pose_scale, template.pose_scale, (rt.JOINT_COUNT - 1, 3))
    static_rots = rt.axis_angle_to_matrix(static)

    dance_frames = np.zeros((length, DANCE_CHANNELS))
    dance_frames[:, 0:3] = np.asarray(template.translation)
    sixd = np.zeros((length, rt.JOINT_COUNT, 6))
    sixd[:, 0, :] = rt.to_sixd(root_rots)
    sixd[:, 1:, :] = rt.to_sixd(static_rots)[None, :, :]
    dance_frames[:, 3:] = sixd.reshape(length, -1)
    dance = DanceSequence(dance_frames)

    return music, dance


def synth_dataset(seed: int, train_pairs: int, test_pairs: int, length: int,
                  genres=None, beat_coincidence: float = 1.0) -> PairedDataset:
    """A deterministic dataset of synthetic pairs, round-robin over genres."""
    names = sorted(GENRES) if genres is None else list(genres)
    samples = []
    for i in range(train_pairs + test_pairs):
        genre = names[i % len(names)]
        music, dance = synth_pair(seed + i, length, genre, beat_coincidence)
        split = "train" if i < train_pairs else "test"
        samples.append(PairedSample(music=music, dance=dance, genre=genre, split=split))
    return PairedDataset(samples)
