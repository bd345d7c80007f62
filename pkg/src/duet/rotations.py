"""SO(3) utilities: axis-angle, 6D rotation representation, geodesic
distance, spherical-interpolation resampling, and skeleton forward kinematics.

Conventions (fixed so files and tests are bit-reproducible):
  * Rotation matrices act on column vectors: p' = R p.
  * The 6D representation is column-major: entries [0:3] are the first
    matrix column, entries [3:6] the second.  The third column is recovered
    as the cross product of the orthonormalized first two.
  * Quaternions are scalar-first (w, x, y, z) and only used internally.

All functions are pure and vectorized over leading batch axes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateRotationError, ShapeError

JOINT_COUNT = 24

# 6D inputs whose first (or orthogonalized second) column falls below this
# norm cannot be projected onto SO(3).
DEGENERACY_THRESHOLD = 1e-8

_TRACE_CLAMP_TOL = 1e-12


def _skew(v):
    zeros = np.zeros(v.shape[:-1])
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([
        np.stack([zeros, -z, y], axis=-1),
        np.stack([z, zeros, -x], axis=-1),
        np.stack([-y, x, zeros], axis=-1),
    ], axis=-2)


def axis_angle_to_matrix(v) -> np.ndarray:
    """Rodrigues formula; rotation angle is the vector magnitude.

    Smooth at zero (series expansion below 1e-8 radians), so the zero vector
    maps exactly to the identity.
    """
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1)
    theta2 = theta * theta
    small = theta < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2))
    k = _skew(v)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def matrix_to_axis_angle(rot) -> np.ndarray:
    """Log map, the inverse of :func:`axis_angle_to_matrix` for angles in [0, pi]."""
    rot = np.asarray(rot, dtype=np.float64)
    trace = np.trace(rot, axis1=-2, axis2=-1)
    # antisymmetric part gives axis * 2 sin(theta)
    vee = np.stack([
        rot[..., 2, 1] - rot[..., 1, 2],
        rot[..., 0, 2] - rot[..., 2, 0],
        rot[..., 1, 0] - rot[..., 0, 1],
    ], axis=-1)
    # atan2 keeps full precision at both ends, where the trace alone degrades
    theta = np.arctan2(np.linalg.norm(vee, axis=-1) / 2.0, (trace - 1.0) / 2.0)

    sin_theta = np.sin(theta)
    generic = sin_theta > 1e-6
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(generic, theta / np.where(generic, 2.0 * sin_theta, 1.0), 0.5)
    out = vee * scale[..., None]

    # near pi the antisymmetric part vanishes; recover the axis from the
    # symmetric part R + I = 2(I - cos)^-1 aa^T style diagonal extraction
    near_pi = (~generic) & (trace < 0.0)
    if np.any(near_pi):
        diag = np.stack([rot[..., 0, 0], rot[..., 1, 1], rot[..., 2, 2]], axis=-1)
        axis_sq = np.clip((diag + 1.0) / 2.0, 0.0, None)
        axis = np.sqrt(axis_sq)
        # relative signs from the symmetric off-diagonals, overall sign from
        # the (small but sign-reliable) antisymmetric part
        largest = np.argmax(axis_sq, axis=-1)
        flat_rot = rot.reshape(-1, 3, 3)
        flat_axis = axis.reshape(-1, 3)
        flat_vee = vee.reshape(-1, 3)
        flat_large = largest.reshape(-1)
        for idx in np.nonzero(near_pi.reshape(-1))[0]:
            i = flat_large[idx]
            r = flat_rot[idx]
            ax = flat_axis[idx].copy()
            for j in range(3):
                if j != i and (r[i, j] + r[j, i]) < 0.0:
                    ax[j] = -ax[j]
            if flat_vee[idx][i] < 0.0:
                ax = -ax
            flat_axis[idx] = ax
        axis = flat_axis.reshape(axis.shape)
        out = np.where(near_pi[..., None], axis * theta[..., None], out)
    return out


def to_sixd(rot) -> np.ndarray:
    """First two columns of a rotation matrix, column-major: (..., 6)."""
    rot = np.asarray(rot, dtype=np.float64)
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


def from_sixd(sixd) -> np.ndarray:
    """Project 6 floats onto a rotation matrix by Gram-Schmidt.

    Column one is normalized, column two orthogonalized against it, column
    three set to their cross product; the result satisfies R^T R = I with
    det +1.  Raises :class:`DegenerateRotationError` when the first column
    (or the orthogonalized second) has norm below ``DEGENERACY_THRESHOLD``.
    """
    sixd = np.asarray(sixd, dtype=np.float64)
    if sixd.shape[-1] != 6:
        raise ShapeError(f"6D rotation input must have last axis 6, got {sixd.shape}")
    a = sixd[..., 0:3]
    b = sixd[..., 3:6]
    na = np.linalg.norm(a, axis=-1)
    if np.any(na < DEGENERACY_THRESHOLD):
        where = np.argwhere(na < DEGENERACY_THRESHOLD)
        raise DegenerateRotationError(
            f"6D input has near-zero first column (norm < {DEGENERACY_THRESHOLD}) at index "
            f"{tuple(where[0].tolist())}")
    col1 = a / na[..., None]
    proj = np.sum(col1 * b, axis=-1, keepdims=True)
    ortho = b - proj * col1
    no = np.linalg.norm(ortho, axis=-1)
    if np.any(no < DEGENERACY_THRESHOLD):
        where = np.argwhere(no < DEGENERACY_THRESHOLD)
        raise DegenerateRotationError(
            f"6D input has second column parallel to the first at index "
            f"{tuple(where[0].tolist())}")
    col2 = ortho / no[..., None]
    col3 = np.cross(col1, col2)
    return np.stack([col1, col2, col3], axis=-1)


def geodesic(rot_a, rot_b) -> np.ndarray:
    """Shortest rotation angle between two rotations, in [0, pi].

    The arccos argument is clamped to [-1, 1] with a snap tolerance of
    1e-12: floating-point traces land just past the bounds (or just inside
    them for equal inputs), and snapping makes geodesic(R, R) exactly 0.
    """
    rot_a = np.asarray(rot_a, dtype=np.float64)
    rot_b = np.asarray(rot_b, dtype=np.float64)
    trace = np.einsum("...ij,...ij->...", rot_a, rot_b)
    u = (trace - 1.0) / 2.0
    u = np.where(u > 1.0 - _TRACE_CLAMP_TOL, 1.0, u)
    u = np.where(u < -1.0 + _TRACE_CLAMP_TOL, -1.0, u)
    return np.abs(np.arccos(u))


# ---------------------------------------------------------------------------
# quaternions and slerp resampling


def matrix_to_quaternion(rot) -> np.ndarray:
    """Scalar-first unit quaternion, branch chosen per element for stability."""
    rot = np.asarray(rot, dtype=np.float64)
    flat = rot.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for idx, r in enumerate(flat):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0.0:
            s = np.sqrt(tr + 1.0) * 2.0
            q = np.array([0.25 * s,
                          (r[2, 1] - r[1, 2]) / s,
                          (r[0, 2] - r[2, 0]) / s,
                          (r[1, 0] - r[0, 1]) / s])
        elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            q = np.array([(r[2, 1] - r[1, 2]) / s,
                          0.25 * s,
                          (r[0, 1] + r[1, 0]) / s,
                          (r[0, 2] + r[2, 0]) / s])
        elif r[1, 1] >= r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            q = np.array([(r[0, 2] - r[2, 0]) / s,
                          (r[0, 1] + r[1, 0]) / s,
                          0.25 * s,
                          (r[1, 2] + r[2, 1]) / s])
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            q = np.array([(r[1, 0] - r[0, 1]) / s,
                          (r[0, 2] + r[2, 0]) / s,
                          (r[1, 2] + r[2, 1]) / s,
                          0.25 * s])
        out[idx] = q / np.linalg.norm(q)
    return out.reshape(rot.shape[:-2] + (4,))


def quaternion_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], axis=-1)
    row1 = np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], axis=-1)
    row2 = np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def _slerp(q0, q1, u: float) -> np.ndarray:
    """Slerp between aligned quaternion arrays at parameter u in (0, 1)."""
    dot = np.sum(q0 * q1, axis=-1)
    # hemisphere alignment; exactly antipodal pairs (dot == 0 after the flip
    # test) keep the stored sign of the later frame, i.e. the path runs
    # through the hemisphere of the earlier frame
    flip = dot < 0.0
    q1 = np.where(flip[..., None], -q1, q1)
    dot = np.clip(np.where(flip, -dot, dot), -1.0, 1.0)
    omega = np.arccos(dot)
    small = omega < 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        sin_omega = np.sin(omega)
        w0 = np.where(small, 1.0 - u, np.sin((1.0 - u) * omega) / np.where(small, 1.0, sin_omega))
        w1 = np.where(small, u, np.sin(u * omega) / np.where(small, 1.0, sin_omega))
    out = w0[..., None] * q0 + w1[..., None] * q1
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def slerp_resample(rotations, fps_in: float, fps_out: float) -> np.ndarray:
    """Resample a rotation sequence (N, ..., 3, 3) to a lower frame rate.

    Output timestamps are uniform and span exactly the input interval; the
    spacing is the closest value at or above 1/fps_out that lands the final
    sample on the final input frame, so both endpoints are preserved
    bit-exactly.  Interior samples are the spherical interpolation of their
    bracketing input frames.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    if rotations.shape[0] < 2:
        raise ShapeError("slerp_resample needs a sequence of at least 2 frames")
    if not (fps_in >= fps_out > 0):
        raise ConfigError(f"require fps_in >= fps_out > 0, got {fps_in} -> {fps_out}")
    n = rotations.shape[0]
    m = int(np.floor((n - 1) * fps_out / fps_in)) + 1
    m = max(m, 2)

    quats = matrix_to_quaternion(rotations)
    out = np.empty((m,) + rotations.shape[1:])
    for j in range(m):
        s = j * (n - 1) / (m - 1)
        i = min(int(np.floor(s)), n - 2)
        u = s - i
        if u == 0.0:
            out[j] = rotations[i]
        elif u == 1.0:
            out[j] = rotations[i + 1]
        else:
            out[j] = quaternion_to_matrix(_slerp(quats[i], quats[i + 1], u))
    return out


# ---------------------------------------------------------------------------
# skeleton and forward kinematics


@dataclass(frozen=True)
class Skeleton:
    """24-joint tree: names, parent indices (root parent is -1), rest offsets (m)."""

    names: tuple
    parents: tuple
    offsets: np.ndarray

    def __post_init__(self):
        if len(self.names) != JOINT_COUNT or len(self.parents) != JOINT_COUNT:
            raise ConfigError(f"skeleton must define exactly {JOINT_COUNT} joints")
        if self.offsets.shape != (JOINT_COUNT, 3):
            raise ConfigError(f"offsets must be ({JOINT_COUNT}, 3), got {self.offsets.shape}")
        if self.parents[0] != -1:
            raise ConfigError("joint 0 must be the root (parent -1)")
        for j, parent in enumerate(self.parents[1:], start=1):
            if not (0 <= parent < JOINT_COUNT) or parent == j:
                raise ConfigError(f"joint {j} has invalid parent {parent}")
        # walking to the root must terminate for every joint
        for j in range(1, JOINT_COUNT):
            seen = set()
            node = j
            while node != 0:
                if node in seen:
                    raise ConfigError(f"parent graph has a cycle through joint {j}")
                seen.add(node)
                node = self.parents[node]

    @classmethod
    def from_json(cls, path) -> "Skeleton":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        joints = doc.get("joints")
        if not isinstance(joints, list):
            raise ConfigError(f"skeleton file {path} has no 'joints' list")
        names = tuple(j["name"] for j in joints)
        parents = tuple(int(j["parent"]) for j in joints)
        offsets = np.array([j["offset"] for j in joints], dtype=np.float64)
        return cls(names=names, parents=parents, offsets=offsets)

    @classmethod
    def canonical(cls) -> "Skeleton":
        return cls.from_json(Path(__file__).parent / "assets" / "canonical_skeleton.json")


def forward_kinematics(skeleton: Skeleton, rotations, translation) -> np.ndarray:
    """Global joint positions from local joint rotations and a root translation.

    ``rotations`` is (..., 24, 3, 3) of local rotations in skeleton order,
    ``translation`` is (..., 3).  Joint j sits at
    ``position(parent) + global_rotation(parent) @ offset(j)``; the root sits
    at the translation, and global rotations accumulate down the tree.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)
    if rotations.shape[-3:] != (JOINT_COUNT, 3, 3):
        raise ShapeError(f"rotations must be (..., {JOINT_COUNT}, 3, 3), got {rotations.shape}")

    lead = rotations.shape[:-3]
    globals_ = np.empty(lead + (JOINT_COUNT, 3, 3))
    positions = np.empty(lead + (JOINT_COUNT, 3))
    globals_[..., 0, :, :] = rotations[..., 0, :, :]
    positions[..., 0, :] = translation
    for j in range(1, JOINT_COUNT):
        parent = skeleton.parents[j]
        parent_rot = globals_[..., parent, :, :]
        globals_[..., j, :, :] = parent_rot @ rotations[..., j, :, :]
        positions[..., j, :] = positions[..., parent, :] + np.einsum(
            "...ij,j->...i", parent_rot, skeleton.offsets[j])
    return positions
