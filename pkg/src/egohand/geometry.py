"""Camera model, hand pose containers, 2.5D->3D lifting, and MPJPE.

Units are millimetres for camera space and pixels for image space. All
arrays are float64. A hand pose always has exactly 21 joints in the
canonical order: wrist first, then four joints per finger (base to tip),
thumb, index, middle, ring, pinky.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DataConsistencyError,
    DegenerateDepthError,
    EmptyDatasetError,
    StructuralError,
)

JOINT_COUNT = 21

# parent joint index for each joint; -1 marks the wrist root
JOINT_PARENTS = (-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19)

FINGER_NAMES = ("thumb", "index", "middle", "ring", "pinky")


def _as_joints(values, cols: int) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.shape != (JOINT_COUNT, cols):
        raise StructuralError(
            f"expected {JOINT_COUNT}x{cols} joint array, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise StructuralError("joint coordinates must be finite")
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise StructuralError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise StructuralError("principal point must be finite")


@dataclass
class HandPose2D:
    """21 image-space joints (u, v) px with per-joint confidence in [0, 1]."""

    joints: np.ndarray
    confidence: np.ndarray = None
    present: bool = True

    def __post_init__(self):
        self.joints = _as_joints(self.joints, 2)
        if self.confidence is None:
            self.confidence = np.ones(JOINT_COUNT)
        self.confidence = np.ascontiguousarray(self.confidence, dtype=np.float64)
        if self.confidence.shape != (JOINT_COUNT,):
            raise StructuralError(f"confidence must have shape ({JOINT_COUNT},)")
        if np.any(self.confidence < 0) or np.any(self.confidence > 1):
            raise StructuralError("confidences must lie in [0, 1]")


@dataclass
class HandPose25D:
    """21 joints as (u px, v px, z mm) prior to camera-space lifting."""

    joints: np.ndarray
    present: bool = True

    def __post_init__(self):
        self.joints = _as_joints(self.joints, 3)


@dataclass
class HandPose3D:
    """21 camera-space joints (X, Y, Z) in millimetres."""

    joints: np.ndarray
    present: bool = True

    def __post_init__(self):
        self.joints = _as_joints(self.joints, 3)


@dataclass(frozen=True)
class HandnessPair:
    """Per-hand presence probabilities."""

    left_prob: float
    right_prob: float

    def __post_init__(self):
        for name, p in (("left_prob", self.left_prob), ("right_prob", self.right_prob)):
            if not (0.0 <= p <= 1.0):
                raise StructuralError(f"{name} must lie in [0, 1], got {p}")


def absent_pose3d() -> HandPose3D:
    return HandPose3D(np.zeros((JOINT_COUNT, 3)), present=False)


def lift_to_camera(pose: HandPose25D, k: CameraIntrinsics) -> HandPose3D:
    """Lift (u, v, z) to camera space: X=(u-cx)z/fx, Y=(v-cy)z/fy, Z=z."""
    z = pose.joints[:, 2]
    bad = np.nonzero(z <= 0)[0]
    if bad.size:
        raise DegenerateDepthError(int(bad[0]), float(z[bad[0]]))
    out = np.empty_like(pose.joints)
    out[:, 0] = (pose.joints[:, 0] - k.cx) * z / k.fx
    out[:, 1] = (pose.joints[:, 1] - k.cy) * z / k.fy
    out[:, 2] = z
    return HandPose3D(out, present=pose.present)


def project_to_image(pose: HandPose3D, k: CameraIntrinsics) -> HandPose25D:
    """Inverse of lift_to_camera: u = fx*X/Z + cx, v = fy*Y/Z + cy, z = Z."""
    z = pose.joints[:, 2]
    bad = np.nonzero(z <= 0)[0]
    if bad.size:
        raise DegenerateDepthError(int(bad[0]), float(z[bad[0]]))
    out = np.empty_like(pose.joints)
    out[:, 0] = k.fx * pose.joints[:, 0] / z + k.cx
    out[:, 1] = k.fy * pose.joints[:, 1] / z + k.cy
    out[:, 2] = z
    return HandPose25D(out, present=pose.present)


def mpjpe(pred: HandPose3D, gt: HandPose3D) -> float:
    """Mean Euclidean distance over the 21 joints, in millimetres."""
    if pred.joints.shape != gt.joints.shape:
        raise StructuralError("pose joint counts differ")
    return float(np.linalg.norm(pred.joints - gt.joints, axis=1).mean())


def mpjpe_report(preds, gts) -> tuple[float, float, float]:
    """Per-hand MPJPE means over present hands plus their hand-weighted mean.

    ``preds`` and ``gts`` are equal-length lists of (left, right) HandPose3D
    pairs; presence flags must agree pairwise. Returns (left mm, right mm,
    both mm) with both = (left + right) / 2.
    """
    if len(preds) != len(gts):
        raise StructuralError(f"got {len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise EmptyDatasetError("cannot report MPJPE over an empty dataset")
    sums = [0.0, 0.0]
    counts = [0, 0]
    for i, (pred_pair, gt_pair) in enumerate(zip(preds, gts)):
        for side in (0, 1):
            p, g = pred_pair[side], gt_pair[side]
            if p.present != g.present:
                raise DataConsistencyError(
                    f"pair {i}: presence flag mismatch on {'left' if side == 0 else 'right'} hand"
                )
            if p.present:
                sums[side] += mpjpe(p, g)
                counts[side] += 1
    for side, name in ((0, "left"), (1, "right")):
        if counts[side] == 0:
            raise EmptyDatasetError(f"no present {name} hands in the dataset")
    left = sums[0] / counts[0]
    right = sums[1] / counts[1]
    return left, right, (left + right) / 2.0


def rotate_points_2d(points, angle: float, center=(0.0, 0.0)) -> np.ndarray:
    """Planar rotation of (N, 2) points about ``center`` by ``angle`` rad."""
    pts = np.asarray(points, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    ctr = np.asarray(center, dtype=np.float64)
    d = pts - ctr
    out = np.empty_like(d)
    out[..., 0] = c * d[..., 0] - s * d[..., 1]
    out[..., 1] = s * d[..., 0] + c * d[..., 1]
    return out + ctr


def rotate_pose_2d(joints, angle: float, center=(0.0, 0.0)) -> np.ndarray:
    """Rotate a joint list in the image plane; preserves pairwise distances."""
    return rotate_points_2d(joints, angle, center)
