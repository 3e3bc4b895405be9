"""Per-joint probability heatmaps: rendering and keypoint decoding.

A heatmap stack is a (21, H, W) float64 array with values in [0, 1]; each
map holds an unnormalized Gaussian with peak 1.0 at its joint.
"""

from __future__ import annotations

import struct

import numpy as np

from . import _kernels
from .errors import FormatError, StructuralError
from .geometry import JOINT_COUNT, HandnessPair, HandPose2D
from .rangeseg import _MASK_TAG, _pack_dmap, _unpack_dmap

ARGMAX = "argmax"
SOFT_ARGMAX = "soft-argmax"


def render_heatmaps(pose: HandPose2D, size: tuple[int, int], sigma: float) -> np.ndarray:
    """Render one peak-1 Gaussian per joint onto a (21, h, w) stack.

    ``size`` is (width, height). Joints outside the image, and every joint
    of a non-present pose, render as all-zero maps.
    """
    w, h = size
    if w < 1 or h < 1:
        raise StructuralError(f"heatmap size must be positive, got {size}")
    if sigma <= 0:
        raise StructuralError(f"sigma must be positive, got {sigma}")
    u = pose.joints[:, 0]
    v = pose.joints[:, 1]
    flags = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    if not pose.present:
        flags = np.zeros(JOINT_COUNT, dtype=bool)
    return _kernels.gaussian_stack(pose.joints, np.ascontiguousarray(flags), h, w, float(sigma))


def decode_heatmaps(stack: np.ndarray, mode: str = ARGMAX) -> HandPose2D:
    """Decode a (21, h, w) stack back to 2D keypoints.

    argmax mode returns the integer pixel of each map's maximum (ties break
    to the lowest row-major index) with the peak value as confidence;
    soft-argmax returns the probability-weighted mean coordinate after
    per-map normalization. All-zero maps decode to (0, 0) with confidence 0.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] != JOINT_COUNT:
        raise StructuralError(f"expected ({JOINT_COUNT}, h, w) stack, got {stack.shape}")
    j, h, w = stack.shape
    flat = stack.reshape(j, h * w)
    peaks = flat.max(axis=1)
    joints = np.zeros((j, 2))
    if mode == ARGMAX:
        idx = flat.argmax(axis=1)
        joints[:, 0] = idx % w
        joints[:, 1] = idx // w
    elif mode == SOFT_ARGMAX:
        sums = flat.sum(axis=1)
        safe = np.where(sums > 0, sums, 1.0)
        p = flat / safe[:, None]
        xs = np.tile(np.arange(w, dtype=np.float64), h)
        ys = np.repeat(np.arange(h, dtype=np.float64), w)
        joints[:, 0] = p @ xs
        joints[:, 1] = p @ ys
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    zero = peaks == 0
    joints[zero] = 0.0
    confidence = np.where(zero, 0.0, peaks)
    return HandPose2D(joints, confidence=confidence, present=bool(peaks.max() > 0))


def gate_handness(h: HandnessPair, threshold: float = 0.5) -> tuple[bool, bool]:
    """A hand counts as present when its probability reaches the threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise StructuralError(f"threshold must lie in [0, 1], got {threshold}")
    return h.left_prob >= threshold, h.right_prob >= threshold


# debugging dump: count prefix, then one .dmap payload per joint map


def save_heatmap_stack(path, stack: np.ndarray) -> None:
    stack = np.asarray(stack, dtype=np.float64)
    parts = [struct.pack("<I", stack.shape[0])]
    for m in stack:
        parts.append(_pack_dmap(m, _MASK_TAG, 0))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_heatmap_stack(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4:
        raise FormatError("truncated heatmap stack file")
    (count,) = struct.unpack_from("<I", buf, 0)
    maps, offset = [], 4
    for _ in range(count):
        values, _, _, offset = _unpack_dmap(buf, offset)
        maps.append(values)
    if offset != len(buf):
        raise FormatError("trailing bytes after heatmap stack payload")
    if not maps:
        raise FormatError("empty heatmap stack")
    return np.stack(maps)
