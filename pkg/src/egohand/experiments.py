"""Seeded segmentation experiments: threshold sweeps and mask ablations.

Scenes are regenerated deterministically from (params, scene seed), so no
depth maps need to touch disk. Train-mode sweeps redraw the estimator noise
per threshold (each threshold gets its own retrained estimator); infer-mode
sweeps reuse one noise realization across thresholds and damp the mask-
quality sensitivity by ``params.infer_damping`` (a deployed model partially
compensates input perturbations it was not retrained for).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError
from .geometry import HandPose3D, mpjpe_report
from .rangeseg import DepthMap, SegMask, desharpen_mask, normalize_depth, range_mask
from .synth import SynthParams, gen_frame, gen_scene_depth, mask_quality, noisy_pose_oracle
from .sequence import N_CLASSES


@dataclass
class EvalScene:
    left: HandPose3D
    right: HandPose3D
    norm: DepthMap
    gt: SegMask


def make_eval_scenes(params: SynthParams, seed: int, n_scenes: int) -> list[EvalScene]:
    """Deterministic single-frame scenes cycling through all classes."""
    scenes = []
    for i in range(n_scenes):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2, i))))
        left, right, _ = gen_frame(i % N_CLASSES, rng, params)
        pseudo, gt = gen_scene_depth(left, right, params)
        scenes.append(EvalScene(left, right, normalize_depth(pseudo), gt))
    return scenes


def _noise_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(3, *key))))


def _scene_pair(scene: EvalScene, f_bg: float, f_loss: float, params: SynthParams, rng):
    pred_l = noisy_pose_oracle(scene.left, f_bg, params, rng, arm_loss_fraction=f_loss)
    pred_r = noisy_pose_oracle(scene.right, f_bg, params, rng, arm_loss_fraction=f_loss)
    return (pred_l, pred_r), (scene.left, scene.right)


def _report(pred_pairs, gt_pairs):
    return mpjpe_report(pred_pairs, gt_pairs)


def sweep_threshold(
    params: SynthParams,
    t_list,
    mode: str,
    seed: int,
    scenes: list[EvalScene],
) -> list[tuple[float, float, float, float]]:
    """Rows of (t, mpjpe_left, mpjpe_right, mpjpe_both) across thresholds."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if not t_list:
        raise ValueError("threshold list is empty")
    rows = []
    for ti, t in enumerate(t_list):
        if not (0.0 < t < 1.0):
            raise RangeError(f"threshold must lie in (0, 1), got {t}")
        preds, gts = [], []
        for si, scene in enumerate(scenes):
            mask = range_mask(scene.norm, t)
            f_bg, f_loss = mask_quality(mask, scene.gt)
            if mode == "infer":
                f_bg *= params.infer_damping
                f_loss *= params.infer_damping
                rng = _noise_rng(seed, si)
            else:
                rng = _noise_rng(seed, ti, si)
            pred, gt = _scene_pair(scene, f_bg, f_loss, params, rng)
            preds.append(pred)
            gts.append(gt)
        left, right, both = _report(preds, gts)
        rows.append((float(t), left, right, both))
    return rows


def ablation_masking(params: SynthParams, seeds, scenes: list[EvalScene]):
    """Paired per-seed MPJPE(both): range-masked vs unmasked full scene.

    The masked arm uses the band-midpoint threshold; the unmasked arm keeps
    the whole background (clutter fraction 1). Noise draws are paired per
    (seed, scene) so the comparison isolates the sigma difference.
    """
    t_mid = params.band_midpoint
    results = []
    for seed in seeds:
        for with_mask in (True, False):
            preds, gts = [], []
            for si, scene in enumerate(scenes):
                if with_mask:
                    mask = range_mask(scene.norm, t_mid)
                    f_bg, f_loss = mask_quality(mask, scene.gt)
                else:
                    f_bg, f_loss = 1.0, 0.0
                rng = _noise_rng(seed, si)
                pred, gt = _scene_pair(scene, f_bg, f_loss, params, rng)
                preds.append(pred)
                gts.append(gt)
            _, _, both = _report(preds, gts)
            if with_mask:
                masked = both
            else:
                results.append((masked, both))
    return results


def ablation_desharpen(params: SynthParams, radius: int, seeds, scenes: list[EvalScene]):
    """Paired per-seed MPJPE(both): sharp band-midpoint mask vs its blur."""
    t_mid = params.band_midpoint
    results = []
    for seed in seeds:
        sharp_both = blurred_both = None
        for blurred in (False, True):
            preds, gts = [], []
            for si, scene in enumerate(scenes):
                mask = range_mask(scene.norm, t_mid)
                if blurred:
                    mask = desharpen_mask(mask, radius)
                f_bg, f_loss = mask_quality(mask, scene.gt)
                rng = _noise_rng(seed, si)
                pred, gt = _scene_pair(scene, f_bg, f_loss, params, rng)
                preds.append(pred)
                gts.append(gt)
            _, _, both = _report(preds, gts)
            if blurred:
                blurred_both = both
            else:
                sharp_both = both
        results.append((sharp_both, blurred_both))
    return results


def paired_significance(diffs) -> float:
    """Mean / standard-error ratio of paired differences (one-sample z)."""
    d = np.asarray(diffs, dtype=np.float64)
    if len(d) < 2:
        raise ValueError("need at least two paired differences")
    return float(d.mean() / (d.std(ddof=1) / np.sqrt(len(d))))
