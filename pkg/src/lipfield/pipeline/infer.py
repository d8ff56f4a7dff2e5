"""Inference, pose-controllable synthesis and held-out evaluation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .. import geometry as geo
from ..compose import blend
from ..sync import SyncError, sync_confidence
from ..synthdata import Corpus
from . import metrics
from .model import Model


class InferenceError(ValueError):
    pass


def render_mouths(model: Model, feats: np.ndarray, indices, chunk: int = 16) -> np.ndarray:
    """Eval-mode canonical mouths for a sequence of features, (F, h, w, 3)."""
    feats = np.asarray(feats, dtype=np.float32)
    indices = np.asarray(indices)
    out = [model.render_mouth(feats[s : s + chunk], indices[s : s + chunk]).data for s in range(0, len(feats), chunk)]
    return np.concatenate(out) if out else np.zeros((0, model.scene.region.height, model.scene.region.width, 3))


def infer(model: Model, feats, frames, poses, boxes, indices=None, use_blend: bool = True) -> np.ndarray:
    """Compose one output frame per (feature, target frame, pose, mouth box).

    Only the target frames outside their mouth boxes are used: the box is
    blanked before the generated mouth is pasted in.
    """
    feats = np.asarray(feats)
    n = len(frames)
    if len(feats) != n or len(poses) != n or len(boxes) != n:
        raise InferenceError(f"length mismatch: {len(feats)} features, {n} frames, {len(poses)} poses, {len(boxes)} boxes")
    indices = np.arange(n) if indices is None else np.asarray(indices)
    mouths = render_mouths(model, feats, indices)
    return np.stack([model.compose(frames[k], mouths[k], poses[k], boxes[k], use_blend=use_blend) for k in range(n)])


def infer_corpus(model: Model, corpus: Corpus, indices, feats=None, use_blend: bool = True) -> np.ndarray:
    recs = [corpus.frames[i] for i in indices]
    feats = corpus.features(indices) if feats is None else feats
    return infer(model, feats, [r.image for r in recs], [r.pose for r in recs], [r.mouth_box for r in recs],
                 indices, use_blend)


# -- pose control ------------------------------------------------------------
def pose_distance(a: geo.Pose, b: geo.Pose, scale: float = 1.0) -> float:
    """Rotation angle (radians) plus translation distance / scale."""
    R = a.R.T @ b.R
    ang = np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1))
    return float(ang + np.linalg.norm(a.t - b.t) / scale)


def rotation_deviation_deg(a: geo.Pose, b: geo.Pose) -> float:
    R = a.R.T @ b.R
    return float(np.degrees(np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1))))


@dataclass
class PoseControlResult:
    frames: np.ndarray
    hole_masks: np.ndarray
    source_indices: list[int]
    warnings: list[str] = field(default_factory=list)

    @property
    def hole_fraction(self) -> np.ndarray:
        return self.hole_masks.reshape(len(self.hole_masks), -1).mean(axis=1)


def pose_control(model: Model, feats, new_poses, views, indices=None, use_blend: bool = True) -> PoseControlResult:
    """Synthesise frames at arbitrary poses.

    `views` is a list of observed (index, image, pose, mouth_box) tuples. Each
    output is composed in the view nearest the requested pose, forward-warped
    to that pose through the canonical depth, and its holes are filled by
    the Blend-Net.
    """
    feats = np.asarray(feats)
    if len(feats) != len(new_poses):
        raise InferenceError("need one feature per requested pose")
    if not views:
        raise InferenceError("no observed views to synthesise from")
    indices = np.arange(len(feats)) if indices is None else np.asarray(indices)
    mouths = render_mouths(model, feats, indices)
    scale = float(np.mean([np.linalg.norm(v[2].t) for v in views]))
    T_c = model.scene.T_c
    outs, holes, src, notes = [], [], [], []
    for k, pose in enumerate(new_poses):
        dev = rotation_deviation_deg(T_c, pose)
        if dev > model.cfg.pose_bound_deg:
            msg = f"frame {k}: pose deviates {dev:.1f} deg from the canonical view (bound {model.cfg.pose_bound_deg})"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)
        j = int(np.argmin([pose_distance(v[2], pose, scale) for v in views]))
        vi, img, vpose, box = views[j]
        composed = model.compose(img, mouths[k], vpose, box, use_blend=use_blend)
        D_v = model.observed_depth(vpose)
        T_vn = geo.relative_pose(pose, vpose)
        warped, hole = geo.forward_warp(composed, D_v, T_vn, model.scene.K)
        if use_blend and hole.any():
            filled = blend(model.blend, warped, hole).data
            warped = np.where(hole[..., None], filled, warped)
        outs.append(warped)
        holes.append(hole)
        src.append(int(vi))
    return PoseControlResult(np.stack(outs), np.stack(holes), src, notes)


# -- evaluation --------------------------------------------------------------
def canonical_sync_frames(model: Model, frames, poses) -> np.ndarray:
    """Warp observed frames to the expert's canonical grid."""
    return np.stack([model.warp_sync_crop(f, p) for f, p in zip(frames, poses)])


def shuffled_features(feats: np.ndarray, seed: int) -> np.ndarray:
    return feats[np.random.default_rng([seed, 0x5F]).permutation(len(feats))]


def mean_mouth_baseline(model: Model, corpus: Corpus, indices) -> np.ndarray:
    """Paste the temporal-mean canonical mouth (no blending) into each frame."""
    crops = []
    for i in corpus.train_indices:
        img, valid = model.warp_mouth_to_canonical(corpus.frames[i].image, corpus.frames[i].pose)
        crops.append((img, valid))
    num = sum(np.where(v[..., None], c, 0) for c, v in crops)
    den = sum(v.astype(np.float64) for _, v in crops)[..., None]
    mean = (num / np.maximum(den, 1)).astype(np.float32)
    recs = [corpus.frames[i] for i in indices]
    return np.stack([model.compose(r.image, mean, r.pose, r.mouth_box, use_blend=False) for r in recs])


def evaluate(model: Model, corpus: Corpus, indices=None, seed: int = 0, with_baseline: bool = True) -> dict:
    """Held-out metrics: mouth PSNR/SSIM, LMD and sync confidence (true and shuffled audio)."""
    idx = corpus.test_indices if indices is None else np.asarray(indices)
    recs = [corpus.frames[i] for i in idx]
    feats = corpus.features(idx)
    out = infer_corpus(model, corpus, idx)
    rep = {
        "frames": int(len(idx)),
        "mouth_psnr": float(np.mean([metrics.mouth_psnr(o, r.image, r.mouth_box) for o, r in zip(out, recs)])),
        "mouth_ssim": float(np.mean([metrics.ssim(metrics.mouth_crop(o, r.mouth_box), metrics.mouth_crop(r.image, r.mouth_box))
                                     for o, r in zip(out, recs)])),
        "lmd": float(np.mean([metrics.lmd_aperture(o, r) for o, r in zip(out, recs)])),
        "full_psnr": float(np.mean([metrics.psnr(o, r.image) for o, r in zip(out, recs)])),
    }
    if with_baseline:
        base = mean_mouth_baseline(model, corpus, idx)
        rep["baseline_mouth_psnr"] = float(np.mean([metrics.mouth_psnr(b, r.image, r.mouth_box) for b, r in zip(base, recs)]))
    if model.expert is not None:
        try:
            gen = canonical_sync_frames(model, out, [r.pose for r in recs])
            rep["sync_confidence"] = sync_confidence(model.expert, gen, feats)
            rep["sync_confidence_shuffled"] = sync_confidence(model.expert, gen, shuffled_features(feats, seed))
            gt = canonical_sync_frames(model, [r.image for r in recs], [r.pose for r in recs])
            rep["sync_confidence_ground_truth"] = sync_confidence(model.expert, gt, feats)
        except SyncError as e:
            rep["sync_error"] = str(e)
    return rep
