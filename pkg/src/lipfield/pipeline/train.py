"""Training: sync-expert pretraining, depth optimisation and the joint loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import diffcore as dc
from .. import geometry as geo
from ..compose import MouthPlacement, blank_box, blend, hole_augment, paste_mouth
from ..losses import loss_d, loss_m, loss_w, total_loss
from ..sync import (
    WINDOW,
    ExpertParams,
    encode_audio_window,
    encode_image_window,
    expert_margin,
    pretrain_expert,
    sync_loss,
)
from ..synthdata import Corpus
from .config import TrainConfig
from .model import Model

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Raised when a loss turns non-finite; carries the step diagnostics."""

    def __init__(self, step: int, parts: dict):
        self.step = step
        self.parts = parts
        super().__init__(f"non-finite loss at step {step}: {parts}")


@dataclass
class StepLog:
    step: int
    frame: int
    total: float
    mouth: float | None = None
    whole: float | None = None
    depth: float | None = None
    sync: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _val(t) -> float | None:
    return None if t is None else float(t.data)


# -- sync expert -----------------------------------------------------------
def sync_crops(model: Model, corpus: Corpus, indices) -> np.ndarray:
    """O2C-warped frames sampled on the expert's canonical grid, (T, h, w, 3)."""
    return np.stack([model.warp_sync_crop(corpus.frames[i].image, corpus.frames[i].pose) for i in indices])


def pretrain_sync(cfg: TrainConfig, corpus: Corpus, model: Model | None = None):
    """Pretrain and freeze the expert on the training split; report held-out margin."""
    model = model or Model.from_corpus(cfg, corpus)
    tr, te = corpus.train_indices, corpus.test_indices
    ec = cfg.expert
    x_tr, f_tr = sync_crops(model, corpus, tr), corpus.features(tr)
    expert, history = pretrain_expert(
        x_tr, f_tr, epochs=ec.epochs, seed=cfg.seed, use_negatives=ec.use_negatives, lr=ec.lr, batch=ec.batch
    )
    rep = expert_margin(expert, sync_crops(model, corpus, te), corpus.features(te), seed=cfg.seed)
    report = {
        "heldout_margin": rep.margin,
        "heldout_cos_positive": rep.cos_positive,
        "heldout_cos_negative": rep.cos_negative,
        "epoch_losses": history,
    }
    return expert, report


# -- depth -----------------------------------------------------------------
def depth_loss_mask(model: Model) -> np.ndarray:
    """Canonical pixels used by the photometric depth loss: all but the mouth region."""
    h, w = model.scene.image_size
    m = np.ones((h, w), dtype=bool)
    r = model.scene.region
    m[r.y0 : r.y1, r.x0 : r.x1] = False
    return m


def photometric_depth_loss(model: Model, image: np.ndarray, pose: geo.Pose, canonical: np.ndarray, mask=None):
    """Warp an observed image into the canonical view through exp(log-depth) and compare."""
    tu, tv, Z = geo.correspondence_tensor(model.c2o(pose), model.scene.K, model.log_depth)
    h, w = image.shape[:2]
    valid = (Z.data > geo.EPS_Z) & geo.sampling_valid(tu.data, tv.data, h, w)
    if mask is not None:
        valid &= mask
    if not valid.any():
        return None
    warped = geo.backward_warp_tensor(np.asarray(image, dtype=np.float32), tu, tv, valid)
    return loss_d(warped, canonical, valid)


def optimize_depth(model: Model, corpus: Corpus, steps: int, seed: int = 0, indices=None) -> list[float]:
    """Depth-only optimisation of the photometric loss over random training frames."""
    idx = corpus.train_indices if indices is None else np.asarray(indices)
    canon = corpus.canonical.image
    mask = depth_loss_mask(model)
    losses = []
    for s in range(steps):
        rng = np.random.default_rng([seed, 0xD0, s])
        rec = corpus.frames[int(rng.choice(idx))]
        loss = photometric_depth_loss(model, rec.image, rec.pose, canon, mask)
        if loss is None:
            continue
        if not np.isfinite(loss.data):
            raise TrainingAborted(s, {"depth": float(loss.data)})
        model.opt_depth.zero_grad()
        dc.backward(loss)
        model.opt_depth.step()
        losses.append(float(loss.data))
    model.depth_changed()
    return losses


def depth_relative_error(D: np.ndarray, D_true: np.ndarray, mask: np.ndarray) -> float:
    return float(np.mean(np.abs(D[mask] - D_true[mask]) / D_true[mask]))


# -- joint loop ------------------------------------------------------------
class Trainer:
    """Owns a Model and runs the per-frame training step."""

    DEPTH_REFRESH = 25  # steps between recomputing the splatted observed depth

    def __init__(self, cfg: TrainConfig, corpus: Corpus, expert: ExpertParams | None = None, model: Model | None = None):
        self.cfg = cfg
        self.corpus = corpus
        self.model = model or Model.from_corpus(cfg, corpus, expert)
        if expert is not None:
            self.model.expert = expert
        self.weights = cfg.loss_weights
        self.train_idx = corpus.train_indices
        self.feats = corpus.features().astype(np.float32)
        self.canonical = corpus.canonical.image
        self.depth_mask = depth_loss_mask(self.model)
        self.history: list[StepLog] = []

    @property
    def step_count(self) -> int:
        return self.model.iteration

    def _crop(self, box, rng) -> tuple[int, int, int, int]:
        c = self.cfg.blend_crop
        h, w = self.model.scene.image_size
        if not c or c >= min(h, w):
            return 0, 0, w, h
        x0, y0, x1, y1 = box
        lox, hix = max(0, x1 - c), min(x0, w - c)
        loy, hiy = max(0, y1 - c), min(y0, h - c)
        cx = int(rng.integers(lox, hix + 1)) if hix >= lox else max(0, min(x0, w - c))
        cy = int(rng.integers(loy, hiy + 1)) if hiy >= loy else max(0, min(y0, h - c))
        return cx, cy, cx + c, cy + c

    def _sync_window(self, o: int) -> np.ndarray:
        lo, hi = int(self.train_idx[0]), int(self.train_idx[-1])
        s = min(max(o - WINDOW // 2, lo), hi - WINDOW + 1)
        return np.arange(s, s + WINDOW)

    def step(self) -> StepLog:
        cfg, model, w = self.cfg, self.model, self.weights
        it = model.iteration
        rng = np.random.default_rng([cfg.seed, 0x57E9, it])
        o = int(rng.choice(self.train_idx))
        rec = self.corpus.frames[o]
        warm = it < cfg.depth_warmup
        parts: dict[str, dc.Tensor | None] = {"mouth": None, "whole": None, "depth": None, "sync": None}

        pred_frame = None
        if not warm:
            if w.mouth > 0 or w.whole > 0:
                gt_m, valid_m = model.warp_mouth_to_canonical(rec.image, rec.pose)
                pred_m = model.render_mouth(self.feats[o][None], [o], True, rng, )[0]
                if w.mouth > 0 and valid_m.any():
                    parts["mouth"] = loss_m(pred_m, gt_m, valid_m)
                if w.whole > 0:
                    box = rec.mouth_box
                    cx0, cy0, cx1, cy1 = self._crop(box, rng)
                    local = (box[0] - cx0, box[1] - cy0, box[2] - cx0, box[3] - cy0)
                    warped, valid = model.mouth_to_observed(pred_m, rec.pose, box, key=o)
                    frame_crop = rec.image[cy0:cy1, cx0:cx1]
                    pasted = paste_mouth(blank_box(frame_crop, local), warped, MouthPlacement(local), valid)
                    aug, holes = hole_augment(pasted, cfg.hole_probability, rng)
                    out = blend(model.blend, aug, holes)
                    parts["whole"] = loss_w(out, frame_crop)
                    if cfg.depth_loss_variant == "prediction":
                        pred_frame = rec.image.copy()
                        pred_frame[cy0:cy1, cx0:cx1] = out.data
            if w.sync > 0 and model.expert is not None:
                idx = self._sync_window(o)
                gen = model.render_sync(self.feats[idx], idx)
                ei = encode_image_window(model.expert, gen)
                ea = encode_audio_window(model.expert, self.feats[idx])
                parts["sync"] = sync_loss(ei, ea.data, 1.0)
        if w.depth > 0 or warm:
            src = pred_frame if pred_frame is not None else rec.image
            parts["depth"] = photometric_depth_loss(model, src, rec.pose, self.canonical, self.depth_mask)

        if warm:
            terms = [None, None, parts["depth"], None]
            weights = type(w)(mouth=0.0, whole=0.0, depth=1.0, sync=0.0)
        else:
            terms = [parts["mouth"], parts["whole"], parts["depth"], parts["sync"]]
            weights = w
        terms = [t if (t is not None and wt > 0) else None for t, wt in
                 zip(terms, (weights.mouth, weights.whole, weights.depth, weights.sync))]
        entry = StepLog(it, o, float("nan"), *(_val(parts[k]) for k in ("mouth", "whole", "depth", "sync")))
        if all(t is None for t in terms):
            model.iteration += 1
            entry.total = 0.0
            self.history.append(entry)
            return entry
        loss = total_loss(terms, weights)
        entry.total = float(loss.data)
        if not math.isfinite(entry.total):
            raise TrainingAborted(it, entry.as_dict())

        model.opt_field.zero_grad()
        model.opt_depth.zero_grad()
        model.opt_blend.zero_grad()
        model.log_depth.grad = None
        dc.backward(loss)
        if not warm:
            model.opt_field.step()
            model.opt_blend.step()
        if terms[2] is not None:
            model.opt_depth.step()
            if (it + 1) % self.DEPTH_REFRESH == 0:
                model.depth_changed()
        model.iteration += 1
        self.history.append(entry)
        return entry

    def run(self, iterations: int | None = None, callback=None) -> list[StepLog]:
        n = self.cfg.iterations if iterations is None else iterations
        logs = []
        for _ in range(n):
            entry = self.step()
            logs.append(entry)
            if self.cfg.log_every and entry.step % self.cfg.log_every == 0:
                log.info("step %d frame %d total %.4f", entry.step, entry.frame, entry.total)
            if callback is not None:
                callback(self, entry)
        self.model.depth_changed()
        return logs


def train(cfg: TrainConfig, corpus: Corpus, expert: ExpertParams | None = None, iterations=None) -> Model:
    """Train from scratch and return the model (see Trainer for the step)."""
    trainer = Trainer(cfg, corpus, expert)
    trainer.run(iterations)
    return trainer.model
