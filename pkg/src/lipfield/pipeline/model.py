"""The trainable system and the geometric plumbing between its spaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from .. import geometry as geo
from ..compose import BlendParams, MouthPlacement, blank_box, blend, paste_mouth
from ..field import FieldParams, Region, render_batch
from ..sync import ExpertParams
from ..synthdata import Corpus
from .checkpoint import Checkpoint, CheckpointError
from .config import TrainConfig


@dataclass
class SceneInfo:
    K: geo.Intrinsics
    T_c: geo.Pose
    region: Region
    image_size: tuple[int, int]
    n_frames: int
    sync_stride: int = 2

    def to_json(self) -> dict:
        return {
            "K": list(self.K.as_list()),
            "T_c": self.T_c.matrix.tolist(),
            "region": list(self.region.as_tuple()),
            "image_size": list(self.image_size),
            "n_frames": self.n_frames,
            "sync_stride": self.sync_stride,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneInfo":
        return cls(
            geo.Intrinsics(*d["K"]),
            geo.Pose(np.array(d["T_c"], dtype=np.float64)),
            Region(*d["region"]),
            tuple(d["image_size"]),
            int(d["n_frames"]),
            int(d["sync_stride"]),
        )

    def sync_coords(self) -> np.ndarray:
        """(h_s, w_s, 2) canonical pixel coordinates seen by the sync expert."""
        u, v = self.region.grid()
        s = self.sync_stride
        return np.stack([u[::s, ::s], v[::s, ::s]], axis=-1)

    @property
    def sync_size(self) -> tuple[int, int]:
        return self.sync_coords().shape[:2]

    def timestamp(self, index) -> np.ndarray:
        return np.asarray(index, dtype=np.float64) / max(self.n_frames - 1, 1)


def canonical_region(corpus: Corpus, margin: int) -> Region:
    x0, y0, x1, y1 = corpus.canonical.mouth_box
    h, w = corpus.canonical.image.shape[:2]
    return Region(max(x0 - margin, 0), max(y0 - margin, 0), min(x1 + margin, w), min(y1 + margin, h))


def initial_depth(corpus: Corpus) -> geo.DepthMap:
    """Face-masked canonical depth completed by diffusion."""
    return geo.complete_depth(corpus.canonical.face_depth)


class Model:
    """Field, canonical log-depth, Blend-Net and the frozen sync expert."""

    def __init__(self, cfg: TrainConfig, scene: SceneInfo, log_depth: np.ndarray, expert: ExpertParams | None = None):
        self.cfg = cfg
        self.scene = scene
        fc = cfg.field
        self.field = FieldParams(seed=cfg.seed, hidden=fc.hidden, depth=fc.depth, bands=fc.bands, time_bands=fc.time_bands)
        self.log_depth = dc.Tensor(np.asarray(log_depth, dtype=np.float32), requires_grad=True)
        self.blend = BlendParams(seed=cfg.seed, base=cfg.blend_base, use_mask=cfg.blend_use_mask)
        self.expert = expert
        self.opt_field = dc.Adam(self.field.parameters(), lr=cfg.lr_field)
        self.opt_depth = dc.Adam([self.log_depth], lr=cfg.lr_depth)
        self.opt_blend = dc.Adam(self.blend.parameters(), lr=cfg.lr_blend)
        self.iteration = 0
        self._do_cache: dict[int, tuple[int, geo.DepthMap]] = {}
        self._depth_version = 0

    @classmethod
    def from_corpus(cls, cfg: TrainConfig, corpus: Corpus, expert: ExpertParams | None = None) -> "Model":
        scene = SceneInfo(
            corpus.K,
            corpus.canonical.pose,
            canonical_region(corpus, cfg.region_margin),
            corpus.canonical.image.shape[:2],
            len(corpus.frames),
            cfg.expert.stride,
        )
        return cls(cfg, scene, np.log(initial_depth(corpus).values), expert)

    # -- geometry ----------------------------------------------------------
    @property
    def depth(self) -> geo.DepthMap:
        d = np.exp(self.log_depth.data.astype(np.float64))
        return geo.DepthMap(d, np.ones(d.shape, dtype=bool))

    def depth_changed(self) -> None:
        self._depth_version += 1

    def c2o(self, pose: geo.Pose) -> geo.Pose:
        return geo.relative_pose(pose, self.scene.T_c)

    def o2c(self, pose: geo.Pose) -> geo.Pose:
        return geo.relative_pose(self.scene.T_c, pose)

    def canonical_to_observed_coords(self, pose: geo.Pose, u: np.ndarray, v: np.ndarray):
        """Observed-view coordinates of canonical pixels (u, v) under the current depth."""
        d = self.depth.values
        iu = np.clip(np.rint(u).astype(int), 0, d.shape[1] - 1)
        iv = np.clip(np.rint(v).astype(int), 0, d.shape[0] - 1)
        X, Y, Z = geo._transform_grid(self.c2o(pose), self.scene.K, d[iv, iu], u, v)
        front = Z > geo.EPS_Z
        Zs = np.where(front, Z, 1.0)
        K = self.scene.K
        return K.fx * X / Zs + K.cx, K.fy * Y / Zs + K.cy, front

    def observed_depth(self, pose: geo.Pose, key: int | None = None) -> geo.DepthMap:
        """D_o: the canonical depth carried into the observed view (cached per frame)."""
        if key is not None and key in self._do_cache and self._do_cache[key][0] == self._depth_version:
            return self._do_cache[key][1]
        D_o = geo.project_depth(self.depth, self.c2o(pose), self.scene.K)
        if key is not None:
            self._do_cache[key] = (self._depth_version, D_o)
        return D_o

    def observed_to_canonical_coords(self, pose: geo.Pose, box, key: int | None = None):
        """Canonical coordinates of every pixel of an observed box, plus validity."""
        x0, y0, x1, y1 = box
        D_o = self.observed_depth(pose, key)
        v, u = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        X, Y, Z = geo._transform_grid(self.o2c(pose), self.scene.K, D_o.values[y0:y1, x0:x1], u, v)
        front = (Z > geo.EPS_Z) & D_o.valid_mask[y0:y1, x0:x1]
        Zs = np.where(front, Z, 1.0)
        K = self.scene.K
        return K.fx * X / Zs + K.cx, K.fy * Y / Zs + K.cy, front

    def warp_mouth_to_canonical(self, image: np.ndarray, pose: geo.Pose):
        """Sample an observed frame on the canonical mouth region (O2C supervision)."""
        u, v = self.scene.region.grid()
        return self._sample_observed(image, pose, u, v)

    def warp_sync_crop(self, image: np.ndarray, pose: geo.Pose) -> np.ndarray:
        c = self.scene.sync_coords()
        img, _ = self._sample_observed(image, pose, c[..., 0], c[..., 1])
        return img

    def _sample_observed(self, image, pose, u, v):
        tu, tv, front = self.canonical_to_observed_coords(pose, u, v)
        h, w = image.shape[:2]
        valid = front & geo.sampling_valid(tu, tv, h, w)
        out = dc.bilinear_sample(image, np.where(valid, tu, 0), np.where(valid, tv, 0)).data
        return np.where(valid[..., None], out, 0).astype(np.float32), valid

    def warp_frame_to_canonical(self, image: np.ndarray, pose: geo.Pose):
        h, w = self.scene.image_size
        u, v = geo.pixel_grid(h, w)
        return self._sample_observed(image, pose, u, v)

    # -- synthesis ---------------------------------------------------------
    def render_mouth(self, feats, indices, train_mode=False, rng=None) -> dc.Tensor:
        ts = self.scene.timestamp(indices)
        return render_batch(self.field, self.scene.region, feats, ts, train_mode, rng, self.cfg.r_max)

    def render_sync(self, feats, indices) -> dc.Tensor:
        ts = self.scene.timestamp(indices)
        return render_batch(self.field, self.scene.region, feats, ts, False, coords=self.scene.sync_coords())

    def mouth_to_observed(self, mouth: dc.Tensor, pose: geo.Pose, box, key: int | None = None):
        """C2O: resample the canonical mouth image onto an observed box."""
        cu, cv, front = self.observed_to_canonical_coords(pose, box, key)
        r = self.scene.region
        lu, lv = cu - r.x0, cv - r.y0
        valid = front & geo.sampling_valid(lu, lv, r.height, r.width)
        m = mouth if isinstance(mouth, dc.Tensor) else dc.Tensor(np.asarray(mouth, dtype=np.float32))
        out = dc.bilinear_sample(m, np.where(valid, lu, 0), np.where(valid, lv, 0))
        return out, valid

    def paste(self, frame: np.ndarray, mouth, pose: geo.Pose, box, key: int | None = None):
        """Blank the box, then paste the C2O-warped mouth into it."""
        warped, valid = self.mouth_to_observed(mouth, pose, box, key)
        base = blank_box(frame, box)
        return paste_mouth(base, warped, MouthPlacement(tuple(box)), valid)

    def compose(self, frame: np.ndarray, mouth, pose: geo.Pose, box, key: int | None = None, use_blend=True):
        pasted = self.paste(frame, mouth, pose, box, key)
        if not use_blend:
            return pasted.data if isinstance(pasted, dc.Tensor) else pasted
        return blend(self.blend, pasted).data

    # -- serialisation -----------------------------------------------------
    def to_checkpoint(self) -> Checkpoint:
        ck = Checkpoint(digest=self.cfg.digest(), iteration=self.iteration)
        ck.arrays["field"] = self.field.state_dict()
        ck.arrays["log_depth"] = {"log_depth": self.log_depth.data.copy()}
        ck.arrays["blend"] = self.blend.state_dict()
        ck.blobs["scene"] = self.scene.to_json()
        if self.expert is not None:
            ck.arrays["expert"] = self.expert.all_arrays()
            ck.blobs["expert_config"] = {"image_size": list(self.expert.image_size), "window": self.expert.window,
                                         "feature_dim": self.expert.feature_dim}
        for name, opt in (("field", self.opt_field), ("depth", self.opt_depth), ("blend", self.opt_blend)):
            st = opt.state
            table = {"step": np.array([st.step], dtype=np.float32)}
            for i, (m, v) in enumerate(zip(st.m, st.v)):
                table[f"m{i:03d}"] = m
                table[f"v{i:03d}"] = v
            ck.arrays[f"opt_{name}"] = table
        ck.blobs["config"] = self.cfg.to_dict()
        return ck

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "Model":
        if "config" not in ck.blobs:
            raise CheckpointError("checkpoint lacks its config")
        cfg = TrainConfig.from_dict(ck.blobs["config"])
        if cfg.digest() != ck.digest:
            raise CheckpointError("config digest does not match checkpoint header")
        expert = None
        if "expert" in ck.arrays:
            ec = ck.blobs["expert_config"]
            expert = ExpertParams(image_size=tuple(ec["image_size"]), window=ec["window"], feature_dim=ec["feature_dim"])
            expert.load_arrays(ck.arrays["expert"])
            expert.freeze()
        if "scene" not in ck.blobs:
            raise CheckpointError("checkpoint lacks its scene description")
        scene = SceneInfo.from_json(ck.blobs["scene"])
        model = cls(cfg, scene, ck.section("log_depth")["log_depth"], expert)
        model.field.load_state_dict(ck.section("field"))
        model.blend.load_state_dict(ck.section("blend"))
        for name, opt in (("field", model.opt_field), ("depth", model.opt_depth), ("blend", model.opt_blend)):
            table = ck.section(f"opt_{name}")
            opt.state.step = int(table["step"][0])
            n = (len(table) - 1) // 2
            opt.state.m = [table[f"m{i:03d}"].copy() for i in range(n)]
            opt.state.v = [table[f"v{i:03d}"].copy() for i in range(n)]
        model.iteration = ck.iteration
        return model
