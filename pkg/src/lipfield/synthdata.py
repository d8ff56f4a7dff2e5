"""Procedural talking-head corpus with exact geometry.

A textured ellipsoid head is ray traced under a smooth rigid trajectory.
A mouth patch on the front of the head opens and closes with a synthetic
speech envelope; the speech features are filterbank energies of a waveform
driven by the same envelope. Everything is a deterministic function of the
scene config and seed, so any frame can be re-rendered bit-exactly from its
stored pose and openness.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .geometry import DepthMap, Intrinsics, Pose

SCHEMA_VERSION = 1
DEPTH_SCALE = 1000.0  # stored uint16 = round(depth * DEPTH_SCALE); 0 marks no depth
FEATURE_DIM = 64
AUDIO_RATE = 16000


class SceneError(ValueError):
    pass


@dataclass
class SceneConfig:
    height: int = 128
    width: int = 128
    focal_scale: float = 1.25  # focal length in pixels = focal_scale * width
    semi_axes: tuple[float, float, float] = (0.75, 1.0, 0.8)
    head_distance: float = 4.5
    texture_seed: int = 7
    rotation_amplitude_deg: tuple[float, float, float] = (7.0, 5.0, 3.0)  # yaw, pitch, roll
    translation_amplitude: tuple[float, float, float] = (0.1, 0.08, 0.15)
    n_frames: int = 750
    fps: float = 25.0
    train_fraction: float = 0.9
    face_mask_radius: float = 0.6
    mouth_center_y: float = 0.45
    mouth_half_width: float = 0.3
    aperture_half_width: float = 0.24
    lip_thickness: float = 0.07
    seam_height: float = 0.012
    max_aperture: float = 0.13
    edge_softness: float = 0.025
    background: tuple[float, float, float] = (0.22, 0.24, 0.27)

    def __post_init__(self):
        self.semi_axes = tuple(float(a) for a in self.semi_axes)
        self.rotation_amplitude_deg = tuple(float(a) for a in self.rotation_amplitude_deg)
        self.translation_amplitude = tuple(float(a) for a in self.translation_amplitude)
        self.background = tuple(float(a) for a in self.background)
        if self.height <= 0 or self.width <= 0 or self.n_frames <= 0:
            raise SceneError("image size and clip length must be positive")
        if not 0 < self.train_fraction < 1:
            raise SceneError("train fraction must lie in (0, 1)")
        if np.linalg.norm(np.radians(self.rotation_amplitude_deg)) > np.radians(10.0) + 1e-9:
            raise SceneError("rotation amplitude exceeds 10 degrees")
        if max(np.abs(self.translation_amplitude)) > 0.05 * self.head_distance + 1e-9:
            raise SceneError("translation amplitude exceeds 5% of the head distance")

    @property
    def intrinsics(self) -> Intrinsics:
        f = self.focal_scale * self.width
        return Intrinsics(f, f, (self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items() if k in known})

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


# -- speech ----------------------------------------------------------------
@dataclass(frozen=True)
class _SpeechParams:
    env_freq: np.ndarray
    env_amp: np.ndarray
    env_phase: np.ndarray
    tone_freq: np.ndarray
    tone_amp: np.ndarray
    tone_phase: np.ndarray
    tone_power: np.ndarray
    norm: float


def _speech_params(seed: int) -> _SpeechParams:
    rng = np.random.default_rng([seed, 0x5EEC])
    n = int(rng.integers(4, 9))
    env_freq = rng.uniform(1.5, 5.0, n)
    env_amp = rng.uniform(0.5, 1.0, n)
    env_phase = rng.uniform(0, 2 * np.pi, n)
    k = 5
    tone_freq = rng.uniform(180.0, 3500.0, k)
    tone_amp = rng.uniform(0.3, 1.0, k)
    tone_phase = rng.uniform(0, 2 * np.pi, k)
    tone_power = rng.integers(1, 3, k).astype(np.float64)
    # normaliser: peak of the rectified envelope over a long reference span
    ref = np.arange(0, 120.0, 1.0 / 200.0)
    m = np.sin(2 * np.pi * env_freq[None] * ref[:, None] + env_phase[None]) @ env_amp / env_amp.sum()
    norm = float(np.quantile(np.maximum(m, 0), 0.97))
    return _SpeechParams(env_freq, env_amp, env_phase, tone_freq, tone_amp, tone_phase, tone_power, norm)


def _envelope(tau: np.ndarray, sp_: _SpeechParams, amplitude: float) -> np.ndarray:
    m = np.sin(2 * np.pi * sp_.env_freq * tau[..., None] + sp_.env_phase) @ sp_.env_amp / sp_.env_amp.sum()
    return amplitude * np.maximum(m, 0) / sp_.norm


def _filterbank(n_fft: int, rate: int, n_bands: int = FEATURE_DIM, lo: float = 80.0, hi: float = 4000.0) -> np.ndarray:
    mel = lambda f: 2595 * np.log10(1 + f / 700.0)  # noqa: E731
    inv = lambda m: 700 * (10 ** (m / 2595.0) - 1)  # noqa: E731
    edges = inv(np.linspace(mel(lo), mel(hi), n_bands + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / rate)
    fb = np.zeros((n_bands, len(freqs)))
    for i in range(n_bands):
        a, b, c = edges[i], edges[i + 1], edges[i + 2]
        fb[i] = np.clip(np.minimum((freqs - a) / (b - a), (c - freqs) / (c - b)), 0, None)
    return fb


def speech_signal(t, seed: int, amplitude: float = 1.0, window: float = 0.04) -> tuple[np.ndarray, np.ndarray]:
    """Speech feature vector(s) and mouth openness at time(s) t (seconds).

    Returns (features, openness) with shapes (..., 64) and (...). Openness is
    the rectified envelope box-averaged over `window`, in [0, 1].
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise SceneError("time must be non-negative")
    sp_ = _speech_params(seed)
    n = int(round(window * AUDIO_RATE))
    offs = (np.arange(n) - (n - 1) / 2.0) / AUDIO_RATE
    tau = t[..., None] + offs
    env = _envelope(tau, sp_, amplitude)
    openness = np.clip(env.mean(axis=-1), 0.0, 1.0)
    tones = np.sin(2 * np.pi * sp_.tone_freq * tau[..., None] + sp_.tone_phase)
    wave = np.sum(sp_.tone_amp * env[..., None] ** sp_.tone_power * tones, axis=-1)
    spec = np.abs(np.fft.rfft(wave * np.hanning(n), axis=-1)) ** 2
    energies = spec @ _filterbank(n, AUDIO_RATE).T
    feats = np.log1p(energies / (n * 0.5)).astype(np.float32)
    return feats, openness


# -- trajectory ------------------------------------------------------------
def euler_to_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp_ = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp_], [0, sp_, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return Rz @ Rx @ Ry


def pose_from_params(params, cfg: SceneConfig) -> Pose:
    yaw, pitch, roll, tx, ty, tz = params
    return Pose.from_rt(euler_to_matrix(yaw, pitch, roll), [tx, ty, cfg.head_distance + tz])


def trajectory_params(cfg: SceneConfig, seed: int) -> np.ndarray:
    """(n_frames, 6) yaw/pitch/roll (radians) and translation offsets."""
    rng = np.random.default_rng([seed, 0x7A1])
    tau = np.arange(cfg.n_frames) / cfg.fps
    amps = np.concatenate([np.radians(cfg.rotation_amplitude_deg), cfg.translation_amplitude])
    out = np.zeros((cfg.n_frames, 6))
    for j in range(6):
        g = rng.uniform(0.05, 0.3, 2)
        ph = rng.uniform(0, 2 * np.pi, 2)
        out[:, j] = amps[j] * (0.6 * np.sin(2 * np.pi * g[0] * tau + ph[0]) + 0.4 * np.sin(2 * np.pi * g[1] * tau + ph[1]))
    return out


# -- rendering -------------------------------------------------------------
def _smoothstep(edge0, edge1, x):
    t = np.clip((x - edge0) / (edge1 - edge0), 0.0, 1.0)
    return t * t * (3 - 2 * t)


@dataclass(frozen=True)
class _Texture:
    freqs: np.ndarray
    phases: np.ndarray
    weights: np.ndarray


def _texture(seed: int) -> _Texture:
    rng = np.random.default_rng([seed, 0x7E7])
    k = 8
    dirs = rng.standard_normal((k, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    freqs = dirs * rng.uniform(6.0, 13.0, (k, 1))
    phases = rng.uniform(0, 2 * np.pi, k)
    weights = rng.uniform(-0.09, 0.09, (k, 3))
    return _Texture(freqs, phases, weights)


def _blob(x, y, cx, cy, rx, ry, soft):
    r = np.sqrt(((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2)
    return 1 - _smoothstep(1 - soft / min(rx, ry), 1 + soft / min(rx, ry), r)


def _mouth_layers(x, y, cfg: SceneConfig, openness: float):
    """Lip and aperture coverage in [0, 1] at head-frame surface points."""
    e = cfg.edge_softness
    ap_h = cfg.seam_height + cfg.max_aperture * openness
    dy = np.abs(y - cfg.mouth_center_y)
    xl = np.clip(x / cfg.mouth_half_width, -1, 1)
    lip_extent = (cfg.lip_thickness + ap_h) * np.sqrt(1 - xl**2)
    lip = (1 - _smoothstep(-e, e, dy - lip_extent)) * (1 - _smoothstep(-e, e, np.abs(x) - cfg.mouth_half_width))
    xa = np.clip(x / cfg.aperture_half_width, -1, 1)
    ap_extent = ap_h * np.sqrt(1 - xa**2)
    ap = (1 - _smoothstep(-e, e, dy - ap_extent)) * (1 - _smoothstep(-e, e, np.abs(x) - cfg.aperture_half_width))
    return lip, ap


SKIN = np.array([0.80, 0.60, 0.50])
LIP = np.array([0.62, 0.26, 0.28])
APERTURE = np.array([0.10, 0.03, 0.04])
EYE = np.array([0.16, 0.13, 0.11])
BROW = np.array([0.36, 0.24, 0.17])


def shade_surface(P: np.ndarray, cfg: SceneConfig, openness: float) -> np.ndarray:
    """Albedo times fixed head-frame lighting at surface points P (..., 3)."""
    tex = _texture(cfg.texture_seed)
    x, y, z = P[..., 0], P[..., 1], P[..., 2]
    axes = np.asarray(cfg.semi_axes)
    n = P / axes**2
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    light = np.array([0.25, -0.35, -1.0])
    light = light / np.linalg.norm(light)
    shade = 0.45 + 0.55 * np.clip(n @ light, 0, None)
    pattern = np.sin(P @ tex.freqs.T + tex.phases) @ tex.weights
    color = SKIN * (1 + pattern)
    front = _smoothstep(0.05, -0.15, z)
    soft = cfg.edge_softness
    for cx in (-0.3, 0.3):
        eye = _blob(x, y, cx, -0.22, 0.13, 0.07, soft) * front
        color = color + eye[..., None] * (EYE - color)
        brow = _blob(x, y, cx, -0.4, 0.17, 0.035, soft) * front
        color = color + brow[..., None] * (BROW - color)
    nose = _blob(x, y, 0.0, 0.12, 0.08, 0.1, soft) * front
    color = color * (1 - 0.2 * nose[..., None])
    lip, ap = _mouth_layers(x, y, cfg, openness)
    lip, ap = lip * front, ap * front
    color = color + lip[..., None] * (LIP - color)
    color = color + ap[..., None] * (APERTURE - color)
    return np.clip(color * shade[..., None], 0, 1)


def intersect_head(cfg: SceneConfig, pose: Pose, u=None, v=None):
    """Ray/ellipsoid hits for pixel rays; returns (hit, depth, head-frame points)."""
    K = cfg.intrinsics
    if u is None:
        v, u = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float64)
    d = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    R, t = pose.R, pose.t
    axes = np.asarray(cfg.semi_axes)
    o_h = -R.T @ t
    d_h = d @ R  # rows are R.T @ d
    o_s = o_h / axes
    d_s = d_h / axes
    A = np.sum(d_s * d_s, axis=-1)
    B = d_s @ o_s
    C = o_s @ o_s - 1
    disc = B * B - A * C
    hit = disc > 0
    s = np.where(hit, (-B - np.sqrt(np.where(hit, disc, 0))) / A, 0)
    hit &= s > 0
    P = o_h + s[..., None] * d_h
    return hit, s, P


def render_frame(cfg: SceneConfig, pose: Pose, openness: float) -> tuple[np.ndarray, DepthMap]:
    """Exact rendering: float image in [0, 1] and the full head depth."""
    hit, depth, P = intersect_head(cfg, pose)
    if not hit.any():
        raise SceneError("head is entirely outside the frame")
    img = np.empty((cfg.height, cfg.width, 3))
    img[:] = cfg.background
    img[hit] = shade_surface(P[hit], cfg, openness)
    return img, DepthMap(np.where(hit, depth, 0.0), hit)


def face_mask(cfg: SceneConfig, P: np.ndarray, hit: np.ndarray) -> np.ndarray:
    """Pixels a face-only model would cover (front, inside the face ellipse)."""
    a, b, _ = cfg.semi_axes
    r2 = (P[..., 0] / a) ** 2 + (P[..., 1] / b) ** 2
    return hit & (P[..., 2] < 0) & (r2 <= cfg.face_mask_radius**2)


def _surface_point(cfg: SceneConfig, x, y) -> np.ndarray:
    a, b, c = cfg.semi_axes
    z = -c * np.sqrt(np.clip(1 - (x / a) ** 2 - (y / b) ** 2, 0, None))
    return np.stack([x, y, z], axis=-1)


def project_head_points(cfg: SceneConfig, pose: Pose, P: np.ndarray) -> np.ndarray:
    K = cfg.intrinsics
    X = P @ pose.R.T + pose.t
    return np.stack([K.fx * X[..., 0] / X[..., 2] + K.cx, K.fy * X[..., 1] / X[..., 2] + K.cy], axis=-1)


def mouth_box(cfg: SceneConfig, pose: Pose, margin: int = 2) -> tuple[int, int, int, int]:
    """Pixel box (x0, y0, x1, y1), end-exclusive, holding the widest-open lips."""
    s = np.linspace(0, 2 * np.pi, 128, endpoint=False)
    h = cfg.lip_thickness + cfg.seam_height + cfg.max_aperture + cfg.edge_softness
    wdt = cfg.mouth_half_width + cfg.edge_softness
    pts = _surface_point(cfg, wdt * np.cos(s), cfg.mouth_center_y + h * np.sin(s))
    uv = project_head_points(cfg, pose, pts)
    x0 = int(np.floor(uv[:, 0].min())) - margin
    y0 = int(np.floor(uv[:, 1].min())) - margin
    x1 = int(np.ceil(uv[:, 0].max())) + margin + 1
    y1 = int(np.ceil(uv[:, 1].max())) + margin + 1
    return max(x0, 0), max(y0, 0), min(x1, cfg.width), min(y1, cfg.height)


def mouth_keypoints(cfg: SceneConfig, pose: Pose, openness: float) -> np.ndarray:
    """(4, 2) pixel keypoints: left corner, right corner, top lip, bottom lip."""
    ap_h = cfg.seam_height + cfg.max_aperture * openness
    yc = cfg.mouth_center_y
    xs = np.array([-cfg.aperture_half_width, cfg.aperture_half_width, 0.0, 0.0])
    ys = np.array([yc, yc, yc - ap_h, yc + ap_h])
    return project_head_points(cfg, pose, _surface_point(cfg, xs, ys))


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)


# -- corpus ----------------------------------------------------------------
@dataclass
class FrameRecord:
    index: int
    image: np.ndarray  # float32 (H, W, 3), 8-bit quantised
    pose: Pose
    face_depth: DepthMap
    mouth_box: tuple[int, int, int, int]
    keypoints: np.ndarray
    openness: float
    feature: np.ndarray
    timestamp: float
    depth: DepthMap | None = None  # full depth, only when rendered in memory


@dataclass
class Corpus:
    cfg: SceneConfig
    seed: int
    frames: list[FrameRecord]
    canonical_index: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def K(self) -> Intrinsics:
        return self.cfg.intrinsics

    @property
    def canonical(self) -> FrameRecord:
        return self.frames[self.canonical_index]

    def images(self, idx=None) -> np.ndarray:
        idx = range(len(self.frames)) if idx is None else idx
        return np.stack([self.frames[i].image for i in idx])

    def features(self, idx=None) -> np.ndarray:
        idx = range(len(self.frames)) if idx is None else idx
        return np.stack([self.frames[i].feature for i in idx])

    def full_depth(self, i: int) -> DepthMap:
        rec = self.frames[i]
        if rec.depth is None:
            rec.depth = render_frame(self.cfg, rec.pose, rec.openness)[1]
        return rec.depth


def split_indices(n: int, train_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(n * train_fraction))
    return np.arange(n_train), np.arange(n_train, n)


def choose_canonical(params: np.ndarray, train_idx: np.ndarray, head_distance: float) -> int:
    """Training frame whose pose parameters are nearest their mean."""
    p = params[train_idx].copy()
    p[:, 3:] /= head_distance
    d = np.linalg.norm(p - p.mean(axis=0), axis=1)
    return int(train_idx[np.argmin(d)])


def build_corpus(cfg: SceneConfig, seed: int) -> Corpus:
    params = trajectory_params(cfg, seed)
    times = np.arange(cfg.n_frames) / cfg.fps
    feats, openness = speech_signal(times, seed)
    train_idx, test_idx = split_indices(cfg.n_frames, cfg.train_fraction)
    frames = []
    for i in range(cfg.n_frames):
        pose = pose_from_params(params[i], cfg)
        img, depth = render_frame(cfg, pose, float(openness[i]))
        hit, _, P = intersect_head(cfg, pose)
        fm = face_mask(cfg, P, hit)
        q = quantize(img)
        face_depth = DepthMap(np.where(fm, np.round(depth.values * DEPTH_SCALE) / DEPTH_SCALE, 0.0), fm)
        frames.append(
            FrameRecord(
                index=i,
                image=q.astype(np.float32) / 255.0,
                pose=pose,
                face_depth=face_depth,
                mouth_box=mouth_box(cfg, pose),
                keypoints=mouth_keypoints(cfg, pose, float(openness[i])),
                openness=float(openness[i]),
                feature=feats[i],
                timestamp=i / max(cfg.n_frames - 1, 1),
                depth=depth,
            )
        )
    canon = choose_canonical(params, train_idx, cfg.head_distance)
    return Corpus(cfg, seed, frames, canon, train_idx, test_idx)


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True,
            text=True,
            timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def encode_floats(a: np.ndarray) -> str:
    return base64.b64encode(np.asarray(a, dtype="<f4").tobytes()).decode("ascii")


def decode_floats(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f4").astype(np.float32)


def generate_corpus(cfg: SceneConfig, seed: int, out_dir) -> dict:
    """Render the corpus to `out_dir` and return the manifest it wrote."""
    out = Path(out_dir)
    try:
        (out / "frames").mkdir(parents=True, exist_ok=True)
        (out / "depth").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create corpus directory {out}: {e}") from e
    corpus = build_corpus(cfg, seed)
    records = []
    for rec in corpus.frames:
        img_rel = f"frames/{rec.index:05d}.png"
        dep_rel = f"depth/{rec.index:05d}.png"
        _write_png(out / img_rel, np.round(rec.image * 255).astype(np.uint8))
        d16 = np.where(rec.face_depth.valid_mask, np.round(rec.face_depth.values * DEPTH_SCALE), 0).astype(np.uint16)
        _write_png(out / dep_rel, d16)
        records.append(
            {
                "index": rec.index,
                "image": img_rel,
                "face_depth": dep_rel,
                "pose": [float(x) for x in rec.pose.matrix.ravel()],
                "mouth_box": list(rec.mouth_box),
                "keypoints": [[float(a), float(b)] for a, b in rec.keypoints],
                "openness": rec.openness,
                "feature": encode_floats(rec.feature),
                "timestamp": rec.timestamp,
            }
        )
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scene": cfg.to_dict(),
        "seed": seed,
        "image_size": [cfg.height, cfg.width],
        "intrinsics": dict(zip(["fx", "fy", "cx", "cy"], cfg.intrinsics.as_list())),
        "fps": cfg.fps,
        "depth_scale": DEPTH_SCALE,
        "feature_dim": FEATURE_DIM,
        "canonical_index": corpus.canonical_index,
        "split": {"train": [0, len(corpus.train_indices)], "test": [len(corpus.train_indices), cfg.n_frames]},
        "frames": records,
        "reproducibility": {"seed": seed, "config_digest": cfg.digest(), "git_describe": git_describe()},
    }
    path = out / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    except OSError as e:
        raise OSError(f"cannot write manifest {path}: {e}") from e
    return manifest


def _write_png(path: Path, arr: np.ndarray) -> None:
    try:
        PILImage.fromarray(arr).save(path, optimize=False)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def _read_png(path: Path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            return np.array(im)
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e


def load_corpus(path) -> Corpus:
    root = Path(path)
    mpath = root / "manifest.json" if root.is_dir() else root
    root = mpath.parent
    try:
        manifest = json.loads(mpath.read_text())
    except OSError as e:
        raise OSError(f"cannot read manifest {mpath}: {e}") from e
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SceneError(f"unsupported manifest schema {manifest.get('schema_version')}")
    cfg = SceneConfig.from_dict(manifest["scene"])
    frames = []
    for r in manifest["frames"]:
        img = _read_png(root / r["image"]).astype(np.float32) / 255.0
        d16 = _read_png(root / r["face_depth"]).astype(np.float64)
        frames.append(
            FrameRecord(
                index=r["index"],
                image=img,
                pose=Pose(np.array(r["pose"]).reshape(4, 4)),
                face_depth=DepthMap(d16 / manifest["depth_scale"], d16 > 0),
                mouth_box=tuple(r["mouth_box"]),
                keypoints=np.array(r["keypoints"]),
                openness=r["openness"],
                feature=decode_floats(r["feature"]),
                timestamp=r["timestamp"],
            )
        )
    a, b = manifest["split"]["train"]
    c, d = manifest["split"]["test"]
    return Corpus(
        cfg,
        manifest["seed"],
        frames,
        manifest["canonical_index"],
        np.arange(a, b),
        np.arange(c, d),
        extra={"path": str(root)},
    )
