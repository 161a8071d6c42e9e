"""Synthetic dynamic scenes with analytic density/color fields, plus dataset
generation (posed camera ring, timestamped target images, JSON manifest).

Blob centers follow cubic polynomial trajectories in t. The moving-edge
scene is a striped slab translating over time: every transition uses a very
steep smoothstep, so the field stays continuous while looking hard-edged at
pixel scale.
"""

import json
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from . import render

WHITE = np.array([1.0, 1.0, 1.0])


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass
class Blob:
    trajectory: np.ndarray       # (4, 3) cubic coefficients: c(t) = sum_k T[k] t^k
    radius: float
    peak: float
    color: tuple

    def __post_init__(self):
        self.trajectory = np.asarray(self.trajectory, float).reshape(4, 3)
        if self.radius <= 0 or self.peak < 0:
            raise ValueError("blob needs radius > 0 and peak >= 0")
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise ValueError("blob colors live in [0,1]")

    def center(self, t):
        t = np.asarray(t, float)
        powers = np.stack([np.ones_like(t), t, t * t, t ** 3], axis=-1)
        return powers @ self.trajectory


@dataclass
class MovingSlab:
    """Striped solid slab translating along +x as t goes 0 -> 1."""

    center0: tuple
    velocity: tuple
    extent: tuple               # full side lengths
    peak: float
    stripe_period: float
    stripe_colors: tuple = ((0.9, 0.15, 0.1), (0.1, 0.2, 0.85))
    edge_softness: float = 0.02

    def center(self, t):
        t = np.asarray(t, float)[..., None]
        return np.asarray(self.center0) + t * np.asarray(self.velocity)


@dataclass
class SceneSpec:
    name: str
    blobs: list
    slab: MovingSlab = None
    box_min: tuple = (-1.0, -1.0, -1.0)
    box_max: tuple = (1.0, 1.0, 1.0)
    time_range: tuple = (0.0, 1.0)
    camera_count: int = 8
    camera_radius: float = 3.2
    camera_elevation_deg: float = 18.0
    image_size: int = 64
    time_count: int = 8
    gt_samples: int = 512
    fov_deg: float = 42.0
    static: bool = False


def gt_field(spec: SceneSpec, points: np.ndarray, t) -> tuple:
    """Analytic (sigma, rgb) at (P, 3) world points and scalar or (P,) time."""
    points = np.asarray(points, float).reshape(-1, 3)
    t = np.broadcast_to(np.asarray(t, float), (points.shape[0],))
    sigma = np.zeros(points.shape[0])
    weighted = np.zeros((points.shape[0], 3))
    for blob in spec.blobs:
        d2 = np.sum((points - blob.center(t)) ** 2, axis=1)
        contrib = blob.peak * np.exp(-d2 / blob.radius ** 2)
        sigma += contrib
        weighted += contrib[:, None] * np.asarray(blob.color)
    if spec.slab is not None:
        s = spec.slab
        rel = points - s.center(t)
        half = np.asarray(s.extent) / 2.0
        inside = np.ones(points.shape[0])
        for a in range(3):
            inside = inside * smoothstep((rel[:, a] + half[a]) / s.edge_softness)
            inside = inside * smoothstep((half[a] - rel[:, a]) / s.edge_softness)
        contrib = s.peak * inside
        phase = rel[:, 1] / s.stripe_period
        gate = 0.5 * (1.0 + np.tanh(np.sin(2 * np.pi * phase) / 0.2))
        col = (gate[:, None] * np.asarray(s.stripe_colors[0])
               + (1 - gate)[:, None] * np.asarray(s.stripe_colors[1]))
        sigma += contrib
        weighted += contrib[:, None] * col
    rgb = np.where(sigma[:, None] > 0.0,
                   weighted / np.maximum(sigma, 1e-300)[:, None],
                   WHITE)
    return sigma, rgb


def camera_ring(spec: SceneSpec):
    """Inward-looking pinhole cameras evenly spaced on a tilted ring."""
    w = h = spec.image_size
    focal = 0.5 * w / np.tan(np.radians(spec.fov_deg) / 2.0)
    intr = np.array([[focal, 0, w / 2.0], [0, focal, h / 2.0], [0, 0, 1]])
    elev = np.radians(spec.camera_elevation_deg)
    half_diag = float(np.linalg.norm(np.asarray(spec.box_max)
                                     - np.asarray(spec.box_min))) / 2.0
    near = max(spec.camera_radius - half_diag - 0.2, 0.05)
    far = spec.camera_radius + half_diag + 0.2
    cams = []
    for k in range(spec.camera_count):
        theta = 2 * np.pi * k / spec.camera_count
        pos = spec.camera_radius * np.array([
            np.cos(theta) * np.cos(elev),
            np.sin(theta) * np.cos(elev),
            np.sin(elev)])
        forward = -pos / np.linalg.norm(pos)
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, forward)
        c2w = np.eye(4)
        c2w[:3, 0] = right
        c2w[:3, 1] = true_up
        c2w[:3, 2] = -forward
        c2w[:3, 3] = pos
        cams.append(render.Camera(intr, c2w, w, h, near, far))
    return cams


def render_gt_image(spec: SceneSpec, camera: render.Camera, t: float,
                    n_samples: int = None) -> np.ndarray:
    """Quadrature render of the analytic field (midpoint sampling, chunked)."""
    n_samples = n_samples or spec.gt_samples

    def field_fn(points, times, dirs):
        return gt_field(spec, points, times)

    pixels = render.ray_grid(camera)
    origins, dirs, times = render.generate_rays(camera, pixels, t)
    img = np.ones((camera.height * camera.width, 3))
    chunk = 4096
    for s in range(0, len(origins), chunk):
        sl = slice(s, s + chunk)
        rgb, _ = render.render_rays(
            field_fn, origins[sl], dirs[sl], times[sl],
            camera.near, camera.far, n_samples,
            spec.box_min, spec.box_max, WHITE)
        img[sl] = rgb
    return img.reshape(camera.height, camera.width, 3)


def generate_dataset(spec: SceneSpec, seed: int, out_dir) -> dict:
    """Render all (camera, time) frames to PPM and write the JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cams = camera_ring(spec)
    times = ([0.0] if spec.static
             else list(np.linspace(*spec.time_range, spec.time_count)))
    frames = []
    idx = 0
    for t in times:
        for ci, cam in enumerate(cams):
            img = render_gt_image(spec, cam, t)
            fname = f"frame_{idx:04d}.ppm"
            (out / fname).write_bytes(render.write_ppm(img))
            frames.append({"camera": ci, "time": float(t), "file": fname,
                           "split": "train"})
            idx += 1
    manifest = {
        "scene": spec.name,
        "seed": int(seed),
        "static": bool(spec.static),
        "box_min": list(spec.box_min),
        "box_max": list(spec.box_max),
        "time_range": list(spec.time_range),
        "cameras": [c.to_dict() for c in cams],
        "frames": frames,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1,
                                                  sort_keys=True))
    return manifest


def load_dataset(data_dir):
    """Manifest + decoded images; returns (manifest, cameras, images dict)."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    cams = [render.Camera.from_dict(d) for d in manifest["cameras"]]
    images = {}
    for fr in manifest["frames"]:
        images[fr["file"]] = render.read_ppm((data_dir / fr["file"]).read_bytes())
    return manifest, cams, images


def _arc_trajectory(radius, z, phase, sweep_deg):
    """Cubic least-squares fit to a circular arc: keeps trajectories polynomial."""
    tt = np.linspace(0.0, 1.0, 32)
    ang = np.radians(phase) + np.radians(sweep_deg) * tt
    pts = np.stack([radius * np.cos(ang), radius * np.sin(ang),
                    np.full_like(tt, z)], axis=1)
    basis = np.stack([np.ones_like(tt), tt, tt ** 2, tt ** 3], axis=1)
    coef, *_ = np.linalg.lstsq(basis, pts, rcond=None)
    return coef


def default_scenes() -> dict:
    scenes = {}
    scenes["orbiting-blobs"] = SceneSpec(
        name="orbiting-blobs",
        blobs=[
            Blob(_arc_trajectory(0.55, 0.05, 0, 150), 0.30, 14.0, (0.9, 0.25, 0.2)),
            Blob(_arc_trajectory(0.50, -0.25, 120, -130), 0.26, 12.0, (0.2, 0.7, 0.3)),
            Blob(_arc_trajectory(0.45, 0.35, 240, 110), 0.22, 12.0, (0.25, 0.3, 0.9)),
        ])
    scenes["moving-edge"] = SceneSpec(
        name="moving-edge",
        blobs=[],
        slab=MovingSlab(center0=(-0.45, 0.0, 0.0), velocity=(0.9, 0.0, 0.0),
                        extent=(0.8, 1.5, 0.55), peak=30.0,
                        stripe_period=0.38),
    )
    static = SceneSpec(
        name="static-blobs",
        blobs=[
            Blob(np.vstack([[0.45, 0.1, 0.0], np.zeros((3, 3))]),
                 0.32, 14.0, (0.85, 0.3, 0.2)),
            Blob(np.vstack([[-0.3, -0.4, -0.2], np.zeros((3, 3))]),
                 0.27, 12.0, (0.2, 0.75, 0.35)),
            Blob(np.vstack([[-0.15, 0.4, 0.35], np.zeros((3, 3))]),
                 0.24, 12.0, (0.25, 0.3, 0.85)),
        ],
        static=True, time_count=1)
    scenes["static-blobs"] = static
    return scenes
