"""Volume rendering: pinhole rays, emission-absorption compositing with
analytic gradients, the compact color MLP, PSNR and PPM image I/O.

Ray colors follow C = sum_i T_i * alpha_i * c_i + T_final * background with
alpha_i = 1 - exp(-sigma_i * delta_i) and T_i the running transmittance, so
T comes from an exclusive cumulative sum of sigma*delta and the backward
pass is a pair of (reversed) cumulative sums.
"""

from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 99.0


class PpmError(ValueError):
    """Malformed PPM payload."""


@dataclass
class Camera:
    intrinsics: np.ndarray        # 3x3
    cam_to_world: np.ndarray      # 4x4 rigid transform
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, float)
        self.cam_to_world = np.asarray(self.cam_to_world, float)
        k = self.intrinsics
        if k.shape != (3, 3) or k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("intrinsics must be 3x3 with positive focals")
        rot = self.cam_to_world[:3, :3]
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-9:
            raise ValueError("camera rotation is not orthonormal")
        if not self.near < self.far:
            raise ValueError("need near < far")

    def to_dict(self):
        return {"intrinsics": self.intrinsics.tolist(),
                "cam_to_world": self.cam_to_world.tolist(),
                "width": self.width, "height": self.height,
                "near": self.near, "far": self.far}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["intrinsics"]), np.array(d["cam_to_world"]),
                   int(d["width"]), int(d["height"]),
                   float(d["near"]), float(d["far"]))


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray        # unit length
    near: float
    far: float
    t: float = 0.0

    def __post_init__(self):
        self.origin = np.asarray(self.origin, float)
        self.direction = np.asarray(self.direction, float)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit length")
        if not self.near < self.far:
            raise ValueError("need near < far")


def generate_rays(camera: Camera, pixels: np.ndarray, t: float):
    """Back-project pixel (row, col) indices to world rays (center-of-pixel).

    Camera space looks down -Z with +X right and +Y up. Returns
    (origins (P,3), directions (P,3) unit, times (P,)).
    """
    pixels = np.asarray(pixels, int).reshape(-1, 2)
    if pixels.size and (pixels.min() < 0
                        or pixels[:, 0].max() >= camera.height
                        or pixels[:, 1].max() >= camera.width):
        raise ValueError("pixel indices out of bounds")
    k = camera.intrinsics
    u = pixels[:, 1] + 0.5
    v = pixels[:, 0] + 0.5
    dirs_cam = np.stack([(u - k[0, 2]) / k[0, 0],
                         -(v - k[1, 2]) / k[1, 1],
                         -np.ones(len(pixels))], axis=1)
    rot = camera.cam_to_world[:3, :3]
    dirs = dirs_cam @ rot.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.cam_to_world[:3, 3], dirs.shape).copy()
    times = np.full(len(pixels), float(t))
    return origins, dirs, times


def ray_grid(camera: Camera):
    """All pixel indices of the camera, row-major."""
    rows, cols = np.mgrid[0:camera.height, 0:camera.width]
    return np.stack([rows.ravel(), cols.ravel()], axis=1)


def sample_depths(near, far, n_samples: int, rng=None):
    """Stratified depths (midpoints when rng is None) and the spacing deltas."""
    if n_samples < 1:
        raise ValueError("need at least one sample per ray")
    edges = np.linspace(near, far, n_samples + 1)
    if rng is None:
        offsets = np.full(n_samples, 0.5)
    else:
        offsets = rng.uniform(size=n_samples)
    depths = edges[:-1] + offsets * (edges[1:] - edges[:-1])
    deltas = np.diff(edges)
    return depths, deltas


def composite(sigmas: np.ndarray, colors: np.ndarray, deltas: np.ndarray,
              background: np.ndarray):
    """Emission-absorption compositing over (R, S) sigmas and (R, S, 3) colors.

    Returns (ray_colors (R,3), transmittance_final (R,), ctx for backward).
    """
    sd = sigmas * deltas
    cum = np.cumsum(sd, axis=1)
    t_in = np.exp(-(cum - sd))            # transmittance entering each sample
    alpha = -np.expm1(-sd)
    weights = t_in * alpha                # (R, S)
    t_final = np.exp(-cum[:, -1]) if sd.shape[1] else np.ones(sd.shape[0])
    ray_rgb = np.einsum("rs,rsc->rc", weights, colors) + \
        t_final[:, None] * background[None, :]
    ctx = (sigmas, colors, deltas, t_in, alpha, t_final, background)
    return ray_rgb, t_final, ctx


def composite_backward(d_rgb: np.ndarray, ctx):
    """d(ray colors) -> (d_sigmas, d_colors)."""
    sigmas, colors, deltas, t_in, alpha, t_final, background = ctx
    weights = t_in * alpha
    d_colors = weights[:, :, None] * d_rgb[:, None, :]
    # dC/d(sd_i) = T_i e^{-sd_i} c_i - sum_{k>i} w_k c_k - T_final * bg
    proj = np.einsum("rsc,rc->rs", colors, d_rgb)          # <c_s, dC>
    wproj = weights * proj
    tail = np.cumsum(wproj[:, ::-1], axis=1)[:, ::-1] - wproj
    own = t_in * np.exp(-sigmas * deltas) * proj
    bg_term = (t_final * (background[None, :] * d_rgb).sum(axis=1))[:, None]
    d_sd = own - tail - bg_term
    return d_sd * deltas, d_colors


def intersect_box(origins, dirs, box_min, box_max, near, far):
    """Clamp per-ray [near, far] to the axis-aligned box (slab method).

    Rays that miss the box come back with near >= far.
    """
    box_min = np.asarray(box_min, float)
    box_max = np.asarray(box_max, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (box_min[None, :] - origins) * inv
        t1 = (box_max[None, :] - origins) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # parallel rays: ignore the degenerate axis unless outside its slab
    par = dirs == 0.0
    inside = (origins >= box_min[None, :]) & (origins <= box_max[None, :])
    lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
    t_near = np.maximum(np.max(lo, axis=1), near)
    t_far = np.minimum(np.min(hi, axis=1), far)
    return t_near, t_far


def render_rays(field_fn, origins, dirs, times, near, far, n_samples,
                box_min, box_max, background, rng=None, skip_fn=None):
    """Quadrature-render rays through a (points, times, dirs) -> (sigma, rgb)
    field.

    Samples are stratified between the per-ray box-clamped near/far
    (midpoints when rng is None); ``skip_fn(points) -> bool mask`` marks
    samples to treat as empty space. Returns (colors (R,3), final
    transmittance (R,)).
    """
    origins = np.asarray(origins, float)
    dirs = np.asarray(dirs, float)
    times = np.asarray(times, float)
    n_rays = len(origins)
    t_near, t_far = intersect_box(origins, dirs, box_min, box_max, near, far)
    hit = t_near < t_far
    colors = np.tile(np.asarray(background, float), (n_rays, 1))
    trans = np.ones(n_rays)
    if not np.any(hit):
        return colors, trans
    o = origins[hit]
    d = dirs[hit]
    tt = times[hit]
    tn = t_near[hit]
    tf = t_far[hit]
    s = n_samples
    edges = tn[:, None] + (tf - tn)[:, None] * np.linspace(0, 1, s + 1)[None, :]
    if rng is None:
        offs = np.full((len(o), s), 0.5)
    else:
        offs = rng.uniform(size=(len(o), s))
    depths = edges[:, :-1] + offs * np.diff(edges, axis=1)
    deltas = np.diff(edges, axis=1)
    pts = o[:, None, :] + depths[..., None] * d[:, None, :]
    flat = pts.reshape(-1, 3)
    flat_t = np.repeat(tt, s)
    flat_d = np.repeat(d, s, axis=0)
    keep = np.ones(len(flat), bool)
    if skip_fn is not None:
        keep = ~skip_fn(flat)
    sigmas = np.zeros(len(flat))
    rgb = np.zeros((len(flat), 3))
    if np.any(keep):
        sg, cl = field_fn(flat[keep], flat_t[keep], flat_d[keep])
        sigmas[keep] = sg
        rgb[keep] = cl
    ray_rgb, t_final, _ = composite(sigmas.reshape(len(o), s),
                                    rgb.reshape(len(o), s, 3),
                                    deltas, np.asarray(background, float))
    colors[hit] = ray_rgb
    trans[hit] = t_final
    return colors, trans


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_grad(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


# ---------------------------------------------------------------------------
# compact color MLP
# ---------------------------------------------------------------------------

class TinyMLP:
    """3-layer ReLU MLP with terminal sigmoid, input = features ++ view dir."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden
        dims = [in_dim, hidden, hidden, 3]
        self.weights = []
        self.biases = []
        for i in range(3):
            scale = np.sqrt(2.0 / dims[i])
            self.weights.append(scale * rng.standard_normal((dims[i], dims[i + 1])))
            self.biases.append(np.zeros(dims[i + 1]))

    def params(self):
        for i in range(3):
            yield f"mlp/w{i}", self.weights[i]
            yield f"mlp/b{i}", self.biases[i]

    def set_param(self, key, value):
        kind, idx = key.split("/")[1][0], int(key.split("/")[1][1:])
        if kind == "w":
            self.weights[idx] = value
        else:
            self.biases[idx] = value

    def forward(self, features: np.ndarray, dirs: np.ndarray):
        """(P, F) features and (P, 3) unit view dirs -> colors in (0,1)^3."""
        x = np.concatenate([features, dirs], axis=1)
        if x.shape[1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[1]}")
        acts = [x]
        for i in range(3):
            x = x @ self.weights[i] + self.biases[i]
            if i < 2:
                x = np.maximum(x, 0.0)
            acts.append(x)
        colors = 1.0 / (1.0 + np.exp(-acts[-1]))
        return colors, (acts, colors)

    def backward(self, d_colors: np.ndarray, ctx):
        """Returns (param grads dict, d_features, d_dirs)."""
        acts, colors = ctx
        grads = {}
        dx = d_colors * colors * (1.0 - colors)
        for i in (2, 1, 0):
            grads[f"mlp/w{i}"] = acts[i].T @ dx
            grads[f"mlp/b{i}"] = dx.sum(axis=0)
            dx = dx @ self.weights[i].T
            if i > 0:
                dx = dx * (acts[i] > 0)
        nf = self.in_dim - 3
        return grads, dx[:, :nf], dx[:, nf:]


def mlp_forward(features, dirs, mlp: TinyMLP):
    colors, _ = mlp.forward(np.asarray(features, float), np.asarray(dirs, float))
    return colors


# ---------------------------------------------------------------------------
# metrics and image I/O
# ---------------------------------------------------------------------------

def psnr(image_a: np.ndarray, image_b: np.ndarray) -> float:
    """10*log10(1/MSE) for [0,1] images, capped at 99 dB for identical inputs."""
    a = np.asarray(image_a, float)
    b = np.asarray(image_b, float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def write_ppm(image: np.ndarray) -> bytes:
    """Binary P6 with maxval 255, round-half-up quantization."""
    image = np.asarray(image, float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode()
    return header + q.tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P6"):
        raise PpmError("not a binary PPM (P6) payload")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PpmError("truncated PPM header")
        fields.append(int(data[start:pos]))
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval}")
    payload = data[pos:pos + 3 * width * height]
    if len(payload) != 3 * width * height:
        raise PpmError("truncated PPM payload")
    pixels = np.frombuffer(payload, np.uint8).reshape(height, width, 3)
    return pixels.astype(float) / 255.0
