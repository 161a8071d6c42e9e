"""Training: total loss with analytic gradients, TV regularization, Adam,
coarse-to-fine upsampling, the emptiness voxel, and the fit loop.

The forward graph per ray batch is
    coefficients -> masks -> inverse transform -> plane cache -> bilinear
    samples -> rank products -> fusion -> (softplus density | MLP color)
    -> emission-absorption compositing -> photometric loss
and every arrow has a matching hand-written vector-Jacobian product. Plane
gradients are accumulated across ray chunks and pushed through the
transform adjoint once per step.
"""

import concurrent.futures
from dataclasses import dataclass, field as dataclass_field, asdict

import numpy as np

from . import field as field_mod
from . import masking, render
from .field import Field, FieldConfig
from .masking import MaskSet
from .render import TinyMLP

BACKGROUNDS = {"white": np.array([1.0, 1.0, 1.0]),
               "black": np.array([0.0, 0.0, 0.0])}


@dataclass
class TrainConfig:
    iterations: int = 5000
    batch_rays: int = 1024
    lr_planes: float = 0.02
    lr_network: float = 0.001
    lr_decay_target: float = 0.1
    lambda_reg_spatial: float = 1e-5
    lambda_reg_spatiotemporal: float = 2e-5
    lambda_mask: float = 0.0
    upsample_schedule: tuple = ((500, 32), (1500, 64))
    voxel_update_iters: tuple = (800, 2000)
    voxel_res: int = 32
    voxel_tau: float = 1e-3
    voxel_times: int = 8
    n_samples: int = 48
    seed: int = 0
    deterministic: bool = True
    threads: int = 1
    background: str = "white"
    log_every: int = 10
    tv_on_planes: bool = False
    mlp_hidden: int = 32
    mask_init: float = 2.0

    def __post_init__(self):
        self.upsample_schedule = tuple(
            (int(i), int(r)) for i, r in self.upsample_schedule)
        self.voxel_update_iters = tuple(int(i) for i in self.voxel_update_iters)
        res = [r for _, r in self.upsample_schedule]
        if any(r % 2 for r in res) or any(b > a for b, a in zip(res, res[1:])):
            raise ValueError("upsample schedule must be even and non-decreasing")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {tuple(BACKGROUNDS)}")


@dataclass
class AdamSlot:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.99
ADAM_EPS = 1e-8


def adam_step(param: np.ndarray, grad: np.ndarray, slot: AdamSlot,
              lr: float) -> np.ndarray:
    """Standard bias-corrected Adam update; aborts on non-finite gradients."""
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(
            f"non-finite gradient (shape {np.shape(grad)}); aborting step")
    slot.step += 1
    slot.m = ADAM_BETA1 * slot.m + (1 - ADAM_BETA1) * grad
    slot.v = ADAM_BETA2 * slot.v + (1 - ADAM_BETA2) * grad * grad
    m_hat = slot.m / (1 - ADAM_BETA1 ** slot.step)
    v_hat = slot.v / (1 - ADAM_BETA2 ** slot.step)
    return param - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# ---------------------------------------------------------------------------
# TV regularization over coefficient grids
# ---------------------------------------------------------------------------

def _tv_single(grid: np.ndarray):
    """Mean squared neighbor difference over the last two axes, plus grads."""
    dh = grid[..., :, 1:] - grid[..., :, :-1]
    dv = grid[..., 1:, :] - grid[..., :-1, :]
    h, w = grid.shape[-2:]
    count = h * (w - 1) + (h - 1) * w
    lead = int(np.prod(grid.shape[:-2], dtype=int))
    value = (np.sum(dh ** 2) + np.sum(dv ** 2)) / count
    grad = np.zeros_like(grid)
    grad[..., :, 1:] += 2 * dh / count
    grad[..., :, :-1] -= 2 * dh / count
    grad[..., 1:, :] += 2 * dv / count
    grad[..., :-1, :] -= 2 * dv / count
    return value, grad


def tv_loss(fld: Field, lambda_spatial: float, lambda_spatiotemporal: float):
    """Weighted TV over every coefficient grid; returns (value, grads)."""
    value = 0.0
    grads = {}
    for comp in fld.components():
        for key, arr in comp.coeffs.items():
            plane = key.split("/")[2]
            lam = lambda_spatial if "t" not in plane else lambda_spatiotemporal
            if lam == 0.0:
                continue
            v, g = _tv_single(arr)
            value += lam * v
            grads[key] = lam * g
    return value, grads


# ---------------------------------------------------------------------------
# train state
# ---------------------------------------------------------------------------

class TrainState:
    def __init__(self, cfg: FieldConfig, tcfg: TrainConfig, fld: Field,
                 masks: MaskSet, mlp: TinyMLP):
        self.cfg = cfg
        self.tcfg = tcfg
        self.field = fld
        self.masks = masks
        self.mlp = mlp
        self.adam = {}
        self.occupancy = None
        self.iteration = 0
        self._cache = None

    @classmethod
    def create(cls, cfg: FieldConfig, tcfg: TrainConfig) -> "TrainState":
        rng = np.random.default_rng(tcfg.seed)
        fld = Field(cfg, rng)
        masks = fld.build_masks(init=tcfg.mask_init)
        mlp = TinyMLP(cfg.feature_dim + 3, tcfg.mlp_hidden, rng)
        return cls(cfg, tcfg, fld, masks, mlp)

    # -- parameters -----------------------------------------------------
    def params(self):
        yield from self.field.params()
        yield from self.mlp.params()
        for name, logits in sorted(self.masks.items()):
            yield name, logits

    def set_param(self, key: str, value: np.ndarray):
        if key.startswith("mask/"):
            self.masks.logits[key] = value
        elif key.startswith("mlp/"):
            self.mlp.set_param(key, value)
        else:
            self.field.set_param(key, value)
        self.invalidate()

    def lr_group(self, key: str) -> str:
        if key.startswith("mlp/") or key.endswith("/vrf"):
            return "network"
        return "planes"

    # -- plane cache ------------------------------------------------------
    def invalidate(self):
        self._cache = None

    def ensure_cache(self) -> dict:
        if self._cache is None:
            self._cache = self.field.reconstruct(self.masks)
        return self._cache

    # -- density/appearance evaluation -------------------------------------
    def _query_points(self, rep, pts4):
        cache = self.ensure_cache()
        if self.cfg.mode == "dynamic4d":
            return field_mod.query_dynamic(pts4, rep, cache, self.masks)
        return field_mod.query_static(pts4[:, :3], rep, cache, self.masks)

    def density_sigma(self, points3: np.ndarray, times) -> np.ndarray:
        pts = np.concatenate(
            [points3, np.broadcast_to(np.asarray(times, float),
                                      (len(points3),))[:, None]], axis=1)
        q, _ = self._query_points(self.field.density, pts)
        return render.softplus(q[:, 0] + self.cfg.density_shift)

    def occupancy_skip(self, points3: np.ndarray) -> np.ndarray:
        """True where the emptiness voxel says skip."""
        if self.occupancy is None:
            return np.zeros(len(points3), bool)
        res = self.occupancy.shape[0]
        lo = np.array(self.cfg.box_min)
        hi = np.array(self.cfg.box_max)
        cell = ((points3 - lo) / (hi - lo) * res).astype(np.int64)
        cell = np.clip(cell, 0, res - 1)
        return ~self.occupancy[cell[:, 0], cell[:, 1], cell[:, 2]]

    def background_color(self) -> np.ndarray:
        return BACKGROUNDS[self.tcfg.background]

    def quantized32(self) -> "TrainState":
        """Copy with every parameter cast through float32 (codec semantics)."""
        rng = np.random.default_rng(0)
        other = TrainState(self.cfg, self.tcfg,
                           Field(self.cfg, rng),
                           self.field.build_masks(), TinyMLP(
                               self.cfg.feature_dim + 3, self.tcfg.mlp_hidden, rng))
        for key, val in self.params():
            if key.startswith("mask/"):
                other.set_param(key, np.where(masking.heaviside(val) > 0,
                                              1.0, -1.0))
            else:
                q = val.astype(np.float32).astype(np.float64)
                if not key.startswith("mlp/") and not key.endswith("/vrf") \
                        and not key.endswith("/vec"):
                    q = q * masking.heaviside(self.masks[f"mask/{key}"])
                other.set_param(key, q)
        other.occupancy = None if self.occupancy is None else self.occupancy.copy()
        return other


def update_emptiness_voxel(state: TrainState, res: int = None) -> np.ndarray:
    """Max density over sampled times on a res^3 grid; empty = below tau."""
    res = res or state.tcfg.voxel_res
    cfg = state.cfg
    lo = np.array(cfg.box_min)
    hi = np.array(cfg.box_max)
    axes = [lo[a] + (np.arange(res) + 0.5) / res * (hi[a] - lo[a])
            for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    if cfg.mode == "dynamic4d":
        times = np.linspace(*cfg.time_range, state.tcfg.voxel_times)
    else:
        times = [0.0]
    best = np.zeros(len(grid))
    for t in times:
        best = np.maximum(best, state.density_sigma(grid, t))
    occ = (best >= state.tcfg.voxel_tau).reshape(res, res, res)
    state.occupancy = occ
    return occ


# ---------------------------------------------------------------------------
# loss forward/backward
# ---------------------------------------------------------------------------

def _merge(total: dict, part: dict):
    for key, val in part.items():
        if key in total:
            total[key] = total[key] + val
        else:
            total[key] = val


def _chunk_forward_backward(state: TrainState, origins, dirs, times, targets,
                            offsets):
    """Photometric loss piece + grads for one ray chunk.

    Returns (sq_err_sum, grads, plane_grads, n_rays).
    """
    cfg = state.cfg
    tcfg = state.tcfg
    bg = state.background_color()
    n_rays = len(origins)
    t_near, t_far = render.intersect_box(origins, dirs, cfg.box_min,
                                         cfg.box_max, 0.0, np.inf)
    hit = t_near < t_far
    colors = np.tile(bg, (n_rays, 1))
    grads: dict = {}
    plane_grads: dict = {}
    if np.any(hit):
        o = origins[hit]
        d = dirs[hit]
        tt = times[hit]
        tn = t_near[hit]
        tf = t_far[hit]
        s = tcfg.n_samples
        edges = tn[:, None] + (tf - tn)[:, None] * np.linspace(0, 1, s + 1)[None, :]
        depths = edges[:, :-1] + offsets[hit] * np.diff(edges, axis=1)
        deltas = np.diff(edges, axis=1)
        pts = (o[:, None, :] + depths[..., None] * d[:, None, :]).reshape(-1, 3)
        pts_t = np.repeat(tt, s)
        keep = ~state.occupancy_skip(pts)
        kept = np.nonzero(keep)[0]
        sigmas = np.zeros(len(pts))
        point_rgb = np.zeros((len(pts), 3))
        if len(kept):
            p4 = np.concatenate([pts[kept], pts_t[kept, None]], axis=1)
            q, ctx_den = state._query_points(state.field.density, p4)
            raw = q[:, 0] + cfg.density_shift
            sigmas[kept] = render.softplus(raw)
            feats, ctx_app = state._query_points(state.field.appearance, p4)
            view = np.repeat(d, s, axis=0)[kept]
            mlp_colors, ctx_mlp = state.mlp.forward(feats, view)
            point_rgb[kept] = mlp_colors
        ray_rgb, _, ctx_comp = render.composite(
            sigmas.reshape(-1, s), point_rgb.reshape(-1, s, 3), deltas, bg)
        colors[hit] = ray_rgb
        # backward
        diff = colors - targets
        d_rgb_hit = 2.0 * diff[hit]
        d_sigmas, d_colors = render.composite_backward(d_rgb_hit, ctx_comp)
        d_sig_flat = d_sigmas.reshape(-1)
        d_col_flat = d_colors.reshape(-1, 3)
        if len(kept):
            mlp_grads, d_feats, _ = state.mlp.backward(d_col_flat[kept], ctx_mlp)
            _merge(grads, mlp_grads)
            g_app, pg_app = field_mod.query_backward_planes(ctx_app, d_feats)
            _merge(grads, g_app)
            field_mod.accumulate_plane_grads(plane_grads, pg_app)
            d_raw = d_sig_flat[kept] * render.softplus_grad(raw)
            g_den, pg_den = field_mod.query_backward_planes(ctx_den,
                                                            d_raw[:, None])
            _merge(grads, g_den)
            field_mod.accumulate_plane_grads(plane_grads, pg_den)
    else:
        diff = colors - targets
    sq_err = float(np.sum(diff * diff))
    return sq_err, grads, plane_grads, n_rays, colors


def total_loss(batch, state: TrainState, rng=None):
    """Full objective over a ray batch.

    ``batch`` is (origins, dirs, times, target_colors). Returns
    (loss, parts, grads) with per-term values in ``parts`` and a gradient
    array per learnable in ``grads``.
    """
    origins, dirs, times, targets = batch
    origins = np.asarray(origins, float)
    if len(origins) == 0:
        raise ValueError("empty ray batch")
    tcfg = state.tcfg
    state.ensure_cache()
    s = tcfg.n_samples
    if rng is None:
        offsets = np.full((len(origins), s), 0.5)
    else:
        offsets = rng.uniform(size=(len(origins), s))

    n_chunk = max(1, (len(origins) + max(tcfg.threads, 1) - 1)
                  // max(tcfg.threads, 1)) if not tcfg.deterministic else len(origins)
    spans = [(i, min(i + n_chunk, len(origins)))
             for i in range(0, len(origins), n_chunk)]

    def run(span):
        a, b = span
        return _chunk_forward_backward(state, origins[a:b], dirs[a:b],
                                       times[a:b], targets[a:b], offsets[a:b])

    if tcfg.deterministic or tcfg.threads <= 1 or len(spans) == 1:
        results = [run(sp) for sp in spans]
    else:
        with concurrent.futures.ThreadPoolExecutor(tcfg.threads) as pool:
            results = list(pool.map(run, spans))

    grads: dict = {}
    plane_grads: dict = {}
    sq_err = 0.0
    for part_err, part_grads, part_planes, _, _ in results:
        sq_err += part_err
        _merge(grads, part_grads)
        field_mod.accumulate_plane_grads(plane_grads, part_planes)
    n_rays = len(origins)
    photometric = sq_err / n_rays
    for key in grads:
        if not key.startswith("__"):
            grads[key] = grads[key] / n_rays
    for key in plane_grads:
        plane_grads[key] = plane_grads[key] / n_rays
    field_mod.apply_plane_adjoints(state.field, plane_grads, state.masks, grads)

    tv_value, tv_grads = tv_loss(state.field, tcfg.lambda_reg_spatial,
                                 tcfg.lambda_reg_spatiotemporal)
    _merge(grads, tv_grads)
    mask_value = masking.mask_loss(state.masks)
    if tcfg.lambda_mask != 0.0:
        _merge(grads, masking.mask_loss_grads(state.masks, tcfg.lambda_mask))
    loss = photometric + tv_value + tcfg.lambda_mask * mask_value
    parts = {"photometric": photometric, "tv": tv_value, "mask": mask_value}
    return loss, parts, grads


# ---------------------------------------------------------------------------
# coarse-to-fine upsampling
# ---------------------------------------------------------------------------

def _resize_axis(arr: np.ndarray, new: int, axis: int) -> np.ndarray:
    old = arr.shape[axis]
    if new == old:
        return arr
    if old == 1:
        reps = [1] * arr.ndim
        reps[axis] = new
        return np.tile(arr, reps)
    pos = np.linspace(0.0, old - 1, new)
    i0 = np.minimum(pos.astype(np.int64), old - 2)
    f = pos - i0
    a0 = np.take(arr, i0, axis=axis)
    a1 = np.take(arr, i0 + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = new
    f = f.reshape(shape)
    return a0 * (1 - f) + a1 * f


def resize_bilinear(arr: np.ndarray, new_hw: tuple) -> np.ndarray:
    out = _resize_axis(arr, new_hw[0], arr.ndim - 2)
    return _resize_axis(out, new_hw[1], arr.ndim - 1)


def upsample_coeffs(state: TrainState, new_res: int):
    """Resize every coefficient/logit grid to the new spatial resolution."""
    cfg = state.cfg
    if new_res < cfg.spatial_res:
        raise ValueError(
            f"cannot shrink grids: {cfg.spatial_res} -> {new_res}")
    if new_res == cfg.spatial_res:
        return
    if cfg.rep_kind != "dense" and new_res % 2:
        raise ValueError("wavelet grids need even resolutions")
    old_res = cfg.spatial_res
    cfg.spatial_res = new_res

    def new_shape(key, old_shape):
        plane = key.split("/")[2]
        if plane == "vec" or len(plane) == 1:
            return old_shape
        scale0 = 1 if plane[0] == "t" else None
        m_old, n_old = old_shape[-2:]
        m_new = m_old if plane[0] == "t" else m_old * new_res // old_res
        n_new = n_old if plane[1] == "t" else n_old * new_res // old_res
        return old_shape[:-2] + (m_new, n_new)

    for comp in state.field.components():
        for key in list(comp.coeffs):
            target = new_shape(key, comp.coeffs[key].shape)
            comp.coeffs[key] = resize_bilinear(comp.coeffs[key], target[-2:])
            mkey = f"mask/{key}"
            state.masks.logits[mkey] = resize_bilinear(
                state.masks.logits[mkey], target[-2:])
            state.adam.pop(key, None)
            state.adam.pop(mkey, None)
        for key in list(comp.vectors):
            comp.vectors[key] = _resize_axis(comp.vectors[key], new_res, 1)
            state.adam.pop(key, None)
    state.invalidate()


# ---------------------------------------------------------------------------
# fit loop
# ---------------------------------------------------------------------------

def build_ray_table(manifest, cams, images):
    """All training rays of a dataset: (origins, dirs, times, targets)."""
    origins, dirs, times, targets = [], [], [], []
    for fr in manifest["frames"]:
        if fr.get("split", "train") != "train":
            continue
        cam = cams[fr["camera"]]
        pixels = render.ray_grid(cam)
        o, d, t = render.generate_rays(cam, pixels, fr["time"])
        origins.append(o)
        dirs.append(d)
        times.append(t)
        targets.append(images[fr["file"]].reshape(-1, 3))
    return (np.concatenate(origins), np.concatenate(dirs),
            np.concatenate(times), np.concatenate(targets))


def fit(manifest, cams, images, cfg: FieldConfig, tcfg: TrainConfig):
    """Run the schedule; returns (state, metrics rows)."""
    if not manifest["frames"]:
        raise ValueError("dataset has no frames")
    state = TrainState.create(cfg, tcfg)
    rays = build_ray_table(manifest, cams, images)
    n_rays = len(rays[0])
    rng = np.random.default_rng(tcfg.seed)
    upsample = dict(tcfg.upsample_schedule)
    metrics = []
    decay = tcfg.lr_decay_target ** (1.0 / max(tcfg.iterations, 1))
    for it in range(1, tcfg.iterations + 1):
        state.iteration = it
        if it in upsample:
            upsample_coeffs(state, upsample[it])
        if it in tcfg.voxel_update_iters:
            update_emptiness_voxel(state)
        idx = rng.integers(0, n_rays, tcfg.batch_rays)
        batch = tuple(a[idx] for a in rays)
        loss, parts, grads = total_loss(batch, state, rng)
        lr_scale = decay ** it
        for key, grad in grads.items():
            current = _get_param(state, key)
            slot = state.adam.get(key)
            if slot is None or slot.m.shape != current.shape:
                slot = AdamSlot(np.zeros_like(current), np.zeros_like(current))
                state.adam[key] = slot
            lr = (tcfg.lr_network if state.lr_group(key) == "network"
                  else tcfg.lr_planes) * lr_scale
            state.set_param(key, adam_step(current, grad, slot, lr))
        if it == 1 or it == tcfg.iterations or it % tcfg.log_every == 0:
            metrics.append({
                "iter": it,
                "loss": loss,
                "photometric": parts["photometric"],
                "tv": parts["tv"],
                "mask": parts["mask"],
                "psnr": -10.0 * np.log10(max(parts["photometric"] / 3.0, 1e-12)),
                "sparsity": masking.sparsity(state.masks),
                "lr": tcfg.lr_planes * lr_scale,
            })
    return state, metrics


def _get_param(state: TrainState, key: str) -> np.ndarray:
    if key.startswith("mask/"):
        return state.masks.logits[key]
    if key.startswith("mlp/"):
        return dict(state.mlp.params())[key]
    comp = state.field.density if key.startswith("den/") else state.field.appearance
    if key.endswith("/vrf"):
        return comp.vrf
    if key in comp.coeffs:
        return comp.coeffs[key]
    return comp.vectors[key]


# ---------------------------------------------------------------------------
# model rendering (inference path)
# ---------------------------------------------------------------------------

def model_field_fn(state: TrainState):
    """(points, times, dirs) -> (sigma, rgb) for render.render_rays."""

    def fn(points, times, dirs):
        p4 = np.concatenate([points, np.asarray(times)[:, None]], axis=1)
        q, _ = state._query_points(state.field.density, p4)
        sigma = render.softplus(q[:, 0] + state.cfg.density_shift)
        feats, _ = state._query_points(state.field.appearance, p4)
        colors, _ = state.mlp.forward(feats, dirs)
        return sigma, colors

    return fn


def render_rays_model(state: TrainState, origins, dirs, times,
                      n_samples: int = None):
    """Deterministic (midpoint) model render of a ray bundle."""
    state.ensure_cache()
    n_samples = n_samples or state.tcfg.n_samples
    return render.render_rays(
        model_field_fn(state), origins, dirs, times, 0.0, np.inf, n_samples,
        state.cfg.box_min, state.cfg.box_max, state.background_color(),
        rng=None, skip_fn=state.occupancy_skip if state.occupancy is not None
        else None)


def render_ray(ray, state: TrainState, n_samples: int):
    """Single-ray contract: returns (color, final transmittance)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    colors, trans = render_rays_model(
        state, np.asarray([ray.origin]), np.asarray([ray.direction]),
        np.asarray([ray.t]), n_samples)
    return colors[0], trans[0]


def render_view(state: TrainState, camera: render.Camera, t: float,
                n_samples: int = None) -> np.ndarray:
    pixels = render.ray_grid(camera)
    origins, dirs, times = render.generate_rays(camera, pixels, t)
    img = np.empty((camera.height * camera.width, 3))
    chunk = 8192
    for s in range(0, len(origins), chunk):
        sl = slice(s, s + chunk)
        img[sl], _ = render_rays_model(state, origins[sl], dirs[sl],
                                       times[sl], n_samples)
    return img.reshape(camera.height, camera.width, 3)
