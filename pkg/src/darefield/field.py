"""Plane-pair factorized field over learnable wavelet coefficients.

A 4D field is a sum over rank components of products of paired 2D planes
(xy*zt + xz*yt + yz*xt); the static 3D variant pairs each spatial plane with
a vector over the complementary axis. Planes are never stored directly:
each is reconstructed from its coefficient grids (dual-tree complex wavelet,
plain DWT, or a dense grid for the ablation baseline) with trainable masks
applied to the coefficients first. Point queries bilinearly sample the
cached planes, multiply paired samples per rank, concatenate and fuse
through a learned matrix.

All query code is batched over points; backward passes are hand-written
vector-Jacobian products that exactly mirror the forward graph.
"""

import json
from dataclasses import dataclass, field as dataclass_field, asdict

import numpy as np

from . import dtcwt2d, masking
from .filters import get_dual_tree_set, get_dwt_set

PAIRINGS_DYNAMIC = (("xy", "zt"), ("xz", "yt"), ("yz", "xt"))
PAIRINGS_STATIC = (("xy", "z"), ("xz", "y"), ("yz", "x"))
SPATIAL_PLANES = ("xy", "xz", "yz")

REP_KINDS = ("dare", "dwt", "dense")
MODES = ("dynamic4d", "static3d")


@dataclass
class FieldConfig:
    spatial_res: int = 16
    temporal_res: int = 8
    app_ranks: tuple = (8, 8, 8)
    den_ranks: tuple = (4, 4, 4)
    feature_dim: int = 16
    mode: str = "dynamic4d"
    rep_kind: str = "dare"
    wavelet: str = "nearsyma"
    box_min: tuple = (-1.0, -1.0, -1.0)
    box_max: tuple = (1.0, 1.0, 1.0)
    time_range: tuple = (0.0, 1.0)
    init_scale: float = 0.1
    density_shift: float = -5.0

    def __post_init__(self):
        self.app_ranks = tuple(int(r) for r in self.app_ranks)
        self.den_ranks = tuple(int(r) for r in self.den_ranks)
        self.box_min = tuple(float(v) for v in self.box_min)
        self.box_max = tuple(float(v) for v in self.box_max)
        self.time_range = tuple(float(v) for v in self.time_range)
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.rep_kind not in REP_KINDS:
            raise ValueError(
                f"rep_kind must be one of {REP_KINDS}, got {self.rep_kind!r}")
        if any(r < 1 for r in self.app_ranks + self.den_ranks):
            raise ValueError("ranks must be >= 1")
        if self.rep_kind != "dense":
            if self.spatial_res % 2 or (self.mode == "dynamic4d"
                                        and self.temporal_res % 2):
                raise ValueError("grid resolutions must be even for wavelet reps")
        if len(self.app_ranks) != 3 or len(self.den_ranks) != 3:
            raise ValueError("ranks are per plane pairing: need 3 values")
        return self

    def axis_res(self, axis: str) -> int:
        return self.temporal_res if axis == "t" else self.spatial_res

    def plane_shape(self, plane: str) -> tuple:
        return tuple(self.axis_res(a) for a in plane)

    def pairings(self):
        return PAIRINGS_DYNAMIC if self.mode == "dynamic4d" else PAIRINGS_STATIC

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        return cls(**d)


def filter_set_for(cfg: FieldConfig):
    if cfg.rep_kind == "dare":
        return get_dual_tree_set(cfg.wavelet)
    if cfg.rep_kind == "dwt":
        return get_dwt_set(cfg.wavelet)
    return None


def coeff_shapes(kind: str, ranks: int, m: int, n: int) -> dict:
    if kind == "dare":
        return {"approx": (ranks, m, n),
                "real": (ranks, 6, m // 2, n // 2),
                "imag": (ranks, 6, m // 2, n // 2)}
    if kind == "dwt":
        return {"approx": (ranks, m // 2, n // 2),
                "details": (ranks, 3, m // 2, n // 2)}
    return {"plane": (ranks, m, n)}


class FieldRep:
    """Coefficient grids + fusion head for one field component."""

    def __init__(self, cfg: FieldConfig, name: str, ranks: tuple, out_dim: int,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.name = name
        self.ranks = tuple(ranks)
        self.out_dim = int(out_dim)
        self.coeffs: dict = {}
        self.vectors: dict = {}
        scale = cfg.init_scale
        for p, (plane_a, plane_b) in enumerate(cfg.pairings()):
            r = self.ranks[p]
            m, n = cfg.plane_shape(plane_a)
            for key, shape in coeff_shapes(cfg.rep_kind, r, m, n).items():
                self.coeffs[f"{name}/p{p}/{plane_a}/{key}"] = \
                    scale * rng.standard_normal(shape)
            if cfg.mode == "dynamic4d":
                mb, nb = cfg.plane_shape(plane_b)
                for key, shape in coeff_shapes(cfg.rep_kind, r, mb, nb).items():
                    self.coeffs[f"{name}/p{p}/{plane_b}/{key}"] = \
                        scale * rng.standard_normal(shape)
            else:
                self.vectors[f"{name}/p{p}/vec"] = \
                    scale * rng.standard_normal((r, cfg.spatial_res))
        total_rank = sum(self.ranks)
        self.vrf = scale * rng.standard_normal((total_rank, self.out_dim))

    # -- parameter registry -------------------------------------------------
    def params(self):
        yield from sorted(self.coeffs.items())
        yield from sorted(self.vectors.items())
        yield f"{self.name}/vrf", self.vrf

    def set_param(self, key: str, value: np.ndarray):
        if key == f"{self.name}/vrf":
            self.vrf = value
        elif key in self.coeffs:
            self.coeffs[key] = value
        elif key in self.vectors:
            self.vectors[key] = value
        else:
            raise KeyError(key)

    def group_keys(self, p: int, plane: str):
        kind = self.cfg.rep_kind
        prefix = f"{self.name}/p{p}/{plane}"
        if kind == "dare":
            return [f"{prefix}/approx", f"{prefix}/real", f"{prefix}/imag"]
        if kind == "dwt":
            return [f"{prefix}/approx", f"{prefix}/details"]
        return [f"{prefix}/plane"]

    def coeff_shapes_all(self) -> dict:
        return {k: v.shape for k, v in self.coeffs.items()}

    # -- plane reconstruction -----------------------------------------------
    def reconstruct_planes(self, masks) -> dict:
        """Masked coefficients -> plane stacks (R, m, n) per (pairing, plane)."""
        cfg = self.cfg
        fset = filter_set_for(cfg)
        cache = {}
        for p, pairing in enumerate(cfg.pairings()):
            planes = pairing if cfg.mode == "dynamic4d" else pairing[:1]
            for plane in planes:
                keys = self.group_keys(p, plane)
                masked = [masking.apply_mask(self.coeffs[k], masks[f"mask/{k}"])
                          if masks is not None else self.coeffs[k]
                          for k in keys]
                if cfg.rep_kind == "dare":
                    grid = dtcwt2d.idtcwt_batched(*masked, fset)
                elif cfg.rep_kind == "dwt":
                    grid = dtcwt2d.idwt2d_batched(*masked, fset)
                else:
                    grid = masked[0]
                cache[(p, plane)] = grid
        return cache

    def plane_grads_to_coeffs(self, p: int, plane: str, grad_plane, masks,
                              grads: dict):
        """Adjoint of reconstruct_planes for one plane stack, accumulating
        coefficient and mask-logit grads into ``grads``."""
        cfg = self.cfg
        fset = filter_set_for(cfg)
        keys = self.group_keys(p, plane)
        if cfg.rep_kind == "dare":
            parts = dtcwt2d.idtcwt_adjoint_batched(grad_plane, fset)
        elif cfg.rep_kind == "dwt":
            parts = dtcwt2d.idwt2d_adjoint_batched(grad_plane, fset)
        else:
            parts = (grad_plane,)
        for key, g_masked in zip(keys, parts):
            if masks is not None:
                g_coeff, g_logit = masking.apply_mask_backward(
                    g_masked, self.coeffs[key], masks[f"mask/{key}"])
                _accum(grads, f"mask/{key}", g_logit)
            else:
                g_coeff = g_masked
            _accum(grads, key, g_coeff)


class Field:
    """Density + appearance components over a shared configuration."""

    def __init__(self, cfg: FieldConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.density = FieldRep(cfg, "den", cfg.den_ranks, 1, rng)
        self.appearance = FieldRep(cfg, "app", cfg.app_ranks,
                                   cfg.feature_dim, rng)

    def components(self):
        return (self.density, self.appearance)

    def params(self):
        for comp in self.components():
            yield from comp.params()

    def set_param(self, key, value):
        comp = self.density if key.startswith("den/") else self.appearance
        comp.set_param(key, value)

    def coeff_shapes_all(self) -> dict:
        out = {}
        for comp in self.components():
            out.update(comp.coeff_shapes_all())
        return out

    def build_masks(self, init: float = 2.0) -> masking.MaskSet:
        return masking.MaskSet.for_shapes(
            {f"mask/{k}": shape for k, shape in self.coeff_shapes_all().items()},
            init=init)

    def reconstruct(self, masks) -> dict:
        return {comp.name: comp.reconstruct_planes(masks)
                for comp in self.components()}


def _accum(grads: dict, key: str, value: np.ndarray):
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_plane(plane: np.ndarray, u: float, v: float) -> float:
    """Bilinear sample with align-corners mapping; out-of-range inputs clamp."""
    vals, _ = _sample_planes(np.asarray(plane, float)[None],
                             np.atleast_1d(float(u)), np.atleast_1d(float(v)))
    return float(vals[0, 0])


def _sample_planes(planes: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample (R, m, n) planes at P points; returns (R, P) and scatter ctx."""
    r, m, n = planes.shape
    pu = np.clip(u, 0.0, 1.0) * (m - 1)
    pv = np.clip(v, 0.0, 1.0) * (n - 1)
    i0 = np.minimum(pu.astype(np.int64), m - 2) if m > 1 else np.zeros(len(pu), np.int64)
    j0 = np.minimum(pv.astype(np.int64), n - 2) if n > 1 else np.zeros(len(pv), np.int64)
    fu = pu - i0
    fv = pv - j0
    w00 = (1 - fu) * (1 - fv)
    w01 = (1 - fu) * fv
    w10 = fu * (1 - fv)
    w11 = fu * fv
    vals = (planes[:, i0, j0] * w00 + planes[:, i0, j0 + 1] * w01
            + planes[:, i0 + 1, j0] * w10 + planes[:, i0 + 1, j0 + 1] * w11)
    ctx = (i0, j0, (w00, w01, w10, w11), (m, n))
    return vals, ctx


def _scatter_plane_grads(d_vals: np.ndarray, ctx) -> np.ndarray:
    """Adjoint of _sample_planes: (R, P) value grads -> (R, m, n) plane grads."""
    i0, j0, (w00, w01, w10, w11), (m, n) = ctx
    r = d_vals.shape[0]
    base = i0 * n + j0
    flat_idx = np.concatenate([base, base + 1, base + n, base + n + 1])
    weights = np.concatenate([w00, w01, w10, w11])
    rank_off = (np.arange(r) * (m * n))[:, None]
    idx = (rank_off + flat_idx[None, :]).ravel()
    vals = (np.tile(d_vals, (1, 4)) * weights[None, :]).ravel()
    return np.bincount(idx, weights=vals, minlength=r * m * n).reshape(r, m, n)


def _sample_vectors(vectors: np.ndarray, u: np.ndarray):
    """Linear interp of (R, N) vectors at P points (align corners, clamp)."""
    r, nv = vectors.shape
    p = np.clip(u, 0.0, 1.0) * (nv - 1)
    i0 = np.minimum(p.astype(np.int64), nv - 2) if nv > 1 else np.zeros(len(p), np.int64)
    f = p - i0
    vals = vectors[:, i0] * (1 - f) + vectors[:, i0 + 1] * f
    return vals, (i0, f, nv)


def _scatter_vector_grads(d_vals: np.ndarray, ctx) -> np.ndarray:
    i0, f, nv = ctx
    r = d_vals.shape[0]
    idx = (np.arange(r) * nv)[:, None] + np.concatenate([i0, i0 + 1])[None, :]
    vals = np.concatenate([d_vals * (1 - f)[None, :],
                           d_vals * f[None, :]], axis=1)
    return np.bincount(idx.ravel(), weights=vals.ravel(),
                       minlength=r * nv).reshape(r, nv)


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def normalize_points(cfg: FieldConfig, points: np.ndarray) -> np.ndarray:
    """World coordinates -> unit cube (and unit time for 4D points)."""
    points = np.asarray(points, float)
    lo = np.array(cfg.box_min)
    hi = np.array(cfg.box_max)
    out = np.empty_like(points)
    out[:, :3] = (points[:, :3] - lo) / (hi - lo)
    if points.shape[1] == 4:
        t0, t1 = cfg.time_range
        out[:, 3] = (points[:, 3] - t0) / (t1 - t0) if t1 > t0 else 0.0
    return out


_AXIS_COL = {"x": 0, "y": 1, "z": 2, "t": 3}


class QueryContext:
    """Saved forward activations for the hand-written backward pass."""

    def __init__(self, rep: FieldRep, masks):
        self.rep = rep
        self.masks = masks
        self.pair_ctx = []       # per pairing: saved sampling + product info
        self.prods = None        # (R_total, P)


def query_dynamic(points: np.ndarray, rep: FieldRep, cache: dict, masks=None):
    """Fused features for (P, 4) world points; returns (features, ctx)."""
    if rep.cfg.mode != "dynamic4d":
        raise ValueError("query_dynamic requires a dynamic4d field")
    return _query(points, rep, cache, masks)


def query_static(points: np.ndarray, rep: FieldRep, cache: dict, masks=None):
    """Fused features for (P, 3) world points in static mode."""
    if rep.cfg.mode != "static3d":
        raise ValueError("query_static requires a static3d field")
    return _query(points, rep, cache, masks)


def _query(points, rep, cache, masks):
    cfg = rep.cfg
    points = np.asarray(points, float)
    n_pts = points.shape[0]
    if n_pts == 0:
        return np.zeros((0, rep.out_dim)), QueryContext(rep, masks)
    u = normalize_points(cfg, points)
    ctx = QueryContext(rep, masks)
    prods = []
    for p, pairing in enumerate(cfg.pairings()):
        plane_a = pairing[0]
        ua = u[:, _AXIS_COL[plane_a[0]]]
        va = u[:, _AXIS_COL[plane_a[1]]]
        vals_a, sctx_a = _sample_planes(cache[rep.name][(p, plane_a)], ua, va)
        if cfg.mode == "dynamic4d":
            plane_b = pairing[1]
            ub = u[:, _AXIS_COL[plane_b[0]]]
            vb = u[:, _AXIS_COL[plane_b[1]]]
            vals_b, sctx_b = _sample_planes(cache[rep.name][(p, plane_b)], ub, vb)
        else:
            axis = pairing[1]
            vals_b, sctx_b = _sample_vectors(rep.vectors[f"{rep.name}/p{p}/vec"],
                                             u[:, _AXIS_COL[axis]])
        prods.append(vals_a * vals_b)
        ctx.pair_ctx.append((p, pairing, vals_a, sctx_a, vals_b, sctx_b))
    ctx.prods = np.concatenate(prods, axis=0)          # (R_total, P)
    features = ctx.prods.T @ rep.vrf                   # (P, out_dim)
    return features, ctx


def query_backward_planes(ctx: QueryContext, d_features: np.ndarray):
    """Backward through fusion/products/sampling only.

    Returns (grads, plane_grads): ``grads`` holds fusion-matrix and
    axis-vector gradients; ``plane_grads`` holds (component, pairing, plane)
    -> (R, m, n) gradients still in plane space, so callers accumulating
    over ray chunks can run the transform adjoint once at the end.
    """
    rep = ctx.rep
    grads: dict = {}
    plane_grads: dict = {}
    if ctx.prods is None or d_features.shape[0] == 0:
        return grads, plane_grads
    d_features = np.asarray(d_features, float)
    grads[f"{rep.name}/vrf"] = ctx.prods @ d_features
    d_prods = rep.vrf @ d_features.T                   # (R_total, P)
    offset = 0
    for p, pairing, vals_a, sctx_a, vals_b, sctx_b in ctx.pair_ctx:
        r = rep.ranks[p]
        d_pair = d_prods[offset:offset + r]
        offset += r
        d_vals_a = d_pair * vals_b
        d_vals_b = d_pair * vals_a
        plane_a = pairing[0]
        plane_grads[(rep.name, p, plane_a)] = \
            _scatter_plane_grads(d_vals_a, sctx_a)
        if rep.cfg.mode == "dynamic4d":
            plane_b = pairing[1]
            plane_grads[(rep.name, p, plane_b)] = \
                _scatter_plane_grads(d_vals_b, sctx_b)
        else:
            _accum(grads, f"{rep.name}/p{p}/vec",
                   _scatter_vector_grads(d_vals_b, sctx_b))
    return grads, plane_grads


def accumulate_plane_grads(total: dict, part: dict):
    for key, value in part.items():
        if key in total:
            total[key] = total[key] + value
        else:
            total[key] = value


def apply_plane_adjoints(fld, plane_grads: dict, masks, grads: dict):
    """Transform-adjoint accumulated plane grads into coefficient/mask grads."""
    for (comp_name, p, plane), g_plane in plane_grads.items():
        comp = fld.density if comp_name == "den" else fld.appearance
        comp.plane_grads_to_coeffs(p, plane, g_plane, masks, grads)


def query_backward(ctx: QueryContext, d_features: np.ndarray) -> dict:
    """Gradients for every learnable touched by the forward query."""
    rep = ctx.rep
    grads, plane_grads = query_backward_planes(ctx, d_features)
    for (comp_name, p, plane), g_plane in plane_grads.items():
        rep.plane_grads_to_coeffs(p, plane, g_plane, ctx.masks, grads)
    return grads
