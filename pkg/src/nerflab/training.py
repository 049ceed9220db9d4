"""The optimization loop: patch-based seen-view supervision, the unseen-view
consistency branch driven by pose perturbation, Adam with a geometric
learning-rate schedule, CSV loss logging, and bit-exact checkpointing.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field as dc_field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .field import (
    FieldParams,
    LayerSpec,
    TapedParams,
    init_params,
    load_tensors,
    save_tensors,
)
from .geometry import (
    ConeBatch,
    Intrinsics,
    PoseBounds,
    TauRanges,
    patch_pixel_grid,
    perturb_pose,
    pixel_cones,
    pose_from_sphere,
    sample_unseen_pose,
)
from .losses import (
    LossTerms,
    MIConfig,
    loss_dist,
    loss_mi,
    loss_mse,
    loss_offset,
    loss_ppc,
    loss_smooth,
    loss_total,
)
from .rendering import MLPField, RenderConfig, render_batch

LOG_HEADER = "step,lr,mse_c,mse_f,mi_f,dist_f,offset_f,ppc_rgb_f,ppc_d_f,smooth_f,total"


@dataclass
class TrainConfig:
    # schedule
    iterations: int = 2000
    lr_start: float = 1e-3
    lr_end: float = 5e-5
    checkpoint_every: int = None  # default: iterations // 4

    # batching
    patch_size: int = 8
    patches_per_batch: int = 2
    unseen_patches_per_batch: int = None  # default: patches_per_batch
    unseen_patch_size: int = None  # default: patch_size

    # loss weights
    mu: float = 0.5
    nu: float = 0.5
    lam: float = 5e-3
    coarse_coef: float = 0.1
    smooth_weight: float = 1.0
    mi_epsilon: float = 5e-4
    mi_mask_threshold: float = 1e-4

    # modules
    deformable: bool = True  # "where": deformable fine-pass sampling
    deformable_coarse: bool = False
    offset_scale: float = 1.0
    semi_supervised: bool = True  # "how": pose-perturbation consistency branch
    smooth_enabled: bool = True
    stop_grad_unseen: bool = False

    # sampling / model
    m_coarse: int = 16
    m_fine: int = 24
    pos_levels: int = 8
    dir_levels: int = 4
    trunk_width: int = 48
    trunk_depth: int = 4
    skip_at: int = 2
    color_hidden: int = 32
    white_background: bool = True

    # pose perturbation
    p_perturb: int = 1
    tau_radius_frac: float = 0.005
    tau_azimuth: float = float(np.deg2rad(0.5))
    tau_polar: float = float(np.deg2rad(0.5))
    unseen_radius: float = 4.0
    unseen_azimuth_range: tuple = (0.0, 2.0 * np.pi)
    unseen_polar_range: tuple = (0.4, 1.4)

    seed: int = 0

    def __post_init__(self):
        if self.checkpoint_every is None:
            self.checkpoint_every = max(1, self.iterations // 4)
        if self.unseen_patches_per_batch is None:
            self.unseen_patches_per_batch = self.patches_per_batch
        if self.unseen_patch_size is None:
            self.unseen_patch_size = self.patch_size
        for name in ("iterations", "patch_size", "patches_per_batch"):
            if getattr(self, name) < 0 or (name != "iterations" and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")

    @property
    def rays_per_batch(self):
        return self.patch_size**2 * self.patches_per_batch

    @classmethod
    def full_scale(cls, **overrides):
        base = dict(
            iterations=20000,
            patches_per_batch=16,
            m_coarse=64,
            m_fine=128,
            pos_levels=10,
            trunk_width=256,
            trunk_depth=8,
            skip_at=4,
            color_hidden=128,
        )
        base.update(overrides)
        return cls(**base)

    def render_config(self) -> RenderConfig:
        return RenderConfig(
            m_coarse=self.m_coarse,
            m_fine=self.m_fine,
            pos_levels=self.pos_levels,
            dir_levels=self.dir_levels,
            deformable=self.deformable,
            deformable_coarse=self.deformable_coarse,
            offset_scale=self.offset_scale,
            white_background=self.white_background,
        )

    def layer_spec(self) -> LayerSpec:
        rc = self.render_config()
        return LayerSpec(
            in_dim=rc.in_dim,
            dir_dim=rc.dir_dim,
            trunk_width=self.trunk_width,
            trunk_depth=self.trunk_depth,
            skip_at=self.skip_at,
            color_hidden=self.color_hidden,
        )

    def mi_config(self) -> MIConfig:
        return MIConfig(epsilon=self.mi_epsilon, mask_threshold=self.mi_mask_threshold)

    def tau_ranges(self) -> TauRanges:
        return TauRanges(
            radius=self.tau_radius_frac,
            azimuth=self.tau_azimuth,
            polar=self.tau_polar,
        )

    def pose_bounds(self) -> PoseBounds:
        return PoseBounds(
            radius=self.unseen_radius,
            azimuth_range=tuple(self.unseen_azimuth_range),
            polar_range=tuple(self.unseen_polar_range),
        )

    def to_json(self):
        d = asdict(self)
        d["unseen_azimuth_range"] = list(d["unseen_azimuth_range"])
        d["unseen_polar_range"] = list(d["unseen_polar_range"])
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("unseen_azimuth_range", "unseen_polar_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_file(cls, path, **overrides):
        with open(path) as fh:
            d = json.load(fh)
        d.update(overrides)
        return cls.from_dict(d)


def lr_at(step, cfg: TrainConfig):
    """Geometric interpolation between the schedule endpoints."""
    if not 0 <= step <= cfg.iterations:
        raise ValueError(f"step {step} outside [0, {cfg.iterations}]")
    frac = step / cfg.iterations if cfg.iterations > 0 else 0.0
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


# ------------------------------------------------------------------ optimizer

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainState:
    params: FieldParams
    adam_m: dict
    adam_v: dict
    step: int
    rng: np.random.Generator

    @classmethod
    def fresh(cls, cfg: TrainConfig) -> "TrainState":
        rng = np.random.default_rng(cfg.seed)
        params = init_params(cfg.layer_spec(), rng)
        zeros = lambda: {k: np.zeros_like(v) for k, v in params.tensors.items()}
        return cls(params=params, adam_m=zeros(), adam_v=zeros(), step=0, rng=rng)


def adam_update(state: TrainState, grads: dict, lr: float):
    t = state.step + 1
    for k, g in grads.items():
        m = state.adam_m[k] = ADAM_B1 * state.adam_m[k] + (1 - ADAM_B1) * g
        v = state.adam_v[k] = ADAM_B2 * state.adam_v[k] + (1 - ADAM_B2) * g * g
        mhat = m / (1 - ADAM_B1**t)
        vhat = v / (1 - ADAM_B2**t)
        state.params.tensors[k] -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


# ------------------------------------------------------------ batch assembly


@dataclass
class SeenBatch:
    cones: ConeBatch
    gt: np.ndarray  # (R, 3)


@dataclass
class UnseenBatch:
    unseen_cones: ConeBatch
    perturbed_cones: list  # P entries, each a ConeBatch aligned pixel-by-pixel
    n_patches: int
    patch_size: int


def _concat_cones(batches):
    return ConeBatch(
        origins=np.concatenate([b.origins for b in batches], axis=0),
        directions=np.concatenate([b.directions for b in batches], axis=0),
        base_radii=np.concatenate([b.base_radii for b in batches], axis=0),
        near=batches[0].near,
        far=batches[0].far,
    )


def assemble_seen_batch(train_views, cfg: TrainConfig, rng) -> SeenBatch:
    """Random PS x PS patches from random training views."""
    ps = cfg.patch_size
    cones, gts = [], []
    for _ in range(cfg.patches_per_batch):
        view = train_views[rng.integers(len(train_views))]
        h, w = view.image.shape[:2]
        if h < ps or w < ps:
            raise ValueError(f"image {h}x{w} smaller than patch size {ps}")
        r0 = int(rng.integers(h - ps + 1))
        c0 = int(rng.integers(w - ps + 1))
        rows, cols = patch_pixel_grid(r0, c0, ps)
        cones.append(pixel_cones(view.camera, rows, cols))
        gts.append(view.image[rows, cols, :3])
    return SeenBatch(cones=_concat_cones(cones), gt=np.concatenate(gts, axis=0))


def assemble_unseen_batch(cfg: TrainConfig, intr: Intrinsics, rng) -> UnseenBatch:
    """Fresh unseen poses plus perturbed twins over the same pixel footprint."""
    ps = cfg.unseen_patch_size
    bounds = cfg.pose_bounds()
    taus = cfg.tau_ranges()
    unseen_cones = []
    perturbed_cones = [[] for _ in range(cfg.p_perturb)]
    for _ in range(cfg.unseen_patches_per_batch):
        pose = sample_unseen_pose(bounds, rng)
        pair = perturb_pose(pose, taus, rng, count=cfg.p_perturb)
        r0 = int(rng.integers(intr.height - ps + 1))
        c0 = int(rng.integers(intr.width - ps + 1))
        rows, cols = patch_pixel_grid(r0, c0, ps)
        unseen_cones.append(pixel_cones(pose_from_sphere(pose, intr), rows, cols))
        for p, sp in enumerate(pair.perturbed):
            perturbed_cones[p].append(pixel_cones(pose_from_sphere(sp, intr), rows, cols))
    return UnseenBatch(
        unseen_cones=_concat_cones(unseen_cones),
        perturbed_cones=[_concat_cones(c) for c in perturbed_cones],
        n_patches=cfg.unseen_patches_per_batch,
        patch_size=ps,
    )


# ------------------------------------------------------------------ the step


def _normalized(iv, near, far):
    scale = 1.0 / (far - near)
    s_mid = (iv.mid - near) * scale
    s_width = iv.width * scale
    return s_mid, s_width


def train_step(state: TrainState, seen: SeenBatch, unseen, cfg: TrainConfig):
    """One optimization step. Returns (state, LossBreakdown); on a non-finite
    loss the state is returned unchanged with breakdown None."""
    tape = Tape()
    taped = TapedParams(state.params, tape)
    rcfg = cfg.render_config()
    mlp = MLPField(taped, rcfg)
    micfg = cfg.mi_config()
    near, far = seen.cones.near, seen.cones.far

    res = render_batch(mlp, seen.cones, rcfg, state.rng)
    terms = {}
    for name in ("coarse", "fine"):
        out = getattr(res, name)
        offs = res.coarse_offsets if name == "coarse" else res.fine_offsets
        iv = res.coarse_intervals if name == "coarse" else res.fine_intervals
        t = LossTerms(mse=loss_mse(out.color, seen.gt))
        if offs is not None:
            t.mi = loss_mi(out.weights, offs, micfg)
            s_mid, s_width = _normalized(iv, near, far)
            t.dist = loss_dist(out.weights, s_mid, s_width)
            t.offset = loss_offset(t.mi, t.dist, cfg.lam)
        terms[name] = t

    if cfg.semi_supervised and unseen is not None:
        ucfg = replace(rcfg, deformable=False, deformable_coarse=False)
        res_u = render_batch(mlp, unseen.unseen_cones, ucfg, state.rng)
        res_ps = [
            render_batch(mlp, pc, ucfg, state.rng) for pc in unseen.perturbed_cones
        ]
        npch, ps = unseen.n_patches, unseen.patch_size
        s = ps * ps
        # depth enters the consistency and smoothness losses normalized by the
        # scene depth range so those terms share the [0, 1] scale of the colors
        dscale = 1.0 / (far - near)
        for name in ("coarse", "fine"):
            u_out = getattr(res_u, name)
            u_rgb = ad.reshape(u_out.color, (npch, s, 3))
            u_dep = ad.reshape(u_out.depth, (npch, s)) * dscale
            if cfg.stop_grad_unseen:
                u_rgb, u_dep = ad.stop_gradient(u_rgb), ad.stop_gradient(u_dep)
            p_rgb = [ad.reshape(getattr(r, name).color, (npch, s, 3)) for r in res_ps]
            p_dep = [
                ad.reshape(getattr(r, name).depth, (npch, s)) * dscale for r in res_ps
            ]
            ppc_rgb, ppc_d = loss_ppc(u_rgb, u_dep, p_rgb, p_dep)
            terms[name].ppc_rgb = ppc_rgb
            terms[name].ppc_d = ppc_d
            if cfg.smooth_enabled:
                patches = [ad.reshape(u_out.depth, (npch, ps, ps)) * dscale] + [
                    ad.reshape(getattr(r, name).depth, (npch, ps, ps)) * dscale
                    for r in res_ps
                ]
                terms[name].smooth = loss_smooth(ad.concat(patches, axis=0))

    total, breakdown = loss_total(
        terms["coarse"], terms["fine"], cfg.mu, cfg.nu, cfg.coarse_coef,
        cfg.smooth_weight,
    )
    if not np.isfinite(total.value):
        return state, None
    tape.backward(total)
    adam_update(state, taped.gradients(), lr_at(state.step, cfg))
    state.step += 1
    return state, breakdown


def log_row(step, lr, b):
    f = b.fine
    return (
        f"{step},{lr:.10g},{b.coarse['mse']:.10g},{f['mse']:.10g},{f['mi']:.10g},"
        f"{f['dist']:.10g},{f['offset']:.10g},{f['ppc_rgb']:.10g},{f['ppc_d']:.10g},"
        f"{f['smooth']:.10g},{b.total:.10g}"
    )


def train(dataset, cfg: TrainConfig, out_dir=None, log_path=None, state=None):
    """Run the full loop; returns (state, list of CSV log lines)."""
    train_views = [v for v in dataset if v.split == "train"]
    if not train_views:
        raise ValueError("dataset has no training views")
    cam = train_views[0].camera
    intr = Intrinsics(
        focal=cam.focal, width=cam.width, height=cam.height, near=cam.near, far=cam.far
    )
    if state is None:
        state = TrainState.fresh(cfg)
    lines = [LOG_HEADER]
    start = state.step
    for _ in range(start, cfg.iterations):
        lr = lr_at(state.step, cfg)
        seen = assemble_seen_batch(train_views, cfg, state.rng)
        unseen = (
            assemble_unseen_batch(cfg, intr, state.rng) if cfg.semi_supervised else None
        )
        state, breakdown = train_step(state, seen, unseen, cfg)
        if breakdown is None:
            lines.append(f"{state.step},{lr:.10g},aborted-nonfinite" + ",nan" * 8)
            continue
        lines.append(log_row(state.step, lr, breakdown))
        if out_dir and state.step % cfg.checkpoint_every == 0:
            save_checkpoint(
                os.path.join(out_dir, f"checkpoint_{state.step:06d}.ckpt"), state
            )
    if log_path:
        with open(log_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return state, lines


# -------------------------------------------------------------- checkpointing


def save_checkpoint(path, state: TrainState):
    spec = state.params.spec
    tensors = dict(state.params.tensors)
    tensors.update({f"adam_m/{k}": v for k, v in state.adam_m.items()})
    tensors.update({f"adam_v/{k}": v for k, v in state.adam_v.items()})
    meta = {
        "kind": "train-state",
        "step": state.step,
        "spec": {
            "in_dim": spec.in_dim,
            "dir_dim": spec.dir_dim,
            "trunk_width": spec.trunk_width,
            "trunk_depth": spec.trunk_depth,
            "skip_at": spec.skip_at,
            "color_hidden": spec.color_hidden,
        },
        "rng_state": json.loads(json.dumps(state.rng.bit_generator.state)),
    }
    with open(path, "wb") as fh:
        save_tensors(fh, tensors, meta)


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        tensors, meta = load_tensors(fh)
    if meta.get("kind") != "train-state":
        raise ValueError(f"{path}: not a training checkpoint")
    params, adam_m, adam_v = {}, {}, {}
    for k, v in tensors.items():
        if k.startswith("adam_m/"):
            adam_m[k[7:]] = v
        elif k.startswith("adam_v/"):
            adam_v[k[7:]] = v
        else:
            params[k] = v
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return TrainState(
        params=FieldParams(spec=LayerSpec(**meta["spec"]), tensors=params),
        adam_m=adam_m,
        adam_v=adam_v,
        step=meta["step"],
        rng=rng,
    )
