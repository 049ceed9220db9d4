"""Radiance-field MLP with a density head, view-conditioned color head, and a
per-sample offset head.

The offset head is a single linear layer on the trunk feature whose weights
and bias all start at exactly 1e-7, keeping early offsets negligible so the
undeformed pipeline is recovered at initialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import DualArray, as_dual, concat, matmul, sigmoid, softplus

OFFSET_INIT = 1e-7


@dataclass
class LayerSpec:
    """Architecture description. Defaults are the desk-scale preset."""

    in_dim: int = 60  # 2 * 3 * levels for position encoding
    dir_dim: int = 27  # raw direction + plain encoding
    trunk_width: int = 48
    trunk_depth: int = 4
    skip_at: int = 2
    color_hidden: int = 32

    @classmethod
    def full_scale(cls, in_dim=60, dir_dim=27):
        return cls(
            in_dim=in_dim,
            dir_dim=dir_dim,
            trunk_width=256,
            trunk_depth=8,
            skip_at=4,
            color_hidden=128,
        )


@dataclass
class FieldParams:
    """All learnable tensors, as a name -> ndarray mapping plus the spec."""

    spec: LayerSpec
    tensors: dict = dc_field(default_factory=dict)

    def names(self):
        return list(self.tensors.keys())

    def copy(self):
        return FieldParams(spec=self.spec, tensors={k: v.copy() for k, v in self.tensors.items()})


def init_params(spec: LayerSpec, rng) -> FieldParams:
    """Fan-in-scaled uniform init; offset head pinned to exactly 1e-7."""
    tensors = {}

    def dense(name, fan_in, fan_out):
        if fan_in < 1 or fan_out < 1:
            raise ValueError(f"zero-width layer {name}")
        a = np.sqrt(6.0 / fan_in)
        tensors[f"{name}.w"] = rng.uniform(-a, a, size=(fan_in, fan_out))
        tensors[f"{name}.b"] = np.zeros(fan_out)

    in_dim = spec.in_dim
    for i in range(spec.trunk_depth):
        fan = in_dim if i == 0 else spec.trunk_width
        if i == spec.skip_at:
            fan += spec.in_dim
        dense(f"trunk{i}", fan, spec.trunk_width)
    dense("density", spec.trunk_width, 1)
    dense("color0", spec.trunk_width + spec.dir_dim, spec.color_hidden)
    dense("color1", spec.color_hidden, 3)
    tensors["offset.w"] = np.full((spec.trunk_width, 1), OFFSET_INIT)
    tensors["offset.b"] = np.full(1, OFFSET_INIT)
    return FieldParams(spec=spec, tensors=tensors)


class TapedParams:
    """Per-step view of FieldParams as tape-attached leaf DualArrays."""

    def __init__(self, params: FieldParams, tape):
        self.spec = params.spec
        self.leaves = {k: DualArray(v, tape) for k, v in params.tensors.items()}

    def __getitem__(self, name):
        return self.leaves[name]

    def gradients(self):
        return {
            k: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for k, v in self.leaves.items()
        }


@dataclass
class FieldOutput:
    sigma: object  # (N,)
    color: object  # (N, 3)
    feature: object  # (N, d)
    offset: object  # (N,)


def field_forward(p, enc, dir_enc, want_offset=True) -> FieldOutput:
    """Evaluate the MLP on encoded positions (N, in_dim) and directions.

    `p` is a TapedParams (training) or FieldParams wrapped as constants.
    Density and offset depend only on position; direction feeds the color
    head alone.
    """
    spec = p.spec
    enc = as_dual(enc)
    if enc.shape[-1] != spec.in_dim:
        raise ad.ShapeError(
            f"encoded input has {enc.shape[-1]} features, expected {spec.in_dim}"
        )

    def lin(name, x):
        return matmul(x, p[name + ".w"]) + p[name + ".b"]

    h = enc
    for i in range(spec.trunk_depth):
        if i == spec.skip_at and i > 0:
            h = concat([h, enc], axis=-1)
        h = ad.relu(lin(f"trunk{i}", h))
    feature = h

    sigma = softplus(ad.reshape(lin("density", feature), (enc.shape[0],)))
    dir_enc = np.asarray(ad._val(dir_enc), dtype=np.float64)
    if dir_enc.shape != (enc.shape[0], spec.dir_dim):
        raise ad.ShapeError(
            f"direction encoding shape {dir_enc.shape} != ({enc.shape[0]}, {spec.dir_dim})"
        )
    ch = ad.relu(lin("color0", concat([feature, DualArray(dir_enc)], axis=-1)))
    color = sigmoid(lin("color1", ch))

    offset = None
    if want_offset:
        offset = ad.reshape(lin("offset", feature), (enc.shape[0],))
    return FieldOutput(sigma=sigma, color=color, feature=feature, offset=offset)


class ConstParams:
    """FieldParams exposed with the TapedParams interface but no tape."""

    def __init__(self, params: FieldParams):
        self.spec = params.spec
        self._tensors = params.tensors

    def __getitem__(self, name):
        return DualArray(self._tensors[name])


# ------------------------------------------------------------- checkpointing
#
# Flat container, bit-exact round trip:
#   line 1: b"NERFLAB-PARAMS v1\n"
#   line 2: JSON header {"meta": {...}, "tensors": {name: shape, ...}} + "\n"
#   then for each tensor, in header order, raw little-endian float64 bytes,
#   row-major (C order).

MAGIC = b"NERFLAB-PARAMS v1\n"


def save_tensors(fh, tensors: dict, meta: dict | None = None):
    # keys sorted so the byte order matches the (sort_keys) JSON header order
    header = {
        "meta": meta or {},
        "tensors": {k: list(tensors[k].shape) for k in sorted(tensors)},
    }
    fh.write(MAGIC)
    fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
    for k in header["tensors"]:
        fh.write(np.ascontiguousarray(tensors[k], dtype="<f8").tobytes())


def load_tensors(fh):
    magic = fh.readline()
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic: {magic!r}")
    header = json.loads(fh.readline().decode())
    tensors = {}
    for name, shape in header["tensors"].items():
        count = int(np.prod(shape)) if shape else 1
        buf = fh.read(count * 8)
        tensors[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return tensors, header["meta"]


def save_params(path, params: FieldParams):
    meta = {
        "kind": "field-params",
        "spec": {
            "in_dim": params.spec.in_dim,
            "dir_dim": params.spec.dir_dim,
            "trunk_width": params.spec.trunk_width,
            "trunk_depth": params.spec.trunk_depth,
            "skip_at": params.spec.skip_at,
            "color_hidden": params.spec.color_hidden,
        },
    }
    with open(path, "wb") as fh:
        save_tensors(fh, params.tensors, meta)


def load_params(path) -> FieldParams:
    with open(path, "rb") as fh:
        tensors, meta = load_tensors(fh)
    if meta.get("kind") != "field-params":
        raise ValueError("not a field-params checkpoint")
    return FieldParams(spec=LayerSpec(**meta["spec"]), tensors=tensors)
