"""The keypoint-guided viewpoint network and its baseline variants.

Two streams: a small conv stack produces global image features and, at its
last conv layer, a grid of activation depth columns; the keypoint stream
turns the (map, class) pair into a softmax weight map over that grid via
three bias-free linear projections. The attention-weighted column sum is
concatenated to the image features and fed through one hidden layer into
per-object-class, per-angle prediction heads.

Variants (matching the comparison table rows):

* ``ch_full``       - weight map from keypoint map and class
* ``ch_map_only``   - weight map from the keypoint map alone
* ``ch_class_only`` - weight map from the class vector alone
* ``fixed_gaussian``/``fixed_uniform`` - constant weight map, nothing learned
* ``image_only``    - no keypoint stream at all

Because the keypoint-stream projections carry no bias, all-zero keypoint
inputs force a uniform weight map; the blank-input ablation leans on this.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .geometry import bin_to_angle, default_loss_temperature
from .keypoints import keypoint_map, one_hot_class
from .meshes import global_keypoint_index, keypoint_registry, total_keypoint_classes
from .tensor import Tensor

VARIANTS = ("ch_full", "ch_map_only", "ch_class_only",
            "fixed_gaussian", "fixed_uniform", "image_only")
ANGLE_NAMES = ("az", "el", "ti")


@dataclass
class ModelConfig:
    image_size: int = 64
    # (out_channels, kernel, stride, pad) per conv layer; a 2x2 max pool
    # follows the first layer and another follows the last (attended) layer
    conv_specs: tuple[tuple[int, int, int, int], ...] = (
        (8, 3, 2, 1), (16, 3, 1, 1), (24, 3, 2, 1), (32, 3, 1, 1))
    attention_grid: tuple[int, int] = (8, 8)
    kp_pool_factor: int = 8
    kp_map_feature_dim: int = 64
    kp_class_feature_dim: int = 16
    image_feature_dim: int = 128
    fused_dim: int = 128
    n_bins: int = 24
    map_kind: str = "chebyshev"
    loss_t: float = field(default_factory=lambda: default_loss_temperature(24))
    kp_classes: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {k: tuple(v) for k, v in keypoint_registry().items()})
    variant: str = "ch_full"

    @property
    def object_classes(self) -> tuple[str, ...]:
        return tuple(self.kp_classes)

    @property
    def total_kp_classes(self) -> int:
        return total_keypoint_classes(self.kp_classes)

    @property
    def attended_channels(self) -> int:
        return self.conv_specs[-1][0]

    def kp_index(self, obj_class: str, kp_name: str) -> int:
        return global_keypoint_index(self.kp_classes, obj_class, kp_name)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"model.variant: {self.variant!r} not in {VARIANTS}")
        h, w = self._trace_conv_shape()
        if (h, w) != tuple(self.attention_grid):
            raise ValueError(f"model.attention_grid: conv stack yields {(h, w)}, "
                             f"config says {tuple(self.attention_grid)}")
        if self.image_size % self.kp_pool_factor != 0:
            raise ValueError("model.kp_pool_factor: must divide image_size")
        pooled = (self.image_size // self.kp_pool_factor) ** 2
        if self.kp_map_feature_dim < 1 or pooled < 1:
            raise ValueError("model.kp_map_feature_dim: invalid")
        if self.n_bins < 2:
            raise ValueError("model.n_bins: must be >= 2")
        if self.loss_t <= 0:
            raise ValueError("model.loss_t: must be > 0")
        if not self.kp_classes:
            raise ValueError("model.kp_classes: at least one object class required")

    def _trace_conv_shape(self) -> tuple[int, int]:
        h = w = self.image_size
        for i, (_, k, stride, pad) in enumerate(self.conv_specs):
            h = T.conv_out_size(h, k, stride, pad)
            w = T.conv_out_size(w, k, stride, pad)
            if i == 0:
                h, w = h // 2, w // 2  # pool after the first conv layer
        return h, w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_specs"] = [list(cs) for cs in self.conv_specs]
        d["attention_grid"] = list(self.attention_grid)
        d["kp_classes"] = {k: list(v) for k, v in self.kp_classes.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "conv_specs" in d:
            d["conv_specs"] = tuple(tuple(cs) for cs in d["conv_specs"])
        if "attention_grid" in d:
            d["attention_grid"] = tuple(d["attention_grid"])
        if "kp_classes" in d:
            d["kp_classes"] = {k: tuple(v) for k, v in d["kp_classes"].items()}
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def default_config(variant: str = "ch_full", **overrides) -> ModelConfig:
    cfg = ModelConfig(variant=variant, **overrides)
    cfg.validate()
    return cfg


# -- parameters -----------------------------------------------------------


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _uniform_fan(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh parameters: He fan-in for rectified layers, uniform +-1/sqrt(fan_in)
    for the bias-free keypoint projections and the prediction heads."""
    config.validate()
    p: dict[str, Tensor] = {}

    def param(name, arr):
        p[name] = Tensor(arr, requires_grad=True)

    c_in = 3
    for i, (c_out, k, _, _) in enumerate(config.conv_specs, start=1):
        param(f"conv{i}_w", _he(rng, (c_out, c_in, k, k), c_in * k * k))
        param(f"conv{i}_b", np.zeros(c_out))
        c_in = c_out

    h, w = config.attention_grid
    flat = config.attended_channels * (h // 2) * (w // 2)  # pool after attended layer
    param("img_proj_w", _he(rng, (config.image_feature_dim, flat), flat))
    param("img_proj_b", np.zeros(config.image_feature_dim))

    variant = config.variant
    pooled = (config.image_size // config.kp_pool_factor) ** 2
    attn_cells = h * w
    if variant in ("ch_full", "ch_map_only"):
        param("kp_map_proj", _uniform_fan(rng, (config.kp_map_feature_dim, pooled), pooled))
    if variant in ("ch_full", "ch_class_only"):
        param("kp_class_proj", _uniform_fan(
            rng, (config.kp_class_feature_dim, config.total_kp_classes), config.total_kp_classes))
    if variant == "ch_full":
        d_in = config.kp_map_feature_dim + config.kp_class_feature_dim
        param("attn_proj", _uniform_fan(rng, (attn_cells, d_in), d_in))
    elif variant == "ch_map_only":
        param("attn_proj", _uniform_fan(rng, (attn_cells, config.kp_map_feature_dim),
                                        config.kp_map_feature_dim))
    elif variant == "ch_class_only":
        param("attn_proj", _uniform_fan(rng, (attn_cells, config.kp_class_feature_dim),
                                        config.kp_class_feature_dim))

    fuse_in = config.image_feature_dim
    if variant != "image_only":
        fuse_in += config.attended_channels
    param("fuse_w", _he(rng, (config.fused_dim, fuse_in), fuse_in))
    param("fuse_b", np.zeros(config.fused_dim))

    for obj in config.object_classes:
        for angle in ANGLE_NAMES:
            param(f"head_{obj}_{angle}_w",
                  _uniform_fan(rng, (config.n_bins, config.fused_dim), config.fused_dim))
            param(f"head_{obj}_{angle}_b", np.zeros(config.n_bins))
    return p


def param_count(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


def params_hash(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in params:
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).astype("<f8").tobytes())
    return h.hexdigest()


# -- forward passes --------------------------------------------------------


def fixed_attention_map(kind: str, h: int, w: int) -> np.ndarray:
    """Constant weight map for the fixed-attention baselines.

    gaussian: centered kernel, sigma scaled as 6/13 of the grid height,
    normalized to sum 1; uniform: a box filter.
    """
    if h < 1 or w < 1:
        raise ValueError("attention grid dims must be positive")
    if kind == "uniform":
        return np.full((h, w), 1.0 / (h * w))
    if kind == "gaussian":
        sigma = 6.0 * (h / 13.0)
        ci, cj = (h - 1) / 2.0, (w - 1) / 2.0
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        g = np.exp(-(((ii - ci) ** 2) + ((jj - cj) ** 2)) / (2.0 * sigma * sigma))
        return g / g.sum()
    raise ValueError(f"unknown fixed attention kind {kind!r}")


def image_stream(params: dict[str, Tensor], config: ModelConfig,
                 images: Tensor) -> tuple[Tensor, Tensor]:
    """(B,3,s,s) images -> (attended conv activations, global image features)."""
    x = images
    acts = None
    n = len(config.conv_specs)
    for i, (_, _, stride, pad) in enumerate(config.conv_specs, start=1):
        x = T.relu(T.conv2d(x, params[f"conv{i}_w"], params[f"conv{i}_b"], stride=stride, pad=pad))
        if i == 1:
            x = T.maxpool2d(x, 2, 2)
        if i == n:
            acts = x
    pooled = T.maxpool2d(acts, 2, 2)
    b = pooled.data.shape[0]
    flat = T.reshape(pooled, (b, -1))
    feats = T.relu(T.linear(flat, params["img_proj_w"], params["img_proj_b"]))
    return acts, feats


def keypoint_stream(params: dict[str, Tensor], config: ModelConfig,
                    kp_maps: Tensor, kp_classes: Tensor, conv_acts: Tensor,
                    variant: str | None = None) -> tuple[Tensor, Tensor]:
    """Turn keypoint inputs into attended features.

    kp_maps (B,s,s), kp_classes (B,total), conv_acts (B,d,h,w) ->
    (kp_features (B,d), weight_map (B,h,w)). The three projections are
    bias-free, so zero inputs give the uniform map.
    """
    variant = variant or config.variant
    b = conv_acts.data.shape[0]
    h, w = config.attention_grid
    if variant in ("fixed_gaussian", "fixed_uniform"):
        m = fixed_attention_map(variant.removeprefix("fixed_"), h, w)
        wmap = Tensor(np.broadcast_to(m, (b, h, w)).copy())
        return T.scale_sum(conv_acts, wmap), wmap
    if variant == "image_only":
        raise ValueError("image_only has no keypoint stream")

    if variant in ("ch_full", "ch_map_only"):
        pf = config.kp_pool_factor
        maps4 = T.reshape(kp_maps, (b, 1, config.image_size, config.image_size))
        pooled = T.maxpool2d(maps4, pf, pf)
        flat = T.reshape(pooled, (b, -1))
        map_feats = T.linear(flat, params["kp_map_proj"])
    if variant in ("ch_full", "ch_class_only"):
        class_feats = T.linear(kp_classes, params["kp_class_proj"])

    if variant == "ch_full":
        joint = T.concat(map_feats, class_feats)
    elif variant == "ch_map_only":
        joint = map_feats
    else:
        joint = class_feats
    logits = T.linear(joint, params["attn_proj"])
    wmap = T.reshape(T.softmax(logits), (b, h, w))
    return T.scale_sum(conv_acts, wmap), wmap


def forward_batch(params: dict[str, Tensor], config: ModelConfig,
                  images: np.ndarray, kp_maps: np.ndarray | None,
                  kp_classes: np.ndarray | None,
                  variant: str | None = None) -> tuple[Tensor, Tensor | None]:
    """Shared trunk up to the fused hidden layer.

    Returns (fused (B,fused_dim), weight_map (B,h,w) or None). Head
    selection happens per object class afterwards.
    """
    variant = variant or config.variant
    imgs = Tensor(np.ascontiguousarray(images))
    acts, img_feats = image_stream(params, config, imgs)
    if variant == "image_only":
        fused_in = img_feats
        wmap = None
    else:
        kp_feats, wmap = keypoint_stream(
            params, config, Tensor(np.ascontiguousarray(kp_maps)),
            Tensor(np.ascontiguousarray(kp_classes)), acts, variant)
        fused_in = T.concat(kp_feats, img_feats)
    fused = T.relu(T.linear(fused_in, params["fuse_w"], params["fuse_b"]))
    return fused, wmap


def head_logits(params: dict[str, Tensor], obj_class: str, fused: Tensor) -> dict[str, Tensor]:
    return {angle: T.linear(fused, params[f"head_{obj_class}_{angle}_w"],
                            params[f"head_{obj_class}_{angle}_b"])
            for angle in ANGLE_NAMES}


def instance_inputs(config: ModelConfig, image: np.ndarray, x: int, y: int,
                    obj_class: str, kp_class: str | int,
                    blank_map: bool = False, blank_class: bool = False):
    """Build the (chw image, keypoint map, one-hot) arrays for one instance."""
    s = config.image_size
    if image.shape != (s, s, 3):
        raise ValueError(f"image shape {image.shape} != ({s}, {s}, 3)")
    chw = np.ascontiguousarray(image.transpose(2, 0, 1))
    if blank_map:
        kmap = np.zeros((s, s))
    else:
        kmap = keypoint_map(config.map_kind, x, y, s)
    if blank_class:
        kvec = np.zeros(config.total_kp_classes)
    else:
        idx = kp_class if isinstance(kp_class, int) else config.kp_index(obj_class, kp_class)
        kvec = one_hot_class(idx, config.total_kp_classes)
    return chw, kmap, kvec


@dataclass
class Prediction:
    probs: dict[str, np.ndarray]        # angle -> (n_bins,) softmax probabilities
    bins: dict[str, int]                # angle -> argmax bin (lowest index wins ties)
    angles_deg: dict[str, float]        # angle -> bin-center degrees
    weight_map: np.ndarray | None       # (h, w), None for image_only
    variant: str


def predict(params: dict[str, Tensor], config: ModelConfig, image: np.ndarray,
            x: int, y: int, kp_class, obj_class: str,
            blank_map: bool = False, blank_class: bool = False) -> Prediction:
    """Single-instance inference; deterministic, ties broken toward bin 0."""
    if obj_class not in config.kp_classes:
        raise ValueError(f"unknown object class {obj_class!r}")
    s = config.image_size
    if not (0 <= x < s and 0 <= y < s):
        raise ValueError(f"keypoint ({x}, {y}) outside {s}x{s} image")
    chw, kmap, kvec = instance_inputs(config, image, x, y, obj_class, kp_class,
                                      blank_map, blank_class)
    fused, wmap = forward_batch(params, config, chw[None], kmap[None], kvec[None])
    logits = head_logits(params, obj_class, fused)
    probs = {}
    bins = {}
    angles = {}
    for angle in ANGLE_NAMES:
        p = np.exp(T.log_softmax(logits[angle]).data[0])
        p = p / p.sum()
        b = int(np.argmax(p))  # np.argmax returns the first (lowest) max index
        probs[angle] = p
        bins[angle] = b
        angles[angle] = bin_to_angle(b, config.n_bins)
    return Prediction(probs=probs, bins=bins, angles_deg=angles,
                      weight_map=None if wmap is None else wmap.data[0].copy(),
                      variant=config.variant)


# -- checkpoint container ---------------------------------------------------

_MAGIC = b"CVCKPT1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: dict[str, Tensor], config: ModelConfig, path) -> None:
    """Self-describing container: JSON header (config + name/shape manifest)
    followed by raw float64 little-endian payloads in manifest order."""
    manifest = [[name, list(t.data.shape)] for name, t in params.items()]
    header = json.dumps({
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "manifest": manifest,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, _ in manifest:
            fh.write(np.ascontiguousarray(params[name].data).astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, Tensor], ModelConfig]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        config = ModelConfig.from_dict(header["config"])
        if config.config_hash() != header["config_hash"]:
            raise CheckpointError(f"{path}: config hash mismatch (corrupt header)")
        params: dict[str, Tensor] = {}
        for name, shape in header["manifest"]:
            n = int(np.prod(shape))
            buf = fh.read(n * 8)
            if len(buf) != n * 8:
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            params[name] = Tensor(arr, requires_grad=True)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last payload")
    config.validate()
    return params, config
