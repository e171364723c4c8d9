"""Labeled instance generation and the on-disk dataset format.

A dataset directory contains:

* ``index`` - JSON lines. The first line is a header record with the
  generation config and per-class / per-keypoint / per-split counts; every
  following line is one instance record::

      {"kind": "instance", "id": 0, "render_id": 0, "split": "train",
       "obj_class": "car", "kp_class": "left_front_wheel", "x": 31, "y": 40,
       "az": 123.4, "el": 12.0, "ti": -3.2, "domain": "synthetic"}

* ``renders/{render_id:06d}.bin`` - the cropped frame shared by all of a
  render's instances: float32 little-endian, row-major, shape (s, s, 3),
  values in [0, 1].

Instances are split train/val/test by render, never individually, so crops
from one render can't leak across splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .geometry import angle_to_bin
from .meshes import get_object_spec, keypoint_registry
from .render import CameraRanges, crop_jitter, render, sample_camera, sample_light, sample_occluders

DOMAINS = ("synthetic", "realish")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Instance:
    """One training/evaluation unit: an image plus one keypoint and labels."""

    instance_id: int
    render_id: int
    split: str
    obj_class: str
    kp_class: str
    x: int
    y: int
    azimuth_deg: float
    elevation_deg: float
    tilt_deg: float
    domain: str

    def bins(self, n_bins: int) -> tuple[int, int, int]:
        return (angle_to_bin(self.azimuth_deg, n_bins),
                angle_to_bin(self.elevation_deg, n_bins),
                angle_to_bin(self.tilt_deg, n_bins))


@dataclass
class DataConfig:
    classes: tuple[str, ...] = ("bus", "car", "motorcycle")
    renders_per_class: int = 200
    domain: str = "synthetic"
    image_size: int = 64
    n_bins: int = 24
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    camera: CameraRanges = field(default_factory=CameraRanges)
    max_jitter: float = 0.15
    occluders_min: int = 1
    occluders_max: int = 3
    noise_sigma: float = 0.02

    def validate(self) -> None:
        if not self.classes:
            raise ValueError("data.classes: at least one object class required")
        for c in self.classes:
            get_object_spec(c)
        if self.renders_per_class < 1:
            raise ValueError("data.renders_per_class: must be >= 1")
        if self.domain not in DOMAINS:
            raise ValueError(f"data.domain: {self.domain!r} not in {DOMAINS}")
        if self.image_size < 16:
            raise ValueError("data.image_size: must be >= 16")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ValueError("data.split_fractions: must be nonnegative and sum to 1")
        self.camera.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(self.classes)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        d = dict(d)
        if "camera" in d and isinstance(d["camera"], dict):
            d["camera"] = CameraRanges(**d["camera"])
        if "classes" in d:
            d["classes"] = tuple(d["classes"])
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)


def flip_augment(image: np.ndarray, inst: Instance, mirror_table: dict[str, str],
                 image_size: int) -> tuple[np.ndarray, Instance]:
    """Mirror an instance about the vertical axis, adjusting keypoint and label.

    An exact involution: x -> s-1-x, keypoint class through the mirror
    table, azimuth and tilt negate mod 360, elevation unchanged.
    """
    flipped = image[:, ::-1, :].copy()
    return flipped, Instance(
        instance_id=inst.instance_id,
        render_id=inst.render_id,
        split=inst.split,
        obj_class=inst.obj_class,
        kp_class=mirror_table[inst.kp_class],
        x=image_size - 1 - inst.x,
        y=inst.y,
        azimuth_deg=(360.0 - inst.azimuth_deg) % 360.0,
        elevation_deg=inst.elevation_deg,
        tilt_deg=(360.0 - inst.tilt_deg) % 360.0,
        domain=inst.domain,
    )


def _pick_split(u: float, fractions) -> str:
    if u < fractions[0]:
        return "train"
    if u < fractions[0] + fractions[1]:
        return "val"
    return "test"


def generate_dataset(config: DataConfig, out_dir) -> "Dataset":
    """Render, crop, and write a full labeled dataset; returns it loaded."""
    config.validate()
    out = Path(out_dir)
    (out / "renders").mkdir(parents=True, exist_ok=True)
    realish = config.domain == "realish"
    specs = {c: get_object_spec(c) for c in config.classes}

    records: list[Instance] = []
    next_instance = 0
    render_id = 0
    for cls in config.classes:
        spec = specs[cls]
        for _ in range(config.renders_per_class):
            rng = np.random.default_rng(np.random.SeedSequence((config.seed, render_id)))
            view, dist = sample_camera(rng, config.camera, config.n_bins)
            light = sample_light(rng)
            bg_seed = int(rng.integers(0, 2**31 - 1))
            occs = sample_occluders(rng, int(rng.integers(config.occluders_min, config.occluders_max + 1))) if realish else None
            sample = render(
                spec, view, light, bg_seed,
                distance=dist, image_size=config.image_size,
                textured_background=realish, occluders=occs,
                noise_sigma=config.noise_sigma if realish else 0.0, noise_rng=rng,
            )
            sample = crop_jitter(sample, rng, config.image_size, config.max_jitter)
            split = _pick_split(float(rng.uniform()), config.split_fractions)
            path = out / "renders" / f"{render_id:06d}.bin"
            sample.image.astype("<f4").tofile(path)
            for name, kx, ky in sample.visible_keypoints:
                records.append(Instance(
                    instance_id=next_instance, render_id=render_id, split=split,
                    obj_class=cls, kp_class=name, x=kx, y=ky,
                    azimuth_deg=view.azimuth_deg, elevation_deg=view.elevation_deg,
                    tilt_deg=view.tilt_deg, domain=config.domain,
                ))
                next_instance += 1
            render_id += 1

    _write_index(out / "index", config, records)
    return Dataset(out)


def _write_index(path: Path, config: DataConfig, records: list[Instance]) -> None:
    per_class: dict[str, int] = {}
    per_kp: dict[str, int] = {}
    per_split: dict[str, int] = {}
    for r in records:
        per_class[r.obj_class] = per_class.get(r.obj_class, 0) + 1
        key = f"{r.obj_class}/{r.kp_class}"
        per_kp[key] = per_kp.get(key, 0) + 1
        per_split[r.split] = per_split.get(r.split, 0) + 1
    header = {
        "kind": "header",
        "format_version": 1,
        "config": config.to_dict(),
        "counts": {
            "instances": len(records),
            "per_object_class": dict(sorted(per_class.items())),
            "per_keypoint_class": dict(sorted(per_kp.items())),
            "per_split": dict(sorted(per_split.items())),
        },
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps({
                "kind": "instance", "id": r.instance_id, "render_id": r.render_id,
                "split": r.split, "obj_class": r.obj_class, "kp_class": r.kp_class,
                "x": r.x, "y": r.y, "az": r.azimuth_deg, "el": r.elevation_deg,
                "ti": r.tilt_deg, "domain": r.domain,
            }, sort_keys=True) + "\n")


class DatasetError(ValueError):
    pass


class Dataset:
    """Read-only view over a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        index = self.root / "index"
        if not index.exists():
            raise DatasetError(f"no index file in {self.root}")
        with open(index) as fh:
            header_line = fh.readline()
            self.header = json.loads(header_line)
            if self.header.get("kind") != "header":
                raise DatasetError("index does not start with a header record")
            self.config = DataConfig.from_dict(self.header["config"])
            self.records = [self._parse(json.loads(line)) for line in fh if line.strip()]
        self.registry = keypoint_registry(self.config.classes)
        self._image_cache: dict[int, np.ndarray] = {}
        for r in self.records:
            self._validate_record(r)

    def _parse(self, d: dict) -> Instance:
        if d.get("kind") != "instance":
            raise DatasetError(f"unexpected record kind {d.get('kind')!r}")
        return Instance(
            instance_id=d["id"], render_id=d["render_id"], split=d["split"],
            obj_class=d["obj_class"], kp_class=d["kp_class"], x=d["x"], y=d["y"],
            azimuth_deg=d["az"], elevation_deg=d["el"], tilt_deg=d["ti"],
            domain=d["domain"],
        )

    def _validate_record(self, r: Instance) -> None:
        s = self.config.image_size
        if not (0 <= r.x < s and 0 <= r.y < s):
            raise DatasetError(f"instance {r.instance_id}: keypoint ({r.x}, {r.y}) outside image")
        if r.obj_class not in self.registry:
            raise DatasetError(f"instance {r.instance_id}: unknown object class {r.obj_class!r}")
        if r.kp_class not in self.registry[r.obj_class]:
            raise DatasetError(f"instance {r.instance_id}: keypoint class {r.kp_class!r} "
                               f"invalid for {r.obj_class!r}")
        if r.split not in SPLITS or r.domain not in DOMAINS:
            raise DatasetError(f"instance {r.instance_id}: bad split/domain tag")
        for b in r.bins(self.config.n_bins):
            if not 0 <= b < self.config.n_bins:
                raise DatasetError(f"instance {r.instance_id}: bin out of range")

    def split(self, name: str) -> list[Instance]:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def by_id(self, instance_id: int) -> Instance:
        for r in self.records:
            if r.instance_id == instance_id:
                return r
        raise KeyError(instance_id)

    def load_image(self, render_id: int) -> np.ndarray:
        """Float64 (s, s, 3) image for a render; cached per render id."""
        if render_id not in self._image_cache:
            s = self.config.image_size
            path = self.root / "renders" / f"{render_id:06d}.bin"
            raw = np.fromfile(path, dtype="<f4")
            if raw.size != s * s * 3:
                raise DatasetError(f"render {render_id}: expected {s * s * 3} floats, got {raw.size}")
            self._image_cache[render_id] = raw.reshape(s, s, 3).astype(np.float64)
        return self._image_cache[render_id]

    def instance_image(self, inst: Instance) -> np.ndarray:
        return self.load_image(inst.render_id)
