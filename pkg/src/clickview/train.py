"""Two-stage training: synthetic first, then the noisier "realish" domain.

Each stage runs until held-out accuracy stops improving (no new best over
``plateau_patience`` consecutive evaluations) or a step cap. The best
validation snapshot is carried between stages and saved at the end; the
log asserts the hand-off by recording parameter hashes.

Everything is driven by one seed: batch order, flip augmentation, and
initialization. Re-running with the same seed, config, and data produces
byte-identical logs and checkpoints.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from . import tensor as T
from .dataset import Dataset, Instance
from .evaluate import ACC_THRESH, instance_error, predict_bins
from .geometry import angle_to_bin, batched_structure_aware_loss
from .meshes import lr_mirror_table
from .metrics import acc_at, med_err
from .model import ModelConfig
from .optim import Adam
from .tensor import Tensor


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 200
    plateau_patience: int = 5
    max_steps_stage1: int = 2600
    max_steps_stage2: int = 800
    flip_prob: float = 0.5
    val_cap: int = 400
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("train.batch_size: must be >= 1")
        if self.lr <= 0:
            raise ValueError("train.lr: must be > 0")
        if self.eval_every < 1 or self.plateau_patience < 1:
            raise ValueError("train.eval_every/plateau_patience: must be >= 1")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("train.flip_prob: must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    csv_path: Path
    history: list[dict] = field(repr=False, default_factory=list)
    best_val_acc: float = 0.0


class _BatchBuilder:
    """Assembles class-grouped training batches with optional flips."""

    def __init__(self, config: ModelConfig, dataset: Dataset, instances: list[Instance],
                 flip_prob: float):
        self.config = config
        self.dataset = dataset
        self.instances = instances
        self.flip_prob = flip_prob
        self.mirrors = {obj: lr_mirror_table(names) for obj, names in config.kp_classes.items()}

    def build(self, rng: np.random.Generator, batch_size: int):
        cfg = self.config
        s = cfg.image_size
        picks = rng.integers(0, len(self.instances), batch_size)
        flips = rng.uniform(size=batch_size) < self.flip_prob
        groups: dict[str, list] = {}
        for pick, do_flip in zip(picks, flips):
            inst = self.instances[int(pick)]
            image = self.dataset.instance_image(inst)
            x, y = inst.x, inst.y
            kp_name = inst.kp_class
            az, el, ti = inst.azimuth_deg, inst.elevation_deg, inst.tilt_deg
            if do_flip:
                image = np.ascontiguousarray(image[:, ::-1, :])
                x = s - 1 - x
                kp_name = self.mirrors[inst.obj_class][kp_name]
                az = (360.0 - az) % 360.0
                ti = (360.0 - ti) % 360.0
            chw, kmap, kvec = M.instance_inputs(cfg, image, x, y, inst.obj_class, kp_name)
            bins = (angle_to_bin(az, cfg.n_bins), angle_to_bin(el, cfg.n_bins),
                    angle_to_bin(ti, cfg.n_bins))
            groups.setdefault(inst.obj_class, []).append((chw, kmap, kvec, bins))
        return groups


def _batch_loss(params: dict[str, Tensor], config: ModelConfig, groups: dict,
                batch_size: int) -> Tensor:
    total = None
    for obj in sorted(groups):
        items = groups[obj]
        images = np.stack([it[0] for it in items])
        kmaps = np.stack([it[1] for it in items])
        kvecs = np.stack([it[2] for it in items])
        fused, _ = M.forward_batch(params, config, images, kmaps, kvecs)
        logits = M.head_logits(params, obj, fused)
        gt = {a: np.array([it[3][k] for it in items])
              for k, a in enumerate(M.ANGLE_NAMES)}
        group_loss = None
        for a in M.ANGLE_NAMES:
            l = batched_structure_aware_loss(logits[a], gt[a], config.loss_t, config.n_bins)
            group_loss = l if group_loss is None else T.add(group_loss, l)
        scaled = T.mul(group_loss, len(items) / batch_size)
        total = scaled if total is None else T.add(total, scaled)
    return total


def _validate(params, config, dataset, instances) -> tuple[float, float]:
    gt = [i.bins(config.n_bins) for i in instances]
    pred = predict_bins(params, config, dataset, instances)
    errors = np.array([instance_error(p, g, config.n_bins) for p, g in zip(pred, gt)])
    return acc_at(errors, ACC_THRESH), med_err(errors)


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.data = snap[k].copy()


def _run_stage(stage: int, params, config, dataset, tc: TrainConfig,
               rng: np.random.Generator, max_steps: int, history: list[dict]) -> float:
    train_insts = dataset.split("train")
    val_insts = dataset.split("val")[:tc.val_cap]
    if not train_insts or not val_insts:
        raise ValueError(f"stage {stage}: dataset needs non-empty train and val splits")
    builder = _BatchBuilder(config, dataset, train_insts, tc.flip_prob)
    opt = Adam(params, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)

    best_acc = -1.0
    best_snap = _snapshot(params)
    stale = 0
    history.append({"event": "stage_start", "stage": stage, "step": 0,
                    "params_hash": M.params_hash(params),
                    "train_instances": len(train_insts), "val_instances": len(val_insts)})
    step = 0
    while step < max_steps:
        step += 1
        groups = builder.build(rng, tc.batch_size)
        loss = _batch_loss(params, config, groups, tc.batch_size)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % tc.eval_every == 0 or step == max_steps:
            acc, mederr = _validate(params, config, dataset, val_insts)
            improved = acc > best_acc
            if improved:
                best_acc = acc
                best_snap = _snapshot(params)
                stale = 0
            else:
                stale += 1
            history.append({"event": "eval", "stage": stage, "step": step,
                            "train_loss": float(loss.data), "val_acc": acc,
                            "val_med_err": mederr, "best": improved})
            if stale >= tc.plateau_patience:
                break
    _restore(params, best_snap)
    history.append({"event": "stage_end", "stage": stage, "step": step,
                    "best_val_acc": best_acc, "params_hash": M.params_hash(params)})
    return best_acc


def train(config: ModelConfig, synth: Dataset, realish: Dataset | None,
          train_config: TrainConfig, out_dir) -> TrainResult:
    """Train one variant end to end and keep the best validation snapshot."""
    config.validate()
    train_config.validate()
    for ds in filter(None, (synth, realish)):
        if ds.config.n_bins != config.n_bins or ds.config.image_size != config.image_size:
            raise ValueError("dataset and model config disagree on bins or image size")
        for obj in ds.config.classes:
            if obj not in config.kp_classes:
                raise ValueError(f"dataset class {obj!r} missing from model config")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence((train_config.seed, 17)))
    params = M.init_params(config, rng)
    history: list[dict] = [{"event": "run_start", "variant": config.variant,
                            "seed": train_config.seed,
                            "train_config": train_config.to_dict(),
                            "config_hash": config.config_hash()}]
    best = _run_stage(1, params, config, synth, train_config, rng,
                      train_config.max_steps_stage1, history)
    if realish is not None:
        # stage 2 continues from the stage-1 best snapshot (hash recorded
        # by stage_end / stage_start pairs)
        best = _run_stage(2, params, config, realish, train_config, rng,
                          train_config.max_steps_stage2, history)

    ckpt = out / "checkpoint.ckpt"
    M.save_checkpoint(params, config, ckpt)
    history.append({"event": "run_end", "best_val_acc": best,
                    "params_hash": M.params_hash(params)})

    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    csv_path = out / "train_log.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "step", "train_loss", "val_acc", "val_med_err", "best"])
        for rec in history:
            if rec["event"] == "eval":
                w.writerow([rec["stage"], rec["step"], rec["train_loss"],
                            rec["val_acc"], rec["val_med_err"], rec["best"]])
    return TrainResult(checkpoint_path=ckpt, log_path=log_path, csv_path=csv_path,
                       history=history, best_val_acc=best)
