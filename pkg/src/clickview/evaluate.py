"""Evaluation battery: metrics report, blank-input ablation, noise sweep.

Per-instance error is the geodesic distance between the rotations realized
from the predicted and ground-truth *bin centers*, so a perfect bin
prediction scores exactly zero and everything is quantization-consistent.
Mean class metrics average per-object-class values, never raw instances.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .dataset import Dataset, Instance
from .geometry import ViewpointLabel, geodesic_distance, rotation_from_viewpoint
from .keypoints import perturb_keypoint
from .metrics import acc_at, acc_curve_nauc, med_err
from .model import ModelConfig
from .tensor import Tensor

EVAL_BATCH = 64
ACC_THRESH = np.pi / 6


def bins_to_rotation(b_az: int, b_el: int, b_ti: int, n_bins: int) -> np.ndarray:
    return rotation_from_viewpoint(ViewpointLabel.from_bins(b_az, b_el, b_ti, n_bins))


def instance_error(pred_bins: tuple[int, int, int], gt_bins: tuple[int, int, int],
                   n_bins: int) -> float:
    return geodesic_distance(bins_to_rotation(*pred_bins, n_bins),
                             bins_to_rotation(*gt_bins, n_bins))


def predict_bins(params: dict[str, Tensor], config: ModelConfig, dataset: Dataset,
                 instances: list[Instance], *, blank_map: bool = False,
                 blank_class: bool = False, sigma_px: float = 0.0,
                 rng: np.random.Generator | None = None) -> list[tuple[int, int, int]]:
    """Batched argmax bins for a list of instances (grouped by object class)."""
    if sigma_px > 0 and rng is None:
        raise ValueError("keypoint perturbation needs an rng")
    s = config.image_size
    out: list[tuple[int, int, int] | None] = [None] * len(instances)
    by_class: dict[str, list[int]] = {}
    for i, inst in enumerate(instances):
        by_class.setdefault(inst.obj_class, []).append(i)
    for obj in sorted(by_class):
        idxs = by_class[obj]
        for start in range(0, len(idxs), EVAL_BATCH):
            chunk = idxs[start:start + EVAL_BATCH]
            images = np.empty((len(chunk), 3, s, s))
            kmaps = np.empty((len(chunk), s, s))
            kvecs = np.empty((len(chunk), config.total_kp_classes))
            for j, i in enumerate(chunk):
                inst = instances[i]
                x, y = inst.x, inst.y
                if sigma_px > 0:
                    x, y = perturb_keypoint(x, y, sigma_px, rng, s)
                chw, kmap, kvec = M.instance_inputs(
                    config, dataset.instance_image(inst), x, y,
                    inst.obj_class, inst.kp_class, blank_map, blank_class)
                images[j] = chw
                kmaps[j] = kmap
                kvecs[j] = kvec
            fused, _ = M.forward_batch(params, config, images, kmaps, kvecs)
            logits = M.head_logits(params, obj, fused)
            arg = {a: np.argmax(logits[a].data, axis=1) for a in M.ANGLE_NAMES}
            for j, i in enumerate(chunk):
                out[i] = (int(arg["az"][j]), int(arg["el"][j]), int(arg["ti"][j]))
    return out  # type: ignore[return-value]


@dataclass
class EvalReport:
    variant: str
    split: str
    n_instances: int
    per_class: dict[str, dict[str, float]]
    per_keypoint: dict[str, dict[str, float]]
    mean_class_acc: float
    mean_class_med_err: float
    curve_thresholds: list[float]
    curve_accs: list[float]
    nauc: float
    instance_errors: list[tuple[int, float]] = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "split": self.split,
            "n_instances": self.n_instances,
            "per_class": self.per_class,
            "per_keypoint": self.per_keypoint,
            "mean_class_acc": self.mean_class_acc,
            "mean_class_med_err": self.mean_class_med_err,
            "curve_thresholds": self.curve_thresholds,
            "curve_accs": self.curve_accs,
            "nauc": self.nauc,
            "instance_errors": [[i, e] for i, e in self.instance_errors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["instance_errors"] = [(int(i), float(e)) for i, e in d["instance_errors"]]
        return cls(**d)

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "EvalReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save_csv(self, path) -> None:
        """Per-class metric rows plus the mean row, for plotting."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "count", "acc_pi_6", "med_err_deg"])
            for name, row in sorted(self.per_class.items()):
                w.writerow([name, int(row["count"]), row["acc_pi_6"], row["med_err_deg"]])
            w.writerow(["mean_class", self.n_instances,
                        self.mean_class_acc, self.mean_class_med_err])


def _group_metrics(errors: np.ndarray) -> dict[str, float]:
    return {
        "count": float(len(errors)),
        "acc_pi_6": acc_at(errors, ACC_THRESH),
        "med_err_deg": med_err(errors),
    }


def build_report(variant: str, split: str, instances: list[Instance],
                 errors: np.ndarray, n_bins: int) -> EvalReport:
    per_class: dict[str, dict[str, float]] = {}
    per_kp: dict[str, dict[str, float]] = {}
    classes = sorted({i.obj_class for i in instances})
    for obj in classes:
        mask = np.array([i.obj_class == obj for i in instances])
        per_class[obj] = _group_metrics(errors[mask])
    kp_keys = sorted({f"{i.obj_class}/{i.kp_class}" for i in instances})
    for key in kp_keys:
        mask = np.array([f"{i.obj_class}/{i.kp_class}" == key for i in instances])
        per_kp[key] = _group_metrics(errors[mask])
    grid, accs, nauc = acc_curve_nauc(errors)
    return EvalReport(
        variant=variant,
        split=split,
        n_instances=len(instances),
        per_class=per_class,
        per_keypoint=per_kp,
        mean_class_acc=float(np.mean([per_class[c]["acc_pi_6"] for c in classes])),
        mean_class_med_err=float(np.mean([per_class[c]["med_err_deg"] for c in classes])),
        curve_thresholds=[float(t) for t in grid],
        curve_accs=[float(a) for a in accs],
        nauc=nauc,
        instance_errors=[(i.instance_id, float(e)) for i, e in zip(instances, errors)],
    )


def evaluate(params: dict[str, Tensor] | None, config: ModelConfig, dataset: Dataset,
             split: str = "test", *, limit: int | None = None,
             blank_map: bool = False, blank_class: bool = False,
             sigma_px: float = 0.0, rng: np.random.Generator | None = None,
             predictor: str = "model") -> EvalReport:
    """Full metrics report on one split.

    ``predictor='oracle'`` short-circuits the network and predicts the
    ground-truth bins; it exists so the harness itself can be validated.
    """
    if config.n_bins != dataset.config.n_bins or config.image_size != dataset.config.image_size:
        raise ValueError("checkpoint config does not match dataset (bins or image size)")
    for obj in dataset.config.classes:
        if obj not in config.kp_classes:
            raise ValueError(f"dataset class {obj!r} unknown to the model config")
    instances = dataset.split(split)
    if limit is not None:
        instances = instances[:limit]
    if not instances:
        raise ValueError(f"split {split!r} has no instances")
    n = config.n_bins
    gt = [i.bins(n) for i in instances]
    if predictor == "oracle":
        pred = gt
    elif predictor == "model":
        if params is None:
            raise ValueError("model predictor needs parameters")
        pred = predict_bins(params, config, dataset, instances, blank_map=blank_map,
                            blank_class=blank_class, sigma_px=sigma_px, rng=rng)
    else:
        raise ValueError(f"unknown predictor {predictor!r}")
    errors = np.array([instance_error(p, g, n) for p, g in zip(pred, gt)])
    return build_report(config.variant, split, instances, errors, n)


@dataclass
class AblationReport:
    """The four blank-input combinations evaluated without retraining."""

    variant: str
    rows: list[dict]

    def to_dict(self) -> dict:
        return {"variant": self.variant, "rows": self.rows}

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path) -> None:
        classes = sorted(self.rows[0]["per_class"]) if self.rows else []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kp_map", "kp_class", "mean_class_acc", "mean_class_med_err"]
                       + [f"acc_{c}" for c in classes] + [f"mederr_{c}" for c in classes])
            for r in self.rows:
                w.writerow([r["kp_map"], r["kp_class"], r["mean_class_acc"], r["mean_class_med_err"]]
                           + [r["per_class"][c]["acc_pi_6"] for c in classes]
                           + [r["per_class"][c]["med_err_deg"] for c in classes])

    def row(self, kp_map: bool, kp_class: bool) -> dict:
        for r in self.rows:
            if r["kp_map"] == kp_map and r["kp_class"] == kp_class:
                return r
        raise KeyError((kp_map, kp_class))


def ablation_eval(params: dict[str, Tensor], config: ModelConfig, dataset: Dataset,
                  split: str = "test", limit: int | None = None) -> AblationReport:
    """Evaluate with ground-truth vs all-zero keypoint map/class, all four ways."""
    if config.variant != "ch_full":
        raise ValueError(f"blank-input ablation needs a ch_full checkpoint, got {config.variant!r}")
    rows = []
    for use_map in (True, False):
        for use_class in (True, False):
            rep = evaluate(params, config, dataset, split, limit=limit,
                           blank_map=not use_map, blank_class=not use_class)
            rows.append({
                "kp_map": use_map,
                "kp_class": use_class,
                "mean_class_acc": rep.mean_class_acc,
                "mean_class_med_err": rep.mean_class_med_err,
                "per_class": rep.per_class,
            })
    return AblationReport(variant=config.variant, rows=rows)


@dataclass
class SweepReport:
    variant: str
    trials: int
    rows: list[dict]  # one per sigma: {sigma_px, mean_class_acc, mean_class_med_err}

    def to_dict(self) -> dict:
        return {"variant": self.variant, "trials": self.trials, "rows": self.rows}

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma_px", "mean_class_acc", "mean_class_med_err"])
            for r in self.rows:
                w.writerow([r["sigma_px"], r["mean_class_acc"], r["mean_class_med_err"]])


def default_sweep_sigmas(image_size: int) -> list[float]:
    return [round(f * image_size, 3) for f in (0.0, 0.05, 0.1, 0.15, 0.2, 0.3)]


def sensitivity_sweep(params: dict[str, Tensor], config: ModelConfig, dataset: Dataset,
                      split: str = "test", sigmas=None, trials: int = 3,
                      seed: int = 0, limit: int | None = None) -> SweepReport:
    """Keypoint-location noise sweep; sigma 0 reproduces plain evaluation."""
    if config.variant not in ("ch_full", "ch_map_only", "ch_class_only"):
        raise ValueError(f"sweep needs a keypoint-conditioned variant, got {config.variant!r}")
    if sigmas is None:
        sigmas = default_sweep_sigmas(config.image_size)
    if any(s < 0 for s in sigmas):
        raise ValueError("sigma values must be >= 0")
    rows = []
    for sigma in sigmas:
        if sigma == 0:
            rep = evaluate(params, config, dataset, split, limit=limit)
            accs = [rep.mean_class_acc]
            meds = [rep.mean_class_med_err]
        else:
            accs, meds = [], []
            for trial in range(trials):
                rng = np.random.default_rng(np.random.SeedSequence((seed, int(sigma * 1000), trial)))
                rep = evaluate(params, config, dataset, split, limit=limit,
                               sigma_px=sigma, rng=rng)
                accs.append(rep.mean_class_acc)
                meds.append(rep.mean_class_med_err)
        rows.append({
            "sigma_px": float(sigma),
            "mean_class_acc": float(np.mean(accs)),
            "mean_class_med_err": float(np.mean(meds)),
            "acc_per_trial": [float(a) for a in accs],
            "med_err_per_trial": [float(v) for v in meds],
        })
    return SweepReport(variant=config.variant, trials=trials, rows=rows)


def compare_instance_errors(a: EvalReport, b: EvalReport,
                            instances: list[Instance]) -> dict[str, float]:
    """Mean per-instance error difference (a - b) stratified by keypoint class.

    Both reports must cover the identical instance set.
    """
    ids_a = [i for i, _ in a.instance_errors]
    ids_b = [i for i, _ in b.instance_errors]
    if ids_a != ids_b:
        raise ValueError("reports cover different instance sets; pairing undefined")
    by_id = {i.instance_id: i for i in instances}
    diffs: dict[str, list[float]] = {}
    for (iid, ea), (_, eb) in zip(a.instance_errors, b.instance_errors):
        inst = by_id[iid]
        diffs.setdefault(f"{inst.obj_class}/{inst.kp_class}", []).append(ea - eb)
    return {k: float(np.mean(v)) for k, v in sorted(diffs.items())}
