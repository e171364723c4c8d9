"""Command-line entry points for the whole pipeline.

Every subcommand takes ``--config FILE`` (JSON run config) plus repeatable
``--set section.field=value`` overrides, and ``--seed`` where randomness
exists. Success exits 0; any failure prints one machine-parsable line
``error: <field-path>: <message>`` to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .dataset import Dataset, generate_dataset
from .evaluate import ablation_eval, evaluate, sensitivity_sweep
from .model import load_checkpoint, predict
from .service import serve, wire_value
from .train import train


def _add_common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.FIELD=VALUE",
                   help="override one config field (repeatable); see 'clickview config-schema'")
    if seed:
        p.add_argument("--seed", type=int, help="seed override for anything random")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clickview",
                                 description="keypoint-guided viewpoint estimation pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a labeled synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("train", help="train one model variant")
    _add_common(p)
    p.add_argument("--synth", required=True, help="synthetic-domain dataset directory")
    p.add_argument("--realish", help="realish-domain dataset directory (stage 2)")
    p.add_argument("--variant", help="model variant override")
    p.add_argument("--out", required=True, help="output directory for checkpoint and logs")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int)
    p.add_argument("--oracle", action="store_true",
                   help="score the ground-truth stub predictor instead of the model")
    p.add_argument("--out", required=True, help="report JSON path (.csv written alongside)")

    p = sub.add_parser("ablate", help="blank-input ablation grid for a ch_full checkpoint")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="keypoint-perturbation sensitivity sweep")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--sigmas", help="comma-separated pixel sigmas (default 0..0.3*s)")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="one prediction from an image file or dataset instance")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", help="raw image file (float32 LE, s*s*3)")
    p.add_argument("--instance", type=int, help="instance id (needs --dataset)")
    p.add_argument("--dataset")
    p.add_argument("--x", type=int, required=True)
    p.add_argument("--y", type=int, required=True)
    p.add_argument("--kp", required=True, help="keypoint class id or name")
    p.add_argument("--obj", required=True, help="object class id or name")

    p = sub.add_parser("serve", help="run the HTTP inference service")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static", help="directory with the UI bundle")

    sub.add_parser("config-schema", help="print every config field and default")
    return ap


def _raw_config(args) -> dict:
    raw = C.load_run_config(args.config)
    return C.apply_overrides(raw, args.overrides)


def cmd_gen_data(args) -> int:
    raw = _raw_config(args)
    if args.seed is not None:
        raw.setdefault("data", {})["seed"] = args.seed
    cfg = C.data_config(raw)
    ds = generate_dataset(cfg, args.out)
    print(json.dumps({"out": str(args.out), "instances": len(ds.records),
                      "renders": cfg.renders_per_class * len(cfg.classes)}))
    return 0


def cmd_train(args) -> int:
    raw = _raw_config(args)
    if args.seed is not None:
        raw.setdefault("train", {})["seed"] = args.seed
    if args.variant is not None:
        raw.setdefault("model", {})["variant"] = args.variant
    mcfg = C.model_config(raw)
    tcfg = C.train_config(raw)
    synth = Dataset(args.synth)
    realish = Dataset(args.realish) if args.realish else None
    result = train(mcfg, synth, realish, tcfg, args.out)
    print(json.dumps({"checkpoint": str(result.checkpoint_path),
                      "log": str(result.log_path),
                      "best_val_acc": result.best_val_acc}))
    return 0


def cmd_eval(args) -> int:
    params, cfg = load_checkpoint(args.checkpoint)
    ds = Dataset(args.dataset)
    rep = evaluate(params if not args.oracle else None, cfg, ds, split=args.split,
                   limit=args.limit, predictor="oracle" if args.oracle else "model")
    out = Path(args.out)
    rep.save_json(out)
    rep.save_csv(out.with_suffix(".csv"))
    print(json.dumps({"out": str(out), "mean_class_acc": rep.mean_class_acc,
                      "mean_class_med_err": rep.mean_class_med_err,
                      "n_instances": rep.n_instances}))
    return 0


def cmd_ablate(args) -> int:
    params, cfg = load_checkpoint(args.checkpoint)
    ds = Dataset(args.dataset)
    rep = ablation_eval(params, cfg, ds, split=args.split, limit=args.limit)
    out = Path(args.out)
    rep.save_json(out)
    rep.save_csv(out.with_suffix(".csv"))
    print(json.dumps({"out": str(out),
                      "rows": [{k: r[k] for k in ("kp_map", "kp_class", "mean_class_acc")}
                               for r in rep.rows]}))
    return 0


def cmd_sweep(args) -> int:
    params, cfg = load_checkpoint(args.checkpoint)
    ds = Dataset(args.dataset)
    sigmas = None
    if args.sigmas:
        sigmas = [float(s) for s in args.sigmas.split(",")]
    rep = sensitivity_sweep(params, cfg, ds, split=args.split, sigmas=sigmas,
                            trials=args.trials, seed=args.seed or 0, limit=args.limit)
    out = Path(args.out)
    rep.save_json(out)
    rep.save_csv(out.with_suffix(".csv"))
    print(json.dumps({"out": str(out),
                      "rows": [{"sigma_px": r["sigma_px"], "mean_class_acc": r["mean_class_acc"]}
                               for r in rep.rows]}))
    return 0


def cmd_predict(args) -> int:
    params, cfg = load_checkpoint(args.checkpoint)
    s = cfg.image_size
    if (args.image is None) == (args.instance is None):
        raise C.ConfigError("predict.image: exactly one of --image or --instance is required")
    if args.image:
        raw = np.fromfile(args.image, dtype="<f4")
        if raw.size != s * s * 3:
            raise C.ConfigError(f"predict.image: expected {s * s * 3} float32 values, got {raw.size}")
        image = raw.reshape(s, s, 3).astype(np.float64)
    else:
        if not args.dataset:
            raise C.ConfigError("predict.dataset: --instance needs --dataset")
        ds = Dataset(args.dataset)
        image = ds.instance_image(ds.by_id(args.instance))

    obj = args.obj if not args.obj.isdigit() else cfg.object_classes[int(args.obj)]
    kp = int(args.kp) if args.kp.isdigit() else args.kp
    pred = predict(params, cfg, image, args.x, args.y, kp, obj)
    print(json.dumps(wire_value({
        "variant": pred.variant,
        "n_bins": cfg.n_bins,
        "probs": {a: list(pred.probs[a]) for a in ("az", "el", "ti")},
        "bins": pred.bins,
        "angles_deg": pred.angles_deg,
        "weight_map": None if pred.weight_map is None else pred.weight_map.tolist(),
    }), sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    serve(args.checkpoint, args.dataset, host=args.host, port=args.port,
          static_dir=args.static)
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "predict": cmd_predict,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config-schema":
        print(C.schema_reference())
        return 0
    try:
        return _COMMANDS[args.command](args)
    except C.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: file: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
