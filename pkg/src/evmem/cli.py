"""mem: stage orchestration for the event-modeling pipeline.

One executable, one subcommand per stage. Configs are flat dotted-key
JSON; --seed/--steps/--out override single keys; every output lands
atomically (temp file + rename); each stage prints a one-line JSON
summary to stdout and uses exit codes 1 (config), 2 (runtime),
3 (I/O).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import downstream as ds
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError
from .data import (
    INIT_STEP,
    STAGE_PRETRAIN,
    LabeledDataset,
    PreprocessConfig,
    layout_channels,
    preprocess_eval,
    step_rng,
)
from .dvae import DvaeConfig, DvaeModel, eval_recon_mse, train_dvae
from .events import EventIOError, parse_csv, parse_evt, write_evt_file
from .histogram import render
from .synth import SegSample, gen_dataset, gen_seg_dataset, read_mask, write_mask
from .vit import VitConfig, VitModel, init_vit, pretrain, relative_index


class RefuseOverwrite(OSError):
    def __init__(self, path):
        super().__init__(f"{path} already exists; pass --resume to continue or choose a new --out")


# ---------------------------------------------------------------- file helpers

def _atomic_write(path, data) -> None:
    tmp = f"{path}.tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as f:
        f.write(data)
    os.replace(tmp, path)


def _write_json(path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_curve(path, header, rows) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    _atomic_write(path, buf.getvalue())


def _read_curve(path):
    with open(path) as f:
        reader = csv.reader(f)
        next(reader)
        rows = []
        for row in reader:
            rows.append((int(row[0]),) + tuple(float(v) for v in row[1:]))
    return rows


def _echo_config(cfg: dict) -> None:
    _write_json(os.path.join(cfg["out"], "config.json"), cfg)


def _check_exists(path, what: str) -> None:
    if not os.path.exists(path):
        raise ConfigError(f"{what} {path!r} does not exist")


def _guard_output(path, resume: bool) -> bool:
    """True when the stage should resume from existing outputs."""
    if os.path.exists(path):
        if not resume:
            raise RefuseOverwrite(path)
        return True
    return False


# ------------------------------------------------------------- model storage
# Checkpoints are self-describing: architecture numbers ride along as
# 0-d "meta.*" entries next to the parameters.

def save_model(path, params: dict, meta: dict) -> None:
    blob = {name: p.data for name, p in params.items()}
    for key, value in meta.items():
        blob[f"meta.{key}"] = np.float64(value)
    save_checkpoint(blob, path)


def load_model(path):
    blob = load_checkpoint(path)
    meta, params = {}, {}
    for name, arr in blob.items():
        if name.startswith("meta."):
            value = float(arr)
            meta[name[5:]] = int(value) if value == int(value) else value
        else:
            params[name] = Tensor(arr, requires_grad=True)
    return params, meta


def _dvae_meta(config: DvaeConfig) -> dict:
    return {"vocab_size": config.vocab_size, "latent_dim": config.latent_dim,
            "patch": config.patch, "channels": config.channels, "hidden": config.hidden}


def _vit_meta(config: VitConfig, extra: dict = ()) -> dict:
    meta = {"layers": config.layers, "dim": config.dim, "heads": config.heads,
            "mlp_dim": config.mlp_dim, "patch": config.patch, "channels": config.channels,
            "rows": config.rows, "cols": config.cols, "vocab_size": config.vocab_size}
    meta.update(extra)
    return meta


def load_dvae(path) -> DvaeModel:
    params, meta = load_model(path)
    config = DvaeConfig(vocab_size=meta["vocab_size"], latent_dim=meta["latent_dim"],
                        patch=meta["patch"], channels=meta["channels"], hidden=meta["hidden"])
    return DvaeModel(config, params)


def _vit_config_from_meta(meta: dict) -> VitConfig:
    return VitConfig(layers=meta["layers"], dim=meta["dim"], heads=meta["heads"],
                     mlp_dim=meta["mlp_dim"], patch=meta["patch"], channels=meta["channels"],
                     rows=meta["rows"], cols=meta["cols"], vocab_size=meta["vocab_size"])


def load_vit(path) -> VitModel:
    params, meta = load_model(path)
    config = _vit_config_from_meta(meta)
    return VitModel(config, params, relative_index(config.rows, config.cols))


def load_classifier(path) -> ds.ClassifierModel:
    params, meta = load_model(path)
    config = _vit_config_from_meta(meta)
    return ds.ClassifierModel(config, params, relative_index(config.rows, config.cols),
                              meta["num_classes"])


def _opt_state_to_blob(state: dict) -> dict:
    return {k: np.asarray(v, dtype=np.float64) for k, v in state.items()}


# ------------------------------------------------------------- dataset layout
# <dir>/manifest.csv (id,class,split) + train/<id>.evt + test/<id>.evt
# + seg/<id>.evt with seg/<id>.mask when segmentation samples exist.

def write_dataset(out: str, train: LabeledDataset, test: LabeledDataset,
                  seg: list) -> None:
    rows = []
    for split, dataset in (("train", train), ("test", test)):
        os.makedirs(os.path.join(out, split), exist_ok=True)
        for i in range(len(dataset)):
            sample_id = dataset.ids[i]
            write_evt_file(dataset.streams[i], os.path.join(out, split, f"{sample_id}.evt"))
            rows.append((sample_id, int(dataset.labels[i]), split))
    if seg:
        os.makedirs(os.path.join(out, "seg"), exist_ok=True)
        for sample in seg:
            base = os.path.join(out, "seg", str(sample.sample_id))
            write_evt_file(sample.stream, f"{base}.evt")
            write_mask(sample.class_map, f"{base}.mask")
            rows.append((sample.sample_id, int(sample.class_map.max()), "seg"))
    rows.sort(key=lambda r: (r[2], r[0]))
    buf = "id,class,split\n" + "".join(f"{i},{c},{s}\n" for i, c, s in rows)
    _atomic_write(os.path.join(out, "manifest.csv"), buf)


def _parse_stream_file(path):
    with open(path, "rb") as f:
        data = f.read()
    return parse_evt(data)


def load_dataset(path: str):
    """(train, test, seg_samples) from a gen-data output directory."""
    manifest = os.path.join(path, "manifest.csv")
    _check_exists(manifest, "dataset manifest")
    by_split = {"train": [], "test": [], "seg": []}
    with open(manifest) as f:
        reader = csv.reader(f)
        next(reader)
        for sample_id, class_id, split in reader:
            if split not in by_split:
                raise EventIOError(f"{manifest}: unknown split {split!r}")
            by_split[split].append((int(sample_id), int(class_id)))
    # seg rows label a different space (0 is background, shape ids start at 1)
    num_classes = max((c for split in ("train", "test")
                       for _, c in by_split[split]), default=0) + 1

    def build(split):
        streams, labels, ids = [], [], []
        for sample_id, class_id in by_split[split]:
            streams.append(_parse_stream_file(os.path.join(path, split, f"{sample_id}.evt")))
            labels.append(class_id)
            ids.append(sample_id)
        return LabeledDataset(streams, np.array(labels, dtype=np.int64), num_classes, split, ids)

    seg = []
    for sample_id, _ in by_split["seg"]:
        base = os.path.join(path, "seg", str(sample_id))
        seg.append(SegSample(_parse_stream_file(f"{base}.evt"), read_mask(f"{base}.mask"), sample_id))
    return build("train"), build("test"), seg


# ------------------------------------------------------------------- stages

def run_gen_data(cfg: dict, resume: bool) -> dict:
    out = cfg["out"]
    manifest = os.path.join(out, "manifest.csv")
    if _guard_output(manifest, resume):
        train, test, seg = load_dataset(out)
        return {"stage": "gen-data", "out": out, "train": len(train), "test": len(test),
                "seg": len(seg), "classes": train.num_classes, "resumed": True}
    os.makedirs(out, exist_ok=True)
    train, test = gen_dataset(per_class=cfg["data.per_class"], seed=cfg["seed"],
                              width=cfg["data.width"], height=cfg["data.height"],
                              frames=cfg["data.frames"], num_classes=cfg["data.num_classes"],
                              train_frac=cfg["data.train_frac"])
    seg = []
    if cfg["data.seg_per_class"] > 0:
        seg = gen_seg_dataset(per_class=cfg["data.seg_per_class"], seed=cfg["seed"],
                              width=cfg["data.width"], height=cfg["data.height"],
                              frames=cfg["data.frames"], num_classes=cfg["data.num_classes"])
    write_dataset(out, train, test, seg)
    _echo_config(cfg)
    return {"stage": "gen-data", "out": out, "train": len(train), "test": len(test),
            "seg": len(seg), "classes": train.num_classes}


def _grid_dims(cfg: dict, dataset: LabeledDataset, patch: int):
    if cfg["data.target_size"] is not None:
        h, w = cfg["data.target_size"]
    else:
        h, w = dataset.streams[0].height, dataset.streams[0].width
    if h % patch or w % patch:
        raise ConfigError(f"input {h}x{w} not divisible by patch {patch}")
    return h // patch, w // patch


def _load_train_state(out: str, model_file: str, resume: bool):
    """(resuming, params, meta, opt_state, curve_rows) for a train stage."""
    model_path = os.path.join(out, model_file)
    if not _guard_output(model_path, resume):
        return False, None, None, None, []
    params, meta = load_model(model_path)
    opt_state = load_checkpoint(os.path.join(out, "opt.ckpt"))
    return True, params, meta, opt_state, _read_curve(os.path.join(out, "curve.csv"))


def run_train_dvae(cfg: dict, resume: bool) -> dict:
    _check_exists(cfg["data.path"], "dataset directory")
    out = cfg["out"]
    resuming, params, meta, opt_state, old_rows = _load_train_state(out, "dvae.ckpt", resume)
    os.makedirs(out, exist_ok=True)
    train_set, test_set, _ = load_dataset(cfg["data.path"])
    preprocess = cfgmod.preprocess_from(cfg)
    model_cfg = cfgmod.dvae_config_from(cfg, layout_channels(cfg["data.layout"]))
    train_cfg = cfgmod.dvae_train_from(cfg, preprocess, model_cfg)
    sample_hist = preprocess_eval(train_set.streams[0], preprocess)
    if sample_hist.shape[1] % model_cfg.patch or sample_hist.shape[2] % model_cfg.patch:
        raise ConfigError(f"input {sample_hist.shape[1]}x{sample_hist.shape[2]} "
                          f"not divisible by patch {model_cfg.patch}")

    model, start = None, 0
    if resuming:
        model = DvaeModel(model_cfg, params)
        start = int(opt_state["opt.step"])
    stop = cfg["train.stop_step"] or train_cfg.steps
    if start < stop:
        model, rows, opt_state = train_dvae(train_set, train_cfg, start_step=start,
                                            stop_step=stop, model=model, opt_state=opt_state)
    else:
        rows = []
    curve = old_rows[:start] + rows
    save_model(os.path.join(out, "dvae.ckpt"), model.params, _dvae_meta(model_cfg))
    save_checkpoint(_opt_state_to_blob(opt_state), os.path.join(out, "opt.ckpt"))
    _write_curve(os.path.join(out, "curve.csv"), ("step", "recon_mse", "kl", "tau"), curve)
    _echo_config(cfg)
    held_out = eval_recon_mse(model, test_set, preprocess)
    return {"stage": "train-dvae", "out": out, "steps": train_cfg.steps,
            "final_recon_mse": curve[-1][1] if curve else None,
            "held_out_mse": held_out, "checkpoint": os.path.join(out, "dvae.ckpt")}


def run_pretrain(cfg: dict, resume: bool) -> dict:
    _check_exists(cfg["data.path"], "dataset directory")
    _check_exists(cfg["dvae.checkpoint"], "tokenizer checkpoint")
    out = cfg["out"]
    resuming, params, meta, opt_state, old_rows = _load_train_state(out, "vit.ckpt", resume)
    os.makedirs(out, exist_ok=True)
    train_set, _, _ = load_dataset(cfg["data.path"])
    preprocess = cfgmod.preprocess_from(cfg)
    dvae_model = load_dvae(cfg["dvae.checkpoint"])
    channels = layout_channels(cfg["data.layout"])
    if channels != dvae_model.config.channels:
        raise ConfigError(f"layout {cfg['data.layout']} has {channels} channels but the "
                          f"tokenizer was trained on {dvae_model.config.channels}")
    rows_n, cols_n = _grid_dims(cfg, train_set, dvae_model.config.patch)
    model_cfg = cfgmod.vit_config_from(cfg, dvae_model.config.patch, channels,
                                       rows_n, cols_n, dvae_model.config.vocab_size)
    train_cfg = cfgmod.pretrain_from(cfg, preprocess, model_cfg)

    model, start = None, 0
    if resuming:
        model = VitModel(_vit_config_from_meta(meta), params,
                         relative_index(meta["rows"], meta["cols"]))
        start = int(opt_state["opt.step"])
    stop = cfg["train.stop_step"] or train_cfg.steps
    if start < stop:
        model, rows, opt_state = pretrain(dvae_model, train_set, train_cfg, start_step=start,
                                          stop_step=stop, model=model, opt_state=opt_state)
    else:
        rows = []
    curve = old_rows[:start] + rows
    save_model(os.path.join(out, "vit.ckpt"), model.params, _vit_meta(model_cfg))
    save_checkpoint(_opt_state_to_blob(opt_state), os.path.join(out, "opt.ckpt"))
    _write_curve(os.path.join(out, "curve.csv"),
                 ("step", "loss", "lr", "masked_token_accuracy"), curve)
    _echo_config(cfg)
    return {"stage": "pretrain", "out": out, "steps": train_cfg.steps,
            "objective": cfg["train.objective"],
            "final_loss": curve[-1][1] if curve else None,
            "checkpoint": os.path.join(out, "vit.ckpt")}


def _finetune_subset(train_set: LabeledDataset, cfg: dict) -> LabeledDataset:
    fraction = cfg["data.fraction"]
    if fraction >= 1.0:
        return train_set
    return ds.split_labels(train_set, [fraction], cfg["data.split_seed"])[0]


def _finetune_backbone(cfg: dict, train_set: LabeledDataset, preprocess: PreprocessConfig):
    if cfg["model.init"] == "checkpoint":
        _check_exists(cfg["model.checkpoint"], "backbone checkpoint")
        return load_vit(cfg["model.checkpoint"])
    sample_hist = preprocess_eval(train_set.streams[0], preprocess)
    patch = cfg["model.patch"]
    rows_n, cols_n = _grid_dims(cfg, train_set, patch)
    model_cfg = cfgmod.vit_config_from(cfg, patch, sample_hist.shape[0], rows_n, cols_n, 128)
    return init_vit(model_cfg, step_rng(cfg["seed"], STAGE_PRETRAIN, INIT_STEP))


def run_finetune(cfg: dict, resume: bool) -> dict:
    _check_exists(cfg["data.path"], "dataset directory")
    out = cfg["out"]
    resuming, params, meta, opt_state, old_rows = _load_train_state(out, "classifier.ckpt", resume)
    os.makedirs(out, exist_ok=True)
    train_set, test_set, _ = load_dataset(cfg["data.path"])
    preprocess = cfgmod.preprocess_from(cfg)
    subset = _finetune_subset(train_set, cfg)
    train_cfg = cfgmod.finetune_from(cfg, preprocess)

    start = 0
    if resuming:
        model = ds.ClassifierModel(_vit_config_from_meta(meta), params,
                                   relative_index(meta["rows"], meta["cols"]),
                                   meta["num_classes"])
        start = int(opt_state["opt.step"])
    else:
        backbone = _finetune_backbone(cfg, train_set, preprocess)
        model = ds.attach_classifier(backbone, train_set.num_classes)
    stop = cfg["train.stop_step"] or train_cfg.steps
    if start < stop:
        model, rows, opt_state = ds.finetune(model, subset, train_cfg, start_step=start,
                                             stop_step=stop, opt_state=opt_state)
    else:
        rows = []
    curve = old_rows[:start] + rows
    top1 = ds.eval_classifier(model, test_set, preprocess)
    save_model(os.path.join(out, "classifier.ckpt"), model.params,
               _vit_meta(model.config, {"num_classes": model.num_classes}))
    save_checkpoint(_opt_state_to_blob(opt_state), os.path.join(out, "opt.ckpt"))
    _write_curve(os.path.join(out, "curve.csv"), ("step", "loss", "lr", "batch_top1"), curve)
    _write_metrics(out, {"top1": top1, "train_size": len(subset), "test_size": len(test_set)})
    _echo_config(cfg)
    return {"stage": "finetune", "out": out, "steps": train_cfg.steps, "init": cfg["model.init"],
            "train_size": len(subset), "test_top1": top1,
            "checkpoint": os.path.join(out, "classifier.ckpt")}


def _write_metrics(out: str, metrics: dict) -> None:
    buf = "metric,value\n" + "".join(f"{k},{v!r}\n" for k, v in sorted(metrics.items()))
    _atomic_write(os.path.join(out, "metrics.csv"), buf)
    _write_json(os.path.join(out, "metrics.json"), metrics)


def run_probe(cfg: dict, resume: bool) -> dict:
    _check_exists(cfg["data.path"], "dataset directory")
    _check_exists(cfg["model.checkpoint"], "backbone checkpoint")
    out = cfg["out"]
    _guard_output(os.path.join(out, "metrics.json"), resume)
    os.makedirs(out, exist_ok=True)
    train_set, test_set, _ = load_dataset(cfg["data.path"])
    preprocess = cfgmod.preprocess_from(cfg)
    backbone = load_vit(cfg["model.checkpoint"])
    head, top1 = ds.linear_probe(backbone, train_set, test_set,
                                 cfgmod.probe_from(cfg, preprocess))
    save_model(os.path.join(out, "probe.ckpt"), head,
               {"dim": backbone.config.dim, "num_classes": train_set.num_classes})
    _write_metrics(out, {"top1": top1})
    _echo_config(cfg)
    return {"stage": "probe", "out": out, "test_top1": top1}


def run_eval(cfg: dict, resume: bool) -> dict:
    _check_exists(cfg["data.path"], "dataset directory")
    _check_exists(cfg["model.checkpoint"], "classifier checkpoint")
    out = cfg["out"]
    _guard_output(os.path.join(out, "metrics.json"), resume)
    os.makedirs(out, exist_ok=True)
    train_set, test_set, _ = load_dataset(cfg["data.path"])
    dataset = {"train": train_set, "test": test_set}.get(cfg["eval.split"])
    if dataset is None:
        raise ConfigError(f"eval.split must be 'train' or 'test', got {cfg['eval.split']!r}")
    model = load_classifier(cfg["model.checkpoint"])
    preprocess = cfgmod.preprocess_from(cfg)
    top1 = ds.eval_classifier(model, dataset, preprocess)
    _write_metrics(out, {"top1": top1, "n": len(dataset)})
    _echo_config(cfg)
    return {"stage": "eval", "out": out, "split": cfg["eval.split"], "top1": top1,
            "n": len(dataset)}


def run_render(cfg: dict, resume: bool) -> dict:
    _check_exists(cfg["input"], "input event file")
    out = cfg["out"]
    ppm_path = os.path.join(out, "render.ppm")
    _guard_output(ppm_path, resume)
    os.makedirs(out, exist_ok=True)
    with open(cfg["input"], "rb") as f:
        data = f.read()
    if cfg["input"].endswith(".csv"):
        stream = parse_csv(data.decode())
    else:
        stream = parse_evt(data)
    preprocess = PreprocessConfig(layout=cfg["data.layout"], n_max=cfg["data.n_max"],
                                  hot_pixel_k=cfg["data.hot_pixel_k"]).validate()
    hist = preprocess_eval(stream, preprocess)
    ppm = render(hist)
    _atomic_write(ppm_path, ppm)
    _echo_config(cfg)
    return {"stage": "render", "out": out, "ppm": ppm_path, "events": len(stream),
            "width": stream.width, "height": stream.height}


def _sub(cfg: dict, stage: str, out: str, **overrides) -> dict:
    """Project a repro-fewlabel config onto one stage's key space."""
    child = {"stage": stage, "out": out, "seed": cfg["seed"]}
    for key, value in cfg.items():
        if key in cfgmod.DEFAULTS[stage] and key not in ("stage", "out"):
            child[key] = value
    prefix = {"train-dvae": "dvae_train.", "pretrain": "pretrain.", "finetune": "finetune."}.get(stage)
    if prefix:
        for key, value in cfg.items():
            if key.startswith(prefix):
                child["train." + key[len(prefix):]] = value
    child.update(overrides)
    return cfgmod.effective_config(stage, child, {})


def run_repro_fewlabel(cfg: dict, resume: bool) -> dict:
    out = cfg["out"]
    csv_path = os.path.join(out, "fewlabel.csv")
    _guard_output(csv_path, resume)
    os.makedirs(out, exist_ok=True)

    data_dir = os.path.join(out, "dataset")
    run_gen_data(_sub(cfg, "gen-data", data_dir), resume)
    dvae_dir = os.path.join(out, "dvae")
    dvae_summary = run_train_dvae(_sub(cfg, "train-dvae", dvae_dir, **{"data.path": data_dir}), resume)
    pre_dir = os.path.join(out, "pretrain")
    pre_summary = run_pretrain(_sub(cfg, "pretrain", pre_dir, **{
        "data.path": data_dir, "dvae.checkpoint": dvae_summary["checkpoint"]}), resume)

    fractions = sorted(cfg["fractions"], reverse=True)
    rows = []
    for fraction in fractions:
        for init in ("pretrained", "scratch"):
            run_dir = os.path.join(out, f"finetune_f{int(round(fraction * 100))}_{init}")
            child = _sub(cfg, "finetune", run_dir, **{
                "data.path": data_dir,
                "data.fraction": fraction,
                "data.split_seed": cfg["seed"],
                "model.init": "checkpoint" if init == "pretrained" else "scratch",
                "model.checkpoint": pre_summary["checkpoint"] if init == "pretrained" else None,
                "model.patch": cfg["dvae.patch"],
            })
            summary = run_finetune(child, resume)
            rows.append((fraction, init, summary["test_top1"]))

    buf = "fraction,init,top1\n" + "".join(f"{f!r},{i},{t!r}\n" for f, i, t in rows)
    _atomic_write(csv_path, buf)
    _echo_config(cfg)
    return {"stage": "repro-fewlabel", "out": out, "csv": csv_path,
            "rows": [[f, i, t] for f, i, t in rows]}


RUNNERS = {
    "gen-data": run_gen_data,
    "train-dvae": run_train_dvae,
    "pretrain": run_pretrain,
    "finetune": run_finetune,
    "probe": run_probe,
    "eval": run_eval,
    "render": run_render,
    "repro-fewlabel": run_repro_fewlabel,
}

_STEPS_KEY = {
    "train-dvae": "train.steps",
    "pretrain": "train.steps",
    "finetune": "train.steps",
    "probe": "probe.steps",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mem", description=__doc__)
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in RUNNERS:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", help="flat dotted-key JSON config file")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--steps", type=int, help="override the step count")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--resume", action="store_true",
                       help="continue from existing outputs instead of refusing")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as err:
        return 0 if not err.code else 1

    try:
        file_cfg = cfgmod.load_config(args.config) if args.config else {}
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.steps is not None:
            overrides[_STEPS_KEY.get(args.stage, "steps")] = args.steps
        if args.out is not None:
            overrides["out"] = args.out
        cfg = cfgmod.effective_config(args.stage, file_cfg, overrides)
        summary = RUNNERS[args.stage](cfg, resume=args.resume)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (EventIOError, OSError) as err:
        print(f"io error: {err}", file=sys.stderr)
        return 3
    except Exception as err:  # noqa: BLE001 - boundary of the executable
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2

    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
