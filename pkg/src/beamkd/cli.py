"""Command-line front end for the full beam-prediction pipeline.

Subcommands: generate, train-teacher, distill, train-baseline, evaluate,
report. Every command is deterministic given (config, seed): rerunning
produces byte-identical files.
"""

import argparse
import copy
import csv
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import beams, dataset, distill, metrics, neuralnet as nn, scenario

logger = logging.getLogger("beamkd")

DEFAULT_CONFIG = {
    "scenario": {
        "n_sub6": 4,
        "n_mmw": 64,
        "k_sub6": 32,
        "k_mmw": 64,
        "bw_sub6_hz": 0.02e9,
        "bw_mmw_hz": 0.5e9,
        "fc_sub6_hz": 3.5e9,
        "fc_mmw_hz": 28.0e9,
        "spacing_wavelengths": 0.5,
        "ue_grid": {"origin": [8.0, -15.0], "step": [0.5, 0.5], "rows": 60, "cols": 36},
        "bs_position": [0.0, 0.0],
        "max_paths": 5,
        "nlos_gain_db": -10.0,
        "seed": 2024,
    },
    "dataset": {
        "split_fractions": [0.7, 0.15, 0.15],
        "snr_db_list": [15.0],
        "seed": 7,
    },
    "training": {
        "teacher_hidden": [1024, 1024, 1024, 1024],
        "student_hidden": [64, 64],
        "activation": "relu",
        "epochs": 20,
        "batch_size": 32,
        "learning_rate": 1.0e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1.0e-8,
        "seed": 0,
        "shuffle": True,
    },
    "distill": {
        "temperature": 10.0,
        "alpha": 0.9,
        "feature_layer": None,
        "weight_dist": 1.0,
        "weight_angle": 1.0,
    },
    "evaluate": {"topk": [1, 3]},
    "output_dir": "runs/out",
}


@dataclass
class RunConfig:
    """Validated pipeline configuration assembled from the YAML tree."""

    scenario: scenario.ScenarioConfig
    split_fractions: tuple
    snr_db_list: list[float]
    dataset_seed: int
    teacher_hidden: list[int]
    student_hidden: list[int]
    activation: str
    train: nn.TrainConfig
    ikd: distill.IkdConfig
    rkd: distill.RkdConfig
    topk: list[int]
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, seed=None, out=None) -> RunConfig:
    raw = DEFAULT_CONFIG
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ValueError(f"{path}: config must be a mapping")
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ValueError(f"{path}: unknown config sections {sorted(unknown)}")
        raw = _deep_merge(DEFAULT_CONFIG, user)
    if seed is not None:
        raw["scenario"]["seed"] = seed
        raw["dataset"]["seed"] = seed
        raw["training"]["seed"] = seed
    if out is not None:
        raw["output_dir"] = str(out)

    sc = raw["scenario"]
    grid = scenario.UeGrid(
        origin=tuple(sc["ue_grid"]["origin"]),
        step=tuple(sc["ue_grid"]["step"]),
        rows=sc["ue_grid"]["rows"],
        cols=sc["ue_grid"]["cols"],
    )
    scen = scenario.ScenarioConfig(
        n_sub6=sc["n_sub6"],
        n_mmw=sc["n_mmw"],
        k_sub6=sc["k_sub6"],
        k_mmw=sc["k_mmw"],
        bw_sub6_hz=sc["bw_sub6_hz"],
        bw_mmw_hz=sc["bw_mmw_hz"],
        fc_sub6_hz=sc["fc_sub6_hz"],
        fc_mmw_hz=sc["fc_mmw_hz"],
        spacing_wavelengths=sc["spacing_wavelengths"],
        ue_grid=grid,
        bs_position=tuple(sc["bs_position"]),
        max_paths=sc["max_paths"],
        nlos_gain_db=sc["nlos_gain_db"],
        seed=sc["seed"],
    )
    ds_cfg = raw["dataset"]
    if not ds_cfg["snr_db_list"]:
        raise ValueError("dataset.snr_db_list must contain at least one SNR value")
    tr = raw["training"]
    train = nn.TrainConfig(
        epochs=tr["epochs"],
        batch_size=tr["batch_size"],
        learning_rate=tr["learning_rate"],
        beta1=tr["beta1"],
        beta2=tr["beta2"],
        eps=tr["eps"],
        seed=tr["seed"],
        shuffle=tr["shuffle"],
    )
    di = raw["distill"]
    return RunConfig(
        scenario=scen,
        split_fractions=tuple(ds_cfg["split_fractions"]),
        snr_db_list=[float(s) for s in ds_cfg["snr_db_list"]],
        dataset_seed=ds_cfg["seed"],
        teacher_hidden=list(tr["teacher_hidden"]),
        student_hidden=list(tr["student_hidden"]),
        activation=tr["activation"],
        train=train,
        ikd=distill.IkdConfig(temperature=di["temperature"], alpha=di["alpha"]),
        rkd=distill.RkdConfig(
            feature_layer=di["feature_layer"],
            weight_dist=di["weight_dist"],
            weight_angle=di["weight_angle"],
        ),
        topk=[int(k) for k in raw["evaluate"]["topk"]],
        output_dir=raw["output_dir"],
        raw=raw,
    )


def snr_tag(snr_db: float) -> str:
    return f"snr{snr_db:g}dB"


def _rate_params(cfg: RunConfig, snr_db: float) -> beams.RateParams:
    return beams.RateParams(snr_linear=10.0 ** (snr_db / 10.0), k_mmw=cfg.scenario.k_mmw)


def _outdir(cfg: RunConfig, override=None) -> Path:
    out = Path(override) if override else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(cfg: RunConfig, out=None) -> list[Path]:
    out = _outdir(cfg, out)
    logger.info("generating %d channel samples", cfg.scenario.ue_grid.n_positions)
    samples = scenario.generate_scenario(cfg.scenario)
    paths = [out / "channels.chan"]
    scenario.save_channel_file(paths[0], cfg.scenario, samples)
    codebook = beams.dft_codebook(cfg.scenario.n_mmw)
    for snr_db in cfg.snr_db_list:
        ds = dataset.build_dataset(
            samples,
            codebook,
            _rate_params(cfg, snr_db),
            split_fractions=cfg.split_fractions,
            seed=cfg.dataset_seed,
            provenance={"channel_file": paths[0].name, "scenario_seed": cfg.scenario.seed},
        )
        path = out / f"dataset_{snr_tag(snr_db)}.ds"
        dataset.save_dataset(path, ds)
        logger.info("wrote %s (S=%d, d_in=%d)", path, ds.n_samples, ds.d_in)
        paths.append(path)
    return paths


def _loss_csv_writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    writer = csv.writer(fh)
    writer.writerow(["epoch", "train_loss", "val_loss", "val_ce"])

    def callback(stats):
        writer.writerow([stats.epoch, stats.train_loss, stats.val_loss, stats.val_ce])
        fh.flush()
        logger.info(
            "epoch %d: train %.4f  val %.4f  val_ce %.4f",
            stats.epoch, stats.train_loss, stats.val_loss, stats.val_ce,
        )

    return fh, callback


def _trace_dicts(history):
    return [
        {"epoch": s.epoch, "train_loss": s.train_loss, "val_loss": s.val_loss, "val_ce": s.val_ce}
        for s in history
    ]


def _train_and_save(cfg, ds, arch, role, stem, out, train_fn):
    loss_path = out / f"{stem}_loss.csv"
    fh, callback = _loss_csv_writer(loss_path)
    try:
        model, history = train_fn(callback)
    finally:
        fh.close()
    model_path = out / f"{stem}.model"
    nn.save_model(
        model_path,
        model,
        seed=cfg.train.seed,
        provenance={
            "role": role,
            "snr_db": ds.snr_db,
            "epochs": cfg.train.epochs,
            "batch_size": cfg.train.batch_size,
            "learning_rate": cfg.train.learning_rate,
            "loss_trace": _trace_dicts(history),
        },
    )
    logger.info("wrote %s", model_path)
    return model_path


def cmd_train_teacher(cfg: RunConfig, dataset_path, out=None) -> Path:
    out = _outdir(cfg, out)
    ds = dataset.load_dataset(dataset_path)
    arch = nn.MlpArch([ds.d_in, *cfg.teacher_hidden, ds.n_classes], cfg.activation)
    return _train_and_save(
        cfg, ds, arch, "teacher", f"teacher_{snr_tag(ds.snr_db)}", out,
        lambda cb: nn.train_supervised(arch, ds, cfg.train, callback=cb),
    )


def cmd_train_baseline(cfg: RunConfig, dataset_path, out=None) -> Path:
    out = _outdir(cfg, out)
    ds = dataset.load_dataset(dataset_path)
    arch = nn.MlpArch([ds.d_in, *cfg.student_hidden, ds.n_classes], cfg.activation)
    return _train_and_save(
        cfg, ds, arch, "baseline", f"baseline_{snr_tag(ds.snr_db)}", out,
        lambda cb: nn.train_supervised(arch, ds, cfg.train, callback=cb),
    )


def cmd_distill(cfg: RunConfig, dataset_path, teacher_path, mode, out=None) -> Path:
    out = _outdir(cfg, out)
    ds = dataset.load_dataset(dataset_path)
    teacher, _ = nn.load_model(teacher_path)
    if mode == "self":
        arch = teacher.arch
    else:
        arch = nn.MlpArch([ds.d_in, *cfg.student_hidden, ds.n_classes], cfg.activation)
    run = distill.DistillRun(
        teacher=teacher, student_arch=arch, mode=mode,
        ikd=cfg.ikd, rkd=cfg.rkd, train=cfg.train,
    )
    return _train_and_save(
        cfg, ds, arch, mode, f"student_{mode}_{snr_tag(ds.snr_db)}", out,
        lambda cb: distill.distill_train(run, ds, callback=cb),
    )


def cmd_evaluate(cfg: RunConfig, channels_path, dataset_path, model_specs, out=None) -> Path:
    """model_specs: list of NAME=PATH strings naming the models to score."""
    out = _outdir(cfg, out)
    _, samples = scenario.load_channel_file(channels_path)
    ds = dataset.load_dataset(dataset_path)
    if len(samples) != ds.n_samples:
        raise ValueError(
            f"{channels_path} has {len(samples)} samples but {dataset_path} has {ds.n_samples}"
        )
    codebook = beams.dft_codebook(cfg.scenario.n_mmw)
    params = _rate_params(cfg, ds.snr_db)
    channels = [s.h_mmw for s in samples]
    test_channels = [channels[i] for i in ds.test_idx]

    models = {}
    for spec in model_specs:
        if "=" not in spec:
            raise ValueError(f"--model expects NAME=PATH, got {spec!r}")
        name, path = spec.split("=", 1)
        mlp, header = nn.load_model(path)
        models[name] = metrics.evaluate_model(
            name, mlp, ds, channels, codebook, params,
            ks=tuple(cfg.topk),
            loss_trace=header.get("provenance", {}).get("loss_trace", []),
        )
    report = metrics.EvalReport(
        snr_db=ds.snr_db,
        oracle_se=metrics.oracle_spectral_efficiency(test_channels, codebook, params),
        models=models,
    )
    path = out / f"eval_{snr_tag(ds.snr_db)}.json"
    report.write_json(path)
    logger.info("wrote %s", path)
    return path


def cmd_report(cfg: RunConfig, eval_paths, out=None) -> list[Path]:
    out = _outdir(cfg, out)
    if not eval_paths:
        raise ValueError("report needs at least one evaluation JSON file")
    reports = [metrics.EvalReport.read_json(p) for p in eval_paths]
    teacher_arch = nn.MlpArch(
        [cfg.scenario.n_sub6 * cfg.scenario.k_sub6 * 2, *cfg.teacher_hidden, cfg.scenario.n_mmw],
        cfg.activation,
    )
    student_arch = nn.MlpArch(
        [cfg.scenario.n_sub6 * cfg.scenario.k_sub6 * 2, *cfg.student_hidden, cfg.scenario.n_mmw],
        cfg.activation,
    )
    written = []
    path = out / "complexity.md"
    path.write_text(metrics.complexity_markdown(teacher_arch, student_arch), encoding="utf-8")
    written.append(path)
    for name, writer in [
        ("accuracy_vs_snr.csv", metrics.write_accuracy_csv),
        ("se_vs_snr.csv", metrics.write_se_csv),
        ("loss_curves.csv", metrics.write_loss_csv),
    ]:
        path = out / name
        writer(path, reports)
        written.append(path)
    for p in written:
        logger.info("wrote %s", p)
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamkd",
        description="Sub-6 GHz to mmWave beam prediction with knowledge-distilled MLPs.",
    )
    parser.add_argument("--config", help="YAML config file (defaults used when omitted)")
    parser.add_argument("--seed", type=int, help="override scenario/dataset/training seeds")
    parser.add_argument("--out", help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", help="write channel and per-SNR dataset files")

    p = sub.add_parser("train-teacher", help="supervised training of the teacher network")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("train-baseline", help="supervised training of the compact network")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("distill", help="train a student against a frozen teacher")
    p.add_argument("--dataset", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--mode", required=True, choices=distill.MODES)

    p = sub.add_parser("evaluate", help="score models on the test split of one dataset")
    p.add_argument("--channels", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", action="append", required=True, metavar="NAME=PATH")

    p = sub.add_parser("report", help="render complexity table and metric curves")
    p.add_argument("--eval", action="append", required=True, metavar="EVAL_JSON")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train-teacher":
            cmd_train_teacher(cfg, args.dataset)
        elif args.command == "train-baseline":
            cmd_train_baseline(cfg, args.dataset)
        elif args.command == "distill":
            cmd_distill(cfg, args.dataset, args.teacher, args.mode)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.channels, args.dataset, args.model)
        elif args.command == "report":
            cmd_report(cfg, args.eval)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
