"""Evaluation: Top-k accuracy, spectral efficiency, and complexity accounting."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import beams, neuralnet as nn


def topk_indices(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries per row, ties toward the lower index."""
    if not 1 <= k <= logits.shape[-1]:
        raise ValueError(f"k must be in [1, {logits.shape[-1]}], got {k}")
    return np.argsort(-logits, axis=-1, kind="stable")[..., :k]


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label is among the k highest-scoring classes."""
    top = topk_indices(np.atleast_2d(logits), k)
    return float(np.mean(np.any(top == np.asarray(labels).reshape(-1, 1), axis=1)))


def spectral_efficiency(mlp, inputs, channels, codebook, params, k: int) -> float:
    """Mean per-subcarrier rate of the best among each sample's top-k beams."""
    if mlp.arch.d_out != codebook.n_beams:
        raise ValueError(
            f"model outputs {mlp.arch.d_out} classes but codebook has {codebook.n_beams} beams"
        )
    if len(inputs) != len(channels):
        raise ValueError(f"{len(inputs)} inputs vs {len(channels)} channels")
    logits = nn.forward(mlp, np.asarray(inputs, dtype=np.float64)).logits
    picks = topk_indices(logits, k)
    rates = [
        beams.topk_beams_rate(h, codebook, params, idx) for h, idx in zip(channels, picks)
    ]
    return float(np.mean(rates)) / params.k_mmw


def oracle_spectral_efficiency(channels, codebook, params) -> float:
    """Mean per-subcarrier rate of the exhaustive-search beam."""
    rates = [beams.optimal_beam(h, codebook, params)[1] for h in channels]
    return float(np.mean(rates)) / params.k_mmw


def count_params(arch: nn.MlpArch) -> int:
    """Trainable parameters: sum over layers of in*out + out."""
    dims = arch.layer_dims
    return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))


def count_flops(arch: nn.MlpArch) -> int:
    """Inference FLOPs at batch 1: one multiply + one add per weight."""
    dims = arch.layer_dims
    return 2 * sum(i * o for i, o in zip(dims[:-1], dims[1:]))


def complexity_reduction(p_teacher: float, p_student: float) -> float:
    """(1 - student/teacher) * 100."""
    if p_teacher <= 0:
        raise ValueError(f"teacher count must be > 0, got {p_teacher}")
    return (1.0 - p_student / p_teacher) * 100.0


@dataclass
class ModelEval:
    name: str
    layer_dims: list[int]
    param_count: int
    flop_count: int
    topk_acc: dict[int, float]
    se_topk: dict[int, float]
    loss_trace: list[dict] = field(default_factory=list)

    def __post_init__(self):
        ks = sorted(self.topk_acc)
        for lo, hi in zip(ks[:-1], ks[1:]):
            if self.topk_acc[hi] < self.topk_acc[lo]:
                raise ValueError(f"{self.name}: top-{hi} accuracy below top-{lo}")
        ks = sorted(self.se_topk)
        for lo, hi in zip(ks[:-1], ks[1:]):
            if self.se_topk[hi] < self.se_topk[lo]:
                raise ValueError(f"{self.name}: top-{hi} SE below top-{lo}")


@dataclass
class EvalReport:
    """Evaluation of several models on one labeled dataset (one SNR point)."""

    snr_db: float
    oracle_se: float
    models: dict[str, ModelEval]

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "snr_db": self.snr_db,
            "oracle_se": self.oracle_se,
            "models": {
                name: {
                    "layer_dims": m.layer_dims,
                    "param_count": m.param_count,
                    "flop_count": m.flop_count,
                    "topk_acc": {str(k): v for k, v in m.topk_acc.items()},
                    "se_topk": {str(k): v for k, v in m.se_topk.items()},
                    "loss_trace": m.loss_trace,
                }
                for name, m in self.models.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        models = {
            name: ModelEval(
                name=name,
                layer_dims=list(md["layer_dims"]),
                param_count=int(md["param_count"]),
                flop_count=int(md["flop_count"]),
                topk_acc={int(k): float(v) for k, v in md["topk_acc"].items()},
                se_topk={int(k): float(v) for k, v in md["se_topk"].items()},
                loss_trace=list(md.get("loss_trace", [])),
            )
            for name, md in d["models"].items()
        }
        return cls(snr_db=float(d["snr_db"]), oracle_se=float(d["oracle_se"]), models=models)

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_json(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def evaluate_model(name, mlp, ds, channels, codebook, params, ks=(1, 3), loss_trace=None):
    """Accuracy/SE of one model on the test split, plus its complexity figures."""
    test = ds.test_idx
    logits = nn.forward(mlp, ds.inputs[test].astype(np.float64)).logits
    labels = ds.labels[test]
    test_channels = [channels[i] for i in test]
    return ModelEval(
        name=name,
        layer_dims=list(mlp.arch.layer_dims),
        param_count=count_params(mlp.arch),
        flop_count=count_flops(mlp.arch),
        topk_acc={k: topk_accuracy(logits, labels, k) for k in ks},
        se_topk={
            k: spectral_efficiency(mlp, ds.inputs[test], test_channels, codebook, params, k)
            for k in ks
        },
        loss_trace=list(loss_trace or []),
    )


def complexity_markdown(teacher_arch: nn.MlpArch, student_arch: nn.MlpArch) -> str:
    """Model complexity comparison rendered as a markdown table."""
    p_t, p_s = count_params(teacher_arch), count_params(student_arch)
    f_t, f_s = count_flops(teacher_arch), count_flops(student_arch)
    lines = [
        "| Model | Parameters | FLOPs |",
        "| --- | --- | --- |",
        f"| Teacher | {p_t:,} | {f_t:,} |",
        f"| Students | {p_s:,} | {f_s:,} |",
        f"| Reduction (parameters) | | {complexity_reduction(p_t, p_s):.2f}% |",
        f"| Reduction (FLOPs) | | {complexity_reduction(f_t, f_s):.2f}% |",
    ]
    return "\n".join(lines) + "\n"


def write_accuracy_csv(path, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["snr_db", "model", "top1_acc", "top3_acc"])
        for rep in sorted(reports, key=lambda r: r.snr_db):
            for name in sorted(rep.models):
                m = rep.models[name]
                writer.writerow([rep.snr_db, name, m.topk_acc.get(1), m.topk_acc.get(3)])


def write_se_csv(path, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["snr_db", "model", "se_top1", "se_top3", "se_oracle"])
        for rep in sorted(reports, key=lambda r: r.snr_db):
            for name in sorted(rep.models):
                m = rep.models[name]
                writer.writerow(
                    [rep.snr_db, name, m.se_topk.get(1), m.se_topk.get(3), rep.oracle_se]
                )


def write_loss_csv(path, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["snr_db", "model", "epoch", "train_loss", "val_loss", "val_ce"])
        for rep in sorted(reports, key=lambda r: r.snr_db):
            for name in sorted(rep.models):
                for row in rep.models[name].loss_trace:
                    writer.writerow(
                        [rep.snr_db, name, row["epoch"], row["train_loss"],
                         row["val_loss"], row["val_ce"]]
                    )
