"""Labeled dataset construction: encode sub-6 GHz channels, attach beam labels.

Inputs follow a fixed layout so files stay portable: all real parts
(antenna-major, subcarrier within antenna), then all imaginary parts in the
same order. Labels come from the exhaustive-search beam oracle at one SNR;
inputs are scaled by the max absolute value over the training split.
"""

from dataclasses import dataclass, field

import numpy as np

from . import beams, fileio

DATASET_FORMAT_VERSION = 1


@dataclass
class LabeledDataset:
    inputs: np.ndarray  # (S, d_in) float32, already scaled
    labels: np.ndarray  # (S,) int64 in [0, n_classes)
    snr_db: float
    scale: float
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    d_in: int
    n_classes: int
    provenance: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


def encode_input(h_sub6: np.ndarray) -> np.ndarray:
    """Complex (N, K) matrix -> real vector [all re, all im], length 2*N*K."""
    h = np.ascontiguousarray(h_sub6)
    return np.concatenate([h.real.ravel(), h.imag.ravel()])


def decode_input(x: np.ndarray, n: int, k: int) -> np.ndarray:
    """Inverse of encode_input given the matrix shape."""
    if x.shape != (2 * n * k,):
        raise ValueError(f"encoded vector has length {x.shape}, expected ({2 * n * k},)")
    return x[: n * k].reshape(n, k) + 1j * x[n * k :].reshape(n, k)


def split_indices(n: int, fractions, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffled partition into train/val/test index arrays."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError(f"split_fractions must be 3 nonnegative values, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split_fractions must sum to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def build_dataset(
    samples,
    codebook: beams.Codebook,
    params: beams.RateParams,
    split_fractions=(0.7, 0.15, 0.15),
    seed: int = 0,
    provenance: dict | None = None,
) -> LabeledDataset:
    """Encode all samples, label them with the beam oracle at `params`.

    Row i of the dataset corresponds to samples[i]; split index arrays refer
    to that shared ordering. The normalization scale is the max |x| over the
    training split only.
    """
    if len(samples) == 0:
        raise ValueError("cannot build a dataset from zero samples")
    inputs = np.stack([encode_input(s.h_sub6) for s in samples]).astype(np.float32)
    labels = np.array(
        [beams.optimal_beam(s.h_mmw, codebook, params)[0] for s in samples], dtype=np.int64
    )
    train_idx, val_idx, test_idx = split_indices(len(samples), split_fractions, seed)
    if train_idx.size == 0:
        raise ValueError(f"split_fractions {split_fractions} leave the training split empty")
    scale = float(np.max(np.abs(inputs[train_idx])))
    if scale <= 0:
        raise ValueError("degenerate training inputs: all zeros")
    provenance = dict(provenance or {})
    provenance.setdefault("split_seed", seed)
    return LabeledDataset(
        inputs=inputs / np.float32(scale),
        labels=labels,
        snr_db=params.snr_db,
        scale=scale,
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=test_idx,
        d_in=inputs.shape[1],
        n_classes=codebook.n_beams,
        provenance=provenance,
    )


def save_dataset(path, ds: LabeledDataset) -> None:
    if ds.n_classes > 0xFFFF:
        raise ValueError("dataset format stores labels as uint16; n_classes too large")
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "sample_count": int(ds.n_samples),
        "d_in": int(ds.d_in),
        "n_classes": int(ds.n_classes),
        "snr_db": float(ds.snr_db),
        "scale": float(ds.scale),
        "split": {
            "train": [int(i) for i in ds.train_idx],
            "val": [int(i) for i in ds.val_idx],
            "test": [int(i) for i in ds.test_idx],
        },
        "provenance": ds.provenance,
    }
    with open(path, "wb") as fh:
        fileio.write_header(fh, header)
        fh.write(np.ascontiguousarray(ds.inputs, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<u2").tobytes())


def load_dataset(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        header = fileio.read_header(fh, str(path))
        fileio.check_version(header, DATASET_FORMAT_VERSION, str(path))
        try:
            count = int(header["sample_count"])
            d_in = int(header["d_in"])
            n_classes = int(header["n_classes"])
            snr_db = float(header["snr_db"])
            scale = float(header["scale"])
            split = {
                k: np.asarray(header["split"][k], dtype=np.int64) for k in ("train", "val", "test")
            }
            provenance = dict(header.get("provenance", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise fileio.MalformedHeaderError(f"{path}: bad header field ({exc})") from exc
        joined = np.concatenate([split["train"], split["val"], split["test"]])
        if len(np.unique(joined)) != count or joined.size != count:
            raise fileio.MalformedHeaderError(
                f"{path}: split index lists must partition 0..{count - 1}"
            )
        data = fileio.read_payload(fh, count * d_in * 4 + count * 2, str(path))

    inputs = fileio.floats_from(data, 0, count * d_in).copy().reshape(count, d_in)
    labels = np.frombuffer(data, dtype="<u2", count=count, offset=count * d_in * 4)
    labels = labels.astype(np.int64)
    if labels.size and labels.max(initial=0) >= n_classes:
        raise fileio.DimensionMismatchError(f"{path}: label exceeds n_classes - 1")
    return LabeledDataset(
        inputs=inputs,
        labels=labels,
        snr_db=snr_db,
        scale=scale,
        train_idx=split["train"],
        val_idx=split["val"],
        test_idx=split["test"],
        d_in=d_in,
        n_classes=n_classes,
        provenance=provenance,
    )
