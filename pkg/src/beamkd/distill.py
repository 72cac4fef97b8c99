"""Student training by knowledge distillation against a frozen teacher.

Three modes:

* ``ikd``  — individual distillation: the student matches the teacher's
  temperature-softened output distribution, blended with the supervised
  cross-entropy term by a weight alpha.
* ``rkd``  — relational distillation: the student matches batch-level
  relational structure of an intermediate feature layer — pairwise
  distances normalized by their batch mean, and triplet angle cosines —
  under a Huber discrepancy, on top of the supervised term.
* ``self`` — individual distillation with the student architecture equal to
  the teacher's.

All losses return analytic gradients (on logits, and for rkd also on the
feature layer); the relational gradients include the dependence of the
student's mean-distance normalizer on the features. Everything is
finite-difference checked in the test suite.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from . import neuralnet as nn
from .dataset import LabeledDataset
from .neuralnet import Mlp, MlpArch, TrainConfig

logger = logging.getLogger(__name__)

MODES = ("ikd", "rkd", "self")

# Exact pair/triplet enumeration up to this batch size; beyond it the Huber
# sums are subsampled (the distance normalizer stays exact).
EXACT_ENUM_LIMIT = 64


@dataclass(frozen=True)
class IkdConfig:
    temperature: float = 10.0
    alpha: float = 0.9

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class RkdConfig:
    feature_layer: int | None = None  # None: last hidden layer of each network
    weight_dist: float = 1.0
    weight_angle: float = 1.0
    epsilon: float = 1e-12
    max_pairs: int | None = None
    max_triplets: int | None = None
    subsample_seed: int = 0

    def __post_init__(self):
        if self.weight_dist < 0 or self.weight_angle < 0:
            raise ValueError("relational term weights must be >= 0")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class DistillRun:
    teacher: Mlp
    student_arch: MlpArch
    mode: str
    ikd: IkdConfig = field(default_factory=IkdConfig)
    rkd: RkdConfig = field(default_factory=RkdConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.teacher.arch.d_out != self.student_arch.d_out:
            raise ValueError(
                f"teacher outputs {self.teacher.arch.d_out} classes, student "
                f"{self.student_arch.d_out}"
            )
        if self.teacher.arch.d_in != self.student_arch.d_in:
            raise ValueError(
                f"teacher input dim {self.teacher.arch.d_in} != student {self.student_arch.d_in}"
            )
        if self.mode == "self" and self.student_arch != self.teacher.arch:
            raise ValueError(
                "self-distillation requires the student architecture to equal the "
                f"teacher's ({list(self.teacher.arch.layer_dims)})"
            )


def ikd_loss(student_logits, teacher_logits, labels, cfg: IkdConfig):
    """Blend of softened-distribution matching and supervised cross-entropy.

    Loss per batch: mean_i [ alpha * tau^2 * CE(soft_student, soft_teacher)
    + (1 - alpha) * CE(student, one-hot) ]. Teacher logits are constants.

    Returns (loss, gradient on student logits).
    """
    if student_logits.shape != teacher_logits.shape:
        raise ValueError(
            f"logit shapes disagree: {student_logits.shape} vs {teacher_logits.shape}"
        )
    m, n_classes = student_logits.shape
    z = nn.one_hot(labels, n_classes)
    p_s = nn.softmax(student_logits)
    loss = (1.0 - cfg.alpha) * nn.cross_entropy(p_s, z)
    grad = (1.0 - cfg.alpha) * (p_s - z) / m
    if cfg.alpha > 0.0:
        tau = cfg.temperature
        soft_t = nn.softmax(teacher_logits, temperature=tau)
        soft_s = nn.softmax(student_logits, temperature=tau)
        loss += cfg.alpha * tau**2 * nn.cross_entropy(soft_s, soft_t)
        grad += cfg.alpha * tau * (soft_s - soft_t) / m
    return loss, grad


def huber_g(psi_a, psi_b):
    """Huber discrepancy: quadratic inside |delta| <= 1, linear outside."""
    delta = np.asarray(psi_a, dtype=np.float64) - np.asarray(psi_b, dtype=np.float64)
    a = np.abs(delta)
    return np.where(a <= 1.0, 0.5 * delta**2, a - 0.5)


def _pairwise(features: np.ndarray):
    diff = features[:, None, :] - features[None, :, :]
    return diff, np.sqrt((diff**2).sum(axis=-1))


def rkd_potentials(features: np.ndarray, cfg: RkdConfig = RkdConfig()):
    """Relational potentials of one feature batch, exhaustively enumerated.

    Returns (psi_dist, psi_angl):
      psi_dist — length C(M,2), pairs (i, j) with i < j in lexicographic
        order; each is the pairwise distance divided by the batch-mean
        distance mu (zero when mu is degenerate).
      psi_angl — length 3*C(M,3), triplets (i, j, k) with i < j < k in
        lexicographic order; for each, the angle cosine at vertex i, then
        j, then k. A cosine is zero whenever either difference vector falls
        below the epsilon guard.
    """
    features = np.asarray(features, dtype=np.float64)
    m = features.shape[0]
    if m < 2:
        raise ValueError(f"relational potentials need at least 2 samples, got {m}")
    _, dist = _pairwise(features)
    iu, ju = np.triu_indices(m, k=1)
    mu = dist[iu, ju].mean()
    psi_dist = dist[iu, ju] / mu if mu >= cfg.epsilon else np.zeros(len(iu))

    angles = []
    for i in range(m):
        for j in range(i + 1, m):
            for k in range(j + 1, m):
                for vertex, a, b in ((i, j, k), (j, i, k), (k, i, j)):
                    e1 = features[a] - features[vertex]
                    e2 = features[b] - features[vertex]
                    n1 = np.linalg.norm(e1)
                    n2 = np.linalg.norm(e2)
                    if n1 < cfg.epsilon or n2 < cfg.epsilon:
                        angles.append(0.0)
                    else:
                        angles.append(float(e1 @ e2 / (n1 * n2)))
    return psi_dist, np.asarray(angles)


def _choose_pairs(m: int, cfg: RkdConfig, rng):
    """Boolean (m, m) mask of the pairs entering the Huber sum (i < j half)."""
    total = comb(m, 2)
    cap = cfg.max_pairs
    if cap is None and m > EXACT_ENUM_LIMIT:
        cap = comb(EXACT_ENUM_LIMIT, 2)
    mask = np.zeros((m, m), dtype=bool)
    iu, ju = np.triu_indices(m, k=1)
    if cap is not None and cap < total:
        keep = rng.choice(total, size=cap, replace=False)
        iu, ju = iu[keep], ju[keep]
    mask[iu, ju] = True
    return mask


@lru_cache(maxsize=8)
def _exact_triplets(m: int) -> np.ndarray:
    i, j, k = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    sel = (i < j) & (j < k)
    return np.stack([i[sel], j[sel], k[sel]], axis=1)


def _choose_triplets(m: int, cfg: RkdConfig, rng):
    """Array of unordered triplets (rows i < j < k) entering the Huber sum."""
    total = comb(m, 3)
    cap = cfg.max_triplets
    if cap is None and m > EXACT_ENUM_LIMIT:
        cap = comb(EXACT_ENUM_LIMIT, 3)
    if cap is not None and cap < total:
        picked = {tuple(sorted(rng.choice(m, size=3, replace=False))) for _ in range(cap)}
        return np.array(sorted(picked), dtype=int)
    return _exact_triplets(m)


def _distance_term(f_s: np.ndarray, f_t: np.ndarray, cfg: RkdConfig, pair_mask):
    """Mean Huber discrepancy of distance potentials and its feature gradient.

    The student's normalizer mu is a function of the features: the gradient
    carries both the direct 1/mu path and the -psi/mu * dmu path.
    """
    m = f_s.shape[0]
    diff_s, dist_s = _pairwise(f_s)
    _, dist_t = _pairwise(f_t)
    all_pairs = np.triu(np.ones((m, m), dtype=bool), k=1)
    n_all = all_pairs.sum()
    mu_s = dist_s[all_pairs].mean()
    mu_t = dist_t[all_pairs].mean()
    psi_s = dist_s / mu_s if mu_s >= cfg.epsilon else np.zeros_like(dist_s)
    psi_t = dist_t / mu_t if mu_t >= cfg.epsilon else np.zeros_like(dist_t)

    delta = psi_s - psi_t
    n_used = pair_mask.sum()
    loss = float(huber_g(psi_s, psi_t)[pair_mask].sum() / n_used)
    if mu_s < cfg.epsilon:
        return loss, np.zeros_like(f_s)

    dl_dpsi = np.where(pair_mask, np.clip(delta, -1.0, 1.0) / n_used, 0.0)
    # direct path through each distance, plus the shared path through mu
    dl_ddist = dl_dpsi / mu_s
    dl_dmu = -(dl_dpsi * dist_s).sum() / mu_s**2
    dl_ddist = dl_ddist + np.where(all_pairs, dl_dmu / n_all, 0.0)

    full = dl_ddist + dl_ddist.T  # symmetrize: each pair counted once above
    safe = np.where(dist_s > cfg.epsilon, dist_s, 1.0)
    coef = np.where(dist_s > cfg.epsilon, full / safe, 0.0)
    grad = coef.sum(axis=1)[:, None] * f_s - coef @ f_s
    return loss, grad


def _angle_stats(features: np.ndarray, eps: float):
    e = features[None, :, :] - features[:, None, :]  # e[v, a] = f_a - f_v
    norms = np.sqrt((e**2).sum(axis=-1))
    valid = norms > eps
    np.fill_diagonal(valid, False)
    safe = np.where(valid, norms, 1.0)
    u = np.where(valid[:, :, None], e / safe[:, :, None], 0.0)
    cos = np.einsum("vad,vbd->vab", u, u)
    return u, safe, valid, cos


def _angle_term(f_s: np.ndarray, f_t: np.ndarray, cfg: RkdConfig, triplets):
    """Mean Huber discrepancy of angle potentials and its feature gradient.

    For every unordered triplet the cosine is evaluated at each of its three
    vertices; the mean runs over those 3*C(M,3) angles (or the subsampled
    set). Internally each angle appears twice in a symmetric (vertex, a, b)
    tensor, hence the factor 1/2.
    """
    u_s, safe_s, valid_s, cos_s = _angle_stats(f_s, cfg.epsilon)
    _, _, _, cos_t = _angle_stats(f_t, cfg.epsilon)

    m = f_s.shape[0]
    mask = np.zeros((m, m, m), dtype=bool)
    i, j, k = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    for v, a, b in ((i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)):
        mask[v, a, b] = True
    n_angles = 3 * len(triplets)

    delta = cos_s - cos_t
    loss = float(huber_g(cos_s, cos_t)[mask].sum() / (2 * n_angles))

    w = np.where(mask, np.clip(delta, -1.0, 1.0), 0.0) / (2 * n_angles)
    du = 2.0 * np.einsum("vab,vbd->vad", w, u_s)
    de = (du - (du * u_s).sum(axis=-1, keepdims=True) * u_s) / safe_s[:, :, None]
    de = np.where(valid_s[:, :, None], de, 0.0)
    grad = de.sum(axis=0) - de.sum(axis=1)
    return loss, grad


def rkd_loss_parts(student_features, student_logits, teacher_features, labels, cfg: RkdConfig):
    """Relational loss from raw feature/logit arrays (teacher side constant).

    Returns (loss, gradient on student logits, gradient on student features).
    """
    f_s = np.asarray(student_features, dtype=np.float64)
    f_t = np.asarray(teacher_features, dtype=np.float64)
    m = f_s.shape[0]
    if f_t.shape[0] != m or len(labels) != m or student_logits.shape[0] != m:
        raise ValueError("student features, teacher features, logits, labels must agree in M")
    if m < 2:
        raise ValueError(f"relational loss needs a batch of >= 2 samples, got {m}")

    n_classes = student_logits.shape[1]
    z = nn.one_hot(labels, n_classes)
    p = nn.softmax(student_logits)
    loss = nn.cross_entropy(p, z)
    dlogits = (p - z) / m

    rng = np.random.default_rng(cfg.subsample_seed)
    dfeat = np.zeros_like(f_s)
    if cfg.weight_dist > 0:
        l_d, g_d = _distance_term(f_s, f_t, cfg, _choose_pairs(m, cfg, rng))
        loss += cfg.weight_dist * l_d
        dfeat += cfg.weight_dist * g_d
    if cfg.weight_angle > 0:
        if m >= 3:
            l_a, g_a = _angle_term(f_s, f_t, cfg, _choose_triplets(m, cfg, rng))
            loss += cfg.weight_angle * l_a
            dfeat += cfg.weight_angle * g_a
        else:
            logger.warning("batch of %d samples: angle-wise term omitted (needs >= 3)", m)
    return loss, dlogits, dfeat


def rkd_loss(student_trace, teacher_trace, labels, cfg: RkdConfig):
    """Relational loss from forward traces; features taken at cfg.feature_layer."""
    r = -1 if cfg.feature_layer is None else cfg.feature_layer
    return rkd_loss_parts(
        student_trace.hidden_feature(r),
        student_trace.logits,
        teacher_trace.hidden_feature(r),
        labels,
        cfg,
    )


def _teacher_outputs(teacher: Mlp, ds: LabeledDataset, feature_layer, chunk: int = 512):
    """Logits and feature-layer activations of the frozen teacher on all samples."""
    logits = np.empty((ds.n_samples, teacher.arch.d_out))
    feats = None
    for start in range(0, ds.n_samples, chunk):
        block = ds.inputs[start : start + chunk].astype(np.float64)
        trace = nn.forward(teacher, block)
        logits[start : start + len(block)] = trace.logits
        f = trace.hidden_feature(feature_layer)
        if feats is None:
            feats = np.empty((ds.n_samples, f.shape[1]))
        feats[start : start + len(block)] = f
    return logits, feats


def distill_train(run: DistillRun, ds: LabeledDataset, callback=None):
    """Train a student against the frozen teacher; returns (model, epoch history).

    The teacher is evaluated once up front on every sample (it never
    changes), and its logits/features are indexed per minibatch. Validation
    loss is the mode's own objective on the validation split, evaluated in
    training-sized chunks; plain cross-entropy on the full split is recorded
    alongside for cross-model comparison.
    """
    if run.student_arch.d_in != ds.d_in or run.student_arch.d_out != ds.n_classes:
        raise ValueError(
            f"student arch {run.student_arch.layer_dims} does not match dataset "
            f"(d_in={ds.d_in}, n_classes={ds.n_classes})"
        )
    feature_layer = -1 if run.rkd.feature_layer is None else run.rkd.feature_layer
    t_logits, t_feats = _teacher_outputs(run.teacher, ds, feature_layer)

    if run.mode in ("ikd", "self"):

        def batch_fn(trace, labels, indices):
            loss, dlogits = ikd_loss(trace.logits, t_logits[indices], labels, run.ikd)
            return loss, dlogits, None

        def objective(trace, labels, indices):
            return ikd_loss(trace.logits, t_logits[indices], labels, run.ikd)[0]

    else:

        def batch_fn(trace, labels, indices):
            loss, dlogits, dfeat = rkd_loss_parts(
                trace.hidden_feature(feature_layer), trace.logits,
                t_feats[indices], labels, run.rkd,
            )
            return loss, dlogits, {feature_layer: dfeat}

        batch_fn.min_batch = 2

        def objective(trace, labels, indices):
            return rkd_loss_parts(
                trace.hidden_feature(feature_layer), trace.logits,
                t_feats[indices], labels, run.rkd,
            )[0]

    def val_fn(mlp):
        idx = ds.val_idx
        if len(idx) == 0:
            return float("nan"), float("nan")
        losses, sizes = [], []
        for block in _batch_slices_for_eval(idx, run.train.batch_size):
            trace = nn.forward(mlp, ds.inputs[block].astype(np.float64))
            losses.append(objective(trace, ds.labels[block], block))
            sizes.append(len(block))
        return float(np.average(losses, weights=sizes)), nn.evaluate_ce(mlp, ds, idx)

    def _batch_slices_for_eval(idx, batch_size):
        blocks = [idx[i : i + batch_size] for i in range(0, len(idx), batch_size)]
        if run.mode == "rkd" and len(blocks) > 1 and len(blocks[-1]) < 2:
            blocks[-2] = np.concatenate([blocks[-2], blocks[-1]])
            blocks.pop()
        return blocks

    return nn.train_loop(run.student_arch, ds, run.train, batch_fn, val_fn, callback)
