"""Branch classification losses and the adversarial DG regularizers.

Every regularizer is written as a per-instance term whose mean over a
dataset equals the corresponding weighted population objective; the
discriminator ascends that mean and the extractor descends it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from . import autodiff as ad
from .models import ModelConfig, ModelParameters, PredictionScores, VARIANT_DISC
from .models import adg_logits, cadg_jsd_logit, cadg_kld_logits, discriminate_cadg_jsd

# tuned for the desk-scale synthetic data; larger weights collapse the union head
DEFAULT_LAMBDA = {"none": 0.0, "adg_kld": 0.05, "cadg_kld": 0.3, "cadg_jsd": 0.5, "deepc": 0.3}


@dataclass(frozen=True)
class DgVariant:
    name: str = "none"
    lam: float | None = None

    def __post_init__(self):
        if self.name not in VARIANT_DISC:
            raise ValueError(f"unknown DG variant {self.name!r}")

    @property
    def weight(self) -> float:
        return DEFAULT_LAMBDA[self.name] if self.lam is None else float(self.lam)

    @property
    def conditional(self) -> bool:
        return self.name in ("cadg_kld", "cadg_jsd", "deepc")


# --- statistics -------------------------------------------------------------

@dataclass(frozen=True)
class DomainStatistics:
    """Training-set counts; ``N_ik`` is indexed [object, predicate]."""

    N: int
    N_i: np.ndarray
    N_k: np.ndarray
    N_ik: np.ndarray

    @property
    def n_objects(self) -> int:
        return len(self.N_i)

    @property
    def n_predicates(self) -> int:
        return len(self.N_k)

    @property
    def alpha_i(self) -> np.ndarray:
        return self.N_i / self.N

    @property
    def alpha_k(self) -> np.ndarray:
        return self.N_k / self.N

    @property
    def alpha_ik(self) -> np.ndarray:
        out = np.zeros(self.N_ik.shape)
        seen = self.N_k > 0
        out[:, seen] = self.N_ik[:, seen] / self.N_k[seen]
        return out

    @property
    def seen_cells(self) -> int:
        return int(np.count_nonzero(self.N_ik))


def compute_statistics(train, n_objects: int | None = None, n_predicates: int | None = None) -> DomainStatistics:
    train = list(train)
    if not train:
        raise ValueError("cannot compute domain statistics of an empty set")
    M = n_objects if n_objects is not None else 1 + max(x.object_label for x in train)
    K = n_predicates if n_predicates is not None else 1 + max(max(x.predicate_labels) for x in train)
    N_i = np.zeros(M, dtype=np.int64)
    N_ik = np.zeros((M, K), dtype=np.int64)
    for x in train:
        N_i[x.object_label] += 1
        for p in x.predicate_labels:
            N_ik[x.object_label, p] += 1
    return DomainStatistics(len(train), N_i, N_ik.sum(axis=0), N_ik)


# --- loss bookkeeping -------------------------------------------------------

@dataclass(frozen=True)
class LossReport:
    L_H: float
    L_sp: float
    L_U: float
    L_DG: float
    lam: float
    L_total: float
    discriminator_objective: float

    @classmethod
    def build(cls, L_H, L_sp, L_U, L_DG=0.0, lam=0.0, discriminator_objective=0.0) -> "LossReport":
        L_H, L_sp, L_U, L_DG, lam = map(float, (L_H, L_sp, L_U, L_DG, lam))
        return cls(L_H, L_sp, L_U, L_DG, lam, L_H + L_sp + L_U + lam * L_DG, float(discriminator_objective))

    def identity_gap(self) -> float:
        return self.L_total - (self.L_H + self.L_sp + self.L_U + self.lam * self.L_DG)

    def row(self, step: int) -> dict:
        return {"step": step, "L_H": self.L_H, "L_sp": self.L_sp, "L_U": self.L_U, "L_DG": self.L_DG,
                "D_obj": self.discriminator_objective, "L_total": self.L_total}


# --- branch losses ----------------------------------------------------------

def sample_mask(labels: np.ndarray, neg_ratio: int, rng: np.random.Generator) -> np.ndarray:
    """0/1 mask of all positives plus ``neg_ratio`` x #positives random negatives per row."""
    labels = np.asarray(labels) > 0
    if labels.ndim != 2:
        raise ValueError("labels must be a (batch, K) multi-hot matrix")
    if neg_ratio < 0:
        raise ValueError("neg_ratio must be nonnegative")
    n_pos = labels.sum(axis=1)
    if (n_pos == 0).any():
        raise ValueError(f"row {int(np.argmin(n_pos))} has no positive label")
    keys = np.where(labels, np.inf, rng.random(labels.shape))
    rank = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    quota = np.minimum(neg_ratio * n_pos, labels.shape[1] - n_pos)
    return (labels | (rank < quota[:, None])).astype(np.float64)


def _bce_numpy(p, y):
    # xlogy keeps 0 * ln 0 at 0 for saturated scores
    return -(xlogy(y, p) + xlogy(1 - y, 1 - p))


def baseline_loss(scores: PredictionScores, labels, neg_ratio: int = 6, rng=None, mask=None) -> tuple[float, float, float]:
    """(L_H, L_sp, L_U) from branch probabilities: masked BCE, row mean then batch mean."""
    labels = np.asarray(labels, dtype=np.float64)
    if mask is None:
        mask = sample_mask(labels, neg_ratio, rng if rng is not None else np.random.default_rng(0))
    w = mask / mask.sum(axis=1, keepdims=True) / len(labels)
    return tuple(float(np.sum(w * _bce_numpy(s, labels), where=w > 0))
                 for s in (scores.s_h, scores.s_sp, scores.s_u))


def branch_loss(logits: ad.Tensor, labels: np.ndarray, mask: np.ndarray) -> ad.Tensor:
    """Graph version of one branch term of :func:`baseline_loss`, taking logits."""
    w = mask / mask.sum(axis=1, keepdims=True) / len(labels)
    ll = ad.add(ad.mul(labels, ad.log_sigmoid(logits)), ad.mul(1.0 - labels, ad.log_sigmoid(ad.neg(logits))))
    return ad.neg(ad.sum_(ad.mul(w, ll)))


# --- minibatch regularizer terms (single sample) -----------------------------

def _check_distribution(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or (p < 0).any() or abs(p.sum() - 1) > 1e-9:
        raise ValueError("discriminator output must be a probability vector")
    return p


def adg_kld_minibatch(discr_out, domain_id: int) -> float:
    """``ln D_obj(x)``; the extractor minimizes it, the discriminator maximizes it."""
    p = _check_distribution(discr_out)
    if not 0 <= domain_id < len(p):
        raise IndexError(f"domain id {domain_id} out of range [0, {len(p)})")
    with np.errstate(divide="ignore"):
        return float(np.log(p[domain_id]))


def cadg_kld_minibatch(discr_out, domain_id: int) -> float:
    """Same as :func:`adg_kld_minibatch` for a predicate-conditioned output."""
    return adg_kld_minibatch(discr_out, domain_id)


def cadg_jsd_minibatch(params: ModelParameters, f_u, domain_id: int, predicate_id: int,
                       stats: DomainStatistics) -> float:
    """``ln D(f, obj; k) + sum_i alpha_ik ln(1 - D(f, i; k))`` over seen cells of class k."""
    if stats.N_k[predicate_id] == 0:
        raise ValueError(f"predicate {predicate_id} has no training instances")
    objs = np.flatnonzero(stats.N_ik[:, predicate_id])
    w = stats.alpha_ik[objs, predicate_id]
    f = np.asarray(f_u, dtype=np.float64)
    d_obj = discriminate_cadg_jsd(params, f, domain_id, predicate_id)
    d_all = discriminate_cadg_jsd(params, np.tile(f, (len(objs), 1)), objs, predicate_id)
    return float(np.log(d_obj) + np.sum(w * np.log1p(-d_all)))


# --- batched graph regularizer --------------------------------------------

@dataclass
class DgPlan:
    """Index expansion of a batch into regularizer rows.

    ``rows``/``preds``/``objs``/``weights`` describe one row per kept
    (instance, predicate) pair; the ``jsd_*`` arrays expand each pair over the
    seen domains of its predicate. Weights already include the 1/B of the
    batch mean.
    """

    rows: np.ndarray
    preds: np.ndarray
    objs: np.ndarray
    weights: np.ndarray
    jsd_rows: np.ndarray | None = None
    jsd_preds: np.ndarray | None = None
    jsd_objs: np.ndarray | None = None
    jsd_weights: np.ndarray | None = None


def deepc_weight(stats: DomainStatistics, obj: int, pred: int) -> float:
    """Unit-alpha weight, rescaled by the seen-cell count so the mean weight is 1."""
    return stats.N / (stats.seen_cells * stats.N_ik[obj, pred])


def make_plan(objs, pred_sets, stats: DomainStatistics, variant: str, multilabel: str = "sum") -> DgPlan:
    if multilabel not in ("sum", "mean"):
        raise ValueError("multilabel must be 'sum' or 'mean'")
    B = len(objs)
    rows, preds, o_out, w = [], [], [], []
    for r, (o, ps) in enumerate(zip(objs, pred_sets)):
        if variant == "adg_kld":
            rows.append(r), preds.append(0), o_out.append(o), w.append(1.0 / B)
            continue
        ps = [p for p in ps if stats.N_k[p] > 0]
        share = 1.0 if multilabel == "sum" or not ps else 1.0 / len(ps)
        for p in ps:
            scale = deepc_weight(stats, o, p) if variant == "deepc" else 1.0
            rows.append(r), preds.append(p), o_out.append(o), w.append(share * scale / B)
    plan = DgPlan(np.asarray(rows, dtype=np.int64), np.asarray(preds, dtype=np.int64),
                  np.asarray(o_out, dtype=np.int64), np.asarray(w, dtype=np.float64))
    if variant == "cadg_jsd":
        alpha = stats.alpha_ik
        jr, jp, jo, jw = [], [], [], []
        for n in range(len(plan.rows)):
            p = plan.preds[n]
            for i in np.flatnonzero(stats.N_ik[:, p]):
                jr.append(n), jp.append(p), jo.append(i), jw.append(plan.weights[n] * alpha[i, p])
        plan.jsd_rows = np.asarray(jr, dtype=np.int64)
        plan.jsd_preds = np.asarray(jp, dtype=np.int64)
        plan.jsd_objs = np.asarray(jo, dtype=np.int64)
        plan.jsd_weights = np.asarray(jw, dtype=np.float64)
    return plan


def dg_objective(P: dict, tap: ad.Tensor, plan: DgPlan, variant: str, cfg: ModelConfig) -> ad.Tensor:
    """Batch mean of the per-instance minimax term as a scalar graph node."""
    if variant == "none":
        return ad.constant(0.0)
    if len(plan.rows) == 0:
        return ad.constant(0.0)
    f = ad.take(tap, plan.rows)
    if variant == "adg_kld":
        lp = ad.pick(ad.log_softmax(adg_logits(P, f), axis=1), plan.objs)
        return ad.sum_(ad.mul(plan.weights, lp))
    if variant in ("cadg_kld", "deepc"):
        lp = ad.pick(ad.log_softmax(cadg_kld_logits(P, f, plan.preds, cfg), axis=1), plan.objs)
        return ad.sum_(ad.mul(plan.weights, lp))
    if variant == "cadg_jsd":
        pos = ad.log_sigmoid(cadg_jsd_logit(P, f, plan.objs, plan.preds, cfg))
        g = ad.take(f, plan.jsd_rows)
        neg = ad.log_sigmoid(ad.neg(cadg_jsd_logit(P, g, plan.jsd_objs, plan.jsd_preds, cfg)))
        return ad.add(ad.sum_(ad.mul(plan.weights, pos)), ad.sum_(ad.mul(plan.jsd_weights, neg)))
    raise ValueError(f"unknown DG variant {variant!r}")


def dataset_dg_value(params: ModelParameters, feats, objs, pred_sets, stats: DomainStatistics,
                     variant: str, multilabel: str = "sum") -> float:
    """Dataset mean of the per-instance minimax term for precomputed features."""
    plan = make_plan(objs, pred_sets, stats, variant, multilabel)
    P = params.leaves([])
    return float(dg_objective(P, ad.constant(np.asarray(feats, dtype=np.float64)), plan, variant, params.config).data)
