"""Alternating minimax training: discriminator ascent, then main-model descent."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Instance, atomic_write, multi_hot, stack_inputs
from .datagen import make_rng
from .divergence import ConditionalFamily, DiscreteDomainFamily
from .losses import DgPlan, DgVariant, DomainStatistics, LossReport, branch_loss, compute_statistics
from .losses import dg_objective, make_plan, sample_mask
from .metrics import MetricsReport, metrics_report, predcls_recall
from .models import ModelConfig, ModelParameters, forward, init_params, predict
from .optim import SGD, SgdConfig, StepDecay

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    variant: str = "none"
    lam: float | None = None
    steps: int = 2000
    batch_size: int = 64
    neg_ratio: int = 6
    main: SgdConfig = field(default_factory=lambda: SgdConfig(learning_rate=0.01))
    adversarial: SgdConfig = field(default_factory=lambda: SgdConfig(learning_rate=0.1))
    decay_interval: int = 500
    decay_gamma: float = 0.96
    disc_steps: int = 1
    val_every: int = 200
    multilabel: str = "sum"
    hidden: int = 64
    feature_dim: int = 64
    emb_dim: int = 50
    # one hidden discriminator layer; a linear head cannot express the JSD optimum
    disc_hidden: int = 64
    tap: str = "pre_head"
    # bounded features keep the extractor from outrunning the discriminator
    feature_act: str = "sigmoid"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.main, dict):
            self.main = SgdConfig(**self.main)
        if isinstance(self.adversarial, dict):
            self.adversarial = SgdConfig(**self.adversarial)
        DgVariant(self.variant, self.lam)
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.disc_steps < 1:
            raise ValueError("need at least one discriminator step per main step")
        if self.val_every < 1:
            raise ValueError("val_every must be positive")

    @property
    def dg(self) -> DgVariant:
        return DgVariant(self.variant, self.lam)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    validation: list = field(default_factory=list)  # (step, combined-val PredCls R@1)
    best_step: int = -1
    best_score: float = -math.inf

    COLUMNS = ("step", "L_H", "L_sp", "L_U", "L_DG", "D_obj", "L_total")

    def append(self, step: int, report: LossReport) -> None:
        if self.rows and step <= self.rows[-1]["step"]:
            raise ValueError("run log steps must increase")
        self.rows.append(report.row(step))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (r[k] if k == "step" else repr(float(r[k]))) for k in self.COLUMNS})
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write(path, self.to_csv().encode())


def model_config_for(cfg: TrainConfig, n_predicates: int, n_objects: int, sample: Instance) -> ModelConfig:
    return ModelConfig(
        n_predicates=n_predicates, n_objects=n_objects, union_dim=len(sample.union_features),
        human_dim=len(sample.human_features), spatial_dim=len(sample.spatial_features),
        hidden=cfg.hidden, feature_dim=cfg.feature_dim, emb_dim=cfg.emb_dim, disc_hidden=cfg.disc_hidden,
        variant=cfg.variant, tap=cfg.tap, feature_act=cfg.feature_act,
    )


def _guard(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergedError(f"{what} became non-finite ({value}) at step {step}")


def _select_score(params: ModelParameters, val) -> float:
    if not val:
        return 0.0
    s = predict(params, stack_inputs(val)).triplet_score
    return predcls_recall(s, [x.predicate_labels for x in val], (1,))[1]


def train(cfg: TrainConfig, splits, n_predicates: int, n_objects: int,
          on_step=None) -> tuple[ModelParameters, RunLog]:
    """Train on ``splits.train``; select on trainval+testval PredCls R@1.

    Each step runs ``disc_steps`` discriminator ascents on the minimax term
    with the main model frozen, then one descent of
    ``L_H + L_sp + L_U + lambda * L_DG`` with the discriminator frozen.
    """
    train_set = list(splits.train)
    if not train_set:
        raise ValueError("empty training split")
    val = list(splits.trainval) + list(splits.testval)
    stats = compute_statistics(train_set, n_objects, n_predicates)
    mcfg = model_config_for(cfg, n_predicates, n_objects, train_set[0])

    init_rng, batch_rng, neg_rng = (make_rng(cfg.seed * 3 + j) for j in range(3))
    params = init_params(mcfg, init_rng)
    x_all = stack_inputs(train_set)
    y_all = multi_hot(train_set, n_predicates)
    objs_all = np.array([x.object_label for x in train_set])
    preds_all = [x.predicate_labels for x in train_set]

    variant = cfg.variant
    adversarial = variant != "none"
    lam = cfg.dg.weight
    main_opt = SGD(params.arrays, cfg.main, params.main_names)
    disc_opt = SGD(params.arrays, cfg.adversarial, params.disc_names) if adversarial else None
    main_lr = StepDecay(cfg.main.learning_rate, cfg.decay_interval, cfg.decay_gamma)
    disc_lr = StepDecay(cfg.adversarial.learning_rate, cfg.decay_interval, cfg.decay_gamma)

    runlog = RunLog()
    best = params.copy()
    n = len(train_set)
    for step in range(cfg.steps):
        idx = batch_rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        xb, yb = x_all.subset(idx), y_all[idx]
        mask = sample_mask(yb, cfg.neg_ratio, neg_rng)
        plan = make_plan(objs_all[idx], [preds_all[i] for i in idx], stats, variant, cfg.multilabel) if adversarial else None

        try:
            d_obj = 0.0
            if adversarial:
                disc_opt.lr = disc_lr(step)
                for _ in range(cfg.disc_steps):
                    P = params.leaves(params.disc_names)
                    tap = forward(P, xb, mcfg)["tap"]
                    obj = dg_objective(P, tap, plan, variant, mcfg)
                    d_obj = float(obj.data)
                    _guard(d_obj, "discriminator objective", step)
                    disc_opt.step(ad.grad_of(obj, {k: P[k] for k in params.disc_names}), sign=-1)

            main_opt.lr = main_lr(step)
            P = params.leaves(params.main_names)
            out = forward(P, xb, mcfg)
            L_H = branch_loss(out["logit_h"], yb, mask)
            L_sp = branch_loss(out["logit_sp"], yb, mask)
            L_U = branch_loss(out["logit_u"], yb, mask)
            total = ad.add(ad.add(L_H, L_sp), L_U)
            L_DG = 0.0
            if adversarial:
                dg = dg_objective(P, out["tap"], plan, variant, mcfg)
                L_DG = float(dg.data)
                if lam != 0:
                    total = ad.add(total, ad.mul(lam, dg))
            report = LossReport.build(L_H.data, L_sp.data, L_U.data, L_DG, lam, d_obj)
            _guard(report.L_total, "total loss", step)
            main_opt.step(ad.grad_of(total, {k: P[k] for k in params.main_names}), sign=1)
        except ad.NonFiniteError as exc:
            raise TrainingDivergedError(f"non-finite value at step {step}: {exc}") from exc

        runlog.append(step, report)
        if on_step is not None:
            on_step(step, report)
        if (step + 1) % cfg.val_every == 0 or step + 1 == cfg.steps:
            score = _select_score(params, val)
            runlog.validation.append((step + 1, score))
            if score > runlog.best_score:
                runlog.best_score, runlog.best_step = score, step + 1
                best = params.copy()
    return best, runlog


def score_instances(params: ModelParameters, instances, scoring: str = "triplet") -> np.ndarray:
    s = predict(params, stack_inputs(instances))
    if scoring == "triplet":
        return s.triplet_score
    if scoring == "hsp":
        return s.hsp_score
    raise ValueError(f"unknown scoring {scoring!r}")


def evaluate(params: ModelParameters, instances, scoring: str = "triplet", any_hit: bool = False) -> MetricsReport:
    if not instances:
        raise ValueError("cannot evaluate an empty split")
    return metrics_report(instances, score_instances(params, instances, scoring), params.config.n_predicates, any_hit)


# --- tabular discriminator fitting --------------------------------------------

def _onehot(bins, B):
    return np.eye(B)[np.asarray(bins)]


def tabular_plan(fam, kind: str):
    """Exact population plan over every (bin, domain[, class]) cell of a frozen family.

    Returns ``(features, plan)`` where row r of ``features`` is the one-hot
    bin of plan row r, so the batch sum of the plan equals the population
    objective.
    """
    if kind == "adg_kld":
        M, B = fam.M, fam.B
        bins, objs, w = [], [], []
        for i in range(M):
            for b in range(B):
                if fam.cond[i, b] > 0:
                    bins.append(b), objs.append(i), w.append(fam.alpha[i] * fam.cond[i, b])
        n = len(bins)
        plan = DgPlan(np.arange(n), np.zeros(n, dtype=np.int64), np.asarray(objs), np.asarray(w))
        return _onehot(bins, B), plan
    if kind not in ("cadg_kld", "cadg_jsd"):
        raise ValueError(f"unknown discriminator kind {kind!r}")
    bins, preds, objs, w = [], [], [], []
    jr, jp, jo, jw = [], [], [], []
    B = fam.classes[0].B
    for k, (ak, f) in enumerate(zip(fam.alpha_k, fam.classes)):
        q = f.alpha @ f.cond
        for i in range(f.M):
            if f.alpha[i] == 0:
                continue
            for b in range(B):
                if f.cond[i, b] > 0:
                    bins.append(b), preds.append(k), objs.append(i), w.append(ak * f.alpha[i] * f.cond[i, b])
        if kind == "cadg_jsd":
            # second expectation is under the pooled class distribution
            for b in range(B):
                if q[b] <= 0:
                    continue
                row = len(bins)
                bins.append(b), preds.append(k), objs.append(0), w.append(0.0)
                for i in range(f.M):
                    if f.alpha[i] > 0:
                        jr.append(row), jp.append(k), jo.append(i), jw.append(ak * f.alpha[i] * q[b])
    n = len(bins)
    plan = DgPlan(np.arange(n), np.asarray(preds), np.asarray(objs), np.asarray(w, dtype=np.float64))
    if kind == "cadg_jsd":
        plan.jsd_rows, plan.jsd_preds = np.asarray(jr), np.asarray(jp)
        plan.jsd_objs, plan.jsd_weights = np.asarray(jo), np.asarray(jw, dtype=np.float64)
    return _onehot(bins, B), plan


def fit_tabular_discriminator(fam, kind: str, steps: int = 2000, sgd: SgdConfig | None = None,
                              disc_hidden: int = 0, emb_dim: int = 8, seed: int = 0):
    """Ascend the exact population objective of a frozen tabular family.

    Returns ``(params, history)`` with the objective value before each step
    plus the final value.
    """
    if kind == "adg_kld":
        if not isinstance(fam, DiscreteDomainFamily):
            raise TypeError("adg_kld needs a DiscreteDomainFamily")
        M, K, B = fam.M, 1, fam.B
    else:
        if not isinstance(fam, ConditionalFamily):
            raise TypeError(f"{kind} needs a ConditionalFamily")
        M, K, B = fam.classes[0].M, len(fam.classes), fam.classes[0].B
    variant = kind
    mcfg = ModelConfig(n_predicates=K, n_objects=M, union_dim=B, human_dim=1, spatial_dim=1,
                       hidden=B, feature_dim=B, emb_dim=emb_dim, disc_hidden=disc_hidden, variant=variant)
    params = init_params(mcfg, make_rng(seed))
    feats, plan = tabular_plan(fam, kind)
    tap = ad.constant(feats)
    opt = SGD(params.arrays, sgd or SgdConfig(learning_rate=0.5, momentum=0.9, weight_decay=0.0,
                                              gradient_clip=float("inf")), params.disc_names)
    history = []
    for _ in range(steps):
        P = params.leaves(params.disc_names)
        obj = dg_objective(P, tap, plan, variant, mcfg)
        history.append(float(obj.data))
        opt.step(ad.grad_of(obj, {k: P[k] for k in params.disc_names}), sign=-1)
    history.append(float(dg_objective(params.leaves([]), tap, plan, variant, mcfg).data))
    return params, history
