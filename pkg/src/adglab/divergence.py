"""Exact divergences and optimal discriminators over discrete feature alphabets.

A feature takes one of ``B`` bins. Each domain (object) ``i`` has a row
``P(f | i)`` and a weight ``alpha_i``; a conditional family holds one such
family per predicate class plus class weights ``alpha_k``. Natural logs,
``0 ln 0 = 0``, and bins with zero pooled mass are skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LN4 = np.log(4.0)


def _xlogy(x, y):
    """x * ln(y) with the convention 0 * ln(anything) = 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros(np.broadcast(x, y).shape)
    nz = np.broadcast_to(x != 0, out.shape)
    out[nz] = np.broadcast_to(x, out.shape)[nz] * np.log(np.broadcast_to(y, out.shape)[nz])
    return out


@dataclass
class DiscreteDomainFamily:
    cond: np.ndarray  # (M, B) rows P(f | domain i)
    alpha: np.ndarray  # (M,)

    def __post_init__(self):
        self.cond = np.atleast_2d(np.asarray(self.cond, dtype=np.float64))
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.shape != (self.cond.shape[0],):
            raise ValueError("need one weight per domain row")
        if (self.cond < 0).any() or np.abs(self.cond.sum(axis=1) - 1).max() > 1e-12:
            raise ValueError("each domain row must be a distribution")
        if (self.alpha < 0).any() or abs(self.alpha.sum() - 1) > 1e-12:
            raise ValueError("domain weights must be a distribution")

    @property
    def M(self) -> int:
        return self.cond.shape[0]

    @property
    def B(self) -> int:
        return self.cond.shape[1]


@dataclass
class ConditionalFamily:
    """One domain family per class with class weights ``alpha_k``.

    ``alpha_k`` normally sums to 1; empirical multi-label families built from
    counts sum to more and are created with ``normalized=False``.
    """

    classes: list
    alpha_k: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        self.alpha_k = np.asarray(self.alpha_k, dtype=np.float64)
        if self.alpha_k.shape != (len(self.classes),):
            raise ValueError("need one weight per class")
        if (self.alpha_k < 0).any():
            raise ValueError("class weights must be nonnegative")
        if self.normalized and abs(self.alpha_k.sum() - 1) > 1e-12:
            raise ValueError("class weights must sum to 1")


def pooled(fam: DiscreteDomainFamily) -> np.ndarray:
    return fam.alpha @ fam.cond


def kl(p, q) -> float:
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    return float(np.sum(_xlogy(p, p)) - np.sum(_xlogy(p, q)))


def jsd(p, q) -> float:
    m = 0.5 * (np.asarray(p, dtype=np.float64) + np.asarray(q, dtype=np.float64))
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def kld(fam: DiscreteDomainFamily) -> float:
    """sum_i alpha_i KL(P(f|i) || P(f))."""
    q = pooled(fam)
    # zero-weight domains contribute nothing, even where their row leaves the pooled support
    return float(sum(a * kl(row, q) for a, row in zip(fam.alpha, fam.cond) if a > 0))


def ckld(cfam: ConditionalFamily) -> float:
    return float(sum(ak * kld(f) for ak, f in zip(cfam.alpha_k, cfam.classes)))


def cjsd(cfam: ConditionalFamily) -> float:
    total = 0.0
    for ak, fam in zip(cfam.alpha_k, cfam.classes):
        q = pooled(fam)
        total += ak * sum(a * jsd(row, q) for a, row in zip(fam.alpha, fam.cond) if a > 0)
    return float(total)


# --- objectives for arbitrary discriminators --------------------------------

def adg_objective(fam: DiscreteDomainFamily, D) -> float:
    """sum_i alpha_i E_{P(f|i)} ln D_i(f) for a discriminator table D[M][B]."""
    D = np.asarray(D, dtype=np.float64)
    live = fam.alpha > 0
    return float(np.sum(fam.alpha[live, None] * _xlogy(fam.cond[live], D[live])))


def cadg_kld_objective(cfam: ConditionalFamily, Ds) -> float:
    """sum_k alpha_k sum_i alpha_ik E_{P(f|i,k)} ln D_i(f; k)."""
    return float(sum(ak * adg_objective(f, D) for ak, f, D in zip(cfam.alpha_k, cfam.classes, Ds)))


def cadg_jsd_objective(cfam: ConditionalFamily, Ds) -> float:
    """sum_k alpha_k sum_i alpha_ik (E_{P(f|i,k)} ln D + E_{P(f|k)} ln(1 - D))."""
    total = 0.0
    for ak, fam, D in zip(cfam.alpha_k, cfam.classes, Ds):
        D = np.asarray(D, dtype=np.float64)
        q = pooled(fam)
        live = fam.alpha > 0
        per_domain = _xlogy(fam.cond[live], D[live]).sum(axis=1) + _xlogy(q[None, :], 1 - D[live]).sum(axis=1)
        total += ak * float(fam.alpha[live] @ per_domain)
    return total


# --- closed-form optima -------------------------------------------------------

def optimal_discriminator_kld(fam: DiscreteDomainFamily) -> np.ndarray:
    """D*_i(f) = alpha_i P(f|i) / P(f); zero-mass bins fall back to alpha."""
    q = pooled(fam)
    D = np.tile(fam.alpha[:, None], (1, fam.B))
    live = q > 0
    D[:, live] = fam.alpha[:, None] * fam.cond[:, live] / q[live]
    return D


def optimal_discriminator_jsd(fam: DiscreteDomainFamily) -> np.ndarray:
    """D*(f, i) = P(f|i) / (P(f|i) + P(f)); 1/2 where both vanish."""
    q = pooled(fam)[None, :]
    den = fam.cond + q
    return np.divide(fam.cond, den, out=np.full(fam.cond.shape, 0.5), where=den > 0)


def entropy_offset(alpha) -> float:
    """sum_i alpha_i ln alpha_i."""
    return float(np.sum(_xlogy(alpha, alpha)))


def adg_optimum(fam: DiscreteDomainFamily) -> float:
    """Marginal objective at its optimal discriminator: kld + sum alpha ln alpha."""
    return kld(fam) + entropy_offset(fam.alpha)


def cadg_kld_optimum(cfam: ConditionalFamily) -> float:
    """Conditional KL objective at its optimal discriminators."""
    return ckld(cfam) + float(sum(ak * entropy_offset(f.alpha) for ak, f in zip(cfam.alpha_k, cfam.classes)))


def cadg_jsd_optimum(cfam: ConditionalFamily) -> float:
    """Conditional JSD objective at its optimal discriminators: 2 CJSD - ln4 sum alpha_k."""
    return 2 * cjsd(cfam) - LN4 * float(cfam.alpha_k.sum())


# --- random and empirical families ----------------------------------------------

def random_family(rng: np.random.Generator, M: int, B: int, sparsity: float = 0.0) -> DiscreteDomainFamily:
    """Dirichlet rows, a fraction ``sparsity`` of entries zeroed (each row keeps one bin)."""
    cond = rng.dirichlet(np.ones(B), size=M)
    if sparsity > 0:
        cut = rng.random((M, B)) < sparsity
        cut[np.arange(M), rng.integers(0, B, M)] = False
        cond = np.where(cut, 0.0, cond)
        cond /= cond.sum(axis=1, keepdims=True)
    return DiscreteDomainFamily(cond, rng.dirichlet(np.ones(M)))


def random_conditional_family(rng, K: int, M: int, B: int, sparsity: float = 0.0) -> ConditionalFamily:
    return ConditionalFamily([random_family(rng, M, B, sparsity) for _ in range(K)], rng.dirichlet(np.ones(K)))


def empirical_family(bins, domains, n_bins: int, n_domains: int) -> DiscreteDomainFamily:
    """Histogram family from samples; domains without samples get weight 0."""
    counts = np.zeros((n_domains, n_bins))
    np.add.at(counts, (np.asarray(domains), np.asarray(bins)), 1.0)
    n_i = counts.sum(axis=1)
    cond = np.divide(counts, n_i[:, None], out=np.full(counts.shape, 1.0 / n_bins), where=n_i[:, None] > 0)
    return DiscreteDomainFamily(cond, n_i / n_i.sum())


def empirical_conditional_family(bins, domains, pred_sets, n_bins: int, n_domains: int, n_classes: int):
    """Per-class histogram families with count weights; returns (family, class ids kept).

    A sample contributes to every class in its predicate set, so class
    weights are N_k / N and may sum to more than 1.
    """
    bins, domains = np.asarray(bins), np.asarray(domains)
    N = len(bins)
    fams, weights, kept = [], [], []
    for k in range(n_classes):
        idx = [n for n, ps in enumerate(pred_sets) if k in ps]
        if not idx:
            continue
        fams.append(empirical_family(bins[idx], domains[idx], n_bins, n_domains))
        weights.append(len(idx) / N)
        kept.append(k)
    return ConditionalFamily(fams, np.asarray(weights), normalized=False), kept


# --- fixture files ------------------------------------------------------------

def family_to_dict(fam: DiscreteDomainFamily) -> dict:
    return {"M": fam.M, "B": fam.B, "rows": fam.cond.tolist(), "weights": fam.alpha.tolist()}


def family_from_dict(d: dict) -> DiscreteDomainFamily:
    fam = DiscreteDomainFamily(np.asarray(d["rows"]), np.asarray(d["weights"]))
    if fam.M != d["M"] or fam.B != d["B"]:
        raise ValueError("fixture M/B do not match its rows")
    return fam


def conditional_to_dict(cfam: ConditionalFamily) -> dict:
    return {"class_weights": cfam.alpha_k.tolist(), "classes": [family_to_dict(f) for f in cfam.classes]}


def conditional_from_dict(d: dict) -> ConditionalFamily:
    return ConditionalFamily([family_from_dict(c) for c in d["classes"]], np.asarray(d["class_weights"]))


def save_fixture(path, obj) -> None:
    d = conditional_to_dict(obj) if isinstance(obj, ConditionalFamily) else family_to_dict(obj)
    d["kind"] = "conditional" if isinstance(obj, ConditionalFamily) else "family"
    Path(path).write_text(json.dumps(d, indent=1))


def load_fixture(path):
    d = json.loads(Path(path).read_text())
    return conditional_from_dict(d) if d.get("kind") == "conditional" else family_from_dict(d)
