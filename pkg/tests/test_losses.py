import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adglab import autodiff as ad
from adglab.data import Instance
from adglab.divergence import adg_objective, cadg_jsd_objective, cadg_kld_objective
from adglab.divergence import empirical_conditional_family, empirical_family
from adglab.losses import (
    DgVariant,
    LossReport,
    adg_kld_minibatch,
    baseline_loss,
    branch_loss,
    cadg_jsd_minibatch,
    cadg_kld_minibatch,
    compute_statistics,
    dataset_dg_value,
    deepc_weight,
    dg_objective,
    make_plan,
    sample_mask,
)
from adglab.models import (
    ModelConfig,
    PredictionScores,
    discriminate_adg,
    discriminate_cadg_jsd,
    discriminate_cadg_kld,
    init_params,
)


def inst(i, obj, preds):
    z = np.zeros(1)
    return Instance(i, i, (0, 0, 1, 1), (0, 0, 1, 1), obj, tuple(preds), z, z, z)


# --- branch losses --------------------------------------------------------------

def test_hand_rolled_bce_fixture():
    labels = np.array([[0, 1, 0, 0, 0.0]])
    rng = np.random.default_rng(11)
    mask = sample_mask(labels, 2, rng)
    assert mask.sum() == 3 and mask[0, 1] == 1
    p = np.array([[0.2, 0.7, 0.4, 0.9, 0.1]])
    sampled = np.flatnonzero(mask[0])
    terms = [-math.log(0.7) if k == 1 else -math.log(1 - p[0, k]) for k in sampled]
    expected = sum(terms) / 3
    L_H, L_sp, L_U = baseline_loss(PredictionScores(p, p, p), labels, mask=mask)
    assert L_H == pytest.approx(expected, abs=1e-15) and L_sp == L_H == L_U


def test_half_scores_give_ln2():
    labels = np.eye(6)[[0, 3]]
    half = np.full((2, 6), 0.5)
    out = baseline_loss(PredictionScores(half, half, half), labels, rng=np.random.default_rng(0))
    assert np.allclose(out, math.log(2))


def test_perfect_scores_approach_zero():
    labels = np.eye(5)[[1, 2]]
    for eps in (1e-3, 1e-6, 1e-9):
        p = np.where(labels > 0, 1.0, eps)
        L = baseline_loss(PredictionScores(p, p, p), labels, rng=np.random.default_rng(0))[0]
        assert L < 2 * eps


def test_mask_takes_all_negatives_when_short():
    labels = np.array([[1, 1, 0, 0.0]])
    assert sample_mask(labels, 6, np.random.default_rng(0)).sum() == 4


def test_mask_rejects_row_without_positive():
    with pytest.raises(ValueError):
        sample_mask(np.zeros((1, 3)), 2, np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**20), st.integers(0, 8))
def test_mask_counts(seed, ratio):
    rng = np.random.default_rng(seed)
    labels = (rng.random((4, 9)) < 0.2).astype(float)
    labels[np.arange(4), rng.integers(0, 9, 4)] = 1
    m = sample_mask(labels, ratio, rng)
    npos = labels.sum(axis=1)
    assert np.array_equal(m.sum(axis=1), npos + np.minimum(ratio * npos, 9 - npos))
    assert (m[labels > 0] == 1).all()


def test_graph_branch_loss_matches_numpy():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((3, 5))
    labels = np.eye(5)[[0, 2, 4]]
    mask = sample_mask(labels, 2, rng)
    p = 1 / (1 + np.exp(-logits))
    ref = baseline_loss(PredictionScores(p, p, p), labels, mask=mask)[0]
    assert float(branch_loss(ad.constant(logits), labels, mask).data) == pytest.approx(ref, rel=1e-12)


def test_loss_report_identity():
    r = LossReport.build(0.5, 0.25, 0.125, -2.0, 0.3)
    assert r.L_total == pytest.approx(0.875 - 0.6) and r.identity_gap() == 0.0


def test_default_lambda_and_unknown_variant():
    assert DgVariant("cadg_kld").weight == 0.3 and DgVariant("adg_kld").weight == 0.05
    assert DgVariant("cadg_kld", 0.3).weight == 0.3
    with pytest.raises(ValueError):
        DgVariant("wgan")


# --- single-sample regularizer terms ----------------------------------------------

def test_minibatch_terms_trivial_values():
    assert adg_kld_minibatch(np.full(4, 0.25), 2) == pytest.approx(math.log(0.25))
    assert adg_kld_minibatch(np.array([0.0, 1.0]), 1) == 0.0
    assert cadg_kld_minibatch(np.full(3, 1 / 3), 0) == pytest.approx(math.log(1 / 3))
    with pytest.raises(IndexError):
        adg_kld_minibatch(np.full(2, 0.5), 2)
    with pytest.raises(ValueError):
        adg_kld_minibatch(np.array([0.5, 0.6]), 0)


def test_jsd_term_at_half_is_two_ln_half():
    train = [inst(0, 0, (0,)), inst(1, 1, (0,)), inst(2, 1, (1,))]
    stats = compute_statistics(train, 2, 2)
    p = init_params(ModelConfig(2, 2, 3, 1, 1, 3, 3, variant="cadg_jsd"), np.random.default_rng(0))
    p.arrays["D.W"][:] = 0
    p.arrays["D.b"][:] = 0
    assert cadg_jsd_minibatch(p, np.ones(3), 0, 0, stats) == pytest.approx(2 * math.log(0.5))


def test_jsd_term_rejects_unseen_predicate():
    stats = compute_statistics([inst(0, 0, (0,))], 1, 2)
    p = init_params(ModelConfig(2, 1, 3, 1, 1, 3, 3, variant="cadg_jsd"), np.random.default_rng(0))
    with pytest.raises(ValueError):
        cadg_jsd_minibatch(p, np.ones(3), 0, 1, stats)


def test_single_sample_jsd_matches_batched_graph():
    rng = np.random.default_rng(4)
    train = [inst(n, int(rng.integers(0, 3)), (int(rng.integers(0, 2)),)) for n in range(20)]
    stats = compute_statistics(train, 3, 2)
    p = init_params(ModelConfig(2, 3, 4, 1, 1, 4, 4, variant="cadg_jsd"), rng)
    f = rng.standard_normal(4)
    o = train[0].object_label
    k = train[0].predicate_labels[0]
    v = dataset_dg_value(p, f[None], [o], [(k,)], stats, "cadg_jsd")
    assert v == pytest.approx(cadg_jsd_minibatch(p, f, o, k, stats), abs=1e-13)


# --- statistics -----------------------------------------------------------------

def test_statistics_trivial_cases():
    s = compute_statistics([inst(0, 0, (0,))], 1, 1)
    assert s.alpha_i[0] == 1 and s.alpha_ik[0, 0] == 1
    s = compute_statistics([inst(0, 0, (0,)), inst(1, 1, (0,))], 2, 1)
    assert np.allclose(s.alpha_i, [0.5, 0.5]) and np.allclose(s.alpha_ik[:, 0], [0.5, 0.5])


def test_statistics_multilabel_brute_force():
    xs = [inst(0, 0, (0, 1)), inst(1, 0, (1,)), inst(2, 1, (0, 2)), inst(3, 2, (2,)), inst(4, 1, (0, 1, 2)),
          inst(5, 2, (1,))]
    s = compute_statistics(xs, 3, 3)
    brute = np.zeros((3, 3), int)
    for x in xs:
        for p in x.predicate_labels:
            brute[x.object_label, p] += 1
    assert np.array_equal(s.N_ik, brute)
    assert np.array_equal(s.N_k, brute.sum(0)) and np.array_equal(s.N_i, [2, 2, 2]) and s.N == 6
    assert np.allclose(s.alpha_ik.sum(axis=0), 1)


def test_statistics_empty_rejected():
    with pytest.raises(ValueError):
        compute_statistics([])


# --- DeepC weights ----------------------------------------------------------------

def test_deepc_weight_ratio_on_skewed_fixture():
    xs = [inst(n, 0, (0,)) for n in range(6)] + [inst(6, 1, (0,)), inst(7, 1, (1,))]
    s = compute_statistics(xs, 2, 2)
    objs = [x.object_label for x in xs]
    preds = [x.predicate_labels for x in xs]
    cadg = make_plan(objs, preds, s, "cadg_kld")
    deepc = make_plan(objs, preds, s, "deepc")
    for r in range(len(xs)):
        o, k = objs[r], preds[r][0]
        # α-weighted term over unit-weighted term is α_k α_ik N, up to the global 1/C
        ratio = deepc.weights[r] / cadg.weights[r]
        ak_aik = s.N_k[k] / s.N * s.N_ik[o, k] / s.N_k[k]
        assert ratio * ak_aik * s.N == pytest.approx(s.N / s.seen_cells)
    assert deepc.weights.sum() == pytest.approx(1.0)


def test_deepc_equals_cadg_on_single_cell():
    xs = [inst(n, 0, (0,)) for n in range(4)]
    s = compute_statistics(xs, 1, 1)
    assert deepc_weight(s, 0, 0) == pytest.approx(1.0)
    a = make_plan([0] * 4, [(0,)] * 4, s, "deepc")
    b = make_plan([0] * 4, [(0,)] * 4, s, "cadg_kld")
    assert np.allclose(a.weights, b.weights)


def test_deepc_uniform_alpha_is_constant_multiple():
    xs = [inst(2 * o + r, o, (k,)) for o in range(2) for k in range(2) for r in range(2)]
    s = compute_statistics(xs, 2, 2)
    objs, preds = [x.object_label for x in xs], [x.predicate_labels for x in xs]
    ratio = make_plan(objs, preds, s, "deepc").weights / make_plan(objs, preds, s, "cadg_kld").weights
    assert np.allclose(ratio, ratio[0])


def test_multilabel_mean_splits_weight():
    s = compute_statistics([inst(0, 0, (0, 1))], 1, 2)
    assert np.allclose(make_plan([0], [(0, 1)], s, "cadg_kld", "sum").weights, [1, 1])
    assert np.allclose(make_plan([0], [(0, 1)], s, "cadg_kld", "mean").weights, [0.5, 0.5])


# --- population / minibatch equivalence ----------------------------------------------

def _tabular_setup(seed=0, N=200, B=6, M=4, K=3):
    rng = np.random.default_rng(seed)
    objs = rng.integers(0, M, N)
    bins = (objs + rng.integers(0, 3, N)) % B
    preds = []
    for _ in range(N):
        ps = {int(rng.integers(0, K))}
        if rng.random() < 0.3:
            ps.add(int(rng.integers(0, K)))
        preds.append(tuple(sorted(ps)))
    xs = [inst(n, int(objs[n]), preds[n]) for n in range(N)]
    return rng, xs, objs, bins, preds, np.eye(B)[bins], B, M, K


def _params(variant, rng, B, M, K):
    p = init_params(ModelConfig(K, M, B, 1, 1, B, B, variant=variant), rng)
    for name in p.disc_names:
        p.arrays[name] = rng.standard_normal(p.arrays[name].shape)
    return p


def test_adg_dataset_mean_equals_population_objective():
    rng, xs, objs, bins, preds, feats, B, M, K = _tabular_setup()
    stats = compute_statistics(xs, M, K)
    p = _params("adg_kld", rng, B, M, K)
    D = discriminate_adg(p, np.eye(B)).T  # (M, B)
    fam = empirical_family(bins, objs, B, M)
    v = dataset_dg_value(p, feats, objs, preds, stats, "adg_kld")
    assert v == pytest.approx(adg_objective(fam, D), abs=1e-10)


def test_cadg_kld_dataset_mean_equals_population_objective():
    rng, xs, objs, bins, preds, feats, B, M, K = _tabular_setup(1)
    stats = compute_statistics(xs, M, K)
    p = _params("cadg_kld", rng, B, M, K)
    cfam, kept = empirical_conditional_family(bins, objs, preds, B, M, K)
    Ds = [discriminate_cadg_kld(p, np.eye(B), k).T for k in kept]
    v = dataset_dg_value(p, feats, objs, preds, stats, "cadg_kld")
    assert v == pytest.approx(cadg_kld_objective(cfam, Ds), abs=1e-10)


def test_cadg_jsd_dataset_mean_equals_population_objective():
    rng, xs, objs, bins, preds, feats, B, M, K = _tabular_setup(2)
    stats = compute_statistics(xs, M, K)
    p = _params("cadg_jsd", rng, B, M, K)
    cfam, kept = empirical_conditional_family(bins, objs, preds, B, M, K)
    Ds = [np.stack([discriminate_cadg_jsd(p, np.eye(B), i, k) for i in range(M)]) for k in kept]
    v = dataset_dg_value(p, feats, objs, preds, stats, "cadg_jsd")
    assert v == pytest.approx(cadg_jsd_objective(cfam, Ds), abs=1e-10)


# --- sign contract ----------------------------------------------------------------------

@pytest.mark.parametrize("variant", ["adg_kld", "cadg_kld", "cadg_jsd", "deepc"])
def test_small_ascent_step_does_not_decrease_objective(variant):
    rng, xs, objs, bins, preds, feats, B, M, K = _tabular_setup(3, N=60)
    stats = compute_statistics(xs, M, K)
    p = _params(variant, rng, B, M, K)
    plan = make_plan(objs, preds, stats, variant)
    P = p.leaves(p.disc_names)
    obj = dg_objective(P, ad.constant(feats), plan, variant, p.config)
    g = ad.grad_of(obj, {k: P[k] for k in p.disc_names})
    before = float(obj.data)
    for k in p.disc_names:
        p.arrays[k] = p.arrays[k] + 1e-6 * g[k]
    after = dataset_dg_value(p, feats, objs, preds, stats, variant)
    assert after >= before
