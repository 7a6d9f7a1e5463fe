import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import delta_by_inverse, normal_sf, random_spd
from sparsa import classifiers as C
from sparsa import linalg
from sparsa.errors import DegenerateClass, NotPositiveDefinite, ZeroDirection, ZeroVariance
from sparsa.simbench import ModelSpec, build_population
from sparsa.tuning import CvConfig, fit_tlda_cv


def model1(p=10):
    return build_population(ModelSpec(1, p=p))


def pop_from(mu1, mu2, sigma):
    return C.GaussianPopulation(np.asarray(mu1, float), np.asarray(mu2, float), np.asarray(sigma, float))


# --- containers -------------------------------------------------------------


def test_population_derived_members():
    pop = pop_from([2.0, 0.0], [0.0, 0.0], np.eye(2))
    np.testing.assert_array_equal(pop.mu_a, [1.0, 0.0])
    np.testing.assert_array_equal(pop.mu_d, [1.0, 0.0])
    np.testing.assert_allclose(pop.beta0, [2.0, 0.0])


def test_population_rejects_equal_means():
    with pytest.raises(ValueError):
        pop_from([1.0], [1.0], np.eye(1))


def test_dataset_label_validation_names_row():
    with pytest.raises(ValueError, match="row 2"):
        C.LabeledDataset(np.zeros((3, 1)), [1, 2, 3])


def test_sample_is_deterministic_and_counts():
    pop = model1()
    a, b = pop.sample(5, 7, 3), pop.sample(5, 7, 3)
    assert np.array_equal(a.features, b.features)
    assert (a.n1, a.n2, a.p) == (5, 7, 10)


# --- moments ------------------------------------------------------------------


def test_moments_zero_spread():
    x = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 5.0], [0.0, 5.0]])
    m = C.moments(C.LabeledDataset(x, [1, 1, 2, 2]))
    np.testing.assert_array_equal(m.pooled_cov, np.zeros((2, 2)))
    np.testing.assert_array_equal(m.mean_diff, [1.0, -3.0])


def test_moments_uses_one_over_n():
    x = np.array([[0.0], [2.0], [10.0], [14.0]])
    m = C.moments(C.LabeledDataset(x, [1, 1, 2, 2]))
    # within-class squares: 1 + 1 + 4 + 4 = 10, over n = 4
    assert m.pooled_cov[0, 0] == pytest.approx(2.5)
    np.testing.assert_allclose(m.mu_hat_a, [6.5])
    np.testing.assert_allclose(m.mu_hat_d, [-5.5])


def test_moments_degenerate_class():
    with pytest.raises(DegenerateClass):
        C.moments(C.LabeledDataset(np.zeros((2, 2)), [1, 2]))


def test_moments_monte_carlo_model1():
    data = model1().sample(5000, 5000, 0)
    m = C.moments(data)
    assert abs(m.pooled_cov[0, 1] - 0.8) <= 0.03
    assert np.array_equal(m.pooled_cov, m.pooled_cov.T)
    assert np.linalg.eigvalsh(m.pooled_cov).min() >= -1e-12


# --- oracle quantities -------------------------------------------------------


def test_fisher_delta_examples():
    assert C.fisher_delta(pop_from([1.0, 0, 0], [0, 0, 0], np.eye(3))) == pytest.approx(0.25)
    pop = pop_from([1.0, 0, 0], [1.0, 0, 1e-300], np.eye(3))
    assert C.fisher_delta(pop) == pytest.approx(0.0, abs=1e-300)


def random_sparse_population(rng, p, k):
    sigma = random_spd(rng, p, cond_floor=0.3)
    beta0 = np.zeros(p)
    support = np.sort(rng.choice(p, size=k, replace=False))
    beta0[support] = rng.uniform(0.5, 2.0, k) * rng.choice([-1, 1], k)
    mu_d = sigma @ beta0 / 2
    return pop_from(mu_d, -mu_d, sigma), support


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_support_carries_all_signal(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(2, 9))
    pop, support = random_sparse_population(rng, p, int(rng.integers(1, p + 1)))
    assert abs(C.fisher_delta(pop, support) - C.fisher_delta(pop)) <= 1e-10


def test_subset_monotonicity_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = 6
        pop, _ = random_sparse_population(rng, p, 3)
        deltas = {}
        for r in range(1, p + 1):
            for a in itertools.combinations(range(p), r):
                deltas[a] = delta_by_inverse(pop.sigma, pop.mu_d, a)
                assert C.fisher_delta(pop, a) == pytest.approx(deltas[a], rel=1e-10, abs=1e-12)
        for a, da in deltas.items():
            for j in set(range(p)) - set(a):
                b = tuple(sorted(a + (j,)))
                assert da <= deltas[b] + 1e-10


def test_gap_vanishes_with_tail_mass():
    # Delta_p - Delta_A1 shrinks to 0 as the off-A1 part of beta0 shrinks.
    rng = np.random.default_rng(8)
    p = 8
    sigma = linalg.ar1_cov(p, 0.5)
    head = np.r_[1.0, -1.0, 0.8, np.zeros(p - 3)]
    tail_dir = np.r_[np.zeros(3), rng.standard_normal(p - 3)]
    gaps = []
    for eps in [1.0, 0.1, 0.01, 0.001, 0.0]:
        beta0 = head + eps * tail_dir
        mu_d = sigma @ beta0 / 2
        pop = pop_from(mu_d, -mu_d, sigma)
        gaps.append(C.fisher_delta(pop) - C.fisher_delta(pop, [0, 1, 2]))
    assert all(g >= -1e-12 for g in gaps)
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] == pytest.approx(0.0, abs=1e-12)


def test_theoretical_rate_values():
    assert C.theoretical_rate(0.0) == 0.5
    assert C.theoretical_rate(1.0) == pytest.approx(normal_sf(1.0), abs=1e-15)
    assert C.theoretical_rate(1.0) == pytest.approx(0.1587, abs=1e-4)
    with pytest.raises(ValueError):
        C.theoretical_rate(-1.0)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0, 50), b=st.floats(0, 50))
def test_theoretical_rate_decreasing(a, b):
    if a < b and b - a > 1e-9:
        assert C.theoretical_rate(a) > C.theoretical_rate(b) or C.theoretical_rate(b) == 0.0


def test_theoretical_rate_model2_oracle_level():
    pop = build_population(ModelSpec(2))
    assert abs(C.theoretical_rate(C.fisher_delta(pop)) - 0.1841) <= 0.015


def test_oracle_classify_examples():
    pop = model1()
    assert C.oracle_classify(pop, pop.mu1) == 1
    assert C.oracle_classify(pop, pop.mu2) == 2
    assert C.oracle_classify(pop, pop.mu_a) == 2
    out = C.oracle_classify(pop, np.vstack([pop.mu1, pop.mu2]))
    np.testing.assert_array_equal(out, [1, 2])


# --- LDA and naive Bayes ------------------------------------------------------


def test_lda_one_feature_sign():
    x = np.array([[3.0], [3.5], [4.0], [-1.0], [-1.2], [-0.7]])
    data = C.LabeledDataset(x, [1, 1, 1, 2, 2, 2])
    model = C.fit_lda(data)
    assert np.sign(model.direction[0]) == 1


def test_lda_full_model1_envelope():
    pop = model1()
    data = pop.sample(100, 100, 5)
    model = C.fit_lda(data)
    assert np.all(np.isfinite(model.direction))
    oracle_err = np.mean(C.oracle_classify(pop, data.features) != data.labels)
    assert C.error_rate(model, data) <= oracle_err + 0.10


def test_lda_singular_when_n_below_p():
    data = model1(p=20).sample(5, 5, 1)
    with pytest.raises(NotPositiveDefinite):
        C.fit_lda(data)
    assert np.all(np.isfinite(C.fit_lda(data, ridge=True).direction))


def test_classify_lda_examples():
    pop = model1()
    data = pop.sample(200, 200, 9)
    m = C.moments(data)
    model = C.fit_lda(data, m=m)
    assert m.mu_hat_d @ model.direction > 0
    assert C.classify_lda(model, m.xbar1) == 1
    assert C.classify_lda(model, m.mu_hat_a) == 2


def test_lda_agrees_with_oracle_rule():
    # 400 training samples per class; agreement averaged over ten seeded fits
    pop = model1()
    test = pop.sample(2000, 2000, 10)
    oracle = C.oracle_classify(pop, test.features)
    agree = [
        np.mean(C.classify_lda(C.fit_lda(pop.sample(400, 400, 100 + s)), test.features) == oracle)
        for s in range(10)
    ]
    assert np.mean(agree) >= 0.95


def test_conditional_rate_truth_equals_theoretical():
    pop = model1()
    w = linalg.spd_solve(pop.sigma, pop.mu_d)
    model = C.FittedLda(w, pop.mu_a, np.arange(pop.p), pop.p)
    expected = C.theoretical_rate(C.fisher_delta(pop))
    assert C.conditional_rate(model, pop) == pytest.approx(expected, abs=1e-12)


def test_conditional_rate_uninformative_direction():
    sigma = np.eye(2)
    pop = pop_from([1.0, 0.0], [-1.0, 0.0], sigma)
    model = C.FittedLda(np.array([0.0, 1.0]), pop.mu_a, np.arange(2), 2)
    assert C.conditional_rate(model, pop) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ZeroDirection):
        C.conditional_rate(C.FittedLda(np.zeros(2), pop.mu_a, np.arange(2), 2), pop)


def test_conditional_rate_matches_monte_carlo():
    pop = model1()
    model = C.fit_lda(pop.sample(100, 100, 21))
    test = pop.sample(50_000, 50_000, 22)
    mc = C.error_rate(model, test)
    assert abs(C.conditional_rate(model, pop) - mc) <= 0.01


def test_conditional_rate_honours_threshold():
    pop = model1()
    model = C.fit_lda(pop.sample(100, 100, 23), offset=0.7)
    test = pop.sample(50_000, 50_000, 24)
    assert abs(C.conditional_rate(model, pop) - C.error_rate(model, test)) <= 0.01


def test_naive_bayes_direction_formula():
    data = model1().sample(30, 30, 2)
    m = C.moments(data)
    nb = C.fit_naive_bayes(data)
    np.testing.assert_allclose(nb.direction, m.mu_hat_d / np.diag(m.pooled_cov))


def test_naive_bayes_matches_lda_for_diagonal_sigma():
    pop = pop_from([1.0, 0.5, -0.5], [0, 0, 0], np.diag([1.0, 2.0, 0.5]))
    data = pop.sample(20_000, 20_000, 4)
    nb = C.fit_naive_bayes(data).direction
    lda = C.fit_lda(data).direction
    np.testing.assert_allclose(nb, lda, rtol=0.05)


def test_naive_bayes_p1_equals_lda():
    x = np.array([[1.0], [2.0], [0.0], [-1.0], [0.5]])
    data = C.LabeledDataset(x, [1, 1, 2, 2, 2])
    np.testing.assert_allclose(C.fit_naive_bayes(data).direction, C.fit_lda(data).direction)


def test_naive_bayes_zero_variance():
    x = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 0.0], [-1.0, 0.0]])
    with pytest.raises(ZeroVariance):
        C.fit_naive_bayes(C.LabeledDataset(x, [1, 1, 2, 2]))


# --- t scores -------------------------------------------------------------------


def test_t_score_identical_classes_is_zero():
    x = np.array([[1.0], [2.0], [1.0], [2.0]])
    assert C.t_scores(C.LabeledDataset(x, [1, 1, 2, 2]))[0] == 0.0


def test_t_score_closed_form():
    # exact class means +-1 and unit pooled variance give 2 / sqrt(1/100 + 1/100)
    base = np.r_[np.ones(50), -np.ones(50)] * np.sqrt(99 / 100)
    x = np.r_[1.0 + base, -1.0 + base][:, None]
    y = np.r_[np.ones(100), np.full(100, 2)]
    t = C.t_scores(C.LabeledDataset(x, y))[0]
    assert t == pytest.approx(2 / np.sqrt(0.02), rel=1e-12)
    assert t == pytest.approx(14.14, abs=0.01)


def test_t_score_zero_variance_conventions():
    x = np.array([[1.0, 3.0], [1.0, 3.0], [0.0, 3.0], [0.0, 3.0]])
    t = C.t_scores(C.LabeledDataset(x, [1, 1, 2, 2]))
    assert t[0] == np.inf and t[1] == 0.0


def test_t_scores_miss_correlated_support_in_model2():
    pop = build_population(ModelSpec(2))
    data = pop.sample(100, 100, 3)
    top5 = set(C.top_k(C.t_scores(data), 5) + 1)
    assert not ({30, 70} & top5)


def test_top_k_ties_to_lower_index():
    np.testing.assert_array_equal(C.top_k([1.0, -3.0, 3.0, 0.5], 2), [1, 2])
    np.testing.assert_array_equal(C.top_k([2.0, 2.0, 2.0], 2), [0, 1])


# --- TLDA ---------------------------------------------------------------------


def test_tlda_degenerate_selection_falls_back_to_t():
    data = model1().sample(30, 30, 6)
    m = C.moments(data)
    lam = float(np.abs(m.mean_diff).max()) * 1.01
    model = C.fit_tlda(data, lam, 3)
    assert model.degenerate_selection
    np.testing.assert_array_equal(model.selected, C.top_k(C.t_scores(data), 3))


def test_tlda_p0_equals_p_is_full_lda():
    data = model1().sample(50, 50, 7)
    model = C.fit_tlda(data, 0.1, data.p)
    lda = C.fit_lda(data)
    np.testing.assert_array_equal(model.selected, np.arange(data.p))
    x = model1().sample(100, 100, 8).features
    np.testing.assert_array_equal(C.classify_tlda(model, x), C.classify_lda(lda, x))
    np.testing.assert_allclose(model.beta_star, 2 * lda.direction)


def test_tlda_model_invariants():
    data = model1(p=100).sample(100, 100, 1)
    model = C.fit_tlda(data, 0.3, 7)
    assert model.selected.size == model.p0_used == 7
    assert np.all(np.diff(model.selected) > 0)
    assert np.all(np.isfinite(model.beta_star))
    m = C.moments(data)
    ref = np.linalg.solve(m.pooled_cov[np.ix_(model.selected, model.selected)], m.mean_diff[model.selected])
    np.testing.assert_allclose(model.beta_star, ref, rtol=1e-10)


def test_tlda_selection_is_top_beta_hat():
    data = model1(p=100).sample(100, 100, 2)
    model = C.fit_tlda(data, 0.3, 5)
    order = np.argsort(-np.abs(model.beta_hat), kind="stable")[:5]
    np.testing.assert_array_equal(model.selected, np.sort(order))


def test_classify_tlda_examples():
    data = model1(p=100).sample(100, 100, 3)
    model = C.fit_tlda(data, 0.3, 5)
    m = C.moments(data)
    assert model.beta_star @ m.mu_hat_d[model.selected] > 0
    assert C.classify_tlda(model, m.xbar1) == 1
    huge = C.fit_tlda(data, 0.3, 5, log_prior_offset=1e300)
    assert np.all(C.classify_tlda(huge, data.features) == 2)


def test_prior_offset():
    assert C.prior_offset(0.5) == 0.0
    assert C.prior_offset(0.25) == pytest.approx(np.log(3.0))
    with pytest.raises(ValueError):
        C.prior_offset(1.0)


def test_prior_offset_is_bayes_threshold():
    # With beta_star = S^-1 (xbar1 - xbar2), comparing to log(pi2/pi1) is the
    # Gaussian Bayes rule; check on a known population and plug-in moments.
    pop = pop_from([1.0, 0.0], [-1.0, 0.0], np.eye(2))
    pi1 = 0.2
    model = C.TldaModel(np.arange(2), np.array([2.0, 0.0]), np.zeros(2), 0.0, 2, 2, C.prior_offset(pi1))
    x = np.array([[0.3, 0.0], [0.4, 0.0]])
    # posterior log-odds = 2 x1 + log(pi1/pi2); boundary at x1 = log(4)/2 = 0.693
    np.testing.assert_array_equal(C.classify_tlda(model, x), [2, 2])
    assert C.classify_tlda(model, np.array([0.7, 0.0])) == 1


def test_tlda_scale_invariance_of_selection():
    data = model1(p=40).sample(60, 60, 4)
    c = 3.7
    a = C.fit_tlda(data, 0.2, 6)
    scaled = C.LabeledDataset(c * data.features, data.labels)
    b = C.fit_tlda(scaled, 0.2 * c, 6)
    np.testing.assert_array_equal(a.selected, b.selected)


def test_classifiers_are_pure():
    data = model1(p=30).sample(40, 40, 5)
    a = C.fit_tlda(data, 0.2, 4)
    b = C.fit_tlda(data, 0.2, 4)
    assert np.array_equal(a.beta_star, b.beta_star)
    x = data.features.copy()
    np.testing.assert_array_equal(C.classify_tlda(a, x), C.classify_tlda(a, x))
    np.testing.assert_array_equal(x, data.features)


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="at n=100 per class even the best single grid lambda puts >=4 support "
    "features in the top 5 |beta_hat| for only about 70% of seeds",
)
def test_cv_tuned_tlda_recovers_most_of_support():
    pop = model1(p=100)
    support = {9, 29, 49, 69, 89}
    hits = 0
    for seed in range(50):
        model, _ = fit_tlda_cv(pop.sample(100, 100, seed), CvConfig(seed=seed))
        hits += len(support & set(model.selected.tolist())) >= 4
    assert hits / 50 >= 0.8
