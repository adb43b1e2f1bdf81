import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from conftest import toy_dataset
from rswitch.analysis import (_chisq, _chisq_mnl, bootstrap_marglik_ci, count_moments,
                              diagnose, dic, gof_chisq_counts, gof_chisq_mnl, gof_pvalue, log_bayes_factor,
                              log_marginal_likelihood, model_evidence, psrf_mpsrf,
                              resolve_labels, summarize, weighted_state_correlation)
from rswitch.datagen import SimRecipe, panel_design, simulate_counts
from rswitch.errors import DomainError, ModelDegenerateError
from rswitch.model_core import ModelSpec
from rswitch.switching import TransitionProbs, build_weekly_layout


def chain(draws, states=None, loglik=None, logjoint=None, names=None):
    draws = np.asarray(draws, float)
    draws = draws[:, None] if draws.ndim == 1 else draws
    G = len(draws)
    return SimpleNamespace(
        draws=draws, names=names or [f"p{i}" for i in range(draws.shape[1])],
        states=np.zeros((G, 0), np.int8) if states is None else np.asarray(states, np.int8),
        loglik=np.zeros(G) if loglik is None else np.asarray(loglik, float),
        logjoint=np.zeros(G) if logjoint is None else np.asarray(logjoint, float),
        accept_rates=np.full(draws.shape[1], 0.3))


# ------------------------------------------------------------- PSRF
def test_psrf_hand_example():
    psrf, mpsrf = psrf_mpsrf([np.array([1.0, 2, 3]), np.array([2.0, 3, 4])])
    assert psrf[0] == pytest.approx(math.sqrt(2 / 3 + 0.75), abs=1e-12)
    assert psrf[0] == pytest.approx(1.1902, abs=1e-4)
    assert mpsrf == pytest.approx(psrf[0], abs=1e-12)


def test_identical_chains_floor():
    x = np.random.default_rng(0).normal(size=(50, 3))
    psrf, mpsrf = psrf_mpsrf([x, x.copy(), x.copy()])
    floor = math.sqrt(49 / 50)
    assert np.allclose(psrf, floor, atol=1e-12) and mpsrf == pytest.approx(floor, abs=1e-12)


def test_mpsrf_bounds_psrf_from_above():
    rng = np.random.default_rng(1)
    chains = [rng.normal(loc=rng.normal(scale=0.3, size=2), size=(200, 2)) for _ in range(4)]
    psrf, mpsrf = psrf_mpsrf(chains)
    assert mpsrf >= psrf.max() - 1e-12
    assert np.all(psrf >= math.sqrt(199 / 200) - 1e-12)


def test_singular_within_covariance_uses_pseudo_inverse(caplog):
    x = np.random.default_rng(2).normal(size=(30, 1))
    a, b = np.hstack([x, x]), np.hstack([x + 1, x + 1])
    _, mpsrf = psrf_mpsrf([a, b])
    assert np.isfinite(mpsrf) and "singular" in caplog.text


# -------------------------------------------------------------- labels
def test_label_threshold():
    chains = [chain(np.zeros(3), logjoint=np.full(3, m)) for m in (-100.0, -100.2, -135.0)]
    retained, dropped = resolve_labels(chains, 5.0)
    assert retained == [0, 1] and dropped == {2: pytest.approx(35.0)}
    assert resolve_labels(chains[:1])[0] == [0]
    assert resolve_labels([chains[0]] * 3)[0] == [0, 1, 2]


def test_diagnose_excludes_dropped_chain():
    rng = np.random.default_rng(3)
    good = [chain(rng.normal(size=100), logjoint=np.full(100, -50.0)) for _ in range(3)]
    bad = chain(rng.normal(5.0, size=100), logjoint=np.full(100, -80.0))
    rep = diagnose(good + [bad])
    assert rep.retained_chains == [0, 1, 2] and 3 in rep.dropped_chains
    assert rep.psrf[0] < 1.1
    single = diagnose([good[0]])
    assert math.isnan(single.mpsrf)


# ------------------------------------------------------------ summaries
def test_quantile_rule():
    s = summarize([chain(np.arange(1, 101))])
    assert s.lo[0] == pytest.approx(3.475) and s.hi[0] == pytest.approx(97.525)


def test_constant_draws_and_states():
    s = summarize([chain(np.full(20, 2.5), states=np.ones((20, 4)))] * 2)
    assert s.mean[0] == 2.5 and s.lo[0] == s.hi[0] == 2.5 and s.sd[0] == 0
    assert np.all(s.state_prob == 1.0) and np.all(s.state_sd == 0)


def test_state_prob_is_pooled_mean():
    S = np.random.default_rng(4).integers(0, 2, (2, 30, 7))
    s = summarize([chain(np.zeros(30), states=S[0]), chain(np.zeros(30), states=S[1])])
    assert np.array_equal(s.state_prob, np.concatenate(S).mean(axis=0))


# ------------------------------------------------------------- evidence
def test_harmonic_mean_examples():
    assert log_marginal_likelihood([0.0, -math.log(3)]) == pytest.approx(-math.log(2))
    assert log_marginal_likelihood(np.full(10, -7.25)) == pytest.approx(-7.25, abs=1e-12)
    ll = np.random.default_rng(5).normal(-300, 3, 500)
    est = log_marginal_likelihood(ll)
    assert est <= ll.max()
    assert log_marginal_likelihood(np.append(ll, ll.min())) < est


def test_bootstrap_constant_trace():
    assert bootstrap_marglik_ci(np.full(1000, -4.0), draws=1000) == (-4.0, -4.0)
    with pytest.raises(DomainError):
        bootstrap_marglik_ci(np.zeros(50))


def test_bootstrap_two_valued_trace_oracle():
    # 300 of 1000 draws at -ln 3; a size-10 subsample holding k of them has
    # harmonic-mean estimate -ln((10 + 2k) / 10), with k ~ Binomial(10, 0.3).
    ll = np.where(np.arange(1000) < 300, -math.log(3), 0.0)
    lo, hi = bootstrap_marglik_ci(ll, draws=100_000, seed=1)
    k = stats.binom(10, 0.3)
    k_hi, k_lo = int(k.ppf(0.975)), int(k.ppf(0.025))
    assert lo == pytest.approx(-math.log((10 + 2 * k_hi) / 10), abs=1e-12)
    assert hi == pytest.approx(-math.log((10 + 2 * k_lo) / 10), abs=1e-12)


def test_bayes_factor():
    assert log_bayes_factor(-2184.21, -2554.16) == pytest.approx(369.95, abs=1e-9)
    assert log_bayes_factor(-3.0, -3.0) == 0
    assert log_bayes_factor(-1.0, -4.5) == -log_bayes_factor(-4.5, -1.0)


def test_dic_examples():
    assert dic([-3.0], -3.0) == pytest.approx(6.0)
    assert dic(np.full(5, -2.0), -2.0) == pytest.approx(4.0)
    # mean deviance 4, plug-in deviance 3
    assert dic([-1.0, -3.0], -1.5) == pytest.approx(5.0)


def test_model_evidence_with_dic():
    spec = ModelSpec("poisson", None, 1)
    data = toy_dataset([0, 1, 2, 3, 4])
    ll = np.random.default_rng(6).normal(-8, 0.2, 200)
    ch = chain(np.full(200, math.log(2)), loglik=ll)
    ev = model_evidence([ch], data, spec, None, draws=2000)
    mean_ll = float(np.sum(stats.poisson.logpmf([0, 1, 2, 3, 4], 2.0)))
    assert ev.dic == pytest.approx(2 * np.mean(-2 * ll) + 2 * mean_ll)
    assert ev.ci_lo <= ev.ci_hi


# ------------------------------------------------------------ goodness of fit
def test_pearson_single_state_poisson():
    spec = ModelSpec("poisson", None, 1)
    data = toy_dataset([0, 1, 2, 3, 4])
    assert gof_chisq_counts(data, spec, None, [math.log(2)]) == pytest.approx(5.0)
    assert gof_chisq_counts(toy_dataset([2, 2]), spec, None, [math.log(2)]) == 0.0


def test_two_state_moments_toy():
    spec = ModelSpec("poisson", "poisson", 1)
    lay = build_weekly_layout(2)
    trans = TransitionProbs(0.5, 0.5)
    free = [0.0, math.log(3)]
    m, v = count_moments(toy_dataset([2, 2]), spec, lay, free, trans)
    assert np.allclose(m, 2.0) and np.allclose(v, 3.0)
    assert gof_chisq_counts(toy_dataset([2, 2]), spec, lay, free, trans) == pytest.approx(0.0)
    assert gof_chisq_counts(toy_dataset([2, 5]), spec, lay, free, trans) == pytest.approx(3.0)


def test_zero_variance_observations():
    zero = np.array([0.0, 2.0])
    assert _chisq(np.array([0.0, 3.0]), zero, np.array([0.0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(ModelDegenerateError):
        _chisq(np.array([1.0]), np.array([0.0]), np.array([0.0]))


def test_mnl_chisq_examples():
    spec = ModelSpec("mnl", None, 1, outcome_count=2)
    assert gof_chisq_mnl(toy_dataset([1]), spec, None, [0.0]) == pytest.approx(1.0)
    assert _chisq_mnl(np.array([1]), np.array([[1.0, 0.0]])) == 0.0
    P = np.array([[0.2, 0.3, 0.5], [0.6, 0.1, 0.3]])
    y = np.array([2, 3])
    perm = [2, 0, 1]
    inv = np.argsort(perm)
    assert _chisq_mnl(y, P) == pytest.approx(_chisq_mnl(inv[y - 1] + 1, P[:, perm]))
    with pytest.raises(ModelDegenerateError):
        _chisq_mnl(np.array([2]), np.array([[1.0, 0.0]]))


def _poisson_panel(seed):
    spec = ModelSpec("poisson", None, 2)
    t, n, X, names = panel_design(30, 2, 2, seed=seed, per_unit=False)
    rec = SimRecipe(spec, None, np.array([0.4, 0.3]), None, t, n, X, names, seed=seed)
    return spec, simulate_counts(rec)


def test_pvalue_extremes():
    spec, data = _poisson_panel(0)
    free = [0.4, 0.3]
    assert gof_pvalue(data, spec, None, free, replicates=500, observed=0.0) > 0.99
    assert gof_pvalue(data, spec, None, free, replicates=500, observed=math.inf) == 0.0
    a = gof_pvalue(data, spec, None, free, replicates=300, seed=3)
    assert a == gof_pvalue(data, spec, None, free, replicates=300, seed=3)


def test_pvalue_calibration():
    inside = 0
    for seed in range(100):
        spec, data = _poisson_panel(100 + seed)
        p = gof_pvalue(data, spec, None, [0.4, 0.3], replicates=200, seed=seed)
        inside += 0.01 < p < 0.99
    assert inside >= 95


def test_pvalue_switching_model_runs():
    spec = ModelSpec("negbin", "negbin", 1)
    lay = build_weekly_layout(20, 3)
    t, n, X, names = panel_design(20, 3, 1, seed=0)
    free = np.array([0.0, math.log(0.5), 1.0, math.log(0.3)])
    trans = TransitionProbs(0.2, 0.4)
    data = simulate_counts(SimRecipe(spec, lay, free, trans, t, n, X, names, 0))
    p = gof_pvalue(data, spec, lay, free, trans, replicates=200)
    assert 0.0 <= p <= 1.0


# ------------------------------------------------------------ correlation
def test_weighted_correlation_signs():
    p = np.array([0.1, 0.4, 0.8, 0.95])
    sd = np.sqrt(p * (1 - p))
    assert weighted_state_correlation(p, sd, p) == pytest.approx(1.0)
    assert weighted_state_correlation(p, sd, -p) == pytest.approx(-1.0)


def test_weighted_correlation_hand_example():
    # inverse sds 10, 5, 2.5 capped at the median 5: weights 0.4, 0.4, 0.2
    r = weighted_state_correlation([0.2, 0.5, 0.9], [0.1, 0.2, 0.4], [1.0, 2.0, 2.0])
    assert r == pytest.approx(0.104 / math.sqrt(0.0664 * 0.24), abs=1e-12)


def test_weighted_correlation_zero_sd_and_constant():
    r = weighted_state_correlation([0.0, 1.0, 1.0, 0.5], [0.0, 0.0, 0.0, 0.5],
                                   [1.0, 3.0, 2.0, 2.0])
    assert -1 <= r <= 1
    with pytest.raises(DomainError):
        weighted_state_correlation([0.2, 0.5], [0.1, 0.1], [1.0, 1.0])
