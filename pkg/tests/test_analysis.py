import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from loloha.analysis import (
    VarianceInput,
    approx_variance,
    brute_force_g,
    canonical_protocol,
    channel_params,
    check_optimal_g,
    comparison_table,
    dbit_approx_variance,
    dbit_variance,
    exact_variance,
    losue_closed_form_variance,
    optimal_g,
    optimal_g_continuous,
    protocol_approx_variance,
    utility_bound,
)
from loloha.core import grr_params, grr_perturb_array
from loloha.errors import DegenerateMechanismError, ParameterError
from loloha.longitudinal import PrivacyBudget, derive_eps_irr
from loloha.server import loloha_params, losue_params

GRID_EPS = [0.5 * i for i in range(1, 11)]
GRID_ALPHA = [0.1 * i for i in range(1, 7)]

probs = st.floats(0.01, 0.99)


@settings(max_examples=80)
@given(p1=probs, q1=probs, p2=probs, q2=probs, n=st.integers(1, 10**6))
def test_approx_is_exact_at_zero(p1, q1, p2, q2, n):
    if p1 == q1 or p2 == q2:
        return
    assert approx_variance(p1, q1, p2, q2, n) == exact_variance(VarianceInput(p1, q1, p2, q2, n, 0.0))


@settings(max_examples=80)
@given(f=st.floats(0, 1), eps=st.floats(0.2, 6), alpha=st.floats(0.1, 0.9))
def test_exact_variance_bounded_by_quarter(f, eps, alpha):
    prm = losue_params(10, PrivacyBudget.from_alpha(eps, alpha))
    n = 1000
    v = exact_variance(VarianceInput(prm.p1, prm.q1, prm.p2, prm.q2, n, f))
    cap = 1 / (4 * n * (prm.p1 - prm.q1) ** 2 * (prm.p2 - prm.q2) ** 2)
    assert 0 <= v <= cap * (1 + 1e-12)


def test_exact_variance_monte_carlo(rng):
    # LOLOHA with g = 2: the support count is binomial with success gamma
    n, reps, f = 1000, 10_000, 0.3
    budget = PrivacyBudget(2, 1)
    prm = loloha_params(2, budget)
    prr, irr = grr_params(2, 2), grr_params(derive_eps_irr(2, 1), 2)
    # user holds the tracked value w.p. f; with g = 2 the hashed value matches
    # H(v) exactly then, and otherwise matches with probability 1/2
    ests = np.empty(reps)
    for r in range(reps):
        holds = rng.random(n) < f
        match = holds | (rng.random(n) < 0.5)
        x = np.where(match, 1, 2)
        x2 = grr_perturb_array(grr_perturb_array(x, prr, rng), irr, rng)
        c = np.sum(x2 == 1)
        ests[r] = (c - n * prm.q1 * (prm.p2 - prm.q2) - n * prm.q2) / (n * (prm.p1 - prm.q1) * (prm.p2 - prm.q2))
    v = exact_variance(VarianceInput(prm.p1, prm.q1, prm.p2, prm.q2, n, f))
    assert ests.var() == pytest.approx(v, rel=0.10)


def test_variance_input_validation():
    with pytest.raises(DegenerateMechanismError):
        VarianceInput(0.5, 0.5, 0.7, 0.3, 10)
    with pytest.raises(ParameterError):
        VarianceInput(1.5, 0.5, 0.7, 0.3, 10)
    with pytest.raises(ParameterError):
        VarianceInput(0.6, 0.5, 0.7, 0.3, 0)


@pytest.mark.parametrize("eps_inf,alpha", [(1, 0.5), (2, 0.5), (5, 0.6), (0.5, 0.1)])
def test_losue_closed_form(eps_inf, alpha):
    n = 10_000
    v = protocol_approx_variance("l-osue", eps_inf, alpha, n, k=50)
    e1 = math.exp(alpha * eps_inf)
    assert v == pytest.approx(4 * e1 / (n * (e1 * e1 - 2 * e1 + 1)), rel=1e-9)
    assert v == pytest.approx(losue_closed_form_variance(alpha * eps_inf, n), rel=1e-9)


def test_variance_orderings_strict():
    n = 10_000
    v = {p: protocol_approx_variance(p, 5, 0.6, n, k=100) for p in ("ololoha", "biloloha", "losue", "rappor")}
    assert v["ololoha"] < v["biloloha"]
    assert v["losue"] < v["rappor"]


def test_dbit_closed_form_monotonicity():
    assert dbit_approx_variance(30, 3, 1000, 2) < dbit_approx_variance(30, 2, 1000, 2)
    assert dbit_approx_variance(40, 3, 1000, 2) > dbit_approx_variance(30, 3, 1000, 2)
    assert dbit_variance(30, 3, 1000, 2) < dbit_variance(30, 2, 1000, 2)


# --- optimal g ----------------------------------------------------------------

def test_optimal_g_high_privacy_binary():
    for eps in GRID_EPS:
        for alpha in GRID_ALPHA:
            if eps <= 1 and alpha <= 0.3 + 1e-9:
                assert optimal_g(eps, alpha) == 2


def test_optimal_g_grid_against_brute_force():
    statuses = {}
    for eps in GRID_EPS:
        for alpha in GRID_ALPHA:
            chk = check_optimal_g(eps, alpha)
            statuses[(eps, round(alpha, 1))] = chk.status
            assert chk.status in ("match", "rounding-boundary")
            if chk.status == "rounding-boundary":
                # the continuous optimum sits right at a half-integer
                assert abs(chk.g_continuous - math.floor(chk.g_continuous) - 0.5) < 0.03
    boundary = sorted(key for key, s in statuses.items() if s != "match")
    assert boundary == [(2.0, 0.4), (3.0, 0.2), (3.0, 0.4), (4.5, 0.1)]


def test_optimal_g_low_privacy_corner_non_binary():
    assert optimal_g(5, 0.6) > 2


def test_optimal_g_non_decreasing_in_eps():
    for alpha in GRID_ALPHA:
        gs = [optimal_g(eps, alpha) for eps in GRID_EPS]
        assert gs == sorted(gs)
        brute = [brute_force_g(eps, alpha) for eps in GRID_EPS]
        assert brute == sorted(brute)


@pytest.mark.parametrize("eps,alpha", [(2, 0.5), (4, 0.3), (5, 0.6), (3.5, 0.2)])
def test_continuous_optimum_matches_numeric_minimiser(eps, alpha):
    budget = PrivacyBudget.from_alpha(eps, alpha)

    def variance(g):
        a, e_irr = math.exp(eps), math.exp(derive_eps_irr(eps, budget.eps_1))
        p1, p2, q2 = a / (a + g - 1), e_irr / (e_irr + g - 1), 1 / (e_irr + g - 1)
        return approx_variance(p1, 1 / g, p2, q2, 1)

    res = minimize_scalar(variance, bounds=(1.01, 400), method="bounded", options={"xatol": 1e-10})
    assert optimal_g_continuous(eps, alpha) == pytest.approx(res.x, abs=1e-4)


def test_optimal_g_errors():
    with pytest.raises(ParameterError):
        optimal_g(0, 0.5)
    with pytest.raises(ParameterError):
        optimal_g(1, 1.0)


# --- utility bound and table ---------------------------------------------------

def test_utility_bound_scaling():
    args = dict(k=20, beta=0.1, p1=0.7, q1_prime=0.5, p2=0.6, q2=0.4)
    assert utility_bound(2000, **args) == pytest.approx(utility_bound(1000, **args) / math.sqrt(2))
    near_one = utility_bound(1000, 20, 1 - 1e-12, 0.7, 0.5, 0.6, 0.4)
    assert near_one == pytest.approx(math.sqrt(20 / (4 * 1000 * 0.2 * 0.2)), rel=1e-9)
    with pytest.raises(ParameterError):
        utility_bound(1000, 20, 0, 0.7, 0.5, 0.6, 0.4)


def test_comparison_table_rows():
    rows = {r.protocol: r for r in comparison_table(360, 2, 360, 1)}
    assert rows["LOLOHA"].comm_bits == 1 and rows["LOLOHA"].budget_multiplier == 2
    assert rows["dBitFlipPM"].budget_multiplier == 2
    assert rows["L-GRR"].comm_bits == 9 and rows["RAPPOR"].comm_bits == 360
    assert {r.protocol: r for r in comparison_table(50, 50, 10, 1)}["LOLOHA"].budget_multiplier == 50
    assert {r.protocol: r for r in comparison_table(50, 2, 10, 10)}["dBitFlipPM"].budget_multiplier == 10


def test_protocol_aliases_and_channels():
    assert canonical_protocol("RAPPOR") == canonical_protocol("L-SUE") == "lsue"
    with pytest.raises(ParameterError):
        canonical_protocol("olh")
    budget = PrivacyBudget.from_alpha(5, 0.6)
    assert channel_params("ololoha", budget).q1 == pytest.approx(1 / optimal_g(5, 0.6))
    with pytest.raises(ParameterError):
        channel_params("losue", budget)
    with pytest.raises(ParameterError):
        channel_params("loloha", budget)
