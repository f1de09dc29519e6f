import math

import numpy as np
import pytest

from mglmmnet.errors import InputError, StateError
from mglmmnet.families import Binomial, CompoundPoisson, Gamma
from mglmmnet.glmm import (
    Design,
    FittedGLMM,
    LaplaceObjective,
    ResponseSpec,
    fit,
    fitted_means,
    predict_random_effects,
)
from mglmmnet.simulate import child_rng

from helpers import LEVELS, simulate_one, table_from_matrix
from oracles import aghq_loglik

GAMMA = ResponseSpec("y", Gamma())


def test_response_spec_links():
    assert ResponseSpec("a", Gamma()).link == "log"
    assert ResponseSpec("a", Binomial(9)).link == "logit"
    assert ResponseSpec("a", CompoundPoisson(1.5), "log").link == "log"
    with pytest.raises(InputError):
        ResponseSpec("a", Binomial(9), "log")
    with pytest.raises(InputError):
        ResponseSpec("a", Gamma(), "identity")


def test_pinned_zero_variance_reduces_to_level_means():
    table, _ = simulate_one(Gamma(), (0.5, 1.0, 1.5), 0.3, 0.4, 12, seed=3)
    result = fit(table, GAMMA, fix_re_variance=0.0)
    y = table.column("y")
    for t in LEVELS:
        mask = np.array(table.times) == t
        assert result.fixed_effects[t] == pytest.approx(math.log(y[mask].mean()), abs=1e-6)
    assert result.converged
    assert all(v == 0.0 for v in predict_random_effects(result).values())


def test_binomial_toy_against_quadrature():
    y = np.array([[2, 4, 7], [0, 3, 5], [5, 8, 9]])
    table = table_from_matrix(y)
    result = fit(table, ResponseSpec("y", Binomial(9)))
    assert result.converged
    assert abs(result.log_likelihood - aghq_loglik(result, table)) <= 0.05


@pytest.mark.parametrize("family, fixed, disp", [
    (Gamma(), (0.5, 1.0, 1.5), 0.2),
    (CompoundPoisson(1.4), (0.0, 0.3, 0.6), 0.8),
])
def test_zero_re_variance_is_detected(family, fixed, disp):
    table, _ = simulate_one(family, fixed, disp, 0.0, 50, seed=1)
    result = fit(table, ResponseSpec("y", family))
    assert result.converged
    assert result.re_variance < 0.05


def test_predictions_track_true_components():
    levels = [str(k) for k in range(30)]
    fixed = np.linspace(0.0, 1.0, 30)
    table, truth = simulate_one(Gamma(), fixed, 0.2, 1.0, 20, seed=4, levels=levels)
    result = fit(table, GAMMA)
    pred = predict_random_effects(result)
    true_u = np.array(truth["B"])[:, 0]
    est = np.array([pred[g] for g in truth["groupIds"]])
    assert np.corrcoef(est, true_u)[0, 1] > 0.9


def test_gamma_dispersion_recovered_within_twenty_percent():
    table, _ = simulate_one(Gamma(), (0.5, 1.0, 1.5), 0.3, 0.5, 50, seed=7)
    result = fit(table, GAMMA)
    assert abs(result.dispersion - 0.3) / 0.3 < 0.2


def test_predictions_roughly_centred():
    table, _ = simulate_one(Gamma(), (0.5, 1.0, 1.5), 0.3, 0.5, 30, seed=2)
    result = fit(table, GAMMA)
    assert abs(sum(result.re_predictions.values())) < 0.5 * math.sqrt(result.re_variance) * 30


def test_row_order_invariance():
    table, _ = simulate_one(CompoundPoisson(1.5), (-0.3, 0.0, 0.3), 1.0, 0.5, 15, seed=5)
    a = fit(table, ResponseSpec("y", CompoundPoisson(1.5)))
    perm = child_rng(9).permutation(len(table))
    b = fit(table.take(perm), ResponseSpec("y", CompoundPoisson(1.5)))
    for t in LEVELS:
        assert a.fixed_effects[t] == pytest.approx(b.fixed_effects[t], abs=1e-8)
    assert a.dispersion == pytest.approx(b.dispersion, rel=1e-8)
    assert a.re_variance == pytest.approx(b.re_variance, rel=1e-8, abs=1e-12)
    for g in a.re_predictions:
        assert a.re_predictions[g] == pytest.approx(b.re_predictions[g], abs=1e-8)


@pytest.mark.parametrize("family, fixed, disp", [
    (Gamma(), (0.5, 1.0, 1.5), 0.3),
    (Binomial(9), (-1.0, 0.0, 1.0), 1.0),
    (CompoundPoisson(1.5), (-0.3, 0.0, 0.3), 1.0),
])
def test_gradient_matches_finite_differences(family, fixed, disp):
    table, _ = simulate_one(family, fixed, disp, 0.5, 8, seed=11)
    obj = LaplaceObjective(Design(table, ResponseSpec("y", family)), family)
    theta = obj.pack([f + 0.1 for f in fixed], max(disp, 0.5), 0.3)
    _, g = obj.evaluate(theta)
    h = 1e-5
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        fd = (obj.evaluate(theta + e, gradient=False) - obj.evaluate(theta - e, gradient=False)) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-5, abs=1e-5)


def test_objective_trace_descends():
    table, _ = simulate_one(Binomial(9), (-1.0, 0.0, 1.0), 1.0, 0.5, 10, seed=6)
    result = fit(table, ResponseSpec("y", Binomial(9)))
    trace = np.array(result.objective_trace)
    assert trace[-1] <= trace[0]
    assert np.all(np.diff(trace) <= 1e-9 * np.abs(trace[:-1]).max())
    assert -result.log_likelihood <= trace[0]


def test_fit_input_errors():
    with pytest.raises(InputError):
        fit(table_from_matrix(np.empty((0, 3))), GAMMA)
    with pytest.raises(InputError, match="constant"):
        fit(table_from_matrix(np.full((4, 3), 2.0)), GAMMA)
    with pytest.raises(InputError, match="support"):
        fit(table_from_matrix([[1.0, 2.0, 0.0], [1.0, 2.0, 3.0]]), GAMMA)
    with pytest.raises(InputError, match="support"):
        fit(table_from_matrix([[1, 10, 3], [1, 2, 3]]), ResponseSpec("y", Binomial(9)))


def test_missing_cells_are_skipped():
    y = np.array([[1.0, 2.0, np.nan], [1.5, 2.5, 3.5], [0.8, np.nan, 2.9], [1.2, 2.2, 3.1]])
    result = fit(table_from_matrix(y), GAMMA)
    assert result.converged
    assert set(result.fixed_effects) == set(LEVELS)


def test_non_converged_fit_is_a_state_error():
    table, _ = simulate_one(Gamma(), (0.5, 1.0, 1.5), 0.3, 0.5, 10, seed=1)
    result = fit(table, GAMMA, max_iter=1)
    assert not result.converged
    with pytest.raises(StateError):
        predict_random_effects(result)


def test_fitted_means_examples():
    table = table_from_matrix([[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]])
    zeros = {t: 0.0 for t in LEVELS}
    gamma_fit = FittedGLMM(GAMMA, zeros, 1.0, 0.0, {"1": 0.0, "2": 0.0}, 0.0, True)
    assert np.allclose(fitted_means(gamma_fit, table), 1.0)
    binom_fit = FittedGLMM(ResponseSpec("y", Binomial(9)), zeros, 1.0, 0.0, {"1": 0.0, "2": 0.0}, 0.0, True)
    assert np.allclose(fitted_means(binom_fit, table), 4.5)
    bumped = FittedGLMM(GAMMA, zeros, 1.0, 0.0, {"1": 0.1, "2": 0.0}, 0.0, True)
    base, up = fitted_means(gamma_fit, table), fitted_means(bumped, table)
    g1 = np.array(table.groups) == "1"
    assert np.all(up[g1] > base[g1])
    assert np.array_equal(up[~g1], base[~g1])
    unknown = FittedGLMM(GAMMA, zeros, 1.0, 0.0, {"1": 0.0}, 0.0, True)
    with pytest.raises(InputError):
        fitted_means(unknown, table)


def test_fitted_glmm_round_trip():
    table, _ = simulate_one(CompoundPoisson(1.5), (-0.3, 0.0, 0.3), 1.0, 0.5, 6, seed=8)
    result = fit(table, ResponseSpec("y", CompoundPoisson(1.5)))
    back = FittedGLMM.from_dict(result.to_dict())
    assert back.to_dict() == result.to_dict()
    bad = dict(result.to_dict(), extra=1)
    with pytest.raises(InputError):
        FittedGLMM.from_dict(bad)
