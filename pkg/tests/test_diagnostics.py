import numpy as np
import pytest

from mglmmnet.diagnostics import ks_uniform, pearson_residuals, pit_uniformity, pit_values
from mglmmnet.errors import StateError
from mglmmnet.families import Binomial, CompoundPoisson, Gamma
from mglmmnet.glmm import FittedGLMM, ResponseSpec, fit
from mglmmnet.simulate import child_rng

from helpers import LEVELS, simulate_one, table_from_matrix

FIXTURES = {
    "gamma": (Gamma(), (0.5, 1.0, 1.5), 0.3),
    "binomial": (Binomial(9), (-1.0, 0.0, 1.0), 1.0),
    "compound_poisson": (CompoundPoisson(1.5), (-1.0, 0.0, 1.0), 1.0),
}


def fixed_fit(family, fixed, disp, preds, s2=0.5):
    return FittedGLMM(ResponseSpec("y", family), dict(zip(LEVELS, fixed)), disp, s2, preds, 0.0, True)


def test_pearson_examples():
    table = table_from_matrix([[2.0, 2.0, 2.0], [1.0, 1.0, 1.0]])
    f = fixed_fit(Gamma(), (0.0, 0.0, 0.0), 1.0, {"1": 0.0, "2": 0.0})
    r = pearson_residuals(f, table)
    assert np.allclose(r[:3], 1.0)
    assert np.allclose(r[3:], 0.0)


def test_pearson_variance_on_correct_gamma_fixture():
    # 10 groups x 15 levels; with 50 groups x 3 levels the predicted
    # intercepts absorb about a third of the residual variance
    levels = [str(k) for k in range(15)]
    table, _ = simulate_one(Gamma(), np.linspace(0.5, 1.5, 15), 0.3, 0.5, 10, seed=2, levels=levels)
    r = pearson_residuals(fit(table, ResponseSpec("y", Gamma())), table)
    assert r.size == 150
    assert 0.7 <= np.var(r, ddof=1) <= 1.3


def test_ks_uniform():
    assert ks_uniform([0.3]) == (pytest.approx(0.7), pytest.approx(ks_uniform([0.7])[1]))
    d, p = ks_uniform(np.linspace(0.005, 0.995, 100))
    assert d == pytest.approx(0.005, abs=1e-12)
    assert p == pytest.approx(1.0, abs=1e-9)
    d, p = ks_uniform(np.full(50, 0.01))
    assert d == pytest.approx(0.99)
    assert p < 1e-10


def test_continuous_pit_consumes_no_randomness():
    table, _ = simulate_one(Gamma(), (0.5, 1.0, 1.5), 0.3, 0.5, 10, seed=3)
    f = fit(table, ResponseSpec("y", Gamma()))
    rng = child_rng(1)
    before = rng.bit_generator.state
    pit_uniformity(f, table, rng)
    assert rng.bit_generator.state == before


def test_atoms_consume_one_uniform_each():
    table, _ = simulate_one(CompoundPoisson(1.5), (-1.0, 0.0, 1.0), 1.0, 0.5, 20, seed=4)
    f = fit(table, ResponseSpec("y", CompoundPoisson(1.5)))
    zeros = int(np.sum(table.column("y") == 0))
    assert zeros > 0
    rng = child_rng(2)
    pit_uniformity(f, table, rng)
    ref = child_rng(2)
    ref.uniform(size=zeros)
    assert rng.bit_generator.state == ref.bit_generator.state


def test_randomised_pit_lies_in_the_atom():
    table, _ = simulate_one(Binomial(9), (-1.0, 0.0, 1.0), 1.0, 0.5, 10, seed=5)
    f = fit(table, ResponseSpec("y", Binomial(9)))
    _, y, mu, pit = pit_values(f, table, child_rng(3))
    fam = f.family
    lo, hi = fam.cdf_left(y, mu, 1.0), fam.cdf(y, mu, 1.0)
    assert np.all((pit >= lo - 1e-15) & (pit <= hi + 1e-15))


def test_report_deterministic_and_bounded():
    table, _ = simulate_one(CompoundPoisson(1.5), (-1.0, 0.0, 1.0), 1.0, 0.5, 20, seed=6)
    f = fit(table, ResponseSpec("y", CompoundPoisson(1.5)))
    a = pit_uniformity(f, table, child_rng(7))
    b = pit_uniformity(f, table, child_rng(7))
    assert a.to_csv() == b.to_csv()
    assert np.all((a.pit >= 0) & (a.pit <= 1))
    assert 0 <= a.ks_statistic <= 1 and 0 <= a.ks_pvalue <= 1
    assert a.to_dict()["n"] == 60
    assert a.to_csv().splitlines()[0] == "glass,week,fitted,pearson_residual,pit"


def test_non_converged_fit_is_rejected():
    table, _ = simulate_one(Gamma(), (0.5, 1.0, 1.5), 0.3, 0.5, 10, seed=1)
    f = fit(table, ResponseSpec("y", Gamma()), max_iter=1)
    with pytest.raises(StateError):
        pearson_residuals(f, table)
    with pytest.raises(StateError):
        pit_uniformity(f, table, child_rng(0))


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_calibration_at_generating_parameters(name):
    # PIT at the true means isolates the CDF/PIT/KS machinery; with fitted
    # group effects the test is conservative (estimated-parameter effect)
    family, fixed, disp = FIXTURES[name]
    pvals = []
    for seed in range(200):
        table, truth = simulate_one(family, fixed, disp, 0.5, 50, seed)
        preds = dict(zip(truth["groupIds"], np.array(truth["B"])[:, 0]))
        report = pit_uniformity(fixed_fit(family, fixed, disp, preds), table, child_rng(seed, 2, 0))
        pvals.append(report.ks_pvalue)
    rate = np.mean(np.array(pvals) < 0.05)
    assert 0.01 <= rate <= 0.10
