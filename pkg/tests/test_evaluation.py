import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from pigreg.dist import GammaParams
from pigreg.evaluation import (
    METRICS,
    Z_975,
    aggregate,
    best_and_draws,
    compute_metrics,
    draw_test,
    make_probes,
    make_shift_splits,
    mean_std,
    records_from_csv,
    records_to_csv,
)
from pigreg.nn import SHIFT_EXCESS
from pigreg.pig import PigConfig
from pigreg.vvmodel import MeanVarianceNet, VvRegressor


def _constant_model(c, a, b, prior):
    """Mean c, posterior Gamma(a, b) at every input."""
    m = VvRegressor(1, 1, (3,), prior, np.random.default_rng(0))
    for net, bias in ((m.mu_net, c), (m.alpha_net, np.log(np.expm1(a - 1.0 - SHIFT_EXCESS))), (m.beta_net, np.log(np.expm1(b)))):
        for k in net.params:
            net.params[k][:] = 0.0
        net.params["b1"][:] = bias
    return m


def _kl_hand(a, b, a0, b0):
    return (a - a0) * special.digamma(a) - special.gammaln(a) + special.gammaln(a0) + a0 * (np.log(b) - np.log(b0)) + a * (b0 - b) / b


def test_two_point_hand_oracle():
    c, a, b = 0.25, 3.0, 1.5
    prior = GammaParams(2.0, 0.5)
    m = _constant_model(c, a, b, prior)
    x = np.array([[-1.0], [2.0]])
    y = np.array([1.0, -0.5])
    probes = np.array([[10.0], [-7.0], [0.0]])
    rec = compute_metrics(m, x, y, probe_ood=probes, rng=np.random.default_rng(42))

    r = y - c
    kl = _kl_hand(a, b, 2.0, 0.5)
    ell = -0.5 * (np.log(2 * np.pi) - special.digamma(a) + np.log(b) + a / b * r**2)
    assert rec.elbo == pytest.approx(np.mean(ell - kl), rel=1e-12)
    ll = stats.t.logpdf(y, df=2 * a, loc=c, scale=np.sqrt(b / a))
    assert rec.loglik == pytest.approx(np.mean(ll), rel=1e-12)
    assert rec.rmse_mean == pytest.approx(np.sqrt(np.mean(r**2)), rel=1e-12)
    assert rec.rmse_var == pytest.approx(np.sqrt(np.mean((b / (a - 1) - r**2) ** 2)), rel=1e-12)
    g = np.random.default_rng(42)
    lam = g.gamma(a, 1.0 / b, size=(2, 1))
    draw = c + g.standard_normal((2, 1)) / np.sqrt(lam)
    assert rec.rmse_sample == pytest.approx(np.sqrt(np.mean((y - draw[:, 0]) ** 2)), rel=1e-12)
    assert rec.ood_kl == pytest.approx(kl, rel=1e-12)
    assert math.isnan(rec.ood_kl_far)


def test_posterior_equal_to_prior_gives_zero_ood_kl():
    m = _constant_model(0.0, 2.0, 0.5, GammaParams(2.0, 0.5))
    rec = compute_metrics(m, np.zeros((3, 1)), np.zeros(3), probe_ood=np.linspace(-9, 9, 11)[:, None], probe_far=np.ones((2, 1)))
    assert abs(rec.ood_kl) < 1e-12 and abs(rec.ood_kl_far) < 1e-12


def test_perfect_mean_gives_zero_rmse():
    m = _constant_model(0.7, 2.0, 0.5, GammaParams(2.0, 0.5))
    assert compute_metrics(m, np.zeros((4, 1)), np.full(4, 0.7)).rmse_mean == 0.0


def test_mvn_reports_not_available():
    m = MeanVarianceNet(2, 1, (3,), np.random.default_rng(1))
    rec = compute_metrics(m, np.zeros((3, 2)), np.ones(3), probe_ood=np.zeros((2, 2)))
    assert math.isnan(rec.elbo) and math.isnan(rec.ood_kl) and math.isnan(rec.rmse_sample)
    assert np.isfinite(rec.loglik) and np.isfinite(rec.rmse_mean)


def test_metrics_are_bit_identical_for_a_seed():
    m = VvRegressor(2, 1, (6,), GammaParams(1.5, 0.5), np.random.default_rng(7))
    r = np.random.default_rng(8)
    x, y, p = r.normal(size=(30, 2)), r.normal(size=30), r.normal(size=(10, 2)) * 4
    one = compute_metrics(m, x, y, p, seed=3)
    two = compute_metrics(m, x, y, p, seed=3)
    assert one.to_dict() == two.to_dict()
    spread = [compute_metrics(m, x, y, seed=s).rmse_sample for s in range(50)]
    assert np.std(spread) > 0


# --- shift splits ---------------------------------------------------------------


def test_shift_split_partitions_exhaustive():
    r = np.random.default_rng(0)
    for n in range(3, 51):
        for d in range(1, 6):
            x = r.integers(0, 5, size=(n, d)).astype(float)  # plenty of ties
            splits = make_shift_splits(x)
            assert len(splits) == d
            for j, s in enumerate(splits):
                assert s.feature == j
                assert len(s.test) == (2 * n) // 3 - n // 3
                assert np.array_equal(np.sort(np.concatenate([s.train, s.test])), np.arange(n))
                assert not set(s.train) & set(s.test)
                # the test values are exactly the middle third of the sorted column
                v = np.sort(x[:, j])
                assert np.array_equal(np.sort(x[s.test, j]), v[n // 3 : (2 * n) // 3])


def test_shift_split_examples():
    s = make_shift_splits(np.arange(1, 10, dtype=float)[::-1, None])[0]
    assert set(np.arange(9, 0, -1)[s.test]) == {4, 5, 6}
    assert len(make_shift_splits(np.arange(10.0)[:, None])[0].test) == 3
    tie = make_shift_splits(np.zeros((9, 1)))[0]
    assert list(tie.test) == [3, 4, 5]


def test_shift_split_needs_three_rows():
    with pytest.raises(ValueError):
        make_shift_splits(np.zeros((2, 3)))


# --- draw test ----------------------------------------------------------------


def test_draw_examples():
    assert draw_test(1.0, 0.3, 5, 1.0, 0.3, 5) == (True, 0.0)
    draw, z = draw_test(0.0, 0.1, 5, 10.0, 0.1, 5)
    assert not draw and abs(z) > 100
    draw, z = draw_test(0.24, 0.05, 3, 0.66, 0.29, 5)
    assert not draw
    assert abs(z) == pytest.approx(0.42 / math.sqrt(0.05**2 / 3 + 0.29**2 / 5), rel=1e-12)
    assert abs(z) == pytest.approx(3.161, abs=1e-3)


def test_draw_zero_spread():
    assert draw_test(1.0, 0.0, 3, 1.0, 0.0, 3)[0]
    assert not draw_test(1.0, 0.0, 3, 1.5, 0.0, 3)[0]
    with pytest.raises(ValueError):
        draw_test(0, 1, 0, 0, 1, 2)
    with pytest.raises(ValueError):
        draw_test(0, -1, 2, 0, 1, 2)


finite = st.floats(-1e3, 1e3)
spread = st.floats(0.0, 1e2)


@given(finite, spread, st.integers(1, 50), finite, spread, st.integers(1, 50))
def test_draw_is_symmetric(ma, sa, na, mb, sb, nb):
    d1, z1 = draw_test(ma, sa, na, mb, sb, nb)
    d2, z2 = draw_test(mb, sb, nb, ma, sa, na)
    assert d1 == d2 and z1 == -z2
    if np.isfinite(z1):
        assert d1 == (abs(z1) < Z_975)


# --- aggregation ----------------------------------------------------------------


def _row(ds, shift, variant, trial, **metrics):
    base = {m: math.nan for m in METRICS}
    base.update(metrics)
    return {"dataset": ds, "shift": shift, "variant": variant, "trial": trial, "seed": 0, "status": "ok", **base}


def test_mean_std_uses_sample_std():
    assert mean_std([1.0, 2.0, 3.0]) == (2.0, 1.0, 3)
    assert mean_std([4.0]) == (4.0, 0.0, 1)
    m, s, n = mean_std([math.nan])
    assert n == 0 and math.isnan(m)


def test_aggregate_averages_features_within_a_trial():
    rows = [
        _row("a", 0, "vv", 0, ood_kl=1.0),
        _row("a", 1, "vv", 0, ood_kl=3.0),
        _row("a", 0, "vv", 1, ood_kl=4.0),
        _row("a", 1, "vv", 1, ood_kl=4.0),
        _row("a", -1, "vv", 0, ood_kl=9.0),
        {**_row("a", -1, "vv", 1, ood_kl=100.0), "status": "failed"},
    ]
    table = {(r["shifted"], r["metric"]): r for r in aggregate(rows)}
    cell = table[(True, "ood_kl")]
    assert (cell["mean"], cell["std"], cell["n"]) == (3.0, pytest.approx(math.sqrt(2.0)), 2)
    assert (table[(False, "ood_kl")]["mean"], table[(False, "ood_kl")]["n"]) == (9.0, 1)


def test_best_and_draws_hand_fixture():
    t = lambda ds, v, m, mean, std, n=5: {"dataset": ds, "shifted": False, "variant": v, "metric": m, "mean": mean, "std": std, "n": n}
    table = [
        t("a", "d-vv", "ood_kl", 0.1, 0.01),
        t("a", "vv", "ood_kl", 0.5, 0.01),
        t("a", "mvn", "ood_kl", math.nan, math.nan, 0),
        t("b", "d-vv", "ood_kl", 0.30, 0.2),
        t("b", "vv", "ood_kl", 0.29, 0.2),
        t("a", "d-vv", "elbo", -1.0, 0.1),
        t("a", "vv", "elbo", -0.5, 0.1),
    ]
    c = best_and_draws(table, ("d-vv", "vv", "mvn"))
    assert c["ood_kl"] == {"d-vv": [1, 1], "vv": [1, 0], "mvn": [0, 0]}
    assert c["elbo"] == {"d-vv": [0, 0], "vv": [1, 0], "mvn": [0, 0]}


def test_records_csv_round_trip():
    rows = [_row("boston", 2, "d-vv", 1, elbo=-1.2345678901234567, ood_kl=1e-300), _row("toy", -1, "mvn", 0, loglik=0.1)]
    back = records_from_csv(records_to_csv(rows, ["config=abc"]))
    for a, b in zip(rows, back):
        for k, v in a.items():
            if isinstance(v, float) and math.isnan(v):
                assert math.isnan(b[k])
            else:
                assert b[k] == v


# --- probes ---------------------------------------------------------------------


def test_probes_shapes_and_constant_columns():
    r = np.random.default_rng(0)
    x = np.column_stack([r.normal(size=40), np.full(40, 5.0), 1e-3 * r.normal(size=40)])
    boundary, far = make_probes(x, np.random.default_rng(1), PigConfig(count=25), k=8)
    assert boundary.shape == (25, 3) and far.shape == x.shape
    assert np.all(boundary[:, 1] == 5.0)
    # a narrow column yields probes of comparable width, not an explosion
    assert np.ptp(boundary[:, 2]) < 1.0
    again = make_probes(x, np.random.default_rng(1), PigConfig(count=25), k=8)
    assert np.array_equal(boundary, again[0]) and np.array_equal(far, again[1])
