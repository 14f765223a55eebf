import numpy as np
import pytest
from hypothesis import given, strategies as st

from dropout_ua.errors import ShapeError
from dropout_ua.estimators import (ErrorReport, Seminorm, TargetFunction, exceed_prob, exceedance, loglog_slope,
                                   lq_from_values, lq_moment, seminorm_apply, seminorm_batch, uniform_grid, wilson)
from dropout_ua.rng import RandomSource

G = uniform_grid([0.0], [1.0], 11)


def wilson_by_hand(k, n, z=1.6448536269514722):
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return centre - half, centre + half


def test_seminorm_examples():
    f = np.full(11, 1.3)
    g = np.full(11, 1.0)
    assert Seminorm.sup(G)(f, g) == pytest.approx(0.3)
    assert Seminorm.lr(G, 2)(f, g) == pytest.approx(0.3)
    assert Seminorm.sup(G)(f, f) == 0.0
    two = np.array([[0.0], [1.0]])
    assert seminorm_apply(Seminorm.lr(two, 1), [0.0, 1.0]) == pytest.approx(0.5)
    assert seminorm_apply(Seminorm.sup(two), [0.0, 1.0]) == 1.0


def test_seminorm_vector_outputs_and_batches():
    two = np.array([[0.0], [1.0]])
    vals = np.array([[3.0, 4.0], [0.0, 0.0]])
    assert seminorm_apply(Seminorm.sup(two), vals) == 5.0
    batch = np.stack([vals, 2 * vals])
    np.testing.assert_allclose(seminorm_batch(Seminorm.sup(two), batch), [5.0, 10.0])
    with pytest.raises(ShapeError):
        seminorm_apply(Seminorm.sup(two), np.zeros(3))


def test_seminorm_validation():
    with pytest.raises(ValueError):
        Seminorm.lr(G, 0.5)
    with pytest.raises(ValueError):
        Seminorm.lr(G, 2, weights=np.ones(11))


@given(st.lists(st.floats(-5, 5), min_size=11, max_size=11), st.lists(st.floats(-5, 5), min_size=11, max_size=11),
       st.floats(1, 4))
def test_seminorm_axioms(a, b, r):
    a, b = np.array(a), np.array(b)
    for s in (Seminorm.sup(G), Seminorm.lr(G, r)):
        assert s(a + b) <= s(a) + s(b) + 1e-9
        assert s(-2 * a) == pytest.approx(2 * s(a), abs=1e-9)
        assert s(a) >= 0
    assert Seminorm.lr(G, r)(a) <= Seminorm.sup(G)(a) + 1e-9


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (10, 10), (17, 500), (250, 500)])
def test_wilson_matches_formula(k, n):
    np.testing.assert_allclose(wilson(k, n), wilson_by_hand(k, n), atol=1e-9)


def test_exceed_prob_examples():
    rng = RandomSource(0)
    ex = exceed_prob(lambda r, i: 0.0, 0.1, 1000, rng=rng)
    assert ex.estimate == 0.0 and ex.upper < 3.7 / 1000
    assert exceed_prob(lambda r, i: 0.2, 0.1, 100, rng=rng).estimate == 1.0
    coin = exceed_prob(lambda r, i: r.draw(i, 1)[0], 0.5, 10_000, rng=rng)
    assert abs(coin.estimate - 0.5) < 0.05
    assert coin.lower < 0.5 < coin.upper
    with pytest.raises(ValueError):
        exceed_prob(lambda r, i: 0.0, 0.1, 10, rng=rng)


def test_lq_moment_examples():
    rng = RandomSource(1)
    for q in (1, 2, 3.5):
        assert lq_moment(lambda r, i: -0.7, q, 50, rng) == pytest.approx(0.7)
    two_point = lq_moment(lambda r, i: float(r.draw(i, 1)[0] < 0.5), 2, 10_000, rng)
    assert abs(two_point - np.sqrt(0.5)) < 0.02
    vals = np.array([0.1, 0.5, 0.2])
    assert lq_from_values(vals, 1) == pytest.approx(vals.mean())


@given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.floats(1, 3), st.floats(1, 3))
def test_lq_monotone_in_q(vals, q1, q2):
    lo, hi = sorted([q1, q2])
    assert lq_from_values(vals, lo) <= lq_from_values(vals, hi) + 1e-9


def test_exceedance_is_strict():
    ex = exceedance([0.1, 0.2, 0.3], 0.2)
    assert ex.count == 1


def test_loglog_slope():
    M = np.array([16, 64, 256, 1024])
    assert loglog_slope(M, 3.0 * M**-0.5) == pytest.approx(-0.5)


def test_error_report_json():
    rep = ErrorReport.from_values([0.1, 0.3], 0.2, qs=(1, 2), seed=4, grid={"points_per_axis": 3})
    js = rep.to_json()
    assert js["sup_estimate"] == pytest.approx(0.2) and js["sup_max"] == 0.3
    assert set(js["lq_estimate"]) == {"1", "2"}
    assert js["exceed_prob"]["count"] == 1 and js["seed"] == 4
    with pytest.raises(FloatingPointError):
        ErrorReport.from_values([np.nan], 0.1)


def test_target_function():
    t = TargetFunction(lambda X: X[:, 0] ** 2, [0.0], [2.0])
    X = t.grid(5)
    np.testing.assert_allclose(t(X)[:, 0], [0, 0.25, 1, 2.25, 4])
    assert uniform_grid([0, 0], [1, 1], 3).shape == (9, 2)
