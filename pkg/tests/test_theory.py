import numpy as np
import pytest

from fedaws.errors import MarginOutOfTheoryRange, UnbalancedShards
from fedaws.mathcore import normalize_rows, random_unit_rows
from fedaws.theory import (
    EQ_TOL,
    check_prop3,
    check_thm4,
    claim5_case,
    claim5_slack,
    lemma2_slack,
    run_all,
    sweep_claim5,
    sweep_lemma2,
    sweep_prop1,
    sweep_prop3,
    sweep_thm4,
    thm4_slack,
)


def test_lemma2_examples():
    assert lemma2_slack(np.array([[0.9, 0.1]]), np.array([0]), 1.5)[0] >= 0
    # wrong top-1: ccl = 1 + 1 = 2 against 2 (nu - 1) = 1
    assert lemma2_slack(np.array([[0.0, 0.5]]), np.array([0]), 1.5)[0] == pytest.approx(1.0)
    # a tie is counted as correct, so the right side is 0
    assert lemma2_slack(np.array([[0.3, 0.3]]), np.array([1]), 1.5)[0] == pytest.approx(0.49 + 0.64)


def test_lemma2_bound_is_tight_at_nu_two():
    # s_y = s_max = (2 - nu) / 2 minimizes ccl on the wrong side; value nu^2 / 2
    nu = 1.999
    a = (2 - nu) / 2
    S = np.array([[a - 1e-9, a]])
    slack = lemma2_slack(S, np.array([0]), nu)[0]
    assert 0 <= slack <= 1e-5


def test_lemma2_sweep():
    res = sweep_lemma2(20_000, seed=1)
    assert res.passed and res.trials == 20_000 and res.detail["misclassified"] > 1000


def test_thm4_zero_residual_is_exact():
    rng = np.random.default_rng(0)
    W = random_unit_rows(rng, 6, 4)
    labels = rng.integers(0, 6, 10)
    slack = thm4_slack(W[labels], W, labels, 1.5)
    assert np.max(np.abs(slack)) <= 1e-15
    assert check_thm4(W[labels], W, labels, 1.5) <= 1e-15


def test_thm4_random_cases():
    rng = np.random.default_rng(1)
    W = random_unit_rows(rng, 5, 3)
    labels = rng.integers(0, 5, 200)
    G = normalize_rows(W[labels] + rng.standard_normal((200, 3)))
    assert check_thm4(G, W, labels, 1.3) <= 1e-12
    with pytest.raises(MarginOutOfTheoryRange):
        check_thm4(G, W, labels, 2.0)
    assert sweep_thm4(2000, seed=2).passed


def test_claim5_examples():
    a, b = np.array([-0.5, 0.5]), np.array([0.2, 0.1])
    np.testing.assert_array_equal(claim5_case(a, b), [1, 2])
    slack = claim5_slack(a, b, 1.5)
    assert slack[0] == pytest.approx(4 * 0.2)  # no change at all in case 1
    assert slack[1] == pytest.approx(0.4 - 0.11)
    np.testing.assert_array_equal(claim5_case(np.array([-0.2, 0.2]), np.array([0.5, -0.5])), [3, 4])


def test_claim5_sweep_hits_every_case():
    res = sweep_claim5(8000, seed=3)
    assert res.passed
    for c in (1, 2, 3, 4):
        assert res.detail[f"case{c}"].startswith("2000/")


def test_prop3_two_classes_by_hand():
    W = np.array([[1.0, 0.0], [0.6, 0.8]])
    G = np.array([[0.8, 0.6], [0.0, 1.0]])
    labels = np.array([0, 1])
    nu = 1.5
    h = nu - 1 + 0.6
    # s = (0.8, 0.8); each instance sees one negative pair with hinge h
    expected = (0.2**2 + h**2 + 0.2**2 + h**2) / 2
    lhs, rhs, gap = check_prop3(G, W, labels, nu)
    assert abs(lhs - expected) <= 1e-12 and abs(rhs - expected) <= 1e-12 and gap <= 1e-12


def test_prop3_collapsed_classes():
    rng = np.random.default_rng(4)
    C, per, nu = 4, 3, 1.5
    W = np.repeat(random_unit_rows(rng, 1, 5), C, axis=0)
    labels = np.repeat(np.arange(C), per)
    G = random_unit_rows(rng, labels.size, 5)
    s = np.sum(G * W[labels], axis=1)
    expected = np.mean((1 - s) ** 2) + nu**2 * (C - 1)
    lhs, rhs, gap = check_prop3(G, W, labels, nu)
    assert gap <= EQ_TOL and lhs == pytest.approx(expected, abs=1e-12)


def test_prop3_refuses_unbalanced():
    W = np.eye(2)
    with pytest.raises(UnbalancedShards):
        check_prop3(W[[0, 0, 1]], W, np.array([0, 0, 1]), 1.5)


def test_prop3_and_prop1_sweeps():
    assert sweep_prop3(50, seed=5).passed
    res = sweep_prop1(60, seed=5)
    assert res.passed and res.detail["vacuous"] < 60


def test_run_all_rejects_bad_nu():
    with pytest.raises(MarginOutOfTheoryRange):
        run_all(nu=0.5)


def test_run_all_fixed_nu():
    results = run_all(seed=1, trials=2000, nu=1.2)
    assert [r.name for r in results] == ["lemma2", "thm4", "claim5", "prop1", "prop3"]
    assert all(r.passed for r in results)
