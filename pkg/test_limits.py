import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import enumerate_paths
from src.chain_core import conditioned_law, survival
from src.cv_certify import certify
from src.exceptions import AssumptionViolationError, ScheduleDegenerateError, ScheduleKindError, StartingInBoundaryError
from src.generators import CEMETERY, random_certified_chain
from src.limits import (
    beta_gamma,
    beta_infinity,
    qed_limit,
    qsd_fixed,
    quasi_ergodic,
    quasi_limiting,
    skeleton,
)
from src.models import AbsorbedChain, BoundarySchedule, Measure
from src.qprocess import build_qprocess

ALPHA_A = [4 / 7, 3 / 7, 0.0]


def two_periodic():
    """x survives at every clock, y only at odd clocks"""
    chain = AbsorbedChain.from_rows(
        ["x", "y", CEMETERY],
        [[0.4, 0.4, 0.2], [0.3, 0.6, 0.1], [0.0, 0.0, 1.0]],
    )
    return chain, BoundarySchedule.periodic(chain.space, [[CEMETERY, "y"], [CEMETERY]])


def test_qsd_chain_a(chain_a):
    chain, _ = chain_a
    triple = qsd_fixed(chain, [CEMETERY])
    np.testing.assert_allclose(triple.alpha.weights, ALPHA_A, atol=1e-13)
    np.testing.assert_allclose(triple.eta_inf, [1.0, 1.0, 0.0], atol=1e-13)
    assert triple.rho == pytest.approx(0.8)
    assert triple.lam == pytest.approx(-math.log(0.8))
    assert triple.reference_state == "a"
    assert max(triple.alpha_residual, triple.eta_residual) <= 1e-12


def test_qsd_single_state():
    chain = AbsorbedChain.from_rows(["x", CEMETERY], [[0.7, 0.3], [0.0, 1.0]])
    triple = qsd_fixed(chain, [CEMETERY])
    np.testing.assert_allclose(triple.alpha.weights, [1.0, 0.0])
    assert triple.rho == pytest.approx(0.7)


def test_qsd_rejects_full_boundary(chain_a):
    chain, _ = chain_a
    with pytest.raises(ScheduleDegenerateError):
        qsd_fixed(chain, ["a", "b", CEMETERY])


def test_beta_infinity_chain_a(chain_a):
    chain, _ = chain_a
    np.testing.assert_allclose(beta_infinity(chain, [CEMETERY]).weights, ALPHA_A, atol=1e-13)


def test_quasi_limiting_chain_a(chain_a):
    chain, schedule = chain_a
    report = quasi_limiting(chain, schedule, Measure.dirac(chain.space, "a"), 40, 1e-10)
    assert report.converged
    assert report.predicted
    np.testing.assert_allclose(report.predicted_value.weights, ALPHA_A, atol=1e-13)
    tracked = conditioned_law(chain, schedule, Measure.dirac(chain.space, "a"), 0, 40)
    np.testing.assert_allclose(report.value.weights, tracked.weights, atol=1e-13)
    np.testing.assert_allclose(report.value.weights, ALPHA_A, atol=1e-13)
    assert report.diagnostics[0] == (0, pytest.approx(3 / 7))
    assert report.diagnostics[1][1] == pytest.approx(0.125 * 3 / 7)


def test_quasi_limiting_converging(chain_c):
    chain, schedule = chain_c
    start = Measure.uniform(chain.space, schedule.survival_labels(0))
    report = quasi_limiting(chain, schedule, start, 60, 1e-9)
    assert report.converged
    np.testing.assert_allclose(report.predicted_value.weights, [0.5, 0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(report.value.weights, [0.5, 0.5, 0.0], atol=1e-9)
    assert report.independence_gap == pytest.approx(0.0, abs=1e-12)


def test_quasi_limiting_reports_the_tracked_law(chain_a):
    chain, schedule = chain_a
    start = Measure.dirac(chain.space, "b")
    report = quasi_limiting(chain, schedule, start, 2, 1e-10)
    assert not report.converged
    expected = conditioned_law(chain, schedule, start, 0, 2)
    np.testing.assert_allclose(report.value.weights, expected.weights, atol=1e-14)
    np.testing.assert_allclose(report.predicted_value.weights, ALPHA_A, atol=1e-13)
    document = report.to_document()
    assert document.value == pytest.approx(list(expected.weights))
    assert document.predicted_value == pytest.approx(ALPHA_A)


def test_quasi_limiting_periodic_has_no_limit():
    chain, schedule = two_periodic()
    report = quasi_limiting(chain, schedule, Measure.dirac(chain.space, "x"), 20, 1e-6)
    assert not report.predicted
    assert not report.converged
    assert report.diagnostics[-1][1] == pytest.approx(3 / 7)


def test_quasi_limiting_rejects_start_in_boundary(chain_c):
    chain, schedule = chain_c
    with pytest.raises(StartingInBoundaryError):
        quasi_limiting(chain, schedule, Measure.dirac(chain.space, "1"), 10, 1e-6)


def test_quasi_ergodic_small_horizons(chain_a):
    chain, schedule = chain_a
    start = Measure.dirac(chain.space, "a")
    assert quasi_ergodic(chain, schedule, start, 0) is start
    np.testing.assert_allclose(quasi_ergodic(chain, schedule, start, 1).weights, [0.8125, 0.1875, 0.0])


def test_quasi_ergodic_from_alpha_is_alpha(chain_a):
    chain, schedule = chain_a
    alpha = Measure(chain.space, np.array(ALPHA_A))
    np.testing.assert_allclose(quasi_ergodic(chain, schedule, alpha, 25).weights, ALPHA_A, atol=1e-12)


def test_quasi_ergodic_matches_path_enumeration(random_pair):
    chain, schedule = random_pair(17, n_live=3, kind="periodic")
    mu = Measure.uniform(chain.space, schedule.survival_labels(0))
    n = 4
    survivors = enumerate_paths(chain, schedule, mu.weights, 0, n).sum()
    expected = np.zeros(chain.space.size)
    for k in range(n + 1):
        reach = enumerate_paths(chain, schedule, mu.weights, 0, k)
        for index, weight in enumerate(reach):
            if weight > 0:
                start = np.zeros(chain.space.size)
                start[index] = 1.0
                expected[index] += weight * enumerate_paths(chain, schedule, start, k, n - k).sum()
    expected /= (n + 1) * survivors
    np.testing.assert_allclose(quasi_ergodic(chain, schedule, mu, n).weights, expected, atol=1e-12)


def test_quasi_ergodic_renews_on_two_periodic_chain():
    # every even clock resets the chain to x, odd clocks see (4/7, 3/7)
    chain, schedule = two_periodic()
    n = 2000
    law = quasi_ergodic(chain, schedule, Measure.dirac(chain.space, "x"), n)
    x_share = (1001 + 1000 * 4 / 7) / 2001
    np.testing.assert_allclose(law.weights, [x_share, 1 - x_share, 0.0], atol=1e-12)


def test_skeleton_constant_is_one_step(chain_a):
    chain, schedule = chain_a
    sk = skeleton(chain, schedule)
    assert sk.period == 1
    assert sk.survivors == ("a", "b")
    assert sk.survival("a", 3) == pytest.approx(0.8 ** 3)


def test_skeleton_two_periodic_matches_survival():
    chain, schedule = two_periodic()
    sk = skeleton(chain, schedule)
    assert sk.period == 2
    assert sk.survivors == ("x",)
    for n in range(5):
        assert sk.survival("x", n) == pytest.approx(survival(chain, schedule, "x", 0, 2 * n), abs=1e-15)
    assert sk.survival("x", 3) == pytest.approx(0.28 ** 3)


def test_skeleton_needs_period(chain_c):
    chain, schedule = chain_c
    with pytest.raises(ScheduleKindError):
        skeleton(chain, schedule)


def test_beta_gamma_chain_a(chain_a):
    chain, schedule = chain_a
    cert = certify(chain, schedule, t0_max=1)
    np.testing.assert_allclose(beta_gamma(chain, schedule, cert).weights, ALPHA_A, atol=1e-12)


def test_beta_gamma_two_periodic():
    chain, schedule = two_periodic()
    cert = certify(chain, schedule, t0_max=2)
    np.testing.assert_allclose(beta_gamma(chain, schedule, cert).weights, [1.0, 0.0, 0.0])
    with pytest.raises(AssumptionViolationError):
        beta_gamma(chain, schedule, replace(cert, t0=3))


def test_beta_gamma_rejects_converging(chain_c):
    chain, schedule = chain_c
    cert = certify(chain, schedule, t0_max=1)
    with pytest.raises(ScheduleKindError):
        beta_gamma(chain, schedule, cert)


def test_qed_limit_two_periodic():
    chain, schedule = two_periodic()
    cert = certify(chain, schedule, t0_max=2)
    qp = build_qprocess(chain, schedule, cert, 40)
    np.testing.assert_allclose(qed_limit(chain, schedule, cert, qp).weights, [11 / 14, 3 / 14, 0.0], atol=1e-12)


def test_qed_limit_converging_is_beta_infinity(chain_c):
    chain, schedule = chain_c
    cert = certify(chain, schedule, t0_max=1)
    qp = build_qprocess(chain, schedule, cert, 30)
    np.testing.assert_allclose(qed_limit(chain, schedule, cert, qp).weights, [0.5, 0.5, 0.0], atol=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["periodic", "converging"])
@pytest.mark.parametrize("seed_value", range(10))
def test_quasi_ergodic_approaches_prediction(kind, seed_value):
    rng = np.random.default_rng([31, seed_value])
    chain, schedule, cert = random_certified_chain(rng, 4, kind)
    qp = build_qprocess(chain, schedule, cert, 200)
    predicted = qed_limit(chain, schedule, cert, qp)
    start = Measure.uniform(chain.space, schedule.survival_labels(0))
    n = 2000 * schedule.effective_period if kind == "periodic" else 2000
    law = quasi_ergodic(chain, schedule, start, n)
    assert 0.5 * np.abs(law.weights - predicted.weights).sum() <= 0.01


@pytest.mark.slow
@pytest.mark.parametrize("seed_value", range(20))
def test_converging_quasi_limiting_forgets_its_start(seed_value):
    rng = np.random.default_rng([32, seed_value])
    chain, schedule, _ = random_certified_chain(rng, 4, "converging")
    start = Measure.uniform(chain.space, schedule.survival_labels(0))
    report = quasi_limiting(chain, schedule, start, 400, 1e-6)
    assert report.converged
    assert report.diagnostics[-1][1] <= 1e-6
    assert report.independence_gap <= 2e-6


@pytest.mark.slow
@pytest.mark.parametrize("seed_value", range(20))
def test_periodic_quasi_ergodic_distance_decreases(seed_value):
    rng = np.random.default_rng([33, seed_value])
    chain, schedule, cert = random_certified_chain(rng, 3, "periodic")
    qp = build_qprocess(chain, schedule, cert, 200)
    predicted = qed_limit(chain, schedule, cert, qp).weights
    start = Measure.uniform(chain.space, schedule.survival_labels(0))
    period = schedule.effective_period
    distances = [
        0.5 * np.abs(quasi_ergodic(chain, schedule, start, n * period).weights - predicted).sum()
        for n in (200, 2000)
    ]
    assert distances[1] <= 0.01
    assert distances[1] <= distances[0] + 1e-12
