import numpy as np
import pytest

from conftest import enumerate_paths
from src.chain_core import conditioned_law, survival
from src.cv_certify import (
    DCoefficients,
    candidate_t0s,
    certify,
    certify_limit,
    d_coefficients,
    d_table,
    harnack_constant,
    minorize,
    pair_minimum_measure,
)
from src.exceptions import ScheduleKindError, WindowError
from src.generators import CEMETERY, random_certified_chain, random_chain, random_schedule
from src.models import AbsorbedChain, BoundarySchedule, Measure, ScheduleKind

NU_A = np.array([4 / 7, 3 / 7, 0.0])


def test_minorize_chain_a(chain_a):
    chain, schedule = chain_a
    minor = minorize(chain, schedule, 0, 1)
    assert minor.c1 == pytest.approx(0.875)
    np.testing.assert_allclose(minor.nu.weights, NU_A)


def test_minorize_identical_rows():
    chain = AbsorbedChain.from_rows(
        ["x", "y", CEMETERY],
        [[0.3, 0.5, 0.2], [0.3, 0.5, 0.2], [0.0, 0.0, 1.0]],
    )
    schedule = BoundarySchedule.constant(chain.space, [CEMETERY])
    minor = minorize(chain, schedule, 0, 1)
    assert minor.c1 == pytest.approx(1.0)
    np.testing.assert_allclose(minor.nu.weights, [0.375, 0.625, 0.0])


def separated_chain():
    chain = AbsorbedChain.from_rows(
        ["x", "y", CEMETERY],
        [[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]],
    )
    return chain, BoundarySchedule.constant(chain.space, [CEMETERY])


def test_minorize_disjoint_supports():
    chain, schedule = separated_chain()
    minor = minorize(chain, schedule, 0, 1)
    assert minor.c1 == 0.0
    assert minor.nu is None


def test_reducible_chain_has_no_certificate():
    chain, schedule = separated_chain()
    assert not certify(chain, schedule, t0_max=3).valid


def test_harnack_chain_a(chain_a):
    chain, schedule = chain_a
    nu = Measure(chain.space, NU_A)
    assert harnack_constant(chain, schedule, nu, 0, 50).value == pytest.approx(1.0)
    assert harnack_constant(chain, schedule, Measure.dirac(chain.space, "b"), 0, 0).value == 1.0


def test_pair_minimum_measure_chain_a(chain_a):
    chain, schedule = chain_a
    pair = pair_minimum_measure(chain, schedule, 0, 1, "a", "b")
    np.testing.assert_allclose(pair.weights, [0.5, 0.375, 0.0])
    assert pair.mass == pytest.approx(0.875)
    same = pair_minimum_measure(chain, schedule, 0, 1, "a", "a")
    np.testing.assert_allclose(same.weights, [0.625, 0.375, 0.0])
    every = pair_minimum_measure(chain, schedule, 0, 1)
    np.testing.assert_allclose(every.weights, pair.weights)


def test_d_coefficients_chain_a(chain_a):
    chain, schedule = chain_a
    d, d_prime = d_coefficients(chain, schedule, 1, 1, 50)
    assert d == pytest.approx(0.875)
    assert d_prime == pytest.approx(0.875)
    with pytest.raises(WindowError):
        d_coefficients(chain, schedule, 0, 1, 50)


def test_d_coefficients_vanish_without_minorization():
    chain, schedule = separated_chain()
    assert d_coefficients(chain, schedule, 1, 1, 20)[1] == 0.0


def test_certify_chain_a(chain_a):
    chain, schedule = chain_a
    cert = certify(chain, schedule, t0_max=1)
    assert cert.valid
    assert cert.t0 == 1
    assert cert.c1 == pytest.approx(0.875)
    assert cert.c2 == pytest.approx(1.0)
    np.testing.assert_allclose(cert.nu_at(17).weights, NU_A)


def test_certify_criteria_on_chain_a(chain_a):
    # 1 - c1 = 0.125^t0 on this chain, so every t0 contracts at the same rate
    chain, schedule = chain_a
    by_product = certify(chain, schedule, t0_max=3)
    assert by_product.t0 == 3
    assert by_product.c1 == pytest.approx(1 - 0.125 ** 3)
    assert certify(chain, schedule, t0_max=3, criterion="rate").t0 == 1


def test_certify_is_thread_independent(chain_c):
    chain, schedule = chain_c
    one = certify(chain, schedule, t0_max=3, threads=1)
    many = certify(chain, schedule, t0_max=3, threads=3)
    assert one.to_document() == many.to_document()


def test_certify_chain_c(chain_c):
    chain, schedule = chain_c
    cert = certify(chain, schedule, t0_max=1)
    assert cert.valid
    assert cert.c1 == pytest.approx(0.75)
    assert cert.c2 == pytest.approx(1.0)
    assert cert.nu_at(0).weights[chain.space.index("2")] == 1.0


def test_certify_limit_uses_limit_set(chain_c):
    chain, schedule = chain_c
    cert = certify_limit(chain, schedule, t0_max=1)
    assert cert.kind == ScheduleKind.CONSTANT
    assert cert.c1 == pytest.approx(0.75)


def test_certify_limit_rejects_periodic():
    chain = AbsorbedChain.from_rows(
        ["x", "y", CEMETERY],
        [[0.4, 0.4, 0.2], [0.3, 0.6, 0.1], [0.0, 0.0, 1.0]],
    )
    schedule = BoundarySchedule.periodic(chain.space, [[CEMETERY, "y"], [CEMETERY]])
    with pytest.raises(ScheduleKindError):
        certify_limit(chain, schedule, t0_max=2)


def test_periodic_t0_is_a_multiple_of_the_period():
    chain = AbsorbedChain.from_rows(
        ["x", "y", CEMETERY],
        [[0.4, 0.4, 0.2], [0.3, 0.6, 0.1], [0.0, 0.0, 1.0]],
    )
    schedule = BoundarySchedule.periodic(chain.space, [[CEMETERY, "y"], [CEMETERY]])
    assert candidate_t0s(schedule, 5) == [2, 4]
    assert candidate_t0s(schedule, 1) == [2]
    cert = certify(chain, schedule, t0_max=5)
    assert cert.t0 % 2 == 0


def test_d_table_periodic_lookup():
    chain = AbsorbedChain.from_rows(
        ["x", "y", CEMETERY],
        [[0.4, 0.4, 0.2], [0.3, 0.6, 0.1], [0.0, 0.0, 1.0]],
    )
    schedule = BoundarySchedule.periodic(chain.space, [[CEMETERY, "y"], [CEMETERY]])
    dc = d_table(chain, schedule, 2, horizon=40)
    assert sorted(dc.table) == [2, 3]
    assert dc.at(7) == dc.table[3]
    assert dc.at(6) == dc.table[2]
    with pytest.raises(WindowError):
        dc.at(1)


def test_d_coefficients_lookup_for_converging_schedule():
    dc = DCoefficients(t0=1, table={1: (0.1, 0.1), 2: (0.5, 0.4)}, horizon_used=10,
                       kind=ScheduleKind.CONVERGING, stabilization_time=1)
    assert dc.at(40) == (0.5, 0.4)


@pytest.mark.parametrize("seed_value", range(50))
def test_certificate_matches_path_enumeration(seed_value):
    rng = np.random.default_rng(5000 + seed_value)
    chain = random_chain(rng, int(rng.integers(2, 5)))
    schedule = random_schedule(rng, chain.space, ("constant", "periodic", "converging")[seed_value % 3])
    t0 = schedule.period or 1
    for s in schedule.representative_times():
        labels = schedule.survival_labels(s)
        rows = []
        for x in labels:
            law = enumerate_paths(chain, schedule, Measure.dirac(chain.space, x).weights, s, t0)
            rows.append(law / law.sum())
        expected = np.min(rows, axis=0)
        np.testing.assert_allclose(pair_minimum_measure(chain, schedule, s, t0).weights, expected, atol=1e-12)
        minor = minorize(chain, schedule, s, t0)
        assert minor.c1 == pytest.approx(min(1.0, expected.sum()), abs=1e-12)


@pytest.mark.parametrize("kind", ["constant", "periodic", "converging"])
@pytest.mark.parametrize("seed_value", range(8))
def test_certificate_witnesses_hold(kind, seed_value):
    rng = np.random.default_rng([11, seed_value])
    chain, schedule, cert = random_certified_chain(rng, 3, kind)
    for s in schedule.representative_times():
        nu = cert.nu_at(s + cert.t0)
        for x in schedule.survival_labels(s):
            law = conditioned_law(chain, schedule, Measure.dirac(chain.space, x), s, cert.t0)
            assert np.all(law.weights - cert.c1 * nu.weights >= -1e-12)
    for s in schedule.representative_times():
        nu = cert.nu_at(s)
        for t in range(0, 30, 3):
            best = max(survival(chain, schedule, x, s, t) for x in schedule.survival_labels(s))
            start = sum(nu[x] * survival(chain, schedule, x, s, t) for x in schedule.survival_labels(s))
            assert start >= cert.c2 * best - 1e-12
