import numpy as np
import pytest

from src.convergence_lab import (
    RECORD_HEADER,
    BoundCheckRecord,
    bound_suite,
    c_constant,
    check_qed_averaging,
    check_qprocess_convergence,
    cs_ratio,
    gap_is_monotone,
    merging_check,
    qed_averaging_bound,
    rate_decay_check,
    theorem1_bound,
    tv,
    uniform_gap,
)
from src.cv_certify import certify, d_table
from src.exceptions import ScheduleKindError, ShapeError, StartingInBoundaryError
from src.generators import random_certified_chain
from src.models import Measure
from src.qprocess import build_qprocess

PREFACTOR_A = 1 / (0.875 ** 3 * 0.8)


@pytest.fixture
def certified_a(chain_a):
    chain, schedule = chain_a
    cert = certify(chain, schedule, t0_max=1)
    return chain, schedule, cert


def test_convergence_bound_chain_a(certified_a):
    chain, schedule, cert = certified_a
    assert theorem1_bound(cert, chain, schedule, "a", 0, 2, 0) == pytest.approx(PREFACTOR_A)
    assert theorem1_bound(cert, chain, schedule, "a", 0, 2, 3) == pytest.approx(PREFACTOR_A * 0.125 ** 3)
    assert theorem1_bound(cert, chain, schedule, "b", 5, 4, 3) == pytest.approx(0.0036443, rel=1e-4)


def test_qprocess_convergence_records_chain_a(certified_a):
    chain, schedule, cert = certified_a
    qp = build_qprocess(chain, schedule, cert, 60)
    records = check_qprocess_convergence(cert, chain, schedule, qp, "a", 0, 3, range(5), seed=9)
    assert [record.T for record in records] == [0, 1, 2, 3, 4]
    for record in records:
        assert record.lhs == pytest.approx(0.0, abs=1e-12)
        assert record.passed
        assert record.seed == 9
    assert records[0].as_row()[:5] == [9, 0, 3, 0, "a"]
    assert len(records[0].as_row()) == len(RECORD_HEADER)


def test_merging_chain_a(certified_a):
    chain, schedule, cert = certified_a
    dc = d_table(chain, schedule, cert.t0, horizon=cert.horizon_used)
    pairs = [(Measure.dirac(chain.space, "a"), Measure.dirac(chain.space, "b"))]
    (record,) = merging_check(chain, schedule, dc, 0, 2, pairs)
    assert record.lhs == pytest.approx(0.015625)
    assert record.rhs == pytest.approx(0.03125)
    assert record.passed


def test_failing_record_is_reported():
    record = BoundCheckRecord(s=0, t=1, T=2, x="a", lhs=0.5, rhs=0.25, constant_used=1.0)
    assert record.margin == pytest.approx(-0.25)
    assert not record.passed
    assert BoundCheckRecord(s=0, t=1, T=2, x="a", lhs=0.25 + 1e-12, rhs=0.25, constant_used=1.0).passed


def test_cs_ratio_and_c_constant(certified_a):
    chain, schedule, cert = certified_a
    assert cs_ratio(chain, schedule, cert, "a", 30) == pytest.approx(1.0)
    dc = d_table(chain, schedule, cert.t0, horizon=cert.horizon_used)
    pi = Measure.dirac(chain.space, "a")
    assert c_constant(chain, schedule, cert, dc, 0, pi) == pytest.approx(1 / 0.875 ** 2)


def test_cs_ratio_rejects_absorbed_start(chain_c):
    chain, schedule = chain_c
    cert = certify(chain, schedule, t0_max=1)
    with pytest.raises(StartingInBoundaryError):
        cs_ratio(chain, schedule, cert, "1", 10)


def test_qed_averaging_chain_a(certified_a):
    chain, schedule, cert = certified_a
    qp = build_qprocess(chain, schedule, cert, 80)
    records = check_qed_averaging(cert, chain, schedule, qp, "b", [1, 4, 16])
    for record in records:
        assert record.lhs == pytest.approx(0.0, abs=1e-12)
        assert record.rhs == pytest.approx(qed_averaging_bound(cert, chain, schedule, "b", record.T))
        assert record.passed


@pytest.mark.parametrize("kind", ["constant", "periodic", "converging"])
@pytest.mark.parametrize("seed_value", range(4))
def test_qed_averaging_bound_holds(kind, seed_value):
    rng = np.random.default_rng([41, seed_value])
    chain, schedule, cert = random_certified_chain(rng, 3, kind)
    qp = build_qprocess(chain, schedule, cert, 300)
    for x in schedule.survival_labels(0):
        records = check_qed_averaging(cert, chain, schedule, qp, x, [1, 5, 20], seed=seed_value)
        assert all(record.passed for record in records)


def _records(values):
    return [BoundCheckRecord(s=0, t=0, T=T, x="a", lhs=lhs, rhs=1.0, constant_used=1.0) for T, lhs in values]


def test_rate_decay_check(certified_a):
    _, _, cert = certified_a
    fast = rate_decay_check(_records([(T, 0.1 ** T) for T in range(7)]), cert)
    assert fast.passed
    assert [T for T, _ in fast.ratios] == [2, 3, 4, 5]
    assert fast.ratios[0][1] == pytest.approx(0.1)
    assert not rate_decay_check(_records([(T, 0.2 ** T) for T in range(7)]), cert).passed
    skipped = rate_decay_check(_records([(T, 0.0) for T in range(7)]), cert)
    assert skipped.passed and skipped.ratios == []


def test_uniform_gap_chain_c(chain_c):
    chain, schedule = chain_c
    gaps = uniform_gap(chain, schedule, "2", range(5), window=4)
    assert gaps[0] == pytest.approx(0.46875)
    assert gaps[1] == pytest.approx(0.375)
    for s in (2, 3, 4):
        assert gaps[s] == pytest.approx(0.0, abs=1e-12)
    assert gap_is_monotone(gaps)
    assert not gap_is_monotone({0: 0.1, 1: 0.3})


def test_uniform_gap_vanishes_for_constant_boundary(chain_a):
    chain, schedule = chain_a
    gaps = uniform_gap(chain, schedule, "a", range(3), window=3)
    assert max(gaps.values()) == pytest.approx(0.0, abs=1e-12)


def test_uniform_gap_rejects_periodic(random_pair):
    chain, schedule = random_pair(5, kind="periodic")
    with pytest.raises(ScheduleKindError):
        uniform_gap(chain, schedule, "s0", range(2), window=2)


def test_small_bound_suite_is_thread_independent():
    options = dict(base_seed=3, n_live=3, kind="constant", s_max=1, t_max=2, T_max=3, eta_margin=200)
    one = bound_suite([0, 1], threads=1, **options)
    two = bound_suite([0, 1], threads=2, **options)
    assert one.failures == 0
    assert [outcome.seed for outcome in two.outcomes] == [0, 1]
    assert [record.as_row() for record in one.records] == [record.as_row() for record in two.records]
    assert len(one.merging) > 0


@pytest.mark.slow
def test_bound_suite_constant_boundaries():
    result = bound_suite(range(200), base_seed=101, kind="constant", threads=4)
    assert result.failures == 0


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["periodic", "converging"])
def test_bound_suite_moving_boundaries(kind):
    result = bound_suite(range(50), base_seed=202, kind=kind, threads=4)
    assert result.failures == 0


@pytest.mark.parametrize("seed_value", range(10))
def test_uniform_gap_on_random_converging_schedules(seed_value):
    rng = np.random.default_rng([42, seed_value])
    chain, schedule, _ = random_certified_chain(rng, 3, "converging")
    x = schedule.survival_labels(0)[0]
    gaps = uniform_gap(chain, schedule, x, range(schedule.stabilization_time + 3), window=5)
    assert gap_is_monotone(gaps)
    for s in range(schedule.stabilization_time, schedule.stabilization_time + 3):
        assert gaps[s] <= 1e-10


def test_tv_between_measures(chain_a, chain_c):
    space = chain_a[0].space
    assert tv(Measure.dirac(space, "a"), Measure.dirac(space, "b")) == pytest.approx(1.0)
    assert tv(Measure.dirac(space, "a"), Measure.uniform(space, ["a", "b"])) == pytest.approx(0.5)
    with pytest.raises(ShapeError):
        tv(Measure.dirac(space, "a"), Measure.dirac(chain_c[0].space, "1"))
