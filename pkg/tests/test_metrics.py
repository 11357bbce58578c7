import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowfast_pm import ConfigurationError
from slowfast_pm.errors import DegenerateMeasureError
from slowfast_pm.measures import EmpiricalMeasure
from slowfast_pm.metrics import (SLOW, DefectReport, Manifold, defect_l4, defect_normalized, defect_report,
                                 optimal_c, pm_sample_count, w1_distance, w1_with_error, write_defect_csv)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
cloud = st.lists(finite, min_size=1, max_size=12)

# explicitly coded 1-Lipschitz functions vanishing at 0
BATTERY = [
    lambda x: x, lambda x: -x, np.abs, lambda x: np.minimum(np.abs(x), 1.0),
    lambda x: np.sin(x), lambda x: np.clip(x, -0.5, 2.0), lambda x: np.maximum(x - 1, 0),
    lambda x: np.abs(x - 1) - 1, lambda x: 0.5 * np.abs(x + 3) - 1.5, lambda x: np.tanh(x),
]


def test_w1_examples():
    assert w1_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0
    assert w1_distance([0.0], [1.0]) == 1
    assert w1_distance([1.0, 2.0, 3.0], [2.0, 3.0, 4.0]) == 1
    with pytest.raises(ConfigurationError):
        w1_distance([], [1.0])


def _assignment_oracle(a, b):
    return min(np.mean(np.abs(np.array(a) - np.array(p))) for p in itertools.permutations(b))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(st.lists(finite, min_size=n, max_size=n),
                                                      st.lists(finite, min_size=n, max_size=n))))
def test_w1_equals_exhaustive_assignment(ab):
    a, b = ab
    assert abs(w1_distance(a, b) - _assignment_oracle(a, b)) < 1e-9


@settings(max_examples=1000, deadline=None)
@given(cloud, cloud, cloud)
def test_w1_metric_axioms(a, b, c):
    dab, dba = w1_distance(a, b), w1_distance(b, a)
    assert dab == dba
    assert w1_distance(a, a) == 0
    assert dab >= 0
    assert w1_distance(a, c) <= dab + w1_distance(b, c) + 1e-12 * (1 + dab)


@settings(max_examples=1000, deadline=None)
@given(cloud, cloud)
def test_lipschitz_battery_below_w1(a, b):
    d = w1_distance(a, b)
    x, y = np.array(a), np.array(b)
    for phi in BATTERY:
        assert abs(phi(np.zeros(1))[0]) < 1e-15
        assert abs(phi(x).mean() - phi(y).mean()) <= d + 1e-12


@settings(max_examples=100, deadline=None)
@given(cloud, cloud, st.randoms(use_true_random=False))
def test_w1_permutation_invariant(a, b, rnd):
    a2, b2 = list(a), list(b)
    rnd.shuffle(a2)
    rnd.shuffle(b2)
    assert w1_distance(a, b) == w1_distance(a2, b2)


def test_unequal_sizes_use_cdfs():
    assert math.isclose(w1_distance([0.0, 1.0], [0.0, 0.0, 1.0]), 1 / 6)
    a = np.random.default_rng(0).standard_normal(400)
    d, se = w1_with_error(a, a + 0.3)
    assert math.isclose(d, 0.3) and se >= 0


def _cloud(n=5000, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.2, 2.0, n)
    return r, rng


def test_slow_defect_vanishes_on_manifold():
    r, _ = _cloud()
    mu = EmpiricalMeasure(np.column_stack([r, r * r]), ("r", "z"))
    rep = defect_normalized(mu, SLOW)
    assert rep.q_normalized == 0 and rep.l4_defect == 0
    assert defect_l4(mu)[0] == 0


def test_degenerate_denominator():
    mu = EmpiricalMeasure(np.column_stack([np.ones(10), np.zeros(10)]), ("r", "z"))
    with pytest.raises(DegenerateMeasureError):
        defect_normalized(mu)


def test_pm_needs_m():
    r, _ = _cloud(100)
    mu = EmpiricalMeasure(np.column_stack([r, r * r]), ("r", "z"))
    with pytest.raises(ConfigurationError):
        defect_report(mu, Manifold.pm(1.0, 1.0))


def test_product_average_matches_explicit_double_sum():
    r, rng = _cloud(300)
    z = 0.7 * r * r + 0.2 * rng.standard_normal(r.size)
    m = rng.standard_normal(40) * 0.3 + 0.05
    mu = EmpiricalMeasure(np.column_stack([r, z]), ("r", "z"))
    man = Manifold.pm(0.5, 0.4)
    rep = defect_report(mu, man, m_samples=m)
    d = z[:, None] - m[None, :] - man.c * (r * r)[:, None]
    assert math.isclose(rep.q_normalized, np.mean(d * d) / np.mean(z * z), rel_tol=1e-10)
    assert math.isclose(rep.l4_defect, np.mean(d ** 4) ** 0.25, rel_tol=1e-10)
    assert rep.l2_defect <= rep.l4_defect


def test_optimal_c_closed_form():
    r, rng = _cloud(20_000, 1)
    m = rng.standard_normal(r.size) * 0.1
    z = 0.5 * r * r + m
    mu = EmpiricalMeasure(np.column_stack([r, z]), ("r", "z"))
    c = optimal_c(mu, paired_m=m)
    assert abs(c - 0.5) < 1e-12
    assert abs(optimal_c(mu, m_samples=rng.standard_normal(5000) * 0.1) - 0.5) < 0.01


def test_jensen_on_reports():
    r, rng = _cloud(2000, 4)
    z = r * r + rng.standard_normal(r.size) * 0.3
    rep = defect_report(EmpiricalMeasure(np.column_stack([r, z]), ("r", "z")))
    assert rep.l2_defect <= rep.l4_defect
    assert rep.q_normalized >= 0 and rep.standard_error > 0


def test_manifold_ids_and_counts():
    assert SLOW.manifold_id == "slow" and SLOW.c == 1.0
    assert Manifold.pm(0.5, 1.0).manifold_id.startswith("pm_tau(")
    assert Manifold.pm(0.5, 1.0, "ou").manifold_id.startswith("pm_ou(")
    assert pm_sample_count(100) == 1000 and pm_sample_count(10**6) == 10**5


def test_defect_csv(tmp_path):
    rep = DefectReport(0.1, 0.2, "slow", 10, 0.01)
    write_defect_csv(tmp_path / "d.csv", [("I", rep)], "stamp")
    lines = open(tmp_path / "d.csv").read().splitlines()
    assert lines[0] == "# stamp"
    assert lines[1] == "case_id,manifold_id,tau,Q,l4,stderr,n"
    assert lines[2].startswith("I,slow,,0.1,0.2,")
