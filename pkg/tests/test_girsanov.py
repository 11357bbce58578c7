import math

import numpy as np
import pytest

from slowfast_pm import ConfigurationError, ModelParams, SystemSpec
from slowfast_pm.engine import NoisePlan, brownian_increments, integrate_coupled
from slowfast_pm.errors import UnreliableWeightsError
from slowfast_pm.girsanov import (envelope_series, ess, gronwall_envelope_check, log_exponential,
                                  lyapunov_constant_a, lyapunov_grid_check, transition_preservation_check,
                                  weighted_w1, write_girsanov_csv)

P3 = ModelParams(10.0, 1.0, 50.0, 1e-2, 0.1)
MILD = ModelParams(1.0, 1.0, 1.0, 0.1, 0.5)


def test_log_exponential_zero_and_prefix():
    dW = np.random.default_rng(0).standard_normal(50) * 0.1
    assert np.all(log_exponential(np.zeros(50), dW, 0.01) == 0)
    g = np.random.default_rng(1).standard_normal(50)
    a = log_exponential(g, dW, 0.01)
    dW2 = dW.copy()
    dW2[30:] = dW2[30:][::-1]
    b = log_exponential(g, dW2, 0.01)
    assert np.array_equal(a[:31], b[:31])


def test_constant_coupling_lognormal_mean():
    a, T, n, steps = 0.5, 1.0, 100_000, 50
    dt = T / steps
    W = brownian_increments(NoisePlan(5, 0, steps, dt), n)   # one row per path
    ld = -a * W.sum(1) - 0.5 * a * a * T
    ld2 = np.array([log_exponential(np.full(steps, a), w, dt)[-1] for w in W[:200]])
    assert np.allclose(ld2, ld[:200], atol=1e-12)
    D = np.exp(ld)
    tol = 3 * math.sqrt(math.exp(a * a * T) - 1) / math.sqrt(n)
    assert abs(D.mean() - 1) <= tol


def test_ess_and_weighted_w1():
    assert ess(np.ones(10)) == 10
    assert math.isclose(ess([1.0, 0, 0, 0]), 1.0)
    a = np.array([0.0, 1.0, 2.0])
    assert weighted_w1(a, np.ones(3), a) == 0
    assert math.isclose(weighted_w1(a, [1, 0, 0], [1.0]), 1.0)


def test_non_anticipative_prefix():
    red, tr = SystemSpec("reduced_polar", P3), SystemSpec("transformed_polar", P3)
    ini = ((0.45, 0.0), (0.45, 0.0, 0.2))
    a = integrate_coupled(red, tr, ini, 0.02, 1e-4, NoisePlan(1, 0, 3, 1e-4))[1].extras["log_D"]
    b = integrate_coupled(red, tr, ini, 0.04, 1e-4, NoisePlan(1, 0, 3, 1e-4))[1].extras["log_D"]
    assert np.array_equal(a, b[:a.size])


def test_transition_preservation_mild_regime(tmp_path):
    rep = transition_preservation_check(MILD, 0.5, 4000, seed=3)
    assert rep.ess > 100 and rep.passed
    assert abs(rep.mean_D - 1) <= 3 * rep.mean_D_stderr
    assert set(rep.observables) == {"identity", "clip_r_star", "square", "tail_indicator"}
    write_girsanov_csv(tmp_path / "g.csv", [rep])
    assert len(open(tmp_path / "g.csv").read().splitlines()) == 5


def test_transition_preservation_short_horizon_limit():
    r0 = 0.6
    rep = transition_preservation_check(MILD, 1e-6, 200, dt=1e-8, seed=1, r0=r0)
    assert abs(rep.observables["identity"]["plain"] - r0) < 1e-3
    assert abs(rep.observables["identity"]["weighted"] - r0) < 1e-3
    assert abs(rep.mean_D - 1) < 1e-3


def test_zero_coupling_hook_gives_unit_weights():
    rep = transition_preservation_check(MILD, 0.2, 500, seed=2, coupling_scale=0.0)
    assert rep.mean_D == 1.0 and rep.mean_D_stderr == 0.0 and rep.ess == 500


def test_degenerate_weights_raise():
    with pytest.raises(UnreliableWeightsError) as ei:
        transition_preservation_check(P3.with_(epsilon=0.1), 1.0, 200, seed=1)
    assert ei.value.report is not None and ei.value.ess < 100
    with pytest.raises(ConfigurationError):
        transition_preservation_check(P3, 0.1, 10, variant="stochastic_pm")


def test_envelope_series_hooks():
    t = np.linspace(0, 1, 11)
    assert np.all(envelope_series(t, 0.0, np.zeros(11), 3.0) == 0)
    e = envelope_series(t, 0.25, np.ones(11), 2.0)
    assert e[0] == 0.25
    exact = 0.25 * np.exp(-2 * t) + (1 - np.exp(-2 * t)) / 2
    assert np.allclose(e, exact, rtol=1e-13)


def test_gronwall_envelope_mild():
    off = gronwall_envelope_check(MILD, 0.05, 50, seed=4, r0=0.9, r0_tilde=0.7, raise_on_degenerate=False)
    assert off.rhs[0] == (0.9 - 0.7) ** 2 and off.rhs_plain[0] == (0.9 - 0.7) ** 2
    assert off.pathwise_violations == 0
    chk = gronwall_envelope_check(MILD, 0.5, 400, seed=4)
    assert chk.rhs[0] == 0 and chk.ess.min() >= 100
    assert chk.violations == 0 and chk.violations_plain == 0 and chk.pathwise_violations == 0
    assert np.all(chk.lhs <= chk.rhs + 3 * np.hypot(chk.stderr_lhs, chk.stderr_rhs))


def test_gronwall_envelope_stochastic_pm():
    p = MILD.with_(tau=0.05)
    chk = gronwall_envelope_check(p, 0.3, 300, variant="stochastic_pm", seed=5, m_env=0.0)
    assert chk.pathwise_violations == 0 and chk.violations == 0


# ---------------------------------------------------------------- Lyapunov oracles

def _lv_polar(p, r, z):
    e, g, s = p.epsilon, p.gamma, p.sigma
    pp = (1 + 2 * p.lam) / (2 * g)
    LV = -r * r / (g * e) - 2 / e * (z * z - pp * z) + p.f + 2 * s * s / (g * e) + s * s / e
    return LV, r * r / (g * e) + (z - pp) ** 2 + 1


def _ratio_grid_polar(p, r, th, z):
    R, TH, Z = np.meshgrid(r, th, z, indexing="ij")
    LV, V0 = _lv_polar(p, R, Z)
    return LV / (V0 + TH)


def test_lyapunov_polar_oracle_case_iii():
    grid = dict(r=np.linspace(0.01, 3, 61), theta=np.linspace(0, 6.2, 5), z=np.linspace(-2, 4, 61))
    rep = lyapunov_grid_check("V_polar", P3, grid)
    oracle = _ratio_grid_polar(P3, grid["r"], grid["theta"], grid["z"])
    assert abs(rep.max_ratio - oracle.max()) < 1e-9 * max(1, abs(oracle.max()))
    assert rep.max_ratio <= lyapunov_constant_a(P3) + 1e-9
    pts = rep.points
    LVo, V0 = _lv_polar(P3, pts[:, 0], pts[:, 2])
    assert np.max(np.abs(rep.LV - LVo) / np.maximum(1, np.abs(LVo))) < 1e-9
    assert np.max(np.abs(rep.V - (V0 + pts[:, 1]))) < 1e-9


def test_lyapunov_cartesian_oracle():
    p = ModelParams(1e-3, 10.0, 1.0, 1e-2, 0.2)
    x = np.linspace(-2, 2, 21)
    zg = np.linspace(-1, 3, 21)
    rep = lyapunov_grid_check("V_cartesian", p, dict(x=x, y=x, z=zg))
    X, Y, Z = (rep.points[:, i] for i in range(3))
    rho = X * X + Y * Y
    k = math.sqrt(p.gamma / p.epsilon)
    LV = 2 * p.lam * rho - 2 * p.gamma * rho * Z - 2 * k * (Z * Z - rho * Z) + 2 * p.sigma ** 2 + p.sigma ** 2 * k
    V = rho + math.sqrt(p.epsilon * p.gamma) * Z * Z + 1
    assert np.max(np.abs(rep.LV - LV) / np.maximum(1, np.abs(LV))) < 1e-9
    assert abs(rep.max_ratio - np.max(LV / V)) < 1e-9


def test_lyapunov_aug_oracle():
    p = ModelParams(1e-3, 10.0, 1.0, 10.0, 0.3)
    grid = dict(r=np.linspace(0.05, 2, 15), z=np.linspace(-1, 3, 15), m=np.linspace(-1.5, 1.5, 15))
    rep = lyapunov_grid_check("V_polar_aug", p, grid)
    r, z, m = rep.points[:, 0], rep.points[:, 2], rep.points[:, 3]
    LV0, V0 = _lv_polar(p, r, z)
    LV = LV0 - 2 * m ** 4 / p.epsilon + p.sigma ** 2 / p.epsilon
    assert np.max(np.abs(rep.LV - LV) / np.maximum(1, np.abs(LV))) < 1e-9
    assert abs(rep.max_ratio - np.max(LV / (V0 + m * m))) < 1e-9


def test_lyapunov_domain_and_monotone_box():
    grid = dict(r=np.array([0.0, 1e-8, 0.5]), z=np.array([(1 + 2 * P3.lam) / (2 * P3.gamma)]))
    rep = lyapunov_grid_check("V_polar", P3, grid)
    assert rep.skipped == 1 and rep.n_points == 2 and math.isfinite(rep.max_ratio)
    small = lyapunov_grid_check("V_polar", P3, dict(r=np.linspace(0.01, 1.5, 31), z=np.linspace(-1, 2, 31)))
    big = lyapunov_grid_check("V_polar", P3, dict(r=np.linspace(0.01, 3, 61), z=np.linspace(-2, 4, 61)))
    assert big.max_ratio >= small.max_ratio
    with pytest.raises(ConfigurationError):
        lyapunov_grid_check("V_other", P3, grid)
