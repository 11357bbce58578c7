import math

import numpy as np
import pytest
from scipy import integrate as sint

from slowfast_pm import ConfigurationError, DomainError
from slowfast_pm.measures import EmpiricalMeasure
from slowfast_pm.model import c_tau
from slowfast_pm.spm import (MProcessSpec, golden_section, h_tau, m_stationary_check, optimize_tau,
                             rho_closed_form_Z, rho_density, rho_moment, rho_normalizer, rho_sample,
                             write_curve_csv)


def test_h_tau_examples():
    assert abs(h_tau(0.0, 1.7, 30.0, 1.0) - 1.7 ** 2) < 1e-12
    tau = -math.log(0.5)
    assert abs(h_tau(0.5, 2.0, tau, 1.0) - 2.5) < 1e-12
    assert abs(h_tau(1.0, 1.0, 0.3 * math.log(2), 0.3) - 1.5) < 1e-14
    hs = h_tau(0.2, 0.8, np.geomspace(1e-3, 10, 50), 1.0)
    assert np.all(np.diff(hs) > 0)
    with pytest.raises(DomainError):
        h_tau(0.0, -1.0, 1.0, 1.0)


@pytest.mark.parametrize("sigma", [0.1, 0.3, 1.0])
def test_rho_normalizer_closed_form(sigma):
    Z = rho_normalizer(sigma)
    assert abs(Z / rho_closed_form_Z(sigma) - 1) < 1e-8
    ref = rho_normalizer(1 / math.sqrt(2))
    assert abs(Z / ((2 * sigma ** 2) ** 0.25 * ref) - 1) < 1e-8
    d = rho_density(sigma)
    tot, _ = sint.quad(d.pdf, -d.L, d.L, epsabs=0, epsrel=1e-13, limit=200)
    assert abs(tot - 1) < 1e-10
    m = np.linspace(0, d.L, 17)
    assert np.array_equal(d.pdf(m), d.pdf(-m))
    assert abs(d.cdf(0.0) - 0.5) < 1e-15


def test_rho_errors():
    with pytest.raises(DomainError):
        rho_normalizer(0.0)
    with pytest.raises(DomainError):
        rho_sample(0.0, 1, 10)


def test_rho_sampling():
    sigma = 0.3
    x = rho_sample(sigma, 7, 1_000_000)
    sd = math.sqrt(rho_moment(sigma, 2))
    assert abs(x.mean()) < 3 * sd / 1000
    m2 = x * x
    assert abs(m2.mean() - rho_moment(sigma, 2)) < 3 * m2.std() / 1000
    assert np.array_equal(x[:100], rho_sample(sigma, 7, 100))


def test_ou_stationary_moments():
    rep = m_stationary_check(MProcessSpec("ou", 0.1, 0.3), 2000.0, 1e-3, seed=3)
    assert rep[2]["target"] == 0.045
    assert rep[2]["ok"] and rep[4]["ok"]


def test_cubic_stationary_moments():
    rep = m_stationary_check(MProcessSpec("cubic", 0.1, 0.3), 2000.0, 1e-3, seed=4)
    assert abs(rep[2]["target"] - rho_moment(0.3, 2)) < 1e-15
    assert rep[2]["ok"] and rep[4]["ok"]


def test_m_zero_noise_decays():
    out = m_stationary_check(MProcessSpec("ou", 0.1, 0.0), 10.0, 1e-3, m0=1.0)
    assert out["max_abs"] < 1e-12
    with pytest.raises(ConfigurationError):
        MProcessSpec("quartic", 1.0, 1.0)


def test_golden_section():
    x, fx, _ = golden_section(lambda t: (t - 1.3) ** 2 + 2, -4, 9)
    assert abs(x - 1.3) < 1e-7 and abs(fx - 2) < 1e-12


def _synthetic(n=40_000, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.1, 2.0, n)
    m = rng.standard_normal(n) * 0.2
    z = 0.5 * r * r + m
    return EmpiricalMeasure(np.column_stack([r, z]), ("r", "z")), m, rng


def test_optimize_tau_synthetic_paired():
    eps = 0.2
    mu, m, _ = _synthetic()
    res = optimize_tau(mu, eps, paired_m=m)
    assert abs(res.tau_opt - eps * math.log(2)) < 1e-6
    assert res.q_opt <= res.grid_min + 1e-6
    assert abs(float(c_tau(res.tau_opt, eps)) - res.c_star) < 1e-3
    assert not res.fallback


def test_optimize_tau_product_measure(tmp_path):
    eps = 1.0
    mu, _, rng = _synthetic(seed=1)
    ms = rng.standard_normal(5000) * 0.2
    res = optimize_tau(mu, eps, m_samples=ms)
    assert abs(float(c_tau(res.tau_opt, eps)) - res.c_star) < 1e-3
    assert abs(res.c_star - 0.5) < 0.02
    assert res.q_opt <= np.min(res.curve[:, 2]) + 1e-6
    assert res.curve.shape == (200, 3)
    write_curve_csv(tmp_path / "c.csv", res.curve, "stamp")
    assert open(tmp_path / "c.csv").read().splitlines()[1] == "tau,c_tau,Q"


def test_optimize_tau_boundary_optimum():
    """c* above the attainable range: the optimum sits where c_tau saturates at 1."""
    eps = 0.1
    rng = np.random.default_rng(3)
    r = rng.uniform(0.5, 1.5, 5000)
    mu = EmpiricalMeasure(np.column_stack([r, 1.4 * r * r]), ("r", "z"))
    res = optimize_tau(mu, eps, m_samples=np.zeros(10))
    assert res.q_opt <= res.grid_min + 1e-6
    assert float(c_tau(res.tau_opt, eps)) > 1 - 1e-12
    with pytest.raises(ConfigurationError):
        optimize_tau(mu, eps)
