"""Stochastic parameterizing manifolds h_tau, the M-process and its density rho."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import integrate as sint
from scipy import special

from .engine import NoisePlan, n_steps_for
from .errors import ConfigurationError, DomainError
from .measures import batch_means
from .metrics import DefectReport, Manifold, defect_report, _rz
from .model import c_tau, tau_from_c

GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def h_tau(m, r, tau, epsilon):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(~(np.asarray(tau) > 0)):
        raise DomainError("h_tau needs r >= 0 and tau > 0")
    return np.asarray(m, dtype=float) + c_tau(tau, epsilon) * r * r


@dataclass(frozen=True)
class MProcessSpec:
    kind: str
    epsilon: float
    sigma: float

    def __post_init__(self):
        if self.kind not in ("cubic", "ou"):
            raise ConfigurationError(f"unknown M-process kind {self.kind!r}")


@dataclass(frozen=True)
class RhoDensity:
    sigma: float
    Z: float
    L: float

    def pdf(self, m):
        m = np.asarray(m, dtype=float)
        return np.exp(-m ** 4 / (2 * self.sigma ** 2)) / self.Z

    def cdf(self, m):
        m = np.asarray(m, dtype=float)
        return 0.5 + 0.5 * np.sign(m) * special.gammainc(0.25, m ** 4 / (2 * self.sigma ** 2))


def _support(sigma):
    return (80.0 * sigma * sigma) ** 0.25


def rho_normalizer(sigma) -> float:
    """Z = int exp(-m^4 / (2 sigma^2)) dm by adaptive quadrature on [-L, L]."""
    if not sigma > 0:
        raise DomainError("rho needs sigma > 0")
    L = _support(sigma)
    v, _ = sint.quad(lambda m: math.exp(-m ** 4 / (2 * sigma * sigma)), 0.0, L,
                     epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * v


def rho_closed_form_Z(sigma):
    return 2.0 * (2.0 * sigma * sigma) ** 0.25 * math.gamma(1.25)


def rho_density(sigma) -> RhoDensity:
    return RhoDensity(sigma, rho_normalizer(sigma), _support(sigma))


def rho_moment(sigma, p) -> float:
    """int |m|^p rho(dm) by quadrature."""
    L = _support(sigma)
    v, _ = sint.quad(lambda m: m ** p * math.exp(-m ** 4 / (2 * sigma * sigma)), 0.0, L,
                     epsabs=0.0, epsrel=1e-12, limit=200)
    return 2.0 * v / rho_normalizer(sigma)


def rho_sample(sigma, seed, n) -> np.ndarray:
    """Inverse-CDF draws from rho; the CDF is the regularized incomplete gamma in m^4."""
    if not sigma > 0:
        raise DomainError("rho needs sigma > 0")
    u = np.random.default_rng(seed).random(int(n))
    w = 2.0 * u - 1.0
    t = special.gammaincinv(0.25, np.abs(w))
    return np.sign(w) * (2.0 * sigma * sigma * t) ** 0.25


# ---------------------------------------------------------------- M-process

@numba.njit(cache=True, nogil=True)
def _m_chunk(m, dW, dt, eps, sig, ou, out, oi, k0, rec0, stride):
    s = sig / math.sqrt(eps)
    for k in range(dW.shape[0]):
        d = -m / eps if ou else -m * m * m / eps
        m = m + d * dt + s * dW[k]
        kg = k0 + k + 1
        if kg >= rec0 and (kg - rec0) % stride == 0:
            out[oi] = m
            oi += 1
    return m, oi


def simulate_m(spec: MProcessSpec, m0, T, dt, seed=0, stride=1, record_from=0):
    n = n_steps_for(T, dt)
    rec0 = record_from if record_from > 0 else stride
    nrec = (n - rec0) // stride + 1 if n >= rec0 else 0
    out = np.empty(nrec + 1)
    oi = 0
    if record_from == 0:
        out[0] = m0
        oi = 1
    m, k0 = float(m0), 0
    for dW in NoisePlan(seed, 0, 1, dt).chunks(n):
        m, oi = _m_chunk(m, dW[:, 0], dt, spec.epsilon, spec.sigma, spec.kind == "ou", out, oi, k0,
                         rec0, stride)
        k0 += dW.shape[0]
    if not np.all(np.isfinite(out[:oi])):
        raise FloatingPointError("M-process blew up")
    return out[:oi]


def m_targets(spec: MProcessSpec):
    """Stationary (E m^2, E m^4)."""
    s2 = spec.sigma ** 2
    if spec.kind == "ou":
        return s2 / 2.0, 3.0 * s2 * s2 / 4.0
    return rho_moment(spec.sigma, 2), rho_moment(spec.sigma, 4)


def m_stationary_check(spec: MProcessSpec, T, dt, seed=0, burn_in=None, m0=0.0):
    """Long-run 2nd/4th moments of the simulated M versus closed-form/quadrature targets."""
    if burn_in is None:
        burn_in = min(50.0 * spec.epsilon, 0.5 * T)
    nb = int(round(burn_in / dt))
    x = simulate_m(spec, m0, T, dt, seed, stride=1, record_from=nb)
    rows = {}
    if spec.sigma == 0:
        return dict(samples=x, max_abs=float(np.max(np.abs(x))) if x.size else 0.0)
    for p, tgt in zip((2, 4), m_targets(spec)):
        est, se = batch_means(x ** p)
        rows[p] = dict(estimate=est, stderr=se, target=tgt, z=(est - tgt) / se,
                       ok=abs(est - tgt) <= 3 * se)
    return rows


# ---------------------------------------------------------------- tau search

class _Quadratic:
    """Q(c) = (A - 2 c B + c^2 C) / D from sufficient statistics."""

    def __init__(self, mu_rz, m_samples=None, paired_m=None):
        r, z = _rz(mu_rz)
        r2 = r * r
        if paired_m is not None:
            zm = z - paired_m
            self.A = np.mean(zm * zm)
            self.B = np.mean(zm * r2)
        elif m_samples is not None:
            m = np.asarray(m_samples, dtype=float)
            m1, m2 = m.mean(), np.mean(m * m)
            self.A = np.mean(z * z) - 2 * m1 * np.mean(z) + m2
            self.B = np.mean(z * r2) - m1 * np.mean(r2)
        else:
            self.A, self.B = np.mean(z * z), np.mean(z * r2)
        self.C = np.mean(r2 * r2)
        self.D = np.mean(z * z)

    def __call__(self, c):
        return (self.A - 2 * c * self.B + c * c * self.C) / self.D

    @property
    def c_star(self):
        return self.B / self.C


def golden_section(fn, a, b, tol=1e-10, maxit=500):
    """Minimize a unimodal fn on [a, b]; returns (x, fn(x), n_evals)."""
    c = b - GOLD * (b - a)
    d = a + GOLD * (b - a)
    fc, fd = fn(c), fn(d)
    it = 0
    while abs(b - a) > tol * (1.0 + abs(a) + abs(b)) and it < maxit:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLD * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLD * (b - a)
            fd = fn(d)
        it += 1
    x = c if fc <= fd else d
    return x, min(fc, fd), it + 2


@dataclass
class TauSearch:
    tau_opt: float
    q_opt: float
    report: DefectReport
    curve: np.ndarray          # columns: tau, c_tau, Q
    grid_min: float
    fallback: bool
    c_star: float
    grid_override: bool = False


def optimize_tau(mu_rz, epsilon, m_samples=None, paired_m=None, search_range=None, m_kind="cubic",
                 grid_points=200, seed=0) -> TauSearch:
    """argmin over tau of the normalized PM defect (golden section on log tau).

    The m-ensemble is held fixed across tau (common random numbers). A
    200-point log grid is always evaluated: it supplies the emitted curve, a
    unimodality check and the post-check of the golden-section optimum.
    """
    if m_samples is None and paired_m is None:
        raise ConfigurationError("optimize_tau needs m_samples or paired_m")
    lo, hi = search_range if search_range is not None else (epsilon * 1e-3, epsilon * 1e3)
    if not 0 < lo < hi:
        raise ConfigurationError("bad tau search range")
    Q = _Quadratic(mu_rz, m_samples, paired_m)

    def qlog(lt):
        return Q(float(c_tau(math.exp(lt), epsilon)))

    taus = np.exp(np.linspace(math.log(lo), math.log(hi), grid_points))
    cs = c_tau(taus, epsilon)
    qs = Q(cs)
    curve = np.column_stack([taus, cs, qs])
    scale = max(1.0, float(np.max(np.abs(qs))))
    inner = (qs[1:-1] > qs[:-2] + 1e-12 * scale) & (qs[1:-1] > qs[2:] + 1e-12 * scale)
    fallback = bool(np.any(inner))
    if fallback:
        i = int(np.argmin(qs))
        tau_opt = float(taus[i])
    else:
        lt, _, _ = golden_section(qlog, math.log(lo), math.log(hi))
        tau_opt = float(math.exp(lt))
    # boundary or flat optimum: take the better of search and grid
    i = int(np.argmin(qs))
    override = Q(float(c_tau(tau_opt, epsilon))) > qs[i]
    if override:
        tau_opt = float(taus[i])
    man = Manifold.pm(tau_opt, epsilon, m_kind)
    rep = defect_report(mu_rz, man, m_samples=m_samples, paired_m=paired_m, seed=seed)
    return TauSearch(tau_opt, rep.q_normalized, rep, curve, float(qs.min()), fallback, float(Q.c_star), bool(override))


def write_curve_csv(fname, curve, header_comment=None):
    with open(fname, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tau", "c_tau", "Q"))
        for t, c, q in curve:
            w.writerow((f"{t:.10g}", f"{c:.10g}", f"{q:.10g}"))


def c_star_tau(c_star, epsilon):
    """tau realizing a given c in (0, 1); None when c is outside the attainable range."""
    if not 0 < c_star < 1:
        return None
    return float(tau_from_c(c_star, epsilon))
