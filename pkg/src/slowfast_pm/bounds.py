"""Theorem constants, LHS/RHS assembly and corollary gates."""
from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .measures import batch_means, moment, tail_integral
from .metrics import Manifold, SLOW, defect_report, w1_with_error, _vals
from .model import ModelParams, c_tau, q_const, r_det, r_star

THEOREMS = ("T2.2", "T2.3", "T3.3", "T3.5")
BIG = sys.float_info.max


@dataclass
class Constants:
    """Additive C and multiplicative c, with the pieces they were built from."""

    C: float
    c: float
    prefactor: float
    overflow: bool = False
    parts: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.C, self.c))


def _tail_se(x, a):
    return batch_means(x * (x > a))[1]


def _thm_tail(params, mu_r, nu_r, q):
    rs = r_star(params)
    a, b = _vals(mu_r), _vals(nu_r)
    tn, tm = tail_integral(b, rs), tail_integral(a, rs)
    m4 = moment(a, 4) ** 0.25
    pref = params.gamma / q
    se = math.hypot(_tail_se(a, rs), _tail_se(b, rs))
    return Constants(2 * rs + tn + tm, pref * m4, pref,
                     parts=dict(r_star=rs, tail_nu=tn, tail_mu=tm, m4_root=m4, q=q, C_stderr=se))


def _thm_mean(params, mu_r, nu_r, q, ct=1.0):
    a, b = _vals(mu_r), _vals(nu_r)
    rd2 = params.lam / params.gamma
    with np.errstate(over="ignore", divide="ignore"):
        base = 2.0 * (rd2 / ct + params.sigma ** 2 / params.lam) if ct > 0 else math.inf
    overflow = not math.isfinite(base) or base > BIG / 4
    C0 = BIG if overflow else math.sqrt(base)
    mean_nu = float(np.mean(b))
    m4 = moment(a, 4) ** 0.25
    pref = (q + 2 * params.lam) / (q * rd2)
    C = BIG if overflow else C0 + mean_nu
    return Constants(C, pref * m4, pref, overflow,
                     parts=dict(sqrt_term=C0, mean_nu=mean_nu, m4_root=m4, q=q, c_tau=ct,
                                C_stderr=batch_means(b)[1]))


def constants_thm1(params: ModelParams, mu_r, nu_r) -> Constants:
    return _thm_tail(params, mu_r, nu_r, q_const(params, "slow_manifold"))


def constants_thm2(params: ModelParams, mu_r, nu_r) -> Constants:
    return _thm_mean(params, mu_r, nu_r, q_const(params, "slow_manifold"))


def constants_thm_stoch(params: ModelParams, tau, mu_r, nubar_r, variant="T3.3") -> Constants:
    if not (tau is not None and tau > 0):
        raise ConfigurationError("stochastic-PM constants need tau > 0")
    q = q_const(params, "stochastic_pm")
    if variant == "T3.3":
        return _thm_tail(params, mu_r, nubar_r, q)
    if variant == "T3.5":
        return _thm_mean(params, mu_r, nubar_r, q, float(c_tau(tau, params.epsilon)))
    raise ConfigurationError(f"unknown variant {variant!r}")


def bare_prefactor(params: ModelParams, variant="slow_manifold"):
    q = q_const(params, variant)
    return (q + 2 * params.lam) / (q * r_det(params) ** 2)


@dataclass
class BoundReport:
    theorem_id: str
    lhs_w1: float
    lhs_stderr: float
    additive_C: float
    multiplicative_c: float
    defect_l4: float
    defect_stderr: float
    rhs: float
    corollary_condition_holds: bool
    bound_satisfied: bool
    satisfied_worst_case: bool
    corollary_c: float
    prefactor: float
    overflow: bool = False
    case_id: str = ""
    epsilon: float = float("nan")
    tau: float | None = None
    inputs: dict = field(default_factory=dict)

    CSV_HEADER = ("theorem", "case", "epsilon", "lhs", "lhs_stderr", "C", "c", "defect",
                  "defect_stderr", "rhs", "satisfied", "satisfied_worst_case")

    def csv_row(self):
        return [self.theorem_id, self.case_id, f"{self.epsilon:.6g}", f"{self.lhs_w1:.10g}",
                f"{self.lhs_stderr:.6g}", f"{self.additive_C:.10g}", f"{self.multiplicative_c:.10g}",
                f"{self.defect_l4:.10g}", f"{self.defect_stderr:.6g}", f"{self.rhs:.10g}",
                str(self.bound_satisfied), str(self.satisfied_worst_case)]


def assemble(theorem_id, consts: Constants, lhs, lhs_se, defect, defect_se, **meta) -> BoundReport:
    rhs = consts.C + consts.c * defect
    C_se = consts.parts.get("C_stderr", 0.0)
    rhs_se = math.hypot(C_se, consts.c * defect_se)
    return BoundReport(
        theorem_id=theorem_id, lhs_w1=lhs, lhs_stderr=lhs_se, additive_C=consts.C,
        multiplicative_c=consts.c, defect_l4=defect, defect_stderr=defect_se, rhs=rhs,
        corollary_condition_holds=bool(consts.C <= defect), bound_satisfied=bool(lhs <= rhs),
        satisfied_worst_case=bool(lhs + 3 * lhs_se <= rhs - 3 * rhs_se),
        corollary_c=1.0 + consts.c, prefactor=consts.prefactor, overflow=consts.overflow, **meta)


def evaluate_bound(theorem_id, cfg, tau=None, seed=0) -> BoundReport:
    """Simulate (or reuse cached) measures of a case and instantiate one theorem."""
    from . import cases
    if theorem_id not in THEOREMS:
        raise ConfigurationError(f"unknown theorem {theorem_id!r}")
    p = cfg.params
    mu = cases.case_measure(cfg, "original_polar")
    mu_r, mu_rz = cases.radial(mu), cases.rz(mu)
    if theorem_id in ("T2.2", "T2.3"):
        nu = cases.case_measure(cfg, "reduced_polar")
        rep = defect_report(mu_rz, SLOW, seed=seed)
        consts = (constants_thm1 if theorem_id == "T2.2" else constants_thm2)(p, mu_r, cases.radial(nu))
        nu_name = "reduced_polar"
    else:
        rho = cases.rho_samples_for(cfg, len(mu))
        if tau is None:
            tau = p.tau
        if tau is None:
            from .spm import optimize_tau
            tau = optimize_tau(mu_rz, p.epsilon, m_samples=rho).tau_opt
        cfg_t = cfg.with_(tau=tau, m_kind="cubic", m_noise="independent")
        nu = cases.case_measure(cfg_t, "augmented_reduced")
        rep = defect_report(mu_rz, Manifold.pm(tau, p.epsilon), m_samples=rho, seed=seed)
        consts = constants_thm_stoch(p, tau, mu_r, cases.radial(nu), "T3.3" if theorem_id == "T3.3" else "T3.5")
        nu_name = "augmented_reduced"
    lhs, lhs_se = w1_with_error(mu_r, cases.radial(nu), seed=seed)
    inputs = dict(lhs=f"w1(original_polar r-marginal, {nu_name} r-marginal), D_F upper bound",
                  defect=f"l4 over {rep.sample_count} samples, manifold {rep.manifold_id}",
                  mu_samples=len(mu), nu_samples=len(nu), **consts.parts)
    return assemble(theorem_id, consts, lhs, lhs_se, rep.l4_defect, rep.l4_stderr,
                    case_id=cfg.case_id, epsilon=p.epsilon, tau=tau, inputs=inputs)


def write_bound_csv(fname, reports, header_comment=None):
    with open(fname, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BoundReport.CSV_HEADER)
        for r in reports:
            w.writerow(r.csv_row())
