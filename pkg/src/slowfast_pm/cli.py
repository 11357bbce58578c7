"""slowfast-pm command line: simulate, measure, defect, bounds, girsanov, tau, table."""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import os
import sys

import numpy as np

from . import cases
from .bounds import THEOREMS, bare_prefactor, evaluate_bound, write_bound_csv
from .engine import NoisePlan, integrate, n_steps_for
from .errors import (ConfigurationError, DegenerateMeasureError, DomainError, IntegrationBlowupError,
                     UnreliableWeightsError)
from .measures import batch_means
from .metrics import SLOW, defect_report, write_defect_csv
from .model import SYSTEM_IDS, SystemSpec, c_tau

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _stamp(cmd):
    return f"slowfast-pm {cmd} generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}"


def _write_rows(fname, header, rows, cmd):
    with open(fname, "w", newline="") as fh:
        fh.write(f"# {_stamp(cmd)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v, p=10):
    return f"{v:.{p}g}"


# ---------------------------------------------------------------- config

def _build_config(a) -> cases.CaseConfig:
    d = {}
    if a.config:
        try:
            with open(a.config) as fh:
                d = cases.parse_config_text(fh.read())
        except OSError as e:
            raise ConfigurationError(f"cannot read config: {e}") from None
    flags = dict(case_id=a.case, lam=a.lam, f=a.f, gamma=a.gamma, epsilon=a.epsilon, sigma=a.sigma, tau=a.tau,
                 dt=a.dt, T_total=a.T_total, burn_in=a.burn_in, thin=a.thin, n_traj=a.n_traj,
                 master_seed=a.seed)
    d.update({k: v for k, v in flags.items() if v is not None})
    env = os.environ.get("SLOWFAST_PM_OUT")
    if env:
        d["outputs"] = env
    if a.out:
        d["outputs"] = a.out
    d.setdefault("case_id", "custom")
    cfg = cases.config_from_dict(d)
    if not os.path.isdir(cfg.outputs):
        raise ConfigurationError(f"output directory {cfg.outputs!r} does not exist")
    return cfg


def _out(cfg, name):
    return os.path.join(cfg.outputs, name)


# ---------------------------------------------------------------- commands

def cmd_simulate(a, cfg):
    spec = SystemSpec(a.system, cfg.params, m_kind=cfg.m_kind, m_noise=cfg.m_noise)
    if spec.coupling_inputs:
        raise ConfigurationError("simulate runs uncoupled systems; use 'girsanov' for coupled runs")
    T = a.T if a.T is not None else cfg.T_total
    dt = cfg.step
    init = a.init if a.init else cases.initial_state(a.system, cfg.params)
    n = n_steps_for(T, dt)
    stride = a.stride if a.stride else max(1, n // 1000)
    path = integrate(spec, init, T, dt, NoisePlan(cfg.master_seed, 0, spec.noise_dimension, dt), stride=stride)
    rows = [[_fmt(t)] + [_fmt(v, 17) for v in s] for t, s in zip(path.times, path.states)]
    fn = _out(cfg, f"path_{a.system}.csv")
    _write_rows(fn, ("t", *spec.coords), rows, "simulate")
    if a.dump:
        path.dump(_out(cfg, f"path_{a.system}.bin"))
    x = path.states[-1]
    print(f"{a.system}: T={T:g} dt={dt:g} steps={n} reflections={path.reflection_count}")
    print("terminal state: " + ", ".join(f"{c}={v:.12g}" for c, v in zip(spec.coords, x)))
    print(f"wrote {fn}")


def cmd_measure(a, cfg):
    mu = cases.case_measure(cfg, a.system)
    fn = _out(cfg, f"samples_{a.system}.csv")
    with open(fn, "w") as fh:
        fh.write(f"# {_stamp('measure')}\n")
    with open(fn, "a") as fh:
        np.savetxt(fh, mu.samples, delimiter=",", header=",".join(mu.coords), comments="", fmt="%.17g")
    tab = mu.histogram(bins=a.bins, coord="r")
    _write_rows(_out(cfg, f"hist_r_{a.system}.csv"), ("bin_left", "bin_right", "density"),
                [[_fmt(v, 17) for v in row] for row in tab], "measure")
    r = mu.col("r")
    print(f"{a.system}: n={len(mu)} thin={mu.meta['thin']} burn_in={mu.meta['burn_in']:g} "
          f"R_split={mu.diagnostics.gelman_split_stat:.4f} reflection_rate={mu.meta['reflection_rate']:.3g}")
    for p in (1, 2, 4):
        m, se = batch_means(r ** p)
        print(f"  E r^{p} = {m:.6g} +- {se:.2g}")
    if "z" in mu.coords:
        m, se = batch_means(mu.col("z") - r * r)
        print(f"  E (z - r^2) = {m:.6g} +- {se:.2g}")
    print(f"wrote {fn}")


def case_defects(cfg, seed=0):
    """(slow DefectReport, PM TauSearch, measure) following the case's m settings."""
    from .spm import optimize_tau
    p = cfg.params
    if cfg.m_pairing == "paired":
        mu = cases.case_measure(cfg, "augmented_original")
        rz = cases.rz(mu)
        slow = defect_report(rz, SLOW, seed=seed)
        pm = optimize_tau(rz, p.epsilon, paired_m=mu.col("m"), m_kind=cfg.m_kind, seed=seed)
    else:
        mu = cases.case_measure(cfg, cfg.original_system)
        rz = cases.rz(mu)
        slow = defect_report(rz, SLOW, seed=seed)
        ms = cases.ou_samples_for(cfg, len(mu)) if cfg.m_kind == "ou" else cases.rho_samples_for(cfg, len(mu))
        pm = optimize_tau(rz, p.epsilon, m_samples=ms, m_kind=cfg.m_kind, seed=seed)
    return slow, pm, mu


def cmd_defect(a, cfg):
    slow, pm, mu = case_defects(cfg)
    write_defect_csv(_out(cfg, f"defect_case{cfg.case_id}.csv"), [(cfg.case_id, slow), (cfg.case_id, pm.report)],
                     _stamp("defect"))
    print(f"case {cfg.case_id}: n={slow.sample_count} (thin {mu.meta['thin']} steps, dt {mu.meta['dt']:g})")
    print(f"  slow manifold      Q = {slow.q_normalized:.6g} +- {slow.standard_error:.2g}"
          f"   l4 = {slow.l4_defect:.6g} +- {slow.l4_stderr:.2g}   (Q with Var z denominator: {slow.q_centered:.6g})")
    print(f"  {pm.report.manifold_id:18s} Q = {pm.q_opt:.6g} +- {pm.report.standard_error:.2g}"
          f"   tau_opt = {pm.tau_opt:.6g}   m: {cfg.m_kind}/{pm.report.m_pairing}"
          f"   grid min = {pm.grid_min:.6g}{'  (grid fallback)' if pm.fallback else ''}")


def cmd_tau(a, cfg):
    from .spm import write_curve_csv
    slow, pm, _ = case_defects(cfg)
    write_curve_csv(_out(cfg, f"tau_curve_case{cfg.case_id}.csv"), pm.curve, _stamp("tau"))
    print(f"case {cfg.case_id}: tau_opt = {pm.tau_opt:.8g}  c_tau = {float(c_tau(pm.tau_opt, cfg.params.epsilon)):.6g}"
          f"  Q(tau_opt) = {pm.q_opt:.6g}  grid min = {pm.grid_min:.6g}  closed-form c* = {pm.c_star:.6g}")


def cmd_bounds(a, cfg):
    thms = a.theorem or ["T2.2", "T2.3"]
    reps = [evaluate_bound(t, cfg, seed=cfg.master_seed) for t in thms]
    write_bound_csv(_out(cfg, f"bounds_case{cfg.case_id}.csv"), reps, _stamp("bounds"))
    for r in reps:
        print(f"{r.theorem_id} case {r.case_id} eps={r.epsilon:g}: lhs={r.lhs_w1:.5g}+-{r.lhs_stderr:.2g} "
              f"C={r.additive_C:.5g} c={r.multiplicative_c:.5g} (prefactor {r.prefactor:.6g}) "
              f"defect={r.defect_l4:.5g}+-{r.defect_stderr:.2g} rhs={r.rhs:.5g} satisfied={r.bound_satisfied} "
              f"worst-case={r.satisfied_worst_case} corollary-condition={r.corollary_condition_holds}")


def cmd_girsanov(a, cfg):
    from .girsanov import gronwall_envelope_check, transition_preservation_check, write_girsanov_csv
    p = cfg.params
    if a.variant == "stochastic_pm" and p.tau is None:
        raise ConfigurationError("stochastic_pm variant needs --tau")
    status = EXIT_OK
    if a.check in ("transition", "both"):
        try:
            rep = transition_preservation_check(p, a.T, a.n_paths, a.variant, dt=cfg.step,
                                                seed=cfg.master_seed, workers=a.threads)
        except UnreliableWeightsError as e:
            rep, status = e.report, EXIT_NUMERICAL
            print(f"transition check: {e}", file=sys.stderr)
        write_girsanov_csv(_out(cfg, f"girsanov_case{cfg.case_id}.csv"), [rep], _stamp("girsanov"))
        print(f"mean D = {rep.mean_D:.6g} +- {rep.mean_D_stderr:.2g}  ESS = {rep.ess:.1f}/{rep.n_paths}  "
              f"weighted W1 = {rep.weighted_marginal_w1:.4g}")
        for k, o in rep.observables.items():
            print(f"  {k:15s} plain {o['plain']:.6g}+-{o['plain_se']:.2g}  weighted {o['weighted']:.6g}+-{o['weighted_se']:.2g}  z={o['z']:.3g}")
    if a.check in ("envelope", "both"):
        try:
            chk = gronwall_envelope_check(p, a.T, a.n_paths, a.variant, dt=cfg.step, seed=cfg.master_seed,
                                          workers=a.threads)
        except UnreliableWeightsError as e:
            chk, status = e.report, EXIT_NUMERICAL
            print(f"envelope check: {e}", file=sys.stderr)
        chk.write_csv(_out(cfg, f"envelope_case{cfg.case_id}.csv"), _stamp("girsanov"))
        print(f"envelope: violations (reweighted) = {chk.violations}, (unweighted) = {chk.violations_plain}, "
              f"pathwise = {chk.pathwise_violations}, min ESS = {chk.ess.min():.1f}/{chk.n_paths}")
    return status


def case_iii_table(cfg, seed=None):
    """Rows (eps, w1, w1_err, C, c, defect, defect_err, prefactor) for the Case III sweep."""
    rows = []
    for eps in cases.CASE_III_EPS:
        c = cases.builtin_case("III", eps, master_seed=cfg.master_seed)
        r = evaluate_bound("T2.3", c, seed=cfg.master_seed if seed is None else seed)
        rows.append((eps, r.lhs_w1, r.lhs_stderr, r.additive_C, r.multiplicative_c, r.defect_l4,
                     r.defect_stderr, bare_prefactor(c.params)))
    return rows


def cmd_table(a, cfg):
    if cfg.case_id != "III":
        raise ConfigurationError("table is defined for case III")
    rows = case_iii_table(cfg)
    _write_rows(_out(cfg, "table_caseIII.csv"), ("eps", "w1", "w1_err", "C", "c", "defect", "defect_err", "prefactor"),
                [[_fmt(v) for v in row] for row in rows], "table")
    print(f"{'eps':>8} {'w1':>10} {'w1_err':>9} {'C':>8} {'c':>8} {'defect':>9} {'def_err':>9} {'prefactor':>10}")
    for row in rows:
        print("{:8.0e} {:10.4g} {:9.2g} {:8.4g} {:8.4g} {:9.4g} {:9.2g} {:10.6g}".format(*row))


# ---------------------------------------------------------------- parser

def build_parser():
    ap = argparse.ArgumentParser(prog="slowfast-pm", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("case")
    g.add_argument("--case", choices=("I", "II", "III", "IV", "custom"))
    g.add_argument("--config", help="flat key=value file; flags override its keys")
    g.add_argument("--seed", type=int, help="master seed (all randomness derives from it)")
    g.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    g.add_argument("--out", help="output directory (default: $SLOWFAST_PM_OUT or config 'outputs')")
    for k in ("lam", "f", "gamma", "epsilon", "sigma", "tau", "dt", "burn-in"):
        g.add_argument(f"--{k}", type=float, dest=k.replace("-", "_"))
    g.add_argument("--T-total", type=float, dest="T_total")
    g.add_argument("--thin", type=int)
    g.add_argument("--n-traj", type=int, dest="n_traj")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", parents=[common], help="integrate one system and write the path")
    s.add_argument("--system", choices=SYSTEM_IDS, default="original_polar")
    s.add_argument("--T", type=float)
    s.add_argument("--stride", type=int)
    s.add_argument("--init", type=float, nargs="+")
    s.add_argument("--dump", action="store_true", help="also write the binary path dump")
    s = sub.add_parser("measure", parents=[common], help="invariant-measure samples and r histogram")
    s.add_argument("--system", choices=SYSTEM_IDS, default="original_polar")
    s.add_argument("--bins", type=int, default=100)
    sub.add_parser("defect", parents=[common], help="normalized defect Q for slow and PM manifolds")
    s = sub.add_parser("bounds", parents=[common], help="theorem constants and bound check")
    s.add_argument("--theorem", action="append", choices=THEOREMS)
    s = sub.add_parser("girsanov", parents=[common], help="Girsanov weight and Gronwall checks")
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--n-paths", type=int, default=10_000, dest="n_paths")
    s.add_argument("--variant", choices=("slow_manifold", "stochastic_pm"), default="slow_manifold")
    s.add_argument("--check", choices=("transition", "envelope", "both"), default="transition")
    sub.add_parser("tau", parents=[common], help="optimize tau and write the (tau, Q) curve")
    sub.add_parser("table", parents=[common], help="Case III table for the mean-based theorem")
    return ap


COMMANDS = dict(simulate=cmd_simulate, measure=cmd_measure, defect=cmd_defect, bounds=cmd_bounds,
                girsanov=cmd_girsanov, tau=cmd_tau, table=cmd_table)


def main(argv=None):
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        cfg = _build_config(a)
        rc = COMMANDS[a.cmd](a, cfg)
        return EXIT_OK if rc is None else rc
    except (ConfigurationError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IntegrationBlowupError, DegenerateMeasureError, UnreliableWeightsError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
