"""Girsanov weights along coupled paths, law-preservation and Gronwall checks, Lyapunov grids."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .engine import default_dt, n_steps_for, run_coupled_ensemble, run_ensemble
from .errors import ConfigurationError, UnreliableWeightsError
from .model import R_MIN, ModelParams, SystemSpec, drift_core, noise_core, r_star

ESS_GATE = 100.0
LOG_MAX = 700.0


def ess(w):
    w = np.asarray(w, dtype=float)
    s2 = np.sum(w * w)
    return float(np.sum(w) ** 2 / s2) if s2 > 0 else 0.0


def log_exponential(g, dWr, dt):
    """Cumulative log D_k = -sum_{j<k} g_j dW_j - 0.5 sum_{j<k} g_j^2 dt (left point)."""
    g = np.asarray(g, dtype=float)
    inc = -g * np.asarray(dWr, dtype=float) - 0.5 * g * g * dt
    return np.concatenate([[0.0], np.cumsum(inc)])


def coupling_g(transformed_spec: SystemSpec, r_hat, r_tilde, m=None):
    p = transformed_spec.pvec()
    m = 0.0 if m is None else np.asarray(m)
    return (p[6] * (np.asarray(r_hat) - np.asarray(r_tilde)) - p[7] * m * np.asarray(r_hat)) / p[4]


def stochastic_exponential(reduced_path, transformed_path, variant=None):
    """Per-node D_t of one coupled pair recorded at stride 1.

    The W^r increments are regenerated from the shared noise plan. Returns
    (D values at every node, overflow flag).
    """
    if reduced_path.stride != 1 or transformed_path.stride != 1:
        raise ConfigurationError("stochastic_exponential needs paths recorded at every step")
    plan = transformed_path.noise_plan
    dWr = np.concatenate(list(plan.chunks(transformed_path.n_steps)))[:, 0]
    rs = reduced_path.states
    m = rs[:-1, 2] if reduced_path.spec.system_id == "augmented_reduced" else None
    g = coupling_g(transformed_path.spec, rs[:-1, 0], transformed_path.states[:-1, 0], m)
    ld = log_exponential(g, dWr, plan.dt)
    over = bool(np.any(ld > LOG_MAX))
    return np.exp(np.minimum(ld, LOG_MAX)), over


def coupled_specs(params: ModelParams, variant="slow_manifold", coupling_scale=1.0, m_kind="cubic"):
    if variant == "slow_manifold":
        return (SystemSpec("reduced_polar", params),
                SystemSpec("transformed_polar", params, coupling_scale=coupling_scale))
    if variant == "stochastic_pm":
        if params.tau is None:
            raise ConfigurationError("stochastic_pm coupling needs params.tau")
        return (SystemSpec("augmented_reduced", params, m_kind=m_kind),
                SystemSpec("transformed_polar_aug", params, coupling_scale=coupling_scale))
    raise ConfigurationError(f"unknown coupling variant {variant!r}")


def _inits(params, variant, r0=None):
    rs = r_star(params) if r0 is None else r0
    if variant == "slow_manifold":
        return (rs, 0.0), (rs, 0.0, rs * rs)
    return (rs, 0.0, 0.0), (rs, 0.0, rs * rs)


def _observables(rs):
    return {
        "identity": lambda r: r,
        "clip_r_star": lambda r: np.minimum(r, rs),
        "square": lambda r: r * r,
        "tail_indicator": lambda r: (r > rs).astype(float),
    }


@dataclass
class GirsanovReport:
    horizon_T: float
    mean_D: float
    mean_D_stderr: float
    weighted_marginal_w1: float
    coupling_variant: str
    n_paths: int
    ess: float
    n_excluded: int = 0
    observables: dict = field(default_factory=dict)
    max_abs_z: float = float("nan")
    passed: bool = False
    log_D_quantiles: tuple = ()
    mean_int_g2: float = float("nan")

    CSV_HEADER = ("variant", "T", "n_paths", "mean_D", "mean_D_stderr", "ess", "w1_weighted",
                  "observable", "plain", "plain_stderr", "weighted", "weighted_stderr", "z")

    def csv_rows(self):
        base = [self.coupling_variant, f"{self.horizon_T:.6g}", str(self.n_paths), f"{self.mean_D:.10g}",
                f"{self.mean_D_stderr:.6g}", f"{self.ess:.6g}", f"{self.weighted_marginal_w1:.10g}"]
        for k, o in self.observables.items():
            yield base + [k, f"{o['plain']:.10g}", f"{o['plain_se']:.6g}", f"{o['weighted']:.10g}",
                          f"{o['weighted_se']:.6g}", f"{o['z']:.4g}"]


def weighted_w1(a, wa, b, wb=None):
    """W1 between weighted 1D point clouds (weights normalized internally)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    wa = np.asarray(wa, float)
    wb = np.ones_like(b) if wb is None else np.asarray(wb, float)
    if wa.sum() <= 0 or wb.sum() <= 0:
        return float("nan")
    ia, ib = np.argsort(a), np.argsort(b)
    a, wa, b, wb = a[ia], wa[ia] / wa.sum(), b[ib], wb[ib] / wb.sum()
    grid = np.union1d(a, b)
    Fa = np.concatenate([[0.0], np.cumsum(wa)])[np.searchsorted(a, grid[:-1], side="right")]
    Fb = np.concatenate([[0.0], np.cumsum(wb)])[np.searchsorted(b, grid[:-1], side="right")]
    return float(np.sum(np.abs(Fa - Fb) * np.diff(grid)))


def girsanov_ensemble(params, T, n_paths, variant="slow_manifold", dt=None, seed=0, coupling_scale=1.0,
                      m_kind="cubic", stride=None, r0=None, workers=1, env_c=None, env_m=0.0):
    dt = default_dt(params) if dt is None else dt
    red, tr = coupled_specs(params, variant, coupling_scale, m_kind)
    return run_coupled_ensemble(red, tr, _inits(params, variant, r0), T, dt, seed, n_paths,
                                stride=stride, workers=workers, env_c=env_c, env_m=env_m)


def transition_preservation_check(params: ModelParams, T, n_paths, variant="slow_manifold", dt=None,
                                  seed=0, coupling_scale=1.0, m_kind="cubic", ess_gate=ESS_GATE,
                                  r0=None, workers=1, raise_on_degenerate=True) -> GirsanovReport:
    """E_P[phi(r_T)] (plain original) versus E_P[D_T phi(r~_T)] (reweighted transformed)."""
    dt = default_dt(params) if dt is None else dt
    n_steps_for(T, dt)
    co = girsanov_ensemble(params, T, n_paths, variant, dt, seed, coupling_scale, m_kind, r0=r0, workers=workers)
    ld = co["log_D"][:, -1]
    over = ld > LOG_MAX
    D = np.exp(np.where(over, -np.inf, ld))
    rt = co["r_tilde"][:, -1]
    # plain original system on an independent stream
    rs0 = r_star(params) if r0 is None else r0
    orig = SystemSpec("original_polar", params)
    ens = run_ensemble(orig, (rs0, 0.0, rs0 * rs0), T, dt, seed ^ 0x5EED5EED, n_paths,
                       stride=n_steps_for(T, dt), workers=workers)
    r = ens.terminal()[:, 0]
    n = len(D)
    obs = {}
    for k, phi in _observables(r_star(params)).items():
        a, b = phi(r), D * phi(rt)
        pm, pse = a.mean(), a.std(ddof=1) / math.sqrt(n)
        wm, wse = b.mean(), b.std(ddof=1) / math.sqrt(n)
        se = math.hypot(pse, wse)
        z = (wm - pm) / se if se > 0 else (0.0 if wm == pm else math.inf)
        obs[k] = dict(plain=pm, plain_se=pse, weighted=wm, weighted_se=wse, z=z)
    e = ess(D)
    q = np.quantile(ld, [0.01, 0.5, 0.99])
    rep = GirsanovReport(
        horizon_T=T, mean_D=float(D.mean()), mean_D_stderr=float(D.std(ddof=1) / math.sqrt(n)),
        weighted_marginal_w1=weighted_w1(rt, D, r), coupling_variant=variant, n_paths=n, ess=e,
        n_excluded=int(over.sum()), observables=obs,
        max_abs_z=float(max(abs(o["z"]) for o in obs.values())), log_D_quantiles=tuple(q))
    rep.passed = bool(rep.max_abs_z <= 3.0 and abs(rep.mean_D - 1) <= 3 * rep.mean_D_stderr)
    if raise_on_degenerate and e < ess_gate:
        raise UnreliableWeightsError(e, ess_gate, report=rep)
    return rep


def write_girsanov_csv(fname, reports, header_comment=None):
    with open(fname, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GirsanovReport.CSV_HEADER)
        for r in reports:
            for row in r.csv_rows():
                w.writerow(row)


# ---------------------------------------------------------------- Gronwall

def envelope_series(t, delta0_sq, integrand, q):
    """e^{-qt} delta0^2 + int_0^t e^{-q(t-s)} u(s) ds for u piecewise constant on the grid."""
    t = np.asarray(t, float)
    u = np.asarray(integrand, float)
    J = np.zeros_like(t)
    for k in range(1, t.size):
        h = t[k] - t[k - 1]
        J[k] = math.exp(-q * h) * J[k - 1] + u[k - 1] * (-math.expm1(-q * h)) / q
    return delta0_sq * np.exp(-q * t) + J


@dataclass
class EnvelopeCheck:
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    stderr_lhs: np.ndarray
    stderr_rhs: np.ndarray
    ess: np.ndarray
    violations: int
    lhs_plain: np.ndarray
    rhs_plain: np.ndarray
    violations_plain: int
    pathwise_violations: int
    n_paths: int
    variant: str

    def write_csv(self, fname, header_comment=None):
        with open(fname, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("t", "lhs", "rhs", "stderr_lhs", "stderr_rhs", "ess", "lhs_plain", "rhs_plain"))
            for row in zip(self.t, self.lhs, self.rhs, self.stderr_lhs, self.stderr_rhs, self.ess,
                           self.lhs_plain, self.rhs_plain):
                w.writerow([f"{v:.10g}" for v in row])


def gronwall_envelope_check(params: ModelParams, T, n_paths, variant="slow_manifold", dt=None, seed=0,
                            grid_points=100, m_env=0.0, ess_gate=ESS_GATE, r0=None, r0_tilde=None,
                            workers=1, raise_on_degenerate=True) -> EnvelopeCheck:
    """E_P~|r^_t - r~_t|^2 against the Gronwall envelope at every grid time.

    P~ expectations are E_P[D_t X_t]. The envelope integrand is accumulated
    pathwise in the integrator; with m_env != 0 the stochastic-PM form with
    h_tau(m_env, r) and the extra 2 m gamma term is used.
    """
    dt = default_dt(params) if dt is None else dt
    n = n_steps_for(T, dt)
    stride = max(1, n // grid_points)
    if variant == "stochastic_pm":
        from .model import c_tau
        env_c = float(c_tau(params.tau, params.epsilon))
    else:
        env_c, m_env = 1.0, 0.0
    red, tr = coupled_specs(params, variant)
    ri, ti = _inits(params, variant, r0)
    if r0_tilde is not None:
        ti = (r0_tilde, ti[1], r0_tilde * r0_tilde)
    co = run_coupled_ensemble(red, tr, (ri, ti), T, dt, seed, n_paths, stride=stride, workers=workers,
                              env_c=env_c, env_m=m_env)
    d2 = (co["r_hat"] - co["r_tilde"]) ** 2
    env = co["envelope"]
    ld = co["log_D"]
    D = np.exp(np.minimum(ld, LOG_MAX))
    N = d2.shape[0]
    lhs, rhs = (D * d2).mean(0), (D * env).mean(0)
    sl, sr = (D * d2).std(0, ddof=1) / math.sqrt(N), (D * env).std(0, ddof=1) / math.sqrt(N)
    e = np.array([ess(D[:, k]) for k in range(D.shape[1])])
    viol = int(np.sum(lhs - rhs > 3 * np.hypot(sl, sr)))
    lp, rp = d2.mean(0), env.mean(0)
    slp, srp = d2.std(0, ddof=1) / math.sqrt(N), env.std(0, ddof=1) / math.sqrt(N)
    vp = int(np.sum(lp - rp > 3 * np.hypot(slp, srp)))
    pw = int(np.sum(d2 > env * (1 + 1e-9) + 1e-300))
    chk = EnvelopeCheck(co["t"], lhs, rhs, sl, sr, e, viol, lp, rp, vp, pw, N, variant)
    if raise_on_degenerate and e.min() < ess_gate:
        k = int(np.argmax(e < ess_gate))
        raise UnreliableWeightsError(e.min(), ess_gate,
                                     msg=f"ESS {e.min():.1f} < {ess_gate:g}; first below gate at t={co['t'][k]:.4g}",
                                     report=chk)
    return chk


# ---------------------------------------------------------------- Lyapunov

LYAPUNOV_SYSTEMS = {"V_cartesian": "original_cartesian", "V_polar": "original_polar",
                    "V_polar_aug": "augmented_original"}


def lyapunov_weights(function_id, params: ModelParams):
    """(alpha, offset, quadratic flags) so that V = sum_i w_i * phi_i(x_i) + 1."""
    g, e = params.gamma, params.epsilon
    if function_id == "V_cartesian":
        return dict(w=np.array([1.0, 1.0, math.sqrt(e * g)]), p=np.zeros(3), quad=np.array([1, 1, 1]))
    p = (1.0 + 2.0 * params.lam) / (2.0 * g)
    if function_id == "V_polar":
        return dict(w=np.array([1.0 / (g * e), 1.0, 1.0]), p=np.array([0.0, 0.0, p]), quad=np.array([1, 0, 1]))
    if function_id == "V_polar_aug":
        return dict(w=np.array([1.0 / (g * e), 1.0, 1.0, 1.0]), p=np.array([0.0, 0.0, p, 0.0]),
                    quad=np.array([1, 0, 1, 1]))
    raise ConfigurationError(f"unknown Lyapunov function {function_id!r}")


@numba.njit(cache=True)
def _lv_grid(code, pv, X, w, off, quad, nd):
    n, d = X.shape
    LV = np.empty(n)
    V = np.empty(n)
    b = np.empty(d)
    s = np.empty(d)
    e = np.zeros(nd)
    c = np.zeros(2)
    diag = np.empty(d)
    for i in range(n):
        x = X[i]
        drift_core(code, pv, x, c, b)
        for k in range(d):
            diag[k] = 0.0
        for j in range(nd):
            for jj in range(nd):
                e[jj] = 0.0
            e[j] = 1.0
            noise_core(code, pv, x, e, s)
            for k in range(d):
                diag[k] += s[k] * s[k]
        v = 1.0
        lv = 0.0
        for k in range(d):
            if quad[k] == 1:
                y = x[k] - off[k]
                v += w[k] * y * y
                lv += b[k] * 2.0 * w[k] * y + 0.5 * diag[k] * 2.0 * w[k]
            else:
                v += w[k] * x[k]
                lv += b[k] * w[k]
        LV[i] = lv
        V[i] = v
    return LV, V


@dataclass
class LyapunovReport:
    function_id: str
    max_ratio: float
    argmax: np.ndarray
    n_points: int
    skipped: int
    a_closed_form: float | None
    LV: np.ndarray = field(repr=False, default=None)
    V: np.ndarray = field(repr=False, default=None)
    points: np.ndarray = field(repr=False, default=None)


def lyapunov_constant_a(params: ModelParams):
    """a = max(a~, c) for the polar Lyapunov function."""
    e, g, s = params.epsilon, params.gamma, params.sigma
    p = (1.0 + 2.0 * params.lam) / (2.0 * g)
    at = max(1.0, 1.0 / e)
    c = params.f + 2 * s * s / (g * e) + (s * s + p * p) / e
    return max(at, c)


def lyapunov_grid_check(function_id, params: ModelParams, grid) -> LyapunovReport:
    """sup over a tensor grid of LV/V, with L the generator of the matching system.

    grid maps coordinate names of the system to 1D arrays; missing angle
    coordinates default to 0. Points with r <= 0 (polar) are skipped.
    """
    sysid = LYAPUNOV_SYSTEMS.get(function_id)
    if sysid is None:
        raise ConfigurationError(f"unknown Lyapunov function {function_id!r}")
    spec = SystemSpec(sysid, params, m_kind="cubic")
    axes = []
    for name in spec.coords:
        v = grid.get(name, [0.0] if name == "theta" else None)
        if v is None:
            raise ConfigurationError(f"grid missing coordinate {name!r}")
        axes.append(np.asarray(v, dtype=float))
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(axes))
    skipped = 0
    if spec.polar:
        ok = X[:, 0] >= R_MIN
        skipped = int((~ok).sum())
        X = X[ok]
    wts = lyapunov_weights(function_id, params)
    LV, V = _lv_grid(spec.code, spec.pvec(), np.ascontiguousarray(X), wts["w"], wts["p"],
                     wts["quad"].astype(np.int64), spec.noise_dimension)
    ratio = LV / V
    if not np.all(np.isfinite(ratio)):
        raise FloatingPointError("non-finite LV/V on the grid")
    i = int(np.argmax(ratio))
    a = lyapunov_constant_a(params) if function_id == "V_polar" else None
    return LyapunovReport(function_id, float(ratio[i]), X[i], X.shape[0], skipped, a, LV, V, X)
