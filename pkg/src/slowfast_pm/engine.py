"""Seeded Brownian increments, Euler-Maruyama integration, coupled runs, ensembles."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigurationError, DomainError, IntegrationBlowupError
from .model import R_MIN, SystemSpec, drift_core, noise_core, q_const

CHUNK = 1 << 15

_M_IDX = {"augmented_reduced": 2, "augmented_original": 3}


@dataclass(frozen=True)
class NoisePlan:
    master_seed: int
    trajectory_index: int
    noise_dimension: int
    dt: float

    def generator(self):
        ss = np.random.SeedSequence(int(self.master_seed) & ((1 << 64) - 1),
                                    spawn_key=(int(self.trajectory_index),))
        return np.random.Generator(np.random.PCG64(ss))

    def chunks(self, count, chunk=CHUNK):
        """Yield increment blocks of shape (<=chunk, noise_dimension), in order."""
        rng = self.generator()
        s = math.sqrt(self.dt)
        done = 0
        while done < count:
            n = min(chunk, count - done)
            yield rng.standard_normal((n, self.noise_dimension)) * s
            done += n


def brownian_increments(plan: NoisePlan, count: int) -> np.ndarray:
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    return np.concatenate(list(plan.chunks(count)))


@dataclass
class Path:
    times: np.ndarray
    states: np.ndarray
    spec: SystemSpec
    noise_plan: NoisePlan
    reflection_count: int = 0
    stride: int = 1
    n_steps: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.n_steps * self.noise_plan.dt

    def column(self, name):
        return self.states[:, self.spec.coords.index(name)]

    def dump(self, fname):
        """Binary dump: magic line, JSON header line, little-endian float64 rows."""
        p = self.spec.params
        hdr = dict(system_id=self.spec.system_id, params=dict(lam=p.lam, f=p.f, gamma=p.gamma,
                   epsilon=p.epsilon, sigma=p.sigma, tau=p.tau), m_kind=self.spec.m_kind,
                   m_noise=self.spec.m_noise, seed=int(self.noise_plan.master_seed),
                   trajectory_index=int(self.noise_plan.trajectory_index), dt=self.noise_plan.dt,
                   T=self.T, stride=self.stride, rows=int(self.states.shape[0]),
                   cols=["t", *self.spec.coords])
        body = np.column_stack([self.times, self.states]).astype("<f8")
        with open(fname, "wb") as fh:
            fh.write(b"SFPMPATH1\n")
            fh.write(json.dumps(hdr, sort_keys=True).encode() + b"\n")
            fh.write(body.tobytes())


def load_path_dump(fname):
    with open(fname, "rb") as fh:
        if fh.readline() != b"SFPMPATH1\n":
            raise ConfigurationError("not a path dump")
        hdr = json.loads(fh.readline())
        body = np.frombuffer(fh.read(), dtype="<f8").reshape(hdr["rows"], len(hdr["cols"]))
    return hdr, body


@dataclass
class Ensemble:
    paths: list

    def __len__(self):
        return len(self.paths)

    def terminal(self):
        return np.array([p.states[-1] for p in self.paths])


# ---------------------------------------------------------------- kernels

@numba.njit(cache=True, nogil=True)
def _post(polar, x, refl):
    if polar:
        if x[0] < 1e-8:
            x[0] = 2e-8 - x[0]
            refl[0] += 1
        th = x[1] % 6.283185307179586
        if th >= 6.283185307179586:
            th -= 6.283185307179586
        x[1] = th


@numba.njit(cache=True, nogil=True)
def _finite(x):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return False
    return True


R_SWITCH = 10.0  # chart switch radius in units of sigma*sqrt(dt)


@numba.njit(cache=True, nogil=True)
def _polar_step(code, p, x, c, dw, dt, b, s):
    """One EM step of a polar system.

    Close to the origin (r < R_SWITCH sigma sqrt(dt)) the planar pair is
    stepped in the Cartesian chart, where the coefficients are regular, and
    mapped back; the remaining components use the ordinary update.
    """
    drift_core(code, p, x, c, b)
    noise_core(code, p, x, dw, s)
    r = x[0]
    sig = p[4]
    if r >= R_SWITCH * sig * math.sqrt(dt):
        for i in range(x.shape[0]):
            x[i] += b[i] * dt + s[i]
        return
    th = x[1]
    co = math.cos(th)
    si = math.sin(th)
    ar = b[0] - 0.5 * sig * sig / r
    tw = p[1] * r
    px = r * co + (ar * co - tw * si) * dt + sig * (co * dw[0] - si * dw[1])
    py = r * si + (ar * si + tw * co) * dt + sig * (si * dw[0] + co * dw[1])
    for i in range(2, x.shape[0]):
        x[i] += b[i] * dt + s[i]
    x[0] = math.hypot(px, py)
    x[1] = math.atan2(py, px)


@numba.njit(cache=True, nogil=True)
def _em_chunk(code, polar, p, x, dW, dt, carr, has_c, k0, rec0, stride, out, oi, refl):
    """Advance x over the rows of dW. Returns new output index, or -(step+1) on blowup."""
    d = x.shape[0]
    b = np.empty(d)
    s = np.empty(d)
    c = np.zeros(2)
    for k in range(dW.shape[0]):
        if has_c:
            for j in range(carr.shape[1]):
                c[j] = carr[k, j]
        if polar:
            _polar_step(code, p, x, c, dW[k], dt, b, s)
        else:
            drift_core(code, p, x, c, b)
            noise_core(code, p, x, dW[k], s)
            for i in range(d):
                x[i] += b[i] * dt + s[i]
        _post(polar, x, refl)
        if not _finite(x):
            return -(k0 + k + 1)
        kg = k0 + k + 1
        if kg >= rec0 and (kg - rec0) % stride == 0:
            for i in range(d):
                out[oi, i] = x[i]
            oi += 1
    return oi


@numba.njit(cache=True, nogil=True)
def _coupled_chunk(cr, pr, xr, ct, pt, xt, dW, dt, mi, env, k0, stride, out, oi, acc, refl):
    """Step reduced (xr) and transformed (xt) systems on the same increments.

    acc = [log D, J] with J the discounted envelope integral;
    env = [q, gamma, c_env, m_env, sigma]. Each output row: xr, xt, log D, J.
    """
    dr = xr.shape[0]
    dtt = xt.shape[0]
    br = np.empty(dr)
    sr = np.empty(dr)
    bt = np.empty(dtt)
    st = np.empty(dtt)
    c = np.zeros(2)
    q, gam, cenv, menv, sig = env[0], env[1], env[2], env[3], env[4]
    decay = math.exp(-q * dt)
    kern = -math.expm1(-q * dt) / q
    for k in range(dW.shape[0]):
        c[0] = xr[0]
        if mi >= 0:
            c[1] = xr[mi]
        g = (pt[6] * (c[0] - xt[0]) - pt[7] * c[1] * c[0]) / sig
        acc[0] += -g * dW[k, 0] - 0.5 * g * g * dt
        rt = xt[0]
        dev = xt[2] - menv - cenv * rt * rt
        u = gam * gam / q * rt * rt * dev * dev + 2.0 * menv * gam * rt * (xr[0] - rt)
        acc[1] = decay * acc[1] + u * kern
        _polar_step(cr, pr, xr, c, dW[k], dt, br, sr)
        _polar_step(ct, pt, xt, c, dW[k], dt, bt, st)
        _post(True, xr, refl)
        _post(True, xt, refl)
        if not (_finite(xr) and _finite(xt) and np.isfinite(acc[0])):
            return -(k0 + k + 1)
        if (k0 + k + 1) % stride == 0:
            for i in range(dr):
                out[oi, i] = xr[i]
            for i in range(dtt):
                out[oi, dr + i] = xt[i]
            out[oi, dr + dtt] = acc[0]
            out[oi, dr + dtt + 1] = acc[1]
            oi += 1
    return oi


# ---------------------------------------------------------------- drivers

def n_steps_for(T, dt):
    if not (T > 0 and dt > 0):
        raise ConfigurationError("T and dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError(f"dt={dt} does not divide T={T}")
    return n


def default_dt(params):
    return min(params.epsilon, 1.0) / 100.0


def em_step(spec: SystemSpec, state, dw, dt, coupling_state=None):
    """A single Euler-Maruyama update (with the polar post-processing) for a given increment."""
    x = np.array(state, dtype=float)
    dW = np.ascontiguousarray(np.asarray(dw, dtype=float).reshape(1, spec.noise_dimension))
    has_c = coupling_state is not None
    carr = np.atleast_2d(np.asarray(coupling_state, dtype=float)) if has_c else np.zeros((1, 1))
    out = np.empty((1, spec.dim))
    refl = np.zeros(1, dtype=np.int64)
    if _em_chunk(spec.code, spec.polar, spec.pvec(), x, dW, dt, carr, has_c, 0, 1, 1, out, 0, refl) < 0:
        raise IntegrationBlowupError(1, 0)
    return x


def _coupling_array(spec, coupling_path, n):
    names = spec.coupling_inputs
    if not names:
        return np.zeros((1, 1)), False
    if coupling_path is None:
        raise ConfigurationError(f"{spec.system_id} requires a coupling path")
    if coupling_path.stride != 1 or coupling_path.states.shape[0] != n + 1:
        raise ConfigurationError("coupling path must share the grid (stride 1, same length)")
    cs = coupling_path.states
    cols = [cs[:, 0]]
    if "m" in names:
        mi = _M_IDX.get(coupling_path.spec.system_id)
        if mi is None:
            raise ConfigurationError("coupling path carries no m-process")
        cols.append(cs[:, mi])
    return np.ascontiguousarray(np.column_stack(cols)), True


def integrate(spec: SystemSpec, initial_state, T, dt, plan: NoisePlan | None = None,
              coupling_path: Path | None = None, stride=1, record_from=0, seed=0) -> Path:
    """Euler-Maruyama path of spec from initial_state over [0, T].

    States are recorded at steps k >= record_from with (k - record_from) % stride == 0.
    """
    n = n_steps_for(T, dt)
    if plan is None:
        plan = NoisePlan(seed, 0, spec.noise_dimension, dt)
    if plan.noise_dimension != spec.noise_dimension or plan.dt != dt:
        raise ConfigurationError("noise plan does not match spec/dt")
    stride = int(stride)
    record_from = int(record_from)
    if stride < 1 or not 0 <= record_from <= n:
        raise ConfigurationError("bad stride/record_from")
    x = np.array(initial_state, dtype=float)
    if x.shape != (spec.dim,):
        raise ConfigurationError(f"{spec.system_id} expects a state of length {spec.dim}")
    if spec.polar and not x[0] >= R_MIN:
        raise DomainError("initial radius below r_min")
    carr, has_c = _coupling_array(spec, coupling_path, n)
    nrec = (n - record_from) // stride + 1
    out = np.empty((nrec, spec.dim))
    out[0] = x
    oi = 1
    if record_from > 0:
        oi = 0
    refl = np.zeros(1, dtype=np.int64)
    p = spec.pvec()
    k0 = 0
    for dW in plan.chunks(n):
        c = carr[k0:k0 + dW.shape[0]] if has_c else carr
        oi = _em_chunk(spec.code, spec.polar, p, x, dW, dt, c, has_c, k0, record_from, stride, out, oi, refl)
        if oi < 0:
            raise IntegrationBlowupError(-oi - 1, plan.trajectory_index)
        k0 += dW.shape[0]
    steps = record_from + stride * np.arange(nrec)
    return Path(times=steps * dt, states=out[:oi], spec=spec, noise_plan=plan,
                reflection_count=int(refl[0]), stride=stride, n_steps=n)


def _env_for(tspec, env_c=None, env_m=0.0):
    p = tspec.params
    variant = "stochastic_pm" if tspec.system_id == "transformed_polar_aug" else "slow_manifold"
    q = q_const(p, variant)
    if env_c is None:
        env_c = 1.0
    return np.array([q, p.gamma, env_c, env_m, p.sigma])


def integrate_coupled(reduced_spec: SystemSpec, transformed_spec: SystemSpec, inits, T, dt,
                      plan: NoisePlan, stride=1, env_c=None, env_m=0.0):
    """Reduced and transformed paths driven by identical increments.

    Returns (reduced Path, transformed Path); the transformed path carries
    extras 'log_D' (stochastic exponential at recorded nodes) and 'envelope'
    (pathwise Gronwall right-hand side at recorded nodes).
    """
    pairs = {("reduced_polar", "transformed_polar"), ("augmented_reduced", "transformed_polar_aug")}
    if (reduced_spec.system_id, transformed_spec.system_id) not in pairs:
        raise ConfigurationError("incompatible reduced/transformed pair")
    nd = max(reduced_spec.noise_dimension, transformed_spec.noise_dimension)
    if plan.noise_dimension != nd or plan.dt != dt:
        raise ConfigurationError("noise plan does not match the shared layout")
    n = n_steps_for(T, dt)
    stride = int(stride)
    xr = np.array(inits[0], dtype=float)
    xt = np.array(inits[1], dtype=float)
    if xr.shape != (reduced_spec.dim,) or xt.shape != (transformed_spec.dim,):
        raise ConfigurationError("initial states have wrong length")
    dr, dtt = xr.size, xt.size
    nrec = n // stride + 1
    out = np.empty((nrec, dr + dtt + 2))
    out[0, :dr] = xr
    out[0, dr:dr + dtt] = xt
    out[0, -2:] = 0.0
    acc = np.zeros(2)
    env = _env_for(transformed_spec, env_c, env_m)
    mi = _M_IDX.get(reduced_spec.system_id, -1)
    refl = np.zeros(1, dtype=np.int64)
    oi, k0 = 1, 0
    pr, pt = reduced_spec.pvec(), transformed_spec.pvec()
    for dW in plan.chunks(n):
        oi = _coupled_chunk(reduced_spec.code, pr, xr, transformed_spec.code, pt, xt, dW, dt, mi,
                            env, k0, stride, out, oi, acc, refl)
        if oi < 0:
            raise IntegrationBlowupError(-oi - 1, plan.trajectory_index)
        k0 += dW.shape[0]
    out = out[:oi]
    t = stride * np.arange(oi) * dt
    d0 = (out[0, 0] - out[0, dr]) ** 2
    envelope = d0 * np.exp(-env[0] * t) + out[:, -1]
    red = Path(t, out[:, :dr], reduced_spec, plan, int(refl[0]), stride, n)
    tr = Path(t, out[:, dr:dr + dtt], transformed_spec, plan, int(refl[0]), stride, n,
              extras=dict(log_D=out[:, -2].copy(), envelope=envelope))
    return red, tr


def _map(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def run_ensemble(spec: SystemSpec, initial_state, T, dt, master_seed, n_traj, stride=1,
                 record_from=0, workers=1) -> Ensemble:
    """n_traj independent paths, trajectory_index = 0..n_traj-1, order-independent."""
    if n_traj < 1:
        raise ConfigurationError("n_traj must be >= 1")

    def one(i):
        plan = NoisePlan(master_seed, i, spec.noise_dimension, dt)
        try:
            return integrate(spec, initial_state, T, dt, plan, stride=stride, record_from=record_from)
        except IntegrationBlowupError as e:
            raise IntegrationBlowupError(e.step, i) from None

    return Ensemble(_map(one, range(n_traj), workers))


def run_coupled_ensemble(reduced_spec, transformed_spec, inits, T, dt, master_seed, n_traj,
                         stride=None, workers=1, env_c=None, env_m=0.0):
    """Terminal-and-grid summaries of n_traj coupled pairs.

    Returns dict of arrays with shape (n_traj, n_rec): t, r_hat, r_tilde,
    log_D, envelope, plus 'z_tilde'.
    """
    n = n_steps_for(T, dt)
    if stride is None:
        stride = n
    nd = max(reduced_spec.noise_dimension, transformed_spec.noise_dimension)

    def one(i):
        plan = NoisePlan(master_seed, i, nd, dt)
        try:
            a, b = integrate_coupled(reduced_spec, transformed_spec, inits, T, dt, plan, stride, env_c, env_m)
        except IntegrationBlowupError as e:
            raise IntegrationBlowupError(e.step, i) from None
        return a.states[:, 0], b.states[:, 0], b.states[:, 2], b.extras["log_D"], b.extras["envelope"], a.times

    res = _map(one, range(n_traj), workers)
    return dict(t=res[0][5], r_hat=np.array([r[0] for r in res]), r_tilde=np.array([r[1] for r in res]),
                z_tilde=np.array([r[2] for r in res]), log_D=np.array([r[3] for r in res]),
                envelope=np.array([r[4] for r in res]))
