"""Empirical invariant measures from long trajectories, with error bars."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import NoisePlan, default_dt, integrate
from .errors import ConfigurationError
from .model import SystemSpec

MIN_REPORT_SAMPLES = 10_000
MAX_THIN = 1000
MIN_BATCHES = 30


# ---------------------------------------------------------------- statistics

def batch_means(x, n_batches=MIN_BATCHES):
    """(mean, standard error) of a correlated series by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        raise ConfigurationError("empty series")
    if n < 2 * n_batches:
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    b = n // n_batches
    m = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(x.mean()), float(m.std(ddof=1) / math.sqrt(n_batches))


def autocorr(x):
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    nf = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nf)
    ac = np.fft.irfft(f * np.conj(f), nf)[:n]
    return ac / ac[0] if ac[0] > 0 else np.zeros(n)


def iat(x, c=5.0):
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    rho = autocorr(x)
    if not np.any(rho):
        return 1.0
    tau = 2.0 * np.cumsum(rho) - 1.0
    win = np.arange(tau.size) < c * tau
    m = np.argmin(win) if not win.all() else tau.size - 1
    return float(max(tau[m], 1.0))


def split_rhat(x, n_split=4):
    """Gelman-Rubin statistic computed on n_split contiguous segments of one chain."""
    x = np.asarray(x, dtype=float)
    L = x.size // n_split
    if L < 2:
        return float("nan")
    ch = x[: L * n_split].reshape(n_split, L)
    W = ch.var(axis=1, ddof=1).mean()
    B = L * ch.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0
    var = (L - 1) / L * W + B / L
    return float(math.sqrt(var / W))


@dataclass
class ErgodicAverageDiagnostics:
    window_means: np.ndarray
    gelman_split_stat: float
    standard_error: float
    iat_steps: float = float("nan")


def diagnostics(x, n_windows=20, iat_steps=float("nan")):
    x = np.asarray(x, dtype=float)
    cs = np.cumsum(x)
    idx = np.unique(np.linspace(1, x.size, min(n_windows, x.size)).astype(int))
    return ErgodicAverageDiagnostics(cs[idx - 1] / idx, split_rhat(x), batch_means(x)[1], iat_steps)


# ---------------------------------------------------------------- measure

@dataclass
class EmpiricalMeasure:
    """Uniformly weighted sample cloud; samples keep their time order."""

    samples: np.ndarray
    coords: tuple
    meta: dict = field(default_factory=dict)
    diagnostics: ErgodicAverageDiagnostics | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] == 0:
            raise ConfigurationError("empty measure")
        if not np.all(np.isfinite(s)):
            raise ConfigurationError("non-finite samples")
        if s.shape[1] != len(self.coords):
            raise ConfigurationError("coords do not match sample width")
        self.samples = s
        self.coords = tuple(self.coords)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def weights(self):
        return np.full(len(self), 1.0 / len(self))

    @property
    def values(self):
        """1D measures: the flat sample vector."""
        if self.dim != 1:
            raise ConfigurationError("values only defined for 1D measures")
        return self.samples[:, 0]

    def col(self, name):
        if name in self.coords:
            return self.samples[:, self.coords.index(name)]
        if name == "r" and {"x", "y"} <= set(self.coords):
            return np.hypot(self.col("x"), self.col("y"))
        if name == "theta" and {"x", "y"} <= set(self.coords):
            return np.arctan2(self.col("y"), self.col("x")) % (2 * np.pi)
        raise ConfigurationError(f"projection {name!r} invalid for coords {self.coords}")

    def thin(self, k):
        return EmpiricalMeasure(self.samples[::k], self.coords, dict(self.meta))

    def merge(self, other):
        if other.coords != self.coords:
            raise ConfigurationError("cannot merge measures on different coordinates")
        return EmpiricalMeasure(np.vstack([self.samples, other.samples]), self.coords,
                                dict(self.meta, merged=True))

    def to_csv(self, fname):
        np.savetxt(fname, self.samples, delimiter=",", header=",".join(self.coords), comments="", fmt="%.17g")

    def histogram(self, fname=None, bins=100, coord=None):
        x = self.values if coord is None else self.col(coord)
        dens, edges = np.histogram(x, bins=bins, density=True)
        tab = np.column_stack([edges[:-1], edges[1:], dens])
        if fname is not None:
            np.savetxt(fname, tab, delimiter=",", header="bin_left,bin_right,density", comments="", fmt="%.17g")
        return tab


def marginal(measure: EmpiricalMeasure, projection) -> EmpiricalMeasure:
    names = (projection,) if isinstance(projection, str) else tuple(projection)
    cols = np.column_stack([measure.col(n) for n in names])
    return EmpiricalMeasure(cols, names, dict(measure.meta, projection=names))


def moment(measure, p) -> float:
    if p < 1:
        raise ConfigurationError("p must be >= 1")
    return float(np.mean(np.abs(_flat(measure)) ** p))


def tail_integral(measure, a) -> float:
    if a < 0:
        raise ConfigurationError("threshold must be nonnegative")
    x = _flat(measure)
    return float(np.mean(x * (x > a)))


def _flat(measure):
    return measure.values if isinstance(measure, EmpiricalMeasure) else np.asarray(measure, dtype=float).ravel()


# ---------------------------------------------------------------- estimation

def default_burn_in(params):
    return max(10.0 / params.lam, 10.0 * params.epsilon, 50.0)


def estimate_invariant(spec: SystemSpec, init, T_total, dt=None, burn_in=None, thin=None, seed=0,
                       report_grade=False, n_chains=1, pilot_steps=200_000) -> EmpiricalMeasure:
    """Time-average samples of spec after burn-in, one sample every thin steps.

    Sub-streams per chain i: burn-in uses trajectory index 3i, the thinning
    pilot 3i+1 and the sampling run 3i+2. T_total includes the burn-in.
    """
    p = spec.params
    dt = default_dt(p) if dt is None else dt
    burn_in = default_burn_in(p) if burn_in is None else burn_in
    if not 0 <= burn_in < T_total:
        raise ConfigurationError("burn_in must be smaller than T_total")
    nb = int(round(burn_in / dt))
    ns = int(round((T_total - burn_in) / dt))
    if ns < 1:
        raise ConfigurationError("no sampling window")
    nd = spec.noise_dimension
    out, iats, refl = [], [], 0
    for i in range(n_chains):
        x = np.array(init, dtype=float)
        if nb > 0:
            bp = integrate(spec, x, nb * dt, dt, NoisePlan(seed, 3 * i, nd, dt), record_from=nb)
            x = bp.states[-1]
            refl += bp.reflection_count
        k = thin
        if k is None:
            npil = min(pilot_steps, ns)
            pil = integrate(spec, x, npil * dt, dt, NoisePlan(seed, 3 * i + 1, nd, dt))
            r = EmpiricalMeasure(pil.states, spec.coords).col("r")
            iats.append(iat(r))
            k = int(min(MAX_THIN, max(1, math.ceil(iats[-1]))))
        k = int(k)
        if k < 1:
            raise ConfigurationError("thin must be >= 1")
        # sampling window rounded down to a whole number of strides
        nk = (ns // k) * k
        if nk < k:
            raise ConfigurationError("sampling window shorter than one stride")
        path = integrate(spec, x, nk * dt, dt, NoisePlan(seed, 3 * i + 2, nd, dt), stride=k, record_from=k)
        refl += path.reflection_count
        out.append(path.states)
        thin_used = k
    s = np.vstack(out)
    if report_grade and s.shape[0] < MIN_REPORT_SAMPLES:
        raise ConfigurationError(f"only {s.shape[0]} samples; report-grade runs need {MIN_REPORT_SAMPLES}")
    meta = dict(system=spec.system_id, burn_in=nb * dt, thin=thin_used, seed=seed, dt=dt,
                n_chains=n_chains, T_total=T_total, reflection_count=refl,
                reflection_rate=refl / max(1, n_chains * (nb + ns)))
    m = EmpiricalMeasure(s, spec.coords, meta)
    m.diagnostics = diagnostics(m.col("r"), iat_steps=float(np.mean(iats)) if iats else float("nan"))
    return m
