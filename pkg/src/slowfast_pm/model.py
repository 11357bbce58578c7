"""Parameters, the eight SDE systems, coordinate maps and closed-form constants.

State layouts (all float64 vectors):

    original_cartesian      (x, y, z)
    reduced_cartesian       (x, y)
    original_polar          (r, theta, z)
    reduced_polar           (r, theta)
    transformed_polar       (r, theta, z)        coupling: (r_hat,)
    augmented_original      (r, theta, z, m)
    augmented_reduced       (r, theta, m)
    transformed_polar_aug   (r, theta, z)        coupling: (r_hat, m)

Noise columns follow the fixed global layout (W^r, W^theta, W^3, W^4); the
Cartesian systems read columns 0 and 1 as the two planar Brownian motions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import ConfigurationError, DomainError

R_MIN = 1e-8
TWO_PI = 2.0 * math.pi

SYSTEM_IDS = (
    "original_cartesian",
    "reduced_cartesian",
    "original_polar",
    "reduced_polar",
    "transformed_polar",
    "augmented_original",
    "augmented_reduced",
    "transformed_polar_aug",
)
_CODE = {s: i for i, s in enumerate(SYSTEM_IDS)}
# (state dim, noise dim, polar, coupling names)
_GEOM = {
    "original_cartesian": (3, 3, False, ()),
    "reduced_cartesian": (2, 2, False, ()),
    "original_polar": (3, 3, True, ()),
    "reduced_polar": (2, 2, True, ()),
    "transformed_polar": (3, 3, True, ("r_hat",)),
    "augmented_original": (4, 4, True, ()),
    "augmented_reduced": (3, 4, True, ()),
    "transformed_polar_aug": (3, 4, True, ("r_hat", "m")),
}
COORDS = {
    "original_cartesian": ("x", "y", "z"),
    "reduced_cartesian": ("x", "y"),
    "original_polar": ("r", "theta", "z"),
    "reduced_polar": ("r", "theta"),
    "transformed_polar": ("r", "theta", "z"),
    "augmented_original": ("r", "theta", "z", "m"),
    "augmented_reduced": ("r", "theta", "m"),
    "transformed_polar_aug": ("r", "theta", "z"),
}


@dataclass(frozen=True)
class ModelParams:
    lam: float
    f: float
    gamma: float
    epsilon: float
    sigma: float
    tau: float | None = None

    def __post_init__(self):
        for name in ("lam", "f", "gamma", "epsilon"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive, got {v}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise DomainError(f"sigma must be nonnegative, got {self.sigma}")
        if self.tau is not None and not (self.tau > 0):
            raise DomainError(f"tau must be positive, got {self.tau}")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class SystemSpec:
    """One of the eight systems.

    m_kind selects the M-process drift (cubic -m^3/eps or ou -m/eps);
    m_noise selects its driving column: 'independent' uses W^4, 'shared'
    reuses W^3 (the z noise). coupling_scale multiplies the coupling g of the
    transformed systems; it exists for test hooks and defaults to 1.
    """

    system_id: str
    params: ModelParams
    m_kind: str = "cubic"
    m_noise: str = "independent"
    coupling_scale: float = 1.0
    code: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.system_id not in _CODE:
            raise ConfigurationError(f"unknown system {self.system_id!r}")
        if self.m_kind not in ("cubic", "ou"):
            raise ConfigurationError(f"unknown m_kind {self.m_kind!r}")
        if self.m_noise not in ("independent", "shared"):
            raise ConfigurationError(f"unknown m_noise {self.m_noise!r}")
        if self.system_id == "augmented_reduced" and self.params.tau is None:
            raise ConfigurationError(f"{self.system_id} needs params.tau")
        if self.system_id in ("transformed_polar", "transformed_polar_aug") and not self.params.sigma > 0:
            raise DomainError("transformed systems need sigma > 0 (q undefined)")
        object.__setattr__(self, "code", _CODE[self.system_id])

    @property
    def dim(self):
        return _GEOM[self.system_id][0]

    @property
    def noise_dimension(self):
        return _GEOM[self.system_id][1]

    @property
    def polar(self):
        return _GEOM[self.system_id][2]

    @property
    def coupling_inputs(self):
        return _GEOM[self.system_id][3]

    @property
    def coords(self):
        return COORDS[self.system_id]

    def pvec(self):
        """Packed coefficient vector consumed by the compiled kernels."""
        p = self.params
        ct = c_tau(p.tau, p.epsilon) if p.tau is not None else 1.0
        kq = gm = 0.0
        if self.system_id == "transformed_polar":
            kq = (q_const(p, "slow_manifold") + p.lam) * self.coupling_scale
        elif self.system_id == "transformed_polar_aug":
            kq = (q_const(p, "stochastic_pm") + p.lam) * self.coupling_scale
            gm = p.gamma * self.coupling_scale
        return np.array([p.lam, p.f, p.gamma, p.epsilon, p.sigma, ct, kq, gm,
                         1.0 if self.m_kind == "ou" else 0.0,
                         1.0 if self.m_noise == "shared" else 0.0])


# ---------------------------------------------------------------- kernels
# p = [lam, f, gamma, eps, sigma, c_tau, k_q, g_m, m_is_ou, m_shared]

@numba.njit(cache=True, nogil=True)
def drift_core(code, p, x, c, out):
    lam, f, gam, eps, sig = p[0], p[1], p[2], p[3], p[4]
    s2 = 0.5 * sig * sig
    if code == 0:
        out[0] = lam * x[0] - f * x[1] - gam * x[0] * x[2]
        out[1] = f * x[0] + lam * x[1] - gam * x[1] * x[2]
        out[2] = -(x[2] - (x[0] * x[0] + x[1] * x[1])) / eps
    elif code == 1:
        rr = x[0] * x[0] + x[1] * x[1]
        out[0] = lam * x[0] - f * x[1] - gam * x[0] * rr
        out[1] = f * x[0] + lam * x[1] - gam * x[1] * rr
    elif code == 2 or code == 4 or code == 7:
        r = x[0]
        out[0] = lam * r - gam * r * x[2] + s2 / r
        out[1] = f
        out[2] = -(x[2] - r * r) / eps
        if code == 4:
            out[0] += p[6] * (c[0] - r)
        elif code == 7:
            out[0] += p[6] * (c[0] - r) - p[7] * c[1] * c[0]
    elif code == 3:
        r = x[0]
        out[0] = lam * r - gam * r * r * r + s2 / r
        out[1] = f
    elif code == 5:
        r = x[0]
        out[0] = lam * r - gam * r * x[2] + s2 / r
        out[1] = f
        out[2] = -(x[2] - r * r) / eps
        m = x[3]
        out[3] = -m / eps if p[8] > 0.5 else -m * m * m / eps
    elif code == 6:
        r = x[0]
        m = x[2]
        out[0] = lam * r - gam * p[5] * r * r * r + s2 / r - gam * r * m
        out[1] = f
        out[2] = -m / eps if p[8] > 0.5 else -m * m * m / eps


@numba.njit(cache=True, nogil=True)
def noise_core(code, p, x, dw, out):
    """out = diffusion(x) @ dw, using the diagonal structure of every system."""
    sig = p[4]
    sz = sig / math.sqrt(p[3])
    if code == 0:
        out[0] = sig * dw[0]
        out[1] = sig * dw[1]
        out[2] = sz * dw[2]
    elif code == 1:
        out[0] = sig * dw[0]
        out[1] = sig * dw[1]
    elif code == 3:
        out[0] = sig * dw[0]
        out[1] = sig / x[0] * dw[1]
    elif code == 6:
        out[0] = sig * dw[0]
        out[1] = sig / x[0] * dw[1]
        out[2] = sz * (dw[2] if p[9] > 0.5 else dw[3])
    else:
        out[0] = sig * dw[0]
        out[1] = sig / x[0] * dw[1]
        out[2] = sz * dw[2]
        if code == 5:
            out[3] = sz * (dw[2] if p[9] > 0.5 else dw[3])


# ---------------------------------------------------------------- public API

def _check_state(spec, state, coupling_state):
    x = np.asarray(state, dtype=float)
    if x.shape != (spec.dim,):
        raise ConfigurationError(f"{spec.system_id} expects a state of length {spec.dim}")
    if spec.polar and not x[0] >= R_MIN:
        raise DomainError(f"polar radius {x[0]} below r_min={R_MIN}")
    need = len(spec.coupling_inputs)
    if need:
        if coupling_state is None:
            raise ConfigurationError(f"{spec.system_id} requires coupling state {spec.coupling_inputs}")
        c = np.atleast_1d(np.asarray(coupling_state, dtype=float))
        if c.shape != (need,):
            raise ConfigurationError(f"coupling state must have length {need}")
        if not c[0] >= R_MIN:
            raise DomainError(f"coupled radius {c[0]} below r_min")
    else:
        c = np.zeros(1)
    return x, c


def drift(spec: SystemSpec, state, coupling_state=None) -> np.ndarray:
    """Drift vector of the system at state (theta rate returned unreduced)."""
    x, c = _check_state(spec, state, coupling_state)
    out = np.zeros(spec.dim)
    drift_core(spec.code, spec.pvec(), x, c, out)
    return out


def diffusion(spec: SystemSpec, state) -> np.ndarray:
    """Diffusion matrix, shape (dim, noise_dimension)."""
    x = np.asarray(state, dtype=float)
    if spec.polar and not x[0] >= R_MIN:
        raise DomainError(f"polar radius {x[0]} below r_min={R_MIN}")
    p = spec.pvec()
    B = np.zeros((spec.dim, spec.noise_dimension))
    col = np.zeros(spec.dim)
    for j in range(spec.noise_dimension):
        e = np.zeros(spec.noise_dimension)
        e[j] = 1.0
        noise_core(spec.code, p, x, e, col)
        B[:, j] = col
    return B


def to_polar(c) -> np.ndarray:
    x, y, *rest = np.asarray(c, dtype=float)
    if x == 0.0 and y == 0.0:
        raise DomainError("polar angle undefined at the origin")
    th = math.atan2(y, x) % TWO_PI
    return np.array([math.hypot(x, y), th, *rest])


def to_cartesian(p) -> np.ndarray:
    r, th, *rest = np.asarray(p, dtype=float)
    if r < 0:
        raise DomainError("negative radius")
    return np.array([r * math.cos(th), r * math.sin(th), *rest])


def r_det(params: ModelParams) -> float:
    return math.sqrt(params.lam / params.gamma)


def r_star(params: ModelParams) -> float:
    """Positive root of lam r - gamma r^3 + sigma^2/(2r)."""
    a = params.lam / params.gamma
    return math.sqrt(0.5 * a + 0.5 * math.sqrt(a * a + 2.0 * params.sigma ** 2 / params.gamma))


def q_const(params: ModelParams, variant: str = "slow_manifold") -> float:
    if not params.sigma > 0:
        raise DomainError("q is undefined for sigma = 0")
    s2 = params.sigma ** 2
    if variant == "slow_manifold":
        k = 1.0 / s2
    elif variant == "stochastic_pm":
        k = 2.5 / s2
    else:
        raise ConfigurationError(f"unknown q variant {variant!r}")
    return (1.0 + k) / (params.epsilon * params.gamma)


def c_tau(tau, epsilon):
    """1 - exp(-tau/eps), computed without cancellation for small tau."""
    return -np.expm1(-np.asarray(tau, dtype=float) / epsilon) if np.ndim(tau) else -math.expm1(-tau / epsilon)


def tau_from_c(c, epsilon):
    """Inverse of c_tau on (0, 1)."""
    return -epsilon * np.log1p(-np.asarray(c, dtype=float))


def g_slow(params: ModelParams, r1, r2):
    """Coupling of the slow-manifold transform: (q+lam)/sigma (r2 - r1)."""
    return (q_const(params, "slow_manifold") + params.lam) / params.sigma * (np.asarray(r2) - np.asarray(r1))


def g_stoch(params: ModelParams, m, r1, r2):
    """Coupling of the stochastic-PM transform."""
    q = q_const(params, "stochastic_pm")
    r2 = np.asarray(r2)
    return (q + params.lam) / params.sigma * (r2 - np.asarray(r1)) - params.gamma / params.sigma * np.asarray(m) * r2
