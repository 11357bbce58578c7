"""W1 distance and parameterization-defect functionals over empirical measures."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateMeasureError
from .measures import EmpiricalMeasure
from .model import c_tau

N_BLOCKS = 50
N_BOOT = 200


def _vals(m):
    if isinstance(m, EmpiricalMeasure):
        return m.values if m.dim == 1 else m.col("r")
    return np.asarray(m, dtype=float).ravel()


def w1_distance(mu, nu) -> float:
    """Exact W1 between two 1D empirical measures with uniform weights."""
    a = np.sort(_vals(mu))
    b = np.sort(_vals(nu))
    if a.size == 0 or b.size == 0:
        raise ConfigurationError("W1 of an empty measure")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    grid = np.concatenate([a, b])
    grid.sort()
    Fa = np.searchsorted(a, grid[:-1], side="right") / a.size
    Fb = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(Fa - Fb) * np.diff(grid)))


def _blocks(n, n_blocks):
    nb = max(2, min(n_blocks, n))
    return np.array_split(np.arange(n), nb)


def w1_with_error(mu, nu, seed=0, n_blocks=N_BLOCKS, n_boot=N_BOOT):
    """W1 and a moving-block bootstrap standard error (time order preserved)."""
    a, b = _vals(mu), _vals(nu)
    d = w1_distance(a, b)
    rng = np.random.default_rng(seed)
    ba, bb = _blocks(a.size, n_blocks), _blocks(b.size, n_blocks)
    reps = np.empty(n_boot)
    for i in range(n_boot):
        ia = np.concatenate([ba[j] for j in rng.integers(0, len(ba), len(ba))])
        ib = np.concatenate([bb[j] for j in rng.integers(0, len(bb), len(bb))])
        reps[i] = w1_distance(a[ia], b[ib])
    return d, float(reps.std(ddof=1))


# ---------------------------------------------------------------- manifolds

@dataclass(frozen=True)
class Manifold:
    """slow: h(r) = r^2. pm: h(m, r) = m + c_tau r^2 with label pm_tau or pm_ou."""

    kind: str = "slow"
    tau: float | None = None
    epsilon: float | None = None
    m_kind: str = "cubic"

    @property
    def c(self):
        if self.kind == "slow":
            return 1.0
        return float(c_tau(self.tau, self.epsilon))

    @property
    def manifold_id(self):
        if self.kind == "slow":
            return "slow"
        return f"pm_ou({self.tau:.6g})" if self.m_kind == "ou" else f"pm_tau({self.tau:.6g})"

    @classmethod
    def pm(cls, tau, epsilon, m_kind="cubic"):
        if not (tau and tau > 0):
            raise ConfigurationError("pm manifold needs tau > 0")
        return cls("pm", float(tau), float(epsilon), m_kind)


SLOW = Manifold()


@dataclass
class DefectReport:
    q_normalized: float
    l4_defect: float
    manifold_id: str
    sample_count: int
    standard_error: float
    l4_stderr: float = float("nan")
    l2_defect: float = float("nan")
    tau: float | None = None
    q_centered: float = float("nan")
    m_pairing: str = "none"
    extras: dict = field(default_factory=dict)

    def csv_row(self, case_id):
        return [case_id, self.manifold_id, "" if self.tau is None else f"{self.tau:.10g}",
                f"{self.q_normalized:.10g}", f"{self.l4_defect:.10g}", f"{self.standard_error:.6g}",
                str(self.sample_count)]

    CSV_HEADER = ("case_id", "manifold_id", "tau", "Q", "l4", "stderr", "n")


def write_defect_csv(fname, rows, header_comment=None):
    with open(fname, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DefectReport.CSV_HEADER)
        for case_id, rep in rows:
            w.writerow(rep.csv_row(case_id))


def _rz(mu_rz):
    if isinstance(mu_rz, EmpiricalMeasure):
        return mu_rz.col("r"), mu_rz.col("z")
    a = np.asarray(mu_rz, dtype=float)
    return a[:, 0], a[:, 1]


def pm_sample_count(n):
    return int(max(1000, n // 10))


def _terms(r, z, c, m_samples, paired_m):
    """Per-sample (|z-h|^2, |z-h|^4) averaged over m where applicable."""
    a = z - c * r * r
    if paired_m is not None:
        d = a - paired_m
        d2 = d * d
        return d2, d2 * d2
    if m_samples is None:
        d2 = a * a
        return d2, d2 * d2
    m = np.asarray(m_samples, dtype=float)
    m1, m2, m3, m4 = (np.mean(m ** k) for k in (1, 2, 3, 4))
    a2 = a * a
    e2 = a2 - 2 * a * m1 + m2
    e4 = a2 * a2 - 4 * a2 * a * m1 + 6 * a2 * m2 - 4 * a * m3 + m4
    return e2, e4


def defect_terms(mu_rz, manifold=SLOW, m_samples=None, paired_m=None):
    r, z = _rz(mu_rz)
    if manifold.kind == "pm" and m_samples is None and paired_m is None:
        raise ConfigurationError("pm manifold needs m_samples (product) or paired_m")
    e2, e4 = _terms(r, z, manifold.c, m_samples, paired_m)
    return r, z, e2, e4


def defect_report(mu_rz, manifold=SLOW, m_samples=None, paired_m=None, seed=0,
                  n_blocks=N_BLOCKS, n_boot=N_BOOT) -> DefectReport:
    """Normalized defect Q, L4 defect and L2 defect, with block-bootstrap errors.

    With m_samples the m-average is exact over the product of the empirical
    measures (closed form in the sample moments of m). With paired_m each
    (r, z) sample is matched with its own m value from the same trajectory.
    """
    r, z, e2, e4 = defect_terms(mu_rz, manifold, m_samples, paired_m)
    z2 = z * z
    num, den, n4 = e2.mean(), z2.mean(), e4.mean()
    if den == 0:
        raise DegenerateMeasureError("all z samples vanish: Q undefined")
    var_z = z.var()
    n = r.size
    # block bootstrap over time-ordered samples
    bl = _blocks(n, n_blocks)
    S = np.array([[e2[i].sum(), z2[i].sum(), e4[i].sum(), z[i].sum(), i.size] for i in bl])
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, len(bl), (n_boot, len(bl)))
    tot = S[pick].sum(axis=1)
    qb = tot[:, 0] / tot[:, 1]
    l4b = (tot[:, 2] / tot[:, 4]) ** 0.25
    kind = "paired" if paired_m is not None else ("product" if m_samples is not None else "none")
    return DefectReport(
        q_normalized=float(num / den), l4_defect=float(n4 ** 0.25), manifold_id=manifold.manifold_id,
        sample_count=int(n), standard_error=float(qb.std(ddof=1)), l4_stderr=float(l4b.std(ddof=1)),
        l2_defect=float(math.sqrt(num)), tau=manifold.tau,
        q_centered=float(num / var_z) if var_z > 0 else float("nan"), m_pairing=kind)


def defect_normalized(mu_rz, manifold=SLOW, mu_z=None, m_samples=None, paired_m=None, seed=0) -> DefectReport:
    """Q = int |z - h|^2 d mu_{r,z} / int z^2 d mu_z."""
    rep = defect_report(mu_rz, manifold, m_samples, paired_m, seed)
    if mu_z is not None:
        zz = _vals(mu_z) if not isinstance(mu_z, EmpiricalMeasure) else mu_z.values
        den = float(np.mean(zz * zz))
        if den == 0:
            raise DegenerateMeasureError("all z samples vanish: Q undefined")
        rep.q_normalized = rep.l2_defect ** 2 / den
    return rep


def defect_l4(mu_rz, manifold=SLOW, m_samples=None, paired_m=None, seed=0):
    """(l4 defect, bootstrap stderr)."""
    rep = defect_report(mu_rz, manifold, m_samples, paired_m, seed)
    return rep.l4_defect, rep.l4_stderr


def optimal_c(mu_rz, m_samples=None, paired_m=None):
    """argmin_c E(z - m - c r^2)^2 = E[(z - m) r^2] / E[r^4] (product or paired m)."""
    r, z = _rz(mu_rz)
    r2 = r * r
    if paired_m is not None:
        zm = z - paired_m
    elif m_samples is not None:
        zm = z - np.mean(m_samples)
    else:
        zm = z
    return float(np.mean(zm * r2) / np.mean(r2 * r2))
