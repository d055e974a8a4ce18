"""Quantum Fisher information matrices and Cramer-Rao bounds.

All bounds are variances (rad^2) of an estimator of the weighted phase
``w . phi`` after the full measurement budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, WeightOutsideSupport
from .gaussian import BogoliubovMap
from .probes import ProbeSpec, Scheme, spatial_interferometer

SUPPORT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class QFIM:
    h: np.ndarray
    support_tol: float = SUPPORT_TOL

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DimensionMismatch(f"QFIM must be square, got {h.shape}")
        h = 0.5 * (h + h.T)
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def M(self) -> int:
        return self.h.shape[0]

    def scalar(self, direction=None) -> float:
        """Information about a common shift ``phi_j = phi + t * d_j``; all-ones by default."""
        d = np.ones(self.M) if direction is None else np.asarray(direction, dtype=float)
        return float(d @ self.h @ d)


@dataclass(frozen=True)
class BoundReport:
    qcrb: float
    scheme: Scheme
    inputs: dict = field(default_factory=dict)
    formula_id: str = ""

    def row(self) -> dict:
        return {"scheme": Scheme(self.scheme).value, **self.inputs, "qcrb": self.qcrb}


def number_cov_matrix(bmap: BogoliubovMap) -> np.ndarray:
    """Photon-number covariance ``Cov(n_i, n_j)`` of the map applied to vacuum.

    Computed by Wick's theorem from ``<b b^+> = U U^+``, ``<b^+ b> = conj(V V^+)``
    and ``<b b> = U V^T`` of the output operators.
    """
    U, V, a = bmap.U, bmap.V, bmap.alpha
    UVt = U @ V.T
    VVh = V @ V.conj().T
    UUh = U @ U.conj().T
    cov = np.abs(UVt) ** 2 + np.abs(VVh) ** 2 + np.diag(np.diag(VVh).real)
    cov = cov + (
        np.outer(a, a.conj()) * VVh.T
        + np.outer(a.conj(), a) * UUh
        + 2.0 * (np.outer(a.conj(), a.conj()) * UVt).real
    ).real
    return 0.5 * (cov + cov.T)


def number_cov(bmap: BogoliubovMap, i: int, j: int) -> float:
    n = bmap.n_modes
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"indices ({i}, {j}) outside 0..{n - 1}")
    return float(number_cov_matrix(bmap)[i, j])


def qfim_generic(bmap: BogoliubovMap, M: int, R_t: int) -> QFIM:
    """Pure-state QFIM over the M spatial phases: 4 x covariance of the per-channel photon totals."""
    if bmap.n_modes != M * R_t:
        raise DimensionMismatch(f"map has {bmap.n_modes} modes, expected R_t*M = {R_t * M}")
    c = number_cov_matrix(bmap).reshape(R_t, M, R_t, M)
    return QFIM(4.0 * c.sum(axis=(0, 2)))


def _first_column_intensities(u_spatial) -> np.ndarray:
    u = np.atleast_2d(np.asarray(u_spatial, dtype=complex))
    return np.abs(u[:, 0]) ** 2


def qfim_closed_lossless(N_bar: float, u_spatial) -> QFIM:
    """QFIM of a single squeezed vacuum with ``N_bar`` photons spread by ``U_S`` (and any ``U_T``)."""
    if N_bar < 0:
        raise InvalidParameter(f"N_bar must be >= 0, got {N_bar}")
    p = _first_column_intensities(u_spatial)
    return QFIM(4.0 * N_bar * (2.0 * N_bar + 1.0) * np.outer(p, p) + 4.0 * N_bar * np.diag(p))


def qfim_closed_lossy(N_bar: float, eta: float, u_spatial) -> QFIM:
    if not 0.0 < eta <= 1.0:
        raise InvalidParameter(f"eta must lie in (0, 1], got {eta}")
    if N_bar < 0:
        raise InvalidParameter(f"N_bar must be >= 0, got {N_bar}")
    p = _first_column_intensities(u_spatial)
    coherent = 4.0 * eta * N_bar * (2.0 * eta**2 * N_bar + 2.0 * eta - 1.0) / (1.0 + 2.0 * eta * (1.0 - eta) * N_bar)
    return QFIM(coherent * np.outer(p, p) + 4.0 * eta * N_bar * np.diag(p))


def qcrb(weights, h: QFIM) -> float:
    """``w^T H^+ w`` with an eigenvalue cutoff; raises if ``w`` leaves the support of ``H``."""
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if w.size != h.M:
        raise DimensionMismatch(f"weights has {w.size} entries, QFIM is {h.M}x{h.M}")
    lam, vec = np.linalg.eigh(h.h)
    lam_max = lam.max(initial=0.0)
    keep = lam > h.support_tol * lam_max if lam_max > 0 else np.zeros_like(lam, dtype=bool)
    coef = vec.T @ w
    outside = np.linalg.norm(coef[~keep])
    if outside >= 1e-8 * np.linalg.norm(w):
        raise WeightOutsideSupport(
            f"weight outside QFIM support: |(I - P) w| = {outside:.3e} for |w| = {np.linalg.norm(w):.3e}"
        )
    return float(np.sum(coef[keep] ** 2 / lam[keep]))


def _inputs(**kw):
    return {k: float(v) if not isinstance(v, (int, np.integer)) else int(v) for k, v in kw.items()}


def bound_ts(R, M, nbar) -> BoundReport:
    q = 1.0 / (8.0 * (R * M**2 * nbar**2 + R * M * nbar))
    return BoundReport(q, Scheme.TS, _inputs(R=R, M=M, nbar=nbar, eta=1.0), "ts")


def bound_tm(R, M, nbar) -> BoundReport:
    q = 1.0 / (8.0 * (R**2 * M**2 * nbar**2 + R * M * nbar))
    return BoundReport(q, Scheme.TM, _inputs(R=R, M=M, nbar=nbar, eta=1.0), "tm")


def bound_sql(eta, R, M, nbar) -> BoundReport:
    q = 1.0 / (4.0 * eta * R * M * nbar)
    return BoundReport(q, Scheme.SQL, _inputs(R=R, M=M, nbar=nbar, eta=eta), "sql")


def bound_ts_lossy(eta, R, M, nbar) -> BoundReport:
    x = M * nbar
    q = (1.0 + 2.0 * eta * (1.0 - eta) * x) / (8.0 * eta**2 * R * x * (x + 1.0))
    return BoundReport(q, Scheme.TS, _inputs(R=R, M=M, nbar=nbar, eta=eta), "ts_lossy")


def bound_tm_lossy(eta, R, M, nbar) -> BoundReport:
    x = R * M * nbar
    q = (1.0 + 2.0 * eta * (1.0 - eta) * x) / (8.0 * eta**2 * x * (x + 1.0))
    return BoundReport(q, Scheme.TM, _inputs(R=R, M=M, nbar=nbar, eta=eta), "tm_lossy")


def sql_crossover(eta, R, M, nbar) -> bool:
    """True when the lossy time-multiplexed bound beats the coherent-state limit."""
    return bound_tm_lossy(eta, R, M, nbar).qcrb < bound_sql(eta, R, M, nbar).qcrb


def run_qfim(spec: ProbeSpec) -> QFIM:
    """Closed-form QFIM of one run of ``spec`` (lossy form, exact at eta = 1)."""
    if spec.scheme is Scheme.SQL:
        # coherent product state: Cov(N_i, N_j) = delta_ij R_t nbar, attenuated by eta
        return QFIM(4.0 * spec.eta * spec.R_t * spec.nbar * np.eye(spec.M))
    u_s = spatial_interferometer(spec.weights)
    N_bar = spec.M * spec.nbar if spec.scheme is Scheme.TS else spec.R_t * spec.M * spec.nbar
    h = qfim_closed_lossy(N_bar, spec.eta, u_s)
    if spec.scheme is Scheme.TS:
        return QFIM(spec.R_t * h.h)
    return h


def bound_for_spec(spec: ProbeSpec, weights=None) -> BoundReport:
    """QCRB for the whole budget: the single-run bound divided by ``R_r``.

    Weights default to ``1/M`` each (the average phase).
    """
    w = np.full(spec.M, 1.0 / spec.M) if weights is None else np.asarray(weights, dtype=float)
    q = qcrb(w, run_qfim(spec)) / spec.R_r
    return BoundReport(
        q,
        spec.scheme,
        _inputs(R_t=spec.R_t, R_r=spec.R_r, M=spec.M, nbar=spec.nbar, eta=spec.eta),
        f"{spec.scheme.value.lower()}_spec",
    )
