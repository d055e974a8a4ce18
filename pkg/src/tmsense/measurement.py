"""Homodyne detection, classical Fisher information and maximum-likelihood estimation.

Every probe here is a passive interferometer fed by a few squeezed (or
displaced) inputs and vacuum, followed by phase encoding and pure loss. The
homodyne outcomes of one run are therefore Gaussian with covariance
``I/2 + B G B^T``, where ``B`` has two columns per squeezed input. The
:class:`LowRankNormal` law exploits that structure so that runs with thousands
of temporal modes stay cheap; :func:`outcome_model` with ``method="dense"``
goes through the full covariance-matrix pipeline instead.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    DimensionMismatch,
    InvalidParameter,
    NonPositiveCovariance,
    SingularCovariance,
    UninformativeMeasurement,
)
from .fisher import bound_for_spec, run_qfim
from .gaussian import loss_channel, phase_encode, quadrature_marginal
from .probes import ProbeSpec, build_probe, injection

FD_STEP = 1e-6
RICHARDSON_TOL = 1e-4
TWO_PI = 2.0 * np.pi


def default_workers() -> int:
    """Worker cap from ``TMSENSE_THREADS`` (0 or unset: one per CPU)."""
    raw = os.environ.get("TMSENSE_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise InvalidParameter(f"TMSENSE_THREADS must be >= 0, got {raw}")
    return n or (os.cpu_count() or 1)


@dataclass(frozen=True, eq=False)
class HomodyneConfig:
    lo_phases: np.ndarray
    seed: int = 0

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.lo_phases, dtype=float))
        if not np.all(np.isfinite(th)):
            raise InvalidParameter("local-oscillator phases must be finite")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParameter(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        th = np.mod(th, TWO_PI)
        th.setflags(write=False)
        object.__setattr__(self, "lo_phases", th)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def uniform(cls, n_modes: int, theta: float = np.pi / 2, seed: int = 0) -> "HomodyneConfig":
        return cls(np.full(n_modes, theta), seed)


def phi_opt(R_t: int, M: int, nbar: float) -> float:
    """Operating phase at which squeezed-quadrature homodyne saturates the QCRB."""
    x = R_t * M * nbar
    if not x > 0:
        raise InvalidParameter("R_t * M * nbar must be positive")
    return 0.5 * math.asin(1.0 / (2.0 * x + 1.0))


def local_phases(spec: ProbeSpec, C: float = 0.0, D: float = 0.0) -> np.ndarray:
    """Spatial phases with mean ``phi_opt + C/(R_t M nbar)`` and mean-square spread ``D/(R_t M nbar)``."""
    x = spec.R_t * spec.M * spec.nbar
    centre = phi_opt(spec.R_t, spec.M, spec.nbar) + C / x
    if spec.M == 1 or D == 0:
        return np.full(spec.M, centre)
    if D < 0:
        raise InvalidParameter("spread D must be >= 0")
    v = np.linspace(-1.0, 1.0, spec.M)
    v *= math.sqrt(D / x) / math.sqrt(np.mean(v**2))
    return centre + v


# --------------------------------------------------------------------------- laws


@dataclass(frozen=True, eq=False)
class DenseNormal:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def n(self) -> int:
        return self.mean.size

    def sqrt_cov(self) -> np.ndarray:
        lam, vec = np.linalg.eigh(self.cov)
        if lam.min() < -1e-10 * max(lam.max(), 1.0):
            raise NonPositiveCovariance(f"covariance has eigenvalue {lam.min():.3e} < 0")
        return (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T

    def sample(self, rng: np.random.Generator, rows: int) -> np.ndarray:
        S = self.sqrt_cov()
        return self.mean + rng.standard_normal((rows, self.n)) @ S

    def _check_regular(self):
        lam, vec = np.linalg.eigh(self.cov)
        if lam.min() <= 1e-14 * max(lam.max(), 1.0):
            raise SingularCovariance(
                f"model covariance is singular along outcome direction {np.round(vec[:, 0], 6).tolist()}",
                vec[:, 0],
            )

    def logpdf_sum(self, Y) -> float:
        self._check_regular()
        Y = np.atleast_2d(Y)
        L = np.linalg.cholesky(self.cov)
        z = np.linalg.solve(L, (Y - self.mean).T)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        return float(-0.5 * (Y.shape[0] * (self.n * math.log(TWO_PI) + logdet) + np.sum(z * z)))

    def fisher(self, dmean, dcov) -> float:
        Si = np.linalg.inv(self.cov)
        A = Si @ dcov
        return float(0.5 * np.trace(A @ A) + dmean @ Si @ dmean)


@dataclass(frozen=True, eq=False)
class LowRankNormal:
    """Normal law with covariance ``s0 I + B G B^T`` (``G`` symmetric, possibly indefinite)."""

    mean: np.ndarray
    B: np.ndarray
    G: np.ndarray
    s0: float = 0.5

    @property
    def n(self) -> int:
        return self.mean.size

    @property
    def cov(self) -> np.ndarray:
        return self.s0 * np.eye(self.n) + self.B @ self.G @ self.B.T

    def _capacitance(self):
        k = self.G.shape[0]
        BtB = self.B.T @ self.B
        A = self.s0 * np.eye(k) + BtB @ self.G
        return BtB, A

    def _inv_core(self):
        """``K`` with ``Sigma^{-1} = (I - B K B^T) / s0``."""
        _, A = self._capacitance()
        return self.G @ np.linalg.inv(A) if A.size else np.zeros((0, 0))

    def eigen_span(self):
        """Orthonormal ``P`` and ``lam`` with ``B G B^T = P diag(lam) P^T``."""
        if self.B.shape[1] == 0:
            return np.zeros((self.n, 0)), np.zeros(0)
        Q, R = np.linalg.qr(self.B)
        lam, V = np.linalg.eigh(R @ self.G @ R.T)
        return Q @ V, lam

    def _check_regular(self):
        P, lam = self.eigen_span()
        if lam.size and (self.s0 + lam).min() <= 1e-14 * max(self.s0 + lam.max(), 1.0):
            i = int(np.argmin(lam))
            raise SingularCovariance(
                f"model covariance is singular along outcome direction {np.round(P[:, i], 6).tolist()}",
                P[:, i],
            )

    def sample(self, rng: np.random.Generator, rows: int) -> np.ndarray:
        P, lam = self.eigen_span()
        ratio = 1.0 + lam / self.s0
        if ratio.size and ratio.min() < -1e-10:
            raise NonPositiveCovariance(f"covariance has eigenvalue {self.s0 * ratio.min():.3e} < 0")
        boost = np.sqrt(np.clip(ratio, 0.0, None)) - 1.0
        eps = rng.standard_normal((rows, self.n))
        # symmetric square root: sqrt(s0) (I + P diag(boost) P^T)
        return self.mean + math.sqrt(self.s0) * (eps + ((eps @ P) * boost) @ P.T)

    def logpdf_sum(self, Y) -> float:
        self._check_regular()
        Y = np.atleast_2d(Y)
        d = Y - self.mean
        _, A = self._capacitance()
        K = self._inv_core()
        Bd = d @ self.B
        quad = (np.sum(d * d) - np.sum((Bd @ K) * Bd)) / self.s0
        logdet = self.n * math.log(self.s0) + (np.linalg.slogdet(A)[1] - A.shape[0] * math.log(self.s0) if A.size else 0.0)
        return float(-0.5 * (Y.shape[0] * (self.n * math.log(TWO_PI) + logdet) + quad))

    def fisher(self, dmean, dB) -> float:
        """Fisher information for a parameter moving the mean by ``dmean`` and ``B`` by ``dB``."""
        K = self._inv_core()
        s0 = self.s0
        mB = dmean @ self.B
        term2 = (dmean @ dmean - mB @ K @ mB) / s0
        if self.B.shape[1] == 0:
            return float(term2)
        k = self.G.shape[0]
        C = np.hstack([dB, self.B])
        CtB = C.T @ self.B
        T = (C.T @ C - CtB @ K @ CtB.T) / s0
        J = np.zeros((2 * k, 2 * k))
        J[:k, k:] = self.G
        J[k:, :k] = self.G
        TJ = T @ J
        return float(0.5 * np.trace(TJ @ TJ) + term2)


# --------------------------------------------------------------------------- outcome model


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    spec: ProbeSpec
    phases: np.ndarray
    config: HomodyneConfig
    law: DenseNormal | LowRankNormal

    @property
    def mean(self) -> np.ndarray:
        return self.law.mean

    @property
    def cov(self) -> np.ndarray:
        return self.law.cov


def _check_inputs(spec: ProbeSpec, phases, config: HomodyneConfig) -> np.ndarray:
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    if phases.size != spec.M:
        raise DimensionMismatch(f"expected {spec.M} phases, got {phases.size}")
    if config.lo_phases.size != spec.n_modes:
        raise DimensionMismatch(f"expected {spec.n_modes} LO phases, got {config.lo_phases.size}")
    return phases


def _lowrank_law(spec: ProbeSpec, phases: np.ndarray, theta: np.ndarray, inj=None) -> LowRankNormal:
    inj = injection(spec) if inj is None else inj
    rot = np.exp(1j * (phases[spec.layout.spatial_index()] - theta))
    g = math.sqrt(spec.eta) * rot[:, None] * inj.columns
    B = np.stack([g.real, g.imag], axis=2).reshape(spec.n_modes, -1)
    r = inj.squeezings
    G = np.diag(np.ravel(np.column_stack([np.expm1(2 * r), np.expm1(-2 * r)])) / 2.0)
    mean = math.sqrt(2.0 * spec.eta) * (rot * inj.alpha).real
    return LowRankNormal(mean, B, G, 0.5)


def outcome_model(spec: ProbeSpec, phases, config: HomodyneConfig, method: str = "lowrank") -> OutcomeModel:
    """Exact Gaussian law of one run's ``R_t * M`` homodyne outcomes.

    ``method="dense"`` composes probe -> phase encoding -> loss -> quadrature
    marginal on the full covariance matrix; ``"lowrank"`` builds the same law
    directly from the squeezed inputs.
    """
    phases = _check_inputs(spec, phases, config)
    if method == "dense":
        state = build_probe(spec).state
        state = loss_channel(phase_encode(state, phases, spec.layout), spec.eta)
        mean, cov = quadrature_marginal(state, config.lo_phases)
        law = DenseNormal(mean, cov)
    elif method == "lowrank":
        law = _lowrank_law(spec, phases, config.lo_phases)
    else:
        raise InvalidParameter(f"unknown method {method!r}")
    return OutcomeModel(spec, phases, config, law)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    outcomes: np.ndarray
    spec: ProbeSpec
    true_phases: np.ndarray

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.outcomes, dtype=float))
        if Y.shape[1] != self.spec.n_modes:
            raise DimensionMismatch(f"outcomes have {Y.shape[1]} columns, expected {self.spec.n_modes}")
        if not np.all(np.isfinite(Y)):
            raise InvalidParameter("outcomes contain non-finite entries")
        object.__setattr__(self, "outcomes", Y)

    @property
    def rows(self) -> int:
        return self.outcomes.shape[0]

    def concat(self, other: "SampleBatch") -> "SampleBatch":
        return SampleBatch(np.vstack([self.outcomes, other.outcomes]), self.spec, self.true_phases)


def _rng(seed: int, stream: int | None = None) -> np.random.Generator:
    ss = np.random.SeedSequence(seed) if stream is None else np.random.SeedSequence(seed, spawn_key=(stream,))
    return np.random.default_rng(ss)


def sample(model: OutcomeModel, R_r: int, seed: int | None = None) -> SampleBatch:
    """``R_r`` independent runs drawn through a symmetric square root of the covariance."""
    if R_r < 1:
        raise InvalidParameter(f"R_r must be >= 1, got {R_r}")
    seed = model.config.seed if seed is None else seed
    Y = model.law.sample(_rng(seed), R_r)
    return SampleBatch(Y, model.spec, model.phases)


# --------------------------------------------------------------------------- equal-phase likelihood


@dataclass(frozen=True)
class BatchStats:
    """Sufficient statistics of a stack of batches for the equal-phase model."""

    rows: int
    s0: np.ndarray  # (T,)   sum of |y|^2
    s1: np.ndarray  # (T, q) sum of E^T y
    s2: np.ndarray  # (T, q, q) sum of (E^T y)(E^T y)^T


class EqualPhaseFamily:
    """Outcome laws under the hypothesis ``phi_j = phi`` for every spatial mode.

    A common phase commutes with the interferometer, so ``B(phi) = E D(phi)``
    and ``mean(phi) = E c(phi)`` for a fixed basis ``E``; the likelihood of a
    batch then depends on the data only through :class:`BatchStats`.
    """

    def __init__(self, spec: ProbeSpec, config: HomodyneConfig, inj=None):
        if config.lo_phases.size != spec.n_modes:
            raise DimensionMismatch(f"expected {spec.n_modes} LO phases, got {config.lo_phases.size}")
        self.spec = spec
        self.config = config
        self.inj = injection(spec) if inj is None else inj
        base = _lowrank_law(spec, np.zeros(spec.M), config.lo_phases, self.inj)
        self.k2 = base.B.shape[1]
        self.has_mean = bool(np.any(self.inj.alpha != 0))
        cols = [base.B]
        if self.has_mean:
            h = math.sqrt(2.0 * spec.eta) * np.exp(-1j * config.lo_phases) * self.inj.alpha
            cols.append(np.column_stack([h.real, h.imag]))
        self.E = np.hstack(cols)
        self.Q = self.E.T @ self.E
        self.G = base.G
        self.s0 = base.s0
        self.n = spec.n_modes

    @property
    def q(self) -> int:
        return self.E.shape[1]

    def coefficients(self, phi):
        """``D, c`` and their phi-derivatives for an array of phases."""
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        T = phi.size
        cs, sn = np.cos(phi), np.sin(phi)
        D = np.zeros((T, self.q, self.k2))
        dD = np.zeros_like(D)
        for b in range(0, self.k2, 2):
            D[:, b, b], D[:, b, b + 1], D[:, b + 1, b], D[:, b + 1, b + 1] = cs, sn, -sn, cs
            dD[:, b, b], dD[:, b, b + 1], dD[:, b + 1, b], dD[:, b + 1, b + 1] = -sn, cs, -cs, -sn
        c = np.zeros((T, self.q))
        dc = np.zeros_like(c)
        if self.has_mean:
            c[:, -2], c[:, -1] = cs, -sn
            dc[:, -2], dc[:, -1] = -sn, -cs
        return D, c, dD, dc

    def law(self, phi: float) -> LowRankNormal:
        D, c, _, _ = self.coefficients(phi)
        return LowRankNormal(self.E @ c[0], self.E @ D[0], self.G, self.s0)

    def fisher(self, phi: float) -> float:
        """Exact per-run Fisher information from the analytic phase derivative."""
        D, c, dD, dc = self.coefficients(phi)
        return self.law(phi).fisher(self.E @ dc[0], self.E @ dD[0])

    def stats(self, Y) -> BatchStats:
        """Statistics of one batch (2-D) or a stack of batches (3-D)."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 2:
            Y = Y[None]
        e = Y @ self.E
        return BatchStats(
            Y.shape[1],
            np.einsum("trn,trn->t", Y, Y),
            e.sum(axis=1),
            np.einsum("tra,trb->tab", e, e),
        )

    def _pieces(self, phi, st: BatchStats):
        D, c, dD, dc = self.coefficients(phi)
        Q, G, s0, R = self.Q, self.G, self.s0, st.rows
        BtB = np.einsum("tqa,qr,trb->tab", D, Q, D)
        A = s0 * np.eye(self.k2) + BtB @ G
        Ainv = np.linalg.inv(A) if self.k2 else A
        K = G @ Ainv
        Qc = c @ Q
        dd = st.s0 - 2.0 * np.einsum("tq,tq->t", c, st.s1) + R * np.einsum("tq,tq->t", c, Qc)
        outer = np.einsum("ta,tb->tab", st.s1, Qc)
        Sd = st.s2 - outer - outer.transpose(0, 2, 1) + R * np.einsum("ta,tb->tab", Qc, Qc)
        Mb = np.einsum("tqa,tqr,trb->tab", D, Sd, D)
        return D, c, dD, dc, BtB, A, Ainv, K, Qc, dd, Sd, Mb

    def loglik(self, phi, st: BatchStats) -> np.ndarray:
        phi = np.broadcast_to(np.asarray(phi, dtype=float), st.s0.shape)
        D, c, dD, dc, BtB, A, Ainv, K, Qc, dd, Sd, Mb = self._pieces(phi, st)
        if self.k2:
            sign, logdetA = np.linalg.slogdet(A)
            if np.any(sign <= 0):
                self.law(float(phi[np.argmax(sign <= 0)]))._check_regular()
            logdet = self.n * math.log(self.s0) + logdetA - self.k2 * math.log(self.s0)
        else:
            logdet = np.full(phi.shape, self.n * math.log(self.s0))
        quad = (dd - np.einsum("tab,tba->t", K, Mb)) / self.s0
        return -0.5 * (st.rows * (self.n * math.log(TWO_PI) + logdet) + quad)

    def score(self, phi, st: BatchStats) -> np.ndarray:
        phi = np.broadcast_to(np.asarray(phi, dtype=float), st.s0.shape)
        D, c, dD, dc, BtB, A, Ainv, K, Qc, dd, Sd, Mb = self._pieces(phi, st)
        Q, G, R = self.Q, self.G, st.rows
        Qdc = dc @ Q
        ddd = -2.0 * np.einsum("tq,tq->t", dc, st.s1) + 2.0 * R * np.einsum("tq,tq->t", dc, Qc)
        if not self.k2:
            return -0.5 * ddd / self.s0
        dBtB = np.einsum("tqa,qr,trb->tab", dD, Q, D)
        dBtB = dBtB + dBtB.transpose(0, 2, 1)
        dlogdet = np.einsum("tab,tbc,ca->t", Ainv, dBtB, G)
        o1 = np.einsum("ta,tb->tab", st.s1, Qdc)
        o2 = np.einsum("ta,tb->tab", Qdc, Qc)
        dSd = -o1 - o1.transpose(0, 2, 1) + R * (o2 + o2.transpose(0, 2, 1))
        dMb = np.einsum("tqa,tqr,trb->tab", dD, Sd, D)
        dMb = dMb + dMb.transpose(0, 2, 1) + np.einsum("tqa,tqr,trb->tab", D, dSd, D)
        dK = -K @ dBtB @ K
        dquad = (ddd - np.einsum("tab,tba->t", dK, Mb) - np.einsum("tab,tba->t", K, dMb)) / self.s0
        return -0.5 * (R * dlogdet + dquad)


def log_likelihood(phi_avg: float, batch: SampleBatch, config: HomodyneConfig) -> float:
    """Log-likelihood of ``batch`` under the equal-phase hypothesis ``phi_j = phi_avg``."""
    if batch.rows == 0:
        raise InvalidParameter("batch is empty")
    fam = EqualPhaseFamily(batch.spec, config)
    return float(fam.loglik(phi_avg, fam.stats(batch.outcomes))[0])


# --------------------------------------------------------------------------- maximisation

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MLEFit:
    estimates: np.ndarray
    on_boundary: np.ndarray
    interval: tuple[float, float]


def fit_equal_phase(fam: EqualPhaseFamily, st: BatchStats, interval, tol: float = 1e-12, grid: int = 41) -> MLEFit:
    """Vectorised argmax over a stack of batches.

    A grid scan picks the bracket, golden-section search narrows it and
    bisection on the sign of the analytic score finishes to ``tol``.
    """
    a, b = map(float, interval)
    if not b > a:
        raise InvalidParameter(f"search interval must have lower < upper, got {interval}")
    if not tol > 0:
        raise InvalidParameter("tol must be positive")
    T = st.s0.size
    xs = np.linspace(a, b, grid)
    L = np.stack([fam.loglik(x, st) for x in xs], axis=1)
    i = np.argmax(L, axis=1)
    lo = xs[np.maximum(i - 1, 0)]
    hi = xs[np.minimum(i + 1, grid - 1)]

    target = max(1e3 * tol, 1e-7 * (b - a))
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = fam.loglik(x1, st), fam.loglik(x2, st)
    while np.max(hi - lo) > target:
        left = f1 >= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        nx1 = hi - _GOLDEN * (hi - lo)
        nx2 = lo + _GOLDEN * (hi - lo)
        x1, x2 = np.where(left, nx1, x2), np.where(left, x1, nx2)
        f_new = fam.loglik(np.where(left, x1, x2), st)
        f1, f2 = np.where(left, f_new, f2), np.where(left, f1, f_new)

    s_lo, s_hi = fam.score(lo, st), fam.score(hi, st)
    at_lo = s_lo <= 0
    at_hi = (s_hi >= 0) & ~at_lo
    while np.max(np.where(at_lo | at_hi, 0.0, hi - lo)) > tol:
        mid = 0.5 * (lo + hi)
        up = fam.score(mid, st) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    est = np.where(at_lo, lo, np.where(at_hi, hi, 0.5 * (lo + hi)))
    boundary = (at_lo & (est <= a)) | (at_hi & (est >= b))
    return MLEFit(est, boundary, (a, b))


def identifiable_interval(fam: EqualPhaseFamily, centre: float, half_width: float, points: int = 401):
    """``centre +- half_width`` clipped at the nearest zeros of the Fisher information.

    The equal-phase likelihood is mirror-symmetric about each such zero, so
    the estimate is only unique between consecutive zeros.
    """
    xs = np.linspace(centre - half_width, centre + half_width, points)
    F = np.array([fam.fisher(x) for x in xs])
    mid = points // 2
    f_c = F[mid]
    if not f_c > 1e-9 * F.max():
        raise UninformativeMeasurement(f"no Fisher information at phi = {centre:.6g}")
    low = F < 1e-3 * f_c
    lo, hi = xs[0], xs[-1]
    left = np.nonzero(low[:mid])[0]
    if left.size:
        j = left[-1]
        res = minimize_scalar(fam.fisher, bounds=(xs[max(j - 1, 0)], xs[j + 1]), method="bounded",
                              options={"xatol": 1e-14})
        lo = float(res.x)
    right = np.nonzero(low[mid + 1:])[0]
    if right.size:
        j = mid + 1 + right[0]
        res = minimize_scalar(fam.fisher, bounds=(xs[j - 1], xs[min(j + 1, points - 1)]), method="bounded",
                              options={"xatol": 1e-14})
        hi = float(res.x)
    return float(lo), float(hi)


def default_search_interval(spec: ProbeSpec, config: HomodyneConfig, fam=None):
    """``phi_opt +- 10 sqrt(QCRB)`` restricted to the identifiable branch."""
    fam = EqualPhaseFamily(spec, config) if fam is None else fam
    centre = phi_opt(spec.R_t, spec.M, spec.nbar)
    return identifiable_interval(fam, centre, 10.0 * math.sqrt(bound_for_spec(spec).qcrb))


def fit_mle(batch: SampleBatch, config: HomodyneConfig, search=None, tol: float = 1e-12) -> MLEFit:
    fam = EqualPhaseFamily(batch.spec, config)
    interval = default_search_interval(batch.spec, config, fam) if search is None else search
    return fit_equal_phase(fam, fam.stats(batch.outcomes), interval, tol)


def mle(batch: SampleBatch, config: HomodyneConfig, search=None, tol: float = 1e-12) -> float:
    """Maximum-likelihood estimate of the average phase; boundary maxima trigger a warning."""
    fit = fit_mle(batch, config, search, tol)
    if fit.on_boundary[0]:
        warnings.warn(f"likelihood maximum on the search boundary {fit.interval}", RuntimeWarning, stacklevel=2)
    return float(fit.estimates[0])


# --------------------------------------------------------------------------- Fisher information


def _richardson(f, h):
    d_h = (f(h) - f(-h)) / (2 * h)
    d_h2 = (f(h / 2) - f(-h / 2)) / h
    d = (4 * d_h2 - d_h) / 3
    scale = np.abs(d).max() if np.size(d) else 0.0
    err = np.abs(d_h - d).max() if np.size(d) else 0.0
    return d, (err / scale if scale > 0 else 0.0)


def classical_fisher(spec: ProbeSpec, phases, config: HomodyneConfig, method: str = "lowrank") -> float:
    """Per-run homodyne Fisher information for a common shift of all spatial phases.

    The phase derivative of the outcome law is a central finite difference
    (step 1e-6) with one Richardson level; a disagreement above 1e-4 relative
    between the two levels raises a warning.
    """
    phases = _check_inputs(spec, phases, config)
    h = FD_STEP
    if method == "dense":
        def moments(dphi):
            m = outcome_model(spec, phases + dphi, config, "dense")
            return np.concatenate([m.mean, m.cov.ravel()])

        d, err = _richardson(moments, h)
        law = outcome_model(spec, phases, config, "dense").law
        n = spec.n_modes
        dmean, dcov = d[:n], d[n:].reshape(n, n)
        info = law.fisher(dmean, 0.5 * (dcov + dcov.T))
    elif method == "lowrank":
        inj = injection(spec)
        theta = config.lo_phases

        def factors(dphi):
            law = _lowrank_law(spec, phases + dphi, theta, inj)
            return np.concatenate([law.mean, law.B.ravel()])

        d, err = _richardson(factors, h)
        law = _lowrank_law(spec, phases, theta, inj)
        n = spec.n_modes
        info = law.fisher(d[:n], d[n:].reshape(law.B.shape))
    else:
        raise InvalidParameter(f"unknown method {method!r}")
    if err > RICHARDSON_TOL:
        warnings.warn(f"finite-difference derivative unstable (Richardson discrepancy {err:.2e})",
                      RuntimeWarning, stacklevel=2)
    return max(float(info), 0.0)


def optimize_lo(spec: ProbeSpec, phi: float | None = None, seed: int = 0, points: int = 180) -> HomodyneConfig:
    """Common LO phase in [0, pi) maximising the equal-phase Fisher information at ``phi``.

    Ties between mirror-image optima go to the one closest to pi/2.
    """
    phi = phi_opt(spec.R_t, spec.M, spec.nbar) if phi is None else phi
    inj = injection(spec)

    def info(theta):
        cfg = HomodyneConfig.uniform(spec.n_modes, theta, seed)
        return EqualPhaseFamily(spec, cfg, inj).fisher(phi)

    grid = np.linspace(0.0, np.pi, points, endpoint=False)
    F = np.array([info(t) for t in grid])
    peaks = [i for i in range(points) if F[i] >= F[i - 1] and F[i] >= F[(i + 1) % points]]
    step = grid[1] - grid[0]
    best = []
    for i in peaks:
        res = minimize_scalar(lambda t: -info(t), bounds=(grid[i] - step, grid[i] + step), method="bounded",
                              options={"xatol": 1e-12})
        best.append((-res.fun, float(np.mod(res.x, np.pi))))
    top = max(f for f, _ in best)
    theta = min((t for f, t in best if f >= top * (1 - 1e-9)), key=lambda t: abs(t - np.pi / 2))
    return HomodyneConfig.uniform(spec.n_modes, theta, seed)


# --------------------------------------------------------------------------- experiment


@dataclass(frozen=True, eq=False)
class EstimationResult:
    estimates: np.ndarray
    sample_variance: float
    crb: float
    cfi_at_truth: float
    qfi_scalar: float
    spec: ProbeSpec = field(repr=False, default=None)
    true_phases: np.ndarray = field(repr=False, default=None)
    lo_offset: float = float("nan")
    interval: tuple = (float("nan"), float("nan"))
    boundary_hits: int = 0
    seed: int = 0

    @property
    def n_trials(self) -> int:
        return self.estimates.size

    @property
    def ratio(self) -> float:
        return self.sample_variance / self.crb

    @property
    def qcrb(self) -> float:
        return 1.0 / (self.spec.R_r * self.qfi_scalar)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "true_phases": self.true_phases.tolist(),
            "phi_avg": float(np.mean(self.true_phases)),
            "n_trials": self.n_trials,
            "seed": self.seed,
            "lo_offset": self.lo_offset,
            "search_interval": list(self.interval),
            "boundary_hits": self.boundary_hits,
            "sample_variance": self.sample_variance,
            "crb": self.crb,
            "qcrb": self.qcrb,
            "cfi_at_truth": self.cfi_at_truth,
            "qfi_scalar": self.qfi_scalar,
            "ratio": self.ratio,
            "estimates": self.estimates.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _trial_stats(fam: EqualPhaseFamily, law, R_r: int, seed: int, trials: range) -> BatchStats:
    parts = [fam.stats(law.sample(_rng(seed, t), R_r)) for t in trials]
    return BatchStats(
        R_r,
        np.concatenate([p.s0 for p in parts]),
        np.concatenate([p.s1 for p in parts]),
        np.concatenate([p.s2 for p in parts]),
    )


def run_experiment(
    spec: ProbeSpec,
    true_phases,
    n_trials: int,
    lo_policy="optimize",
    *,
    seed: int = 0,
    search=None,
    tol: float = 1e-12,
    workers: int | None = None,
) -> EstimationResult:
    """Monte Carlo of ``n_trials`` independent experiments, each estimating the average phase by MLE.

    ``lo_policy`` is ``"optimize"`` (common LO phase maximising the Fisher
    information at ``phi_opt``), ``"fixed"`` (pi/2 on every mode) or an
    explicit :class:`HomodyneConfig`. Trial ``t`` draws from its own seed
    stream, so the estimates do not depend on ``workers``.
    """
    if n_trials < 100:
        raise InvalidParameter(f"n_trials must be >= 100, got {n_trials}")
    true_phases = _check_inputs(spec, true_phases, HomodyneConfig.uniform(spec.n_modes))
    if isinstance(lo_policy, HomodyneConfig):
        config = HomodyneConfig(lo_policy.lo_phases, seed)
    elif lo_policy == "optimize":
        config = optimize_lo(spec, seed=seed)
    elif lo_policy == "fixed":
        config = HomodyneConfig.uniform(spec.n_modes, np.pi / 2, seed)
    else:
        raise InvalidParameter(f"unknown LO policy {lo_policy!r}")

    fam = EqualPhaseFamily(spec, config)
    qfi = run_qfim(spec).scalar()
    centre = phi_opt(spec.R_t, spec.M, spec.nbar)
    if fam.fisher(centre) < 1e-9 * qfi:
        raise UninformativeMeasurement("homodyne setting carries no information at the operating point")
    interval = default_search_interval(spec, config, fam) if search is None else tuple(search)

    law = _lowrank_law(spec, true_phases, config.lo_phases, fam.inj)
    workers = default_workers() if workers is None else max(1, workers)
    chunks = np.array_split(np.arange(n_trials), min(workers, n_trials))
    if len(chunks) == 1:
        st = _trial_stats(fam, law, spec.R_r, seed, range(n_trials))
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda c: _trial_stats(fam, law, spec.R_r, seed, range(c[0], c[-1] + 1)), chunks))
        st = BatchStats(spec.R_r, *(np.concatenate([getattr(p, f) for p in parts]) for f in ("s0", "s1", "s2")))
    fit = fit_equal_phase(fam, st, interval, tol)

    cfi = classical_fisher(spec, true_phases, config)
    est = fit.estimates
    return EstimationResult(
        estimates=est,
        sample_variance=float(np.var(est, ddof=1)),
        crb=1.0 / (spec.R_r * cfi) if cfi > 0 else float("inf"),
        cfi_at_truth=cfi,
        qfi_scalar=qfi,
        spec=spec,
        true_phases=true_phases,
        lo_offset=float(config.lo_phases[0]),
        interval=tuple(map(float, interval)),
        boundary_hits=int(fit.on_boundary.sum()),
        seed=seed,
    )
