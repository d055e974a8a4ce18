"""Probe states for the time-separable, time-multiplexed and coherent strategies."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter
from .gaussian import (
    ATOL,
    BogoliubovMap,
    GaussianState,
    ModeLayout,
    apply_bogoliubov,
    bogoliubov_from_factors,
    vacuum,
)


class Scheme(str, enum.Enum):
    TS = "TS"
    TM = "TM"
    SQL = "SQL"


@dataclass(frozen=True, eq=False)
class ProbeSpec:
    """Resource budget of one experiment.

    ``R_t`` temporal modes share one probe; the probe is repeated independently
    ``R_r`` times. ``nbar`` is the mean photon number of every spatiotemporal mode.
    """

    scheme: Scheme
    M: int
    R_t: int = 1
    R_r: int = 1
    nbar: float = 2.0
    weights: np.ndarray | None = None
    eta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        for name in ("M", "R_t", "R_r"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidParameter(f"{name} must be a positive integer, got {value}")
            object.__setattr__(self, name, int(value))
        if not self.nbar > 0:
            raise InvalidParameter(f"nbar must be > 0, got {self.nbar}")
        if not 0.0 < self.eta <= 1.0:
            raise InvalidParameter(f"eta must lie in (0, 1], got {self.eta}")
        if self.scheme is Scheme.TS and self.R_t != 1:
            raise InvalidParameter("TS probes are products over time bins and require R_t = 1")
        w = np.ones(self.M) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size != self.M:
            raise InvalidParameter(f"weights has {w.size} entries, expected M = {self.M}")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise InvalidParameter("weights must be finite and strictly positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def R(self) -> int:
        return self.R_r * self.R_t

    @property
    def layout(self) -> ModeLayout:
        return ModeLayout(self.R_t, self.M)

    @property
    def n_modes(self) -> int:
        return self.R_t * self.M

    @property
    def photons_per_run(self) -> float:
        return self.R_t * self.M * self.nbar

    def replace(self, **changes) -> "ProbeSpec":
        fields = dict(
            scheme=self.scheme, M=self.M, R_t=self.R_t, R_r=self.R_r,
            nbar=self.nbar, weights=self.weights, eta=self.eta,
        )
        fields.update(changes)
        return ProbeSpec(**fields)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "M": self.M,
            "R_t": self.R_t,
            "R_r": self.R_r,
            "nbar": self.nbar,
            "weights": self.weights.tolist(),
            "eta": self.eta,
        }


@dataclass(frozen=True, eq=False)
class ProbeBundle:
    state: GaussianState
    map: BogoliubovMap
    u_spatial: np.ndarray
    u_temporal: np.ndarray
    squeeze: float
    spec: ProbeSpec = field(repr=False, default=None)


def unitary_with_first_column(column) -> np.ndarray:
    """Householder reflection mapping e_1 onto the unit vector ``column``."""
    u = np.asarray(column, dtype=complex).reshape(-1)
    u = u / np.linalg.norm(u)
    n = u.size
    if n == 1:
        return u.reshape(1, 1).copy()
    # fold the phase of u_1 out so the reflection vector never vanishes
    ph = u[0] / abs(u[0]) if abs(u[0]) > 0 else 1.0
    u0 = u / ph
    v = u0.copy()
    v[0] -= 1.0
    nv = np.vdot(v, v).real
    H = np.eye(n, dtype=complex)
    if nv > 1e-30:
        H -= 2.0 * np.outer(v, v.conj()) / nv
    return H * ph


def spatial_interferometer(weights) -> np.ndarray:
    """M x M unitary with ``|U[j, 0]|^2 = w_j / sum(w)`` and a real nonnegative first column."""
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if w.size == 0 or np.any(w <= 0):
        raise InvalidParameter("weights must be nonempty and strictly positive")
    return unitary_with_first_column(np.sqrt(w / w.sum()))


def temporal_interferometer(R_t: int) -> np.ndarray:
    if R_t < 1:
        raise InvalidParameter(f"R_t must be >= 1, got {R_t}")
    return unitary_with_first_column(np.full(R_t, 1.0 / np.sqrt(R_t)))


def squeeze_for_budget(scheme, M: int, R_t: int, nbar: float) -> float:
    scheme = Scheme(scheme)
    if not nbar > 0:
        raise InvalidParameter(f"nbar must be > 0, got {nbar}")
    if scheme is Scheme.TS:
        return float(np.arcsinh(np.sqrt(M * nbar)))
    if scheme is Scheme.TM:
        return float(np.arcsinh(np.sqrt(R_t * M * nbar)))
    return 0.0


def _check_first_column(U, expected_sq, name):
    U = np.asarray(U, dtype=complex)
    n = expected_sq.size
    if U.shape != (n, n):
        raise InvalidParameter(f"{name} must be {n}x{n}, got {U.shape}")
    if np.abs(U @ U.conj().T - np.eye(n)).max() > ATOL:
        raise InvalidParameter(f"{name} is not unitary")
    if np.abs(np.abs(U[:, 0]) ** 2 - expected_sq).max() > ATOL:
        raise InvalidParameter(f"{name} first column does not carry the required intensities")
    return U


@dataclass(frozen=True, eq=False)
class Injection:
    """Columns of the interferometer fed by squeezed inputs, plus the output displacement.

    This is all the downstream homodyne model needs; it avoids forming the
    full ``R_t M`` square interferometer for long time-multiplexed probes.
    """

    columns: np.ndarray  # (n_modes, K)
    squeezings: np.ndarray  # (K,)
    alpha: np.ndarray  # (n_modes,)


def injection(spec: ProbeSpec) -> Injection:
    n = spec.n_modes
    r = squeeze_for_budget(spec.scheme, spec.M, spec.R_t, spec.nbar)
    if spec.scheme is Scheme.SQL:
        return Injection(np.zeros((n, 0), complex), np.zeros(0), np.full(n, np.sqrt(spec.nbar), complex))
    us = spatial_interferometer(spec.weights)[:, 0]
    if spec.scheme is Scheme.TM:
        ut = np.full(spec.R_t, 1.0 / np.sqrt(spec.R_t))
        cols = np.kron(ut, us).reshape(n, 1)
        return Injection(cols.astype(complex), np.array([r]), np.zeros(n, complex))
    cols = np.kron(np.eye(spec.R_t), us.reshape(-1, 1))
    return Injection(cols.astype(complex), np.full(spec.R_t, r), np.zeros(n, complex))


def build_probe(spec: ProbeSpec, u_spatial=None, u_temporal=None) -> ProbeBundle:
    """Construct one run's probe state; loss is applied downstream after phase encoding.

    ``u_spatial`` / ``u_temporal`` override the default interferometers; only
    their first-column intensities are constrained.
    """
    M, R_t, n = spec.M, spec.R_t, spec.n_modes
    w = spec.weights
    if u_spatial is None:
        u_spatial = spatial_interferometer(w)
    else:
        u_spatial = _check_first_column(u_spatial, w / w.sum(), "u_spatial")
    if u_temporal is None:
        u_temporal = temporal_interferometer(R_t)
    else:
        u_temporal = _check_first_column(u_temporal, np.full(R_t, 1.0 / R_t), "u_temporal")

    r_val = squeeze_for_budget(spec.scheme, M, R_t, spec.nbar)
    r = np.zeros(n)
    alpha = np.zeros(n, dtype=complex)
    if spec.scheme is Scheme.TM:
        W = np.kron(u_temporal, u_spatial)
        r[0] = r_val
    elif spec.scheme is Scheme.TS:
        W = np.kron(np.eye(R_t), u_spatial)
        r[::M] = r_val
    else:
        W = np.eye(n, dtype=complex)
        alpha[:] = np.sqrt(spec.nbar)
    bmap = bogoliubov_from_factors(W, r, alpha)
    state = apply_bogoliubov(vacuum(n), bmap)
    return ProbeBundle(state, bmap, u_spatial, u_temporal, r_val, spec)
