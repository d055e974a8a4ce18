"""Multimode Gaussian states in the covariance-matrix picture.

Conventions: hbar = 1, ``a = (x + i p) / sqrt(2)``, vacuum quadrature variance
1/2, quadratures interleaved as ``(x_1, p_1, x_2, p_2, ...)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidParameter

ATOL = 1e-10


@dataclass(frozen=True)
class ModeLayout:
    """Spatiotemporal mode bookkeeping for ``R_t`` temporal by ``M`` spatial modes.

    Indices are zero-based; the flat index is ``l = j + t * M`` so that all
    spatial modes of one time bin are contiguous.
    """

    R_t: int
    M: int

    def __post_init__(self):
        if self.R_t < 1 or self.M < 1:
            raise InvalidParameter(f"layout needs R_t >= 1 and M >= 1, got {self.R_t}, {self.M}")

    @property
    def n_modes(self) -> int:
        return self.R_t * self.M

    def flat(self, t: int, j: int) -> int:
        if not (0 <= t < self.R_t and 0 <= j < self.M):
            raise IndexError(f"mode (t={t}, j={j}) outside {self.R_t}x{self.M} layout")
        return j + t * self.M

    def unflatten(self, l: int) -> tuple[int, int]:
        if not 0 <= l < self.n_modes:
            raise IndexError(f"flat index {l} outside 0..{self.n_modes - 1}")
        t, j = divmod(l, self.M)
        return t, j

    def spatial_index(self) -> np.ndarray:
        """Spatial index j of every flat mode."""
        return np.tile(np.arange(self.M), self.R_t)


def symplectic_form(n_modes: int) -> np.ndarray:
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.ndim != 1 or mean.size % 2 or mean.size == 0:
            raise DimensionMismatch(f"mean must be a nonempty vector of even length, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"cov shape {cov.shape} does not match mean length {mean.size}")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(cov))

    @property
    def n_modes(self) -> int:
        return self.mean.size // 2

    def uncertainty_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``cov + (i/2) Omega``; all >= 0 for a physical state."""
        return np.linalg.eigvalsh(self.cov + 0.5j * symplectic_form(self.n_modes))

    def is_physical(self, tol: float = 1e-9) -> bool:
        return bool(self.uncertainty_eigenvalues().min() >= -tol)

    def purity(self) -> float:
        """``1 / sqrt(det(2 cov))``; equal to 1 for pure states."""
        sign, logdet = np.linalg.slogdet(2.0 * self.cov)
        return float(np.exp(-0.5 * logdet)) if sign > 0 else 0.0


def vacuum(n_modes: int) -> GaussianState:
    if n_modes < 1:
        raise InvalidParameter(f"n_modes must be >= 1, got {n_modes}")
    return GaussianState(np.zeros(2 * n_modes), 0.5 * np.eye(2 * n_modes))


def coherent(alpha) -> GaussianState:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=complex))
    mean = np.empty(2 * alpha.size)
    mean[0::2] = np.sqrt(2.0) * alpha.real
    mean[1::2] = np.sqrt(2.0) * alpha.imag
    return GaussianState(mean, 0.5 * np.eye(2 * alpha.size))


@dataclass(frozen=True, eq=False)
class BogoliubovMap:
    """Heisenberg-picture map ``a -> U a + V a^dagger + alpha``."""

    U: np.ndarray
    V: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        U = np.array(self.U, dtype=complex)
        V = np.array(self.V, dtype=complex)
        alpha = np.array(self.alpha, dtype=complex).reshape(-1)
        n = alpha.size
        if U.shape != (n, n) or V.shape != (n, n):
            raise DimensionMismatch(f"U {U.shape}, V {V.shape} and alpha ({n},) disagree")
        object.__setattr__(self, "U", _frozen(U))
        object.__setattr__(self, "V", _frozen(V))
        object.__setattr__(self, "alpha", _frozen(alpha))

    @property
    def n_modes(self) -> int:
        return self.alpha.size

    def symplectic_residuals(self) -> tuple[float, float]:
        """Max-norm violations of ``U U^+ - V V^+ = I`` and ``U V^T`` symmetric."""
        U, V = self.U, self.V
        r1 = np.abs(U @ U.conj().T - V @ V.conj().T - np.eye(self.n_modes)).max()
        UVt = U @ V.T
        r2 = np.abs(UVt - UVt.T).max()
        return float(r1), float(r2)

    def symplectic_matrix(self) -> np.ndarray:
        """Real symplectic matrix acting on interleaved quadratures."""
        n = self.n_modes
        P, Q = self.U + self.V, self.U - self.V
        S = np.empty((2 * n, 2 * n))
        S[0::2, 0::2] = P.real
        S[0::2, 1::2] = -Q.imag
        S[1::2, 0::2] = P.imag
        S[1::2, 1::2] = Q.real
        return S

    def displacement(self) -> np.ndarray:
        d = np.empty(2 * self.n_modes)
        d[0::2] = np.sqrt(2.0) * self.alpha.real
        d[1::2] = np.sqrt(2.0) * self.alpha.imag
        return d


def bogoliubov_from_factors(W, r, alpha=None) -> BogoliubovMap:
    """Build ``U = W diag(cosh r)``, ``V = W diag(sinh r)`` from an interferometer and squeezings.

    With this factorization a positive ``r_l`` stretches the x quadrature of
    input mode ``l`` (variance ``e^{2r}/2`` on vacuum); pass ``-r`` for the
    opposite orientation.
    """
    W = np.asarray(W, dtype=complex)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    n = r.size
    alpha = np.zeros(n, dtype=complex) if alpha is None else np.atleast_1d(np.asarray(alpha, dtype=complex))
    if W.shape != (n, n) or alpha.size != n:
        raise DimensionMismatch(f"W {W.shape}, r ({n},) and alpha ({alpha.size},) disagree")
    if np.abs(W @ W.conj().T - np.eye(n)).max() > ATOL:
        raise InvalidParameter("W is not unitary within 1e-10")
    return BogoliubovMap(W * np.cosh(r), W * np.sinh(r), alpha)


def apply_bogoliubov(state: GaussianState, bmap: BogoliubovMap) -> GaussianState:
    if state.n_modes != bmap.n_modes:
        raise DimensionMismatch(f"state has {state.n_modes} modes, map has {bmap.n_modes}")
    S = bmap.symplectic_matrix()
    return GaussianState(S @ state.mean + bmap.displacement(), S @ state.cov @ S.T)


def _rotate_modes(state: GaussianState, angles: np.ndarray) -> GaussianState:
    # a_l -> exp(i angle_l) a_l, i.e. (x, p) -> (c x - s p, s x + c p)
    n = state.n_modes
    c, s = np.cos(angles), np.sin(angles)
    R = np.empty((n, 2, 2))
    R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1] = c, -s, s, c
    mean = np.einsum("lab,lb->la", R, state.mean.reshape(n, 2)).reshape(-1)
    cov = state.cov.reshape(n, 2, n, 2)
    cov = np.einsum("lab,lbmc,mdc->lamd", R, cov, R).reshape(2 * n, 2 * n)
    return GaussianState(mean, cov)


def phase_encode(state: GaussianState, phases, layout: ModeLayout) -> GaussianState:
    """Apply ``exp(i sum_j phi_j n_{t,j})`` in every time bin."""
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    if phases.size != layout.M:
        raise DimensionMismatch(f"expected {layout.M} phases, got {phases.size}")
    if state.n_modes != layout.n_modes:
        raise DimensionMismatch(f"state has {state.n_modes} modes, layout expects {layout.n_modes}")
    return _rotate_modes(state, phases[layout.spatial_index()])


def loss_channel(state: GaussianState, eta: float) -> GaussianState:
    """Pure-loss channel of transmission ``eta`` on every mode."""
    if not 0.0 < eta <= 1.0:
        raise InvalidParameter(f"transmission must lie in (0, 1], got {eta}")
    n2 = state.mean.size
    return GaussianState(np.sqrt(eta) * state.mean, eta * state.cov + 0.5 * (1.0 - eta) * np.eye(n2))


def mean_photon(state: GaussianState, l: int) -> float:
    if not 0 <= l < state.n_modes:
        raise IndexError(f"mode index {l} outside 0..{state.n_modes - 1}")
    x, p = 2 * l, 2 * l + 1
    return float(
        0.5 * (state.cov[x, x] + state.cov[p, p] - 1.0) + 0.5 * (state.mean[x] ** 2 + state.mean[p] ** 2)
    )


def total_photons(state: GaussianState) -> float:
    return float(0.5 * (np.trace(state.cov) - state.n_modes) + 0.5 * state.mean @ state.mean)


def quadrature_marginal(state: GaussianState, lo_phases) -> tuple[np.ndarray, np.ndarray]:
    """Joint law of ``x cos(theta_l) + p sin(theta_l)`` measured on every mode."""
    theta = np.atleast_1d(np.asarray(lo_phases, dtype=float))
    if theta.size != state.n_modes:
        raise DimensionMismatch(f"need one LO phase per mode ({state.n_modes}), got {theta.size}")
    c, s = np.cos(theta), np.sin(theta)
    m, V = state.mean, state.cov
    mean = c * m[0::2] + s * m[1::2]
    cov = (
        np.outer(c, c) * V[0::2, 0::2]
        + np.outer(c, s) * V[0::2, 1::2]
        + np.outer(s, c) * V[1::2, 0::2]
        + np.outer(s, s) * V[1::2, 1::2]
    )
    return mean, 0.5 * (cov + cov.T)
