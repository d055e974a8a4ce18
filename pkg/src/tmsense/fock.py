"""Brute-force truncated Fock-space oracle for one and two modes.

Used only to cross-check the Gaussian engine and the closed-form lossy QFI.
Squeezing and phase conventions match :mod:`tmsense.gaussian`: the state
prepared by ``bogoliubov_from_factors(I, [r])`` on vacuum has amplitudes
proportional to ``(+tanh r)^k`` on ``|2k>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

from .errors import InvalidParameter, NumericalError, TruncationError

MAX_CUTOFF = 80
LEAK_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FockState:
    """Pure (vector) or mixed (matrix) state over ``cutoff**n_modes`` basis states."""

    cutoff: int
    data: np.ndarray
    n_modes: int = 1

    def __post_init__(self):
        if not 1 <= self.cutoff <= MAX_CUTOFF:
            raise InvalidParameter(f"cutoff must be in 1..{MAX_CUTOFF}, got {self.cutoff}")
        dim = self.cutoff**self.n_modes
        data = np.asarray(self.data, dtype=complex)
        if data.shape not in ((dim,), (dim, dim)):
            raise InvalidParameter(f"data shape {data.shape} does not fit {self.n_modes} modes at cutoff {self.cutoff}")
        object.__setattr__(self, "data", data)

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def density(self) -> np.ndarray:
        return np.outer(self.data, self.data.conj()) if self.is_pure else self.data

    def trace(self) -> float:
        return float(np.vdot(self.data, self.data).real if self.is_pure else np.trace(self.data).real)

    def leak(self) -> float:
        """Population in the top two levels of any mode."""
        probs = np.real(np.diag(self.density())).reshape((self.cutoff,) * self.n_modes)
        top = 0.0
        for axis in range(self.n_modes):
            top = max(top, float(np.take(probs, [-2, -1], axis=axis).sum()) if self.cutoff > 1 else 0.0)
        return top

    def expect(self, op: np.ndarray) -> complex:
        if self.is_pure:
            return complex(np.vdot(self.data, op @ self.data))
        return complex(np.trace(op @ self.data))


def _check_leak(state: FockState) -> FockState:
    leak = state.leak()
    if leak >= LEAK_TOL:
        raise TruncationError(f"truncation leak {leak:.2e} >= {LEAK_TOL:.0e}; raise the cutoff")
    return state


def annihilation(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff)), 1).astype(complex)


def number_op(cutoff: int) -> np.ndarray:
    return np.diag(np.arange(cutoff)).astype(complex)


def mode_operator(op: np.ndarray, mode: int, n_modes: int) -> np.ndarray:
    eye = np.eye(op.shape[0])
    out = np.array([[1.0]])
    for m in range(n_modes):
        out = np.kron(out, op if m == mode else eye)
    return out


def vacuum_fock(cutoff: int, n_modes: int = 1) -> FockState:
    v = np.zeros(cutoff**n_modes, dtype=complex)
    v[0] = 1.0
    return FockState(cutoff, v, n_modes)


def squeezed_vacuum_fock(r: float, cutoff: int) -> FockState:
    k = np.arange(cutoff // 2 + cutoff % 2)
    k = k[2 * k < cutoff]
    amp = np.zeros(cutoff, dtype=complex)
    t = np.tanh(r)
    log_mag = 0.5 * gammaln(2 * k + 1) - k * np.log(2.0) - gammaln(k + 1)
    if t == 0:
        amp[0] = 1.0
    else:
        amp[2 * k] = np.sign(t) ** k * np.exp(log_mag + k * np.log(abs(t))) / np.sqrt(np.cosh(r))
    return _check_leak(FockState(cutoff, amp))


def coherent_fock(alpha: complex, cutoff: int) -> FockState:
    n = np.arange(cutoff)
    log_mag = n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1) if alpha != 0 else np.where(n == 0, 0.0, -np.inf)
    amp = np.exp(-0.5 * abs(alpha) ** 2 + log_mag) * np.exp(1j * n * np.angle(alpha))
    return _check_leak(FockState(cutoff, amp))


def apply_unitary(state: FockState, U: np.ndarray) -> FockState:
    if state.is_pure:
        return FockState(state.cutoff, U @ state.data, state.n_modes)
    return FockState(state.cutoff, U @ state.data @ U.conj().T, state.n_modes)


def displace_fock(state: FockState, alpha, mode: int = 0) -> FockState:
    a = annihilation(state.cutoff)
    D = expm(alpha * a.conj().T - np.conj(alpha) * a)
    return _check_leak(apply_unitary(state, mode_operator(D, mode, state.n_modes)))


def beam_splitter_fock(state: FockState, theta: float, phase: float = 0.0) -> FockState:
    """Two-mode splitter whose Heisenberg action is ``a -> W a`` with
    ``W = [[cos, e^{i phase} sin], [-e^{-i phase} sin, cos]]``."""
    if state.n_modes != 2:
        raise InvalidParameter("beam splitter needs a two-mode state")
    a = annihilation(state.cutoff)
    a1, a2 = mode_operator(a, 0, 2), mode_operator(a, 1, 2)
    gen = theta * (np.exp(1j * phase) * a1.conj().T @ a2 - np.exp(-1j * phase) * a1 @ a2.conj().T)
    return apply_unitary(state, expm(gen))


def tensor(*states: FockState) -> FockState:
    cutoff = states[0].cutoff
    data = np.array([1.0 + 0j])
    for s in states:
        if not s.is_pure or s.cutoff != cutoff or s.n_modes != 1:
            raise InvalidParameter("tensor expects pure single-mode states with a common cutoff")
        data = np.kron(data, s.data)
    return FockState(cutoff, data, len(states))


def phase_encode_fock(state: FockState, phases) -> FockState:
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    if phases.size != state.n_modes:
        raise InvalidParameter(f"need {state.n_modes} phases, got {phases.size}")
    n = np.arange(state.cutoff)
    diag = np.array([1.0 + 0j])
    for ph in phases:
        diag = np.kron(diag, np.exp(1j * ph * n))
    return apply_unitary(state, np.diag(diag))


def loss_kraus(eta: float, cutoff: int) -> list[np.ndarray]:
    """Kraus operators ``K_k = sum_n sqrt(C(n,k) eta^(n-k) (1-eta)^k) |n-k><n|``."""
    if not 0.0 < eta <= 1.0:
        raise InvalidParameter(f"eta must lie in (0, 1], got {eta}")
    n = np.arange(cutoff)
    ops = []
    for k in range(cutoff if eta < 1.0 else 1):
        K = np.zeros((cutoff, cutoff))
        m = n[n >= k]
        log_c = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
        with np.errstate(divide="ignore"):
            logw = log_c + (m - k) * np.log(eta) + (k * np.log1p(-eta) if k else 0.0)
        K[m - k, m] = np.exp(0.5 * logw)
        ops.append(K)
    return ops


def apply_loss_fock(state: FockState, eta: float) -> FockState:
    if state.n_modes != 1:
        raise InvalidParameter("the oracle applies loss to single-mode states only")
    if eta == 1.0:
        return state
    rho = state.density()
    out = sum(K @ rho @ K.T for K in loss_kraus(eta, state.cutoff))
    return FockState(state.cutoff, out, 1)


def number_cov_fock(state: FockState, i: int, j: int) -> float:
    n = number_op(state.cutoff)
    ni, nj = mode_operator(n, i, state.n_modes), mode_operator(n, j, state.n_modes)
    return float((state.expect(ni @ nj) - state.expect(ni) * state.expect(nj)).real)


def mean_photon_fock(state: FockState, mode: int = 0) -> float:
    return float(state.expect(mode_operator(number_op(state.cutoff), mode, state.n_modes)).real)


def quadrature_moments_fock(state: FockState, theta: float = 0.0, mode: int = 0) -> tuple[float, float]:
    """Mean and variance of ``x cos(theta) + p sin(theta)``."""
    a = mode_operator(annihilation(state.cutoff), mode, state.n_modes)
    q = (np.exp(-1j * theta) * a + np.exp(1j * theta) * a.conj().T) / np.sqrt(2.0)
    m = state.expect(q).real
    return float(m), float(state.expect(q @ q).real - m**2)


def qfi_fock(rho_of_phi, phi0: float, step: float = 1e-5, eig_floor: float = 1e-12) -> float:
    """Single-parameter QFI of a family of density matrices.

    ``rho_of_phi`` maps a phase to a density matrix (or a ``FockState``). The
    derivative is a central difference; a half-step Richardson estimate must
    agree to 1e-3 relative.
    """

    def rho(phi):
        r = rho_of_phi(phi)
        return r.density() if isinstance(r, FockState) else np.asarray(r, dtype=complex)

    d_h = (rho(phi0 + step) - rho(phi0 - step)) / (2 * step)
    d_h2 = (rho(phi0 + step / 2) - rho(phi0 - step / 2)) / step
    d_rich = (4 * d_h2 - d_h) / 3
    scale = np.abs(d_rich).max()
    if scale > 0 and np.abs(d_h - d_rich).max() > 1e-3 * scale:
        raise NumericalError("derivative of the state family is ill-conditioned at this step size")

    r0 = rho(phi0)
    try:
        lam, vec = np.linalg.eigh(0.5 * (r0 + r0.conj().T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    lam = np.where(lam < eig_floor, 0.0, lam)
    d = vec.conj().T @ d_rich @ vec
    denom = lam[:, None] + lam[None, :]
    mask = denom > 0
    return float(np.sum(2.0 * np.abs(d[mask]) ** 2 / denom[mask]))


def phase_family(state: FockState, eta: float = 1.0):
    """``phi -> L_eta(exp(i phi n) rho exp(-i phi n))`` for a single-mode state."""

    def family(phi):
        return apply_loss_fock(phase_encode_fock(state, [phi]), eta)

    return family
