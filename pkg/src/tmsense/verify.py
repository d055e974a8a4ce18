"""Self-consistency suite: closed forms against generic and Fock-space computations.

Every check looks its targets up through the module at call time, so a test
can substitute a deliberately wrong closed form and watch the suite fail.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fisher, fock, gaussian, probes
from .probes import ProbeSpec, Scheme

REL_TOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


def _generic(spec: ProbeSpec) -> fisher.QFIM:
    bundle = probes.build_probe(spec)
    return fisher.qfim_generic(bundle.map, spec.M, spec.R_t)


def check_closed_lossless() -> str:
    worst = 0.0
    for M, R_t, nbar in itertools.product(range(1, 5), range(1, 9), (0.5, 1.0, 2.0)):
        spec = ProbeSpec(Scheme.TM, M, R_t=R_t, nbar=nbar)
        closed = fisher.qfim_closed_lossless(R_t * M * nbar, probes.spatial_interferometer(spec.weights))
        worst = max(worst, _rel(closed.h, _generic(spec).h))
    assert worst < REL_TOL, f"closed-form QFIM differs from the covariance formula by {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_qcrb_scalar() -> str:
    worst = 0.0
    for M, R_t, nbar in itertools.product(range(1, 5), range(1, 9), (0.5, 1.0, 2.0)):
        spec = ProbeSpec(Scheme.TM, M, R_t=R_t, nbar=nbar)
        N = R_t * M * nbar
        w = np.full(M, 1.0 / M)
        worst = max(worst, _rel(fisher.qcrb(w, _generic(spec)), w.sum() ** 2 / (8 * N * (N + 1))))
    assert worst < REL_TOL, f"weighted QCRB differs from (sum w)^2 / 8N(N+1) by {worst:.2e}"
    return f"max rel err {worst:.1e}"


_BOUND_GRID = [(R, M, nbar) for R in (1, 3, 10) for M in (1, 2, 3) for nbar in (0.5, 2.0)]


def check_ts_bound() -> str:
    worst = 0.0
    for R, M, nbar in _BOUND_GRID:
        spec = ProbeSpec(Scheme.TS, M, nbar=nbar)
        ref = fisher.qcrb(np.full(M, 1.0 / M), _generic(spec)) / R
        worst = max(worst, _rel(fisher.bound_ts(R, M, nbar).qcrb, ref))
    assert worst < REL_TOL, f"TS bound differs from R independent single-shot probes by {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_tm_bound() -> str:
    worst = 0.0
    for R, M, nbar in _BOUND_GRID:
        spec = ProbeSpec(Scheme.TM, M, R_t=R, nbar=nbar)
        ref = fisher.qcrb(np.full(M, 1.0 / M), _generic(spec))
        worst = max(worst, _rel(fisher.bound_tm(R, M, nbar).qcrb, ref))
    assert worst < REL_TOL, f"TM bound differs from one R-bin multiplexed probe by {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_sql_bound() -> str:
    worst = 0.0
    for R, M, nbar in _BOUND_GRID:
        spec = ProbeSpec(Scheme.SQL, M, R_t=R, nbar=nbar)
        ref = fisher.qcrb(np.full(M, 1.0 / M), _generic(spec))
        worst = max(worst, _rel(fisher.bound_sql(1.0, R, M, nbar).qcrb, ref))
    assert worst < REL_TOL, f"SQL bound differs from the coherent-probe QFIM by {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_lossy_vs_fock() -> str:
    worst = 0.0
    for eta, r in itertools.product((0.5, 0.8), (0.3, 0.6, 0.85)):
        N = np.sinh(r) ** 2
        sv = fock.squeezed_vacuum_fock(r, 60)
        ref = fock.qfi_fock(fock.phase_family(sv, eta), 0.3)
        closed = fisher.qfim_closed_lossy(N, eta, np.ones((1, 1))).h[0, 0]
        worst = max(worst, _rel(closed, ref))
    assert worst < 1e-5, f"lossy closed-form QFI differs from the Fock computation by {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_lossless_vs_fock() -> str:
    worst = 0.0
    for r in (0.3, 0.5, 0.8):
        N = np.sinh(r) ** 2
        ref = fock.qfi_fock(fock.phase_family(fock.squeezed_vacuum_fock(r, 60)), 0.0)
        worst = max(worst, _rel(fisher.qfim_closed_lossless(N, np.ones((1, 1))).h[0, 0], ref))
    assert worst < 1e-6, f"pure-state closed-form QFI differs from the Fock computation by {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_number_cov_vs_fock() -> str:
    r = 0.5
    bmap = gaussian.bogoliubov_from_factors(np.eye(1), [r])
    sv = fock.squeezed_vacuum_fock(r, 60)
    err1 = abs(fisher.number_cov(bmap, 0, 0) - fock.number_cov_fock(sv, 0, 0))
    r2, cutoff = 0.3, 30
    two = fock.beam_splitter_fock(fock.tensor(fock.squeezed_vacuum_fock(r2, cutoff), fock.vacuum_fock(cutoff)), np.pi / 4)
    c = np.cos(np.pi / 4)
    W = np.array([[c, c], [-c, c]])
    bmap2 = gaussian.bogoliubov_from_factors(W, [r2, 0.0])
    err2 = max(abs(fisher.number_cov(bmap2, i, j) - fock.number_cov_fock(two, i, j)) for i in (0, 1) for j in (0, 1))
    err = max(err1, err2)
    assert err < 1e-7, f"photon-number covariance differs from the Fock computation by {err:.2e}"
    return f"max abs err {err:.1e}"


def check_engine_vs_fock() -> str:
    worst = 0.0
    for r, eta in itertools.product((0.3, 0.8), (0.5, 1.0)):
        g = gaussian.apply_bogoliubov(gaussian.vacuum(1), gaussian.bogoliubov_from_factors(np.eye(1), [r]))
        g = gaussian.loss_channel(g, eta)
        f = fock.apply_loss_fock(fock.squeezed_vacuum_fock(r, 60), eta)
        worst = max(worst, abs(gaussian.mean_photon(g, 0) - fock.mean_photon_fock(f)))
        for theta in (0.0, np.pi / 2, 0.7):
            _, var = gaussian.quadrature_marginal(g, [theta])
            worst = max(worst, abs(var[0, 0] - fock.quadrature_moments_fock(f, theta)[1]))
    assert worst < 1e-7, f"Gaussian engine differs from the Fock computation by {worst:.2e}"
    return f"max abs err {worst:.1e}"


_LOSSY_GRID = [(eta, R, M, nbar) for eta in (0.3, 0.7, 1.0) for R, M, nbar in _BOUND_GRID]


def check_ts_lossy() -> str:
    worst = 0.0
    for eta, R, M, nbar in _LOSSY_GRID:
        h = fisher.qfim_closed_lossy(M * nbar, eta, probes.spatial_interferometer(np.ones(M)))
        ref = fisher.qcrb(np.full(M, 1.0 / M), h) / R
        worst = max(worst, _rel(fisher.bound_ts_lossy(eta, R, M, nbar).qcrb, ref))
    assert worst < REL_TOL, f"lossy TS bound differs from the lossy QFIM by {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_tm_lossy() -> str:
    worst = 0.0
    for eta, R, M, nbar in _LOSSY_GRID:
        h = fisher.qfim_closed_lossy(R * M * nbar, eta, probes.spatial_interferometer(np.ones(M)))
        ref = fisher.qcrb(np.full(M, 1.0 / M), h)
        worst = max(worst, _rel(fisher.bound_tm_lossy(eta, R, M, nbar).qcrb, ref))
    assert worst < REL_TOL, f"lossy TM bound differs from the lossy QFIM by {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_lossless_limit() -> str:
    worst = 0.0
    for R, M, nbar in _BOUND_GRID:
        worst = max(
            worst,
            _rel(fisher.bound_ts_lossy(1.0, R, M, nbar).qcrb, fisher.bound_ts(R, M, nbar).qcrb),
            _rel(fisher.bound_tm_lossy(1.0, R, M, nbar).qcrb, fisher.bound_tm(R, M, nbar).qcrb),
        )
    assert worst < REL_TOL, f"lossy bounds at eta = 1 differ from the lossless ones by {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_ordering() -> str:
    for R in np.logspace(0, 4, 25):
        for M, nbar in ((1, 0.5), (2, 2.0), (4, 1.0)):
            tm = fisher.bound_tm(R, M, nbar).qcrb
            ts = fisher.bound_ts(R, M, nbar).qcrb
            sql = fisher.bound_sql(1.0, R, M, nbar).qcrb
            assert tm <= ts * (1 + 1e-12) and ts <= sql, f"ordering TM <= TS <= SQL broken at R={R:.4g}, M={M}"
    return "TM <= TS <= SQL on 75 points"


def check_crossover() -> str:
    n = 0
    for eta in np.linspace(0.01, 1.0, 100):
        for R, M, nbar in ((10, 2, 2.0), (1000, 2, 2.0), (1, 1, 0.1)):
            x = R * M * nbar
            margin = x - (1 - 2 * eta) / (2 * eta**2)
            if abs(margin) < 1e-9 * max(x, 1.0):
                continue
            assert fisher.sql_crossover(eta, R, M, nbar) == (margin > 0), f"crossover inconsistent at eta={eta:.3f}"
            n += 1
    return f"{n} points consistent"


CHECKS: dict[str, Callable[[], str]] = {
    "closed_form_lossless_vs_generic": check_closed_lossless,
    "qcrb_weighted_scalar": check_qcrb_scalar,
    "ts_bound_vs_generic": check_ts_bound,
    "tm_bound_vs_generic": check_tm_bound,
    "sql_bound_vs_generic": check_sql_bound,
    "lossless_qfi_vs_fock": check_lossless_vs_fock,
    "lossy_qfi_vs_fock": check_lossy_vs_fock,
    "number_cov_vs_fock": check_number_cov_vs_fock,
    "engine_vs_fock": check_engine_vs_fock,
    "ts_lossy_bound_vs_qfim": check_ts_lossy,
    "tm_lossy_bound_vs_qfim": check_tm_lossy,
    "lossy_bounds_lossless_limit": check_lossless_limit,
    "bound_ordering": check_ordering,
    "sql_crossover_consistency": check_crossover,
}


def run_checks(names=None) -> list[CheckResult]:
    out = []
    for name in names or CHECKS:
        try:
            out.append(CheckResult(name, True, CHECKS[name]()))
        except AssertionError as exc:
            out.append(CheckResult(name, False, str(exc)))
        except Exception as exc:  # a crashing check is a failed check
            out.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return out
