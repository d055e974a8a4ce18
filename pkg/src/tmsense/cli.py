"""Command-line front end: bounds, sweeps, Monte Carlo estimation and self-verification.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import fisher, measurement, verify
from .errors import InvalidParameter, NumericalError
from .probes import ProbeSpec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

COMMANDS = ("bounds", "sweep-r", "sweep-loss", "simulate-mle", "verify")


class LogRange(BaseModel):
    model_config = ConfigDict(extra="forbid")
    start: float = Field(gt=0)
    stop: float = Field(gt=0)
    points: int = Field(ge=2)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.start < self.stop:
            raise ValueError("log range needs start < stop")
        return self

    def values(self) -> np.ndarray:
        return np.geomspace(self.start, self.stop, self.points)


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    variable: Literal["R", "eta"]
    grid: Union[list[float], LogRange]

    @field_validator("grid")
    @classmethod
    def _positive(cls, g):
        if isinstance(g, list) and (not g or min(g) <= 0):
            raise ValueError("grid values must be positive and nonempty")
        return g

    def values(self) -> np.ndarray:
        return self.grid.values() if isinstance(self.grid, LogRange) else np.asarray(self.grid, dtype=float)


class SpecConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    scheme: Literal["TS", "TM", "SQL"] = "TM"
    M: int = Field(2, ge=1)
    nbar: float = Field(2.0, gt=0)
    eta: float = Field(1.0, gt=0, le=1)
    R: float = Field(10, gt=0)
    R_t: Optional[int] = Field(None, ge=1)
    R_r: Optional[int] = Field(None, ge=1)
    weights: Optional[list[float]] = None

    @field_validator("weights")
    @classmethod
    def _weights(cls, w):
        if w is not None and (not w or min(w) <= 0):
            raise ValueError("weights must be positive")
        return w


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    command: Optional[Literal["bounds", "sweep-r", "sweep-loss", "simulate-mle", "verify"]] = None
    spec: SpecConfig = SpecConfig()
    sweep: Optional[SweepConfig] = None
    trials: int = Field(1000, ge=100)
    seed: int = Field(0, ge=0, lt=2**64)
    output_path: Optional[str] = None
    s: Union[float, list[float]] = 0.8
    C: float = 0.0
    D: float = Field(0.0, ge=0)

    @field_validator("s")
    @classmethod
    def _s(cls, v):
        for x in np.atleast_1d(v):
            if not 0 <= x <= 1:
                raise ValueError("s must lie in [0, 1]")
        return v


# --------------------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def write_csv(rows: list[dict], path: Optional[str], stream=None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(rows[0]))
    for row in rows:
        w.writerow([_fmt(v) for v in row.values()])
    text = buf.getvalue()
    if path:
        Path(path).write_text(text)
    else:
        (stream or sys.stdout).write(text)


# --------------------------------------------------------------------------- commands


def bounds_rows(R: float, M: int, nbar: float, eta: float) -> list[dict]:
    reports = [
        fisher.bound_ts_lossy(eta, R, M, nbar),
        fisher.bound_tm_lossy(eta, R, M, nbar),
        fisher.bound_sql(eta, R, M, nbar),
    ]
    return [
        {"scheme": r.scheme.value, "R": R, "M": M, "nbar": nbar, "eta": eta, "qcrb": r.qcrb}
        for r in reports
    ]


def sweep_r_rows(grid, M: int, nbar: float, eta: float) -> list[dict]:
    rows = []
    for R in sorted(float(x) for x in grid):
        rows.append({
            "R": R,
            "TS": fisher.bound_ts_lossy(eta, R, M, nbar).qcrb,
            "TM": fisher.bound_tm_lossy(eta, R, M, nbar).qcrb,
            "SQL": fisher.bound_sql(eta, R, M, nbar).qcrb,
        })
    return rows


def sweep_loss_rows(grid, R: float, M: int, nbar: float) -> list[dict]:
    rows = []
    for eta in sorted(float(x) for x in grid):
        if not 0 < eta <= 1:
            raise InvalidParameter(f"sweep.grid: eta values must lie in (0, 1], got {eta}")
        rows.append({
            "eta": eta,
            "TS": fisher.bound_ts_lossy(eta, R, M, nbar).qcrb,
            "TM": fisher.bound_tm_lossy(eta, R, M, nbar).qcrb,
            "SQL": fisher.bound_sql(eta, R, M, nbar).qcrb,
            "tm_beats_sql": fisher.sql_crossover(eta, R, M, nbar),
        })
    return rows


def split_budget(R: float, s: float) -> tuple[int, int]:
    """``R_t = round(R^s)``, ``R_r = round(R^(1-s))`` (both at least 1)."""
    return max(1, round(R**s)), max(1, round(R ** (1.0 - s)))


def effective_splits(cfg: ExperimentConfig) -> list[float]:
    """Split exponents actually simulated; TS and SQL always use s = 0."""
    if cfg.spec.scheme != "TM":
        return [0.0]
    return [float(s) for s in np.atleast_1d(cfg.s)]


def simulate(cfg: ExperimentConfig) -> list[measurement.EstimationResult]:
    sc = cfg.spec
    results = []
    for s in effective_splits(cfg):
        if sc.R_t is not None or sc.R_r is not None:
            R_t, R_r = sc.R_t or 1, sc.R_r or 1
        else:
            R_t, R_r = split_budget(sc.R, s)
        spec = ProbeSpec(sc.scheme, sc.M, R_t=R_t, R_r=R_r, nbar=sc.nbar, weights=sc.weights, eta=sc.eta)
        phases = measurement.local_phases(spec, cfg.C, cfg.D)
        results.append(measurement.run_experiment(spec, phases, cfg.trials, seed=cfg.seed))
    return results


def simulate_rows(results, s_values) -> list[dict]:
    rows = []
    for res, s in zip(results, np.atleast_1d(s_values)):
        rows.append({
            "R_r": res.spec.R_r,
            "R_t": res.spec.R_t,
            "s": float(s),
            "variance": res.sample_variance,
            "crb": res.crb,
            "qfi": res.qfi_scalar,
            "ratio": res.ratio,
        })
    return rows


def cmd_bounds(cfg: ExperimentConfig, out: Optional[str]) -> int:
    sc = cfg.spec
    write_csv(bounds_rows(sc.R, sc.M, sc.nbar, sc.eta), out)
    return EXIT_OK


def _grid(cfg: ExperimentConfig, variable: str, default: np.ndarray) -> np.ndarray:
    if cfg.sweep is None:
        return default
    if cfg.sweep.variable != variable:
        raise InvalidParameter(f"sweep.variable: expected {variable!r}, got {cfg.sweep.variable!r}")
    return cfg.sweep.values()


def cmd_sweep_r(cfg: ExperimentConfig, out: Optional[str]) -> int:
    sc = cfg.spec
    grid = _grid(cfg, "R", np.logspace(0, 4, 50))
    write_csv(sweep_r_rows(grid, sc.M, sc.nbar, sc.eta), out)
    return EXIT_OK


def cmd_sweep_loss(cfg: ExperimentConfig, out: Optional[str], R_default: float = 1e3) -> int:
    sc = cfg.spec
    grid = _grid(cfg, "eta", np.round(np.arange(1, 101) * 0.01, 12))
    R = sc.R if "R" in sc.model_fields_set else R_default
    write_csv(sweep_loss_rows(grid, R, sc.M, sc.nbar), out)
    return EXIT_OK


def cmd_simulate_mle(cfg: ExperimentConfig, out: Optional[str]) -> int:
    results = simulate(cfg)
    docs = [r.to_dict() for r in results]
    splits = effective_splits(cfg)
    for d, s in zip(docs, splits):
        d["s"] = float(s)
        d["C"], d["D"] = cfg.C, cfg.D
    text = json.dumps(docs[0] if len(docs) == 1 else docs, sort_keys=True, indent=2) + "\n"
    rows = simulate_rows(results, splits)
    if out:
        Path(out).write_text(text)
        write_csv(rows, str(Path(out).with_suffix(".csv")))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Optional[str]) -> int:
    results = verify.run_checks()
    lines = [f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}" for r in results]
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)
    failed = [r.name for r in results if not r.ok]
    if failed:
        sys.stderr.write(f"verification failed: {', '.join(failed)}\n")
        return EXIT_VERIFY
    return EXIT_OK


HANDLERS = {
    "bounds": cmd_bounds,
    "sweep-r": cmd_sweep_r,
    "sweep-loss": cmd_sweep_loss,
    "simulate-mle": cmd_simulate_mle,
    "verify": cmd_verify,
}


# --------------------------------------------------------------------------- parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--out", help="output path (stdout if omitted)")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--scheme", choices=["TS", "TM", "SQL"])
    common.add_argument("--M", type=int)
    common.add_argument("--nbar", type=float)
    common.add_argument("--eta", type=float)
    common.add_argument("--R", type=float, help="total repetitions R = R_t * R_r")
    common.add_argument("--R-t", dest="R_t", type=int)
    common.add_argument("--R-r", dest="R_r", type=int)
    common.add_argument("--s", type=float, nargs="+", help="split exponent(s): R_t = R^s")
    common.add_argument("--C", type=float, help="offset of the average phase from phi_opt, in units of 1/(R_t M nbar)")
    common.add_argument("--D", type=float, help="mean-square phase spread, in units of 1/(R_t M nbar)")

    parser = argparse.ArgumentParser(prog="tmsense", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("bounds", "QCRB of every scheme for one budget"),
        ("sweep-r", "bounds versus total repetitions R"),
        ("sweep-loss", "lossy bounds versus transmission eta"),
        ("simulate-mle", "Monte Carlo maximum-likelihood estimation with homodyne detection"),
        ("verify", "run the self-consistency suite"),
    ):
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise InvalidParameter(f"config: cannot read {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidParameter(f"config: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise InvalidParameter("config: top level must be a JSON object")
    raw["command"] = args.command
    spec = dict(raw.get("spec") or {})
    for key in ("scheme", "M", "nbar", "eta", "R", "R_t", "R_r"):
        if getattr(args, key) is not None:
            spec[key] = getattr(args, key)
    raw["spec"] = spec
    for key in ("seed", "trials", "C", "D"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    if args.s is not None:
        raw["s"] = args.s[0] if len(args.s) == 1 else args.s
    return ExperimentConfig.model_validate(raw)


def _describe(exc: ValidationError) -> str:
    parts = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"] if not isinstance(p, int) or len(e["loc"]) == 1)
        parts.append(f"{loc or 'config'}: {e['msg']}")
    return "; ".join(parts)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ValidationError as exc:
        sys.stderr.write(f"configuration error: {_describe(exc)}\n")
        return EXIT_CONFIG
    except InvalidParameter as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    out = args.out or cfg.output_path
    try:
        return HANDLERS[args.command](cfg, out)
    except InvalidParameter as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
