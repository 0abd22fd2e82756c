"""Command-line entry point.

    eqlyte mms --levels 4,8,16,32
    eqlyte run --dim 1 --h 128
    eqlyte sweep --khat 0.1,1,10,100,1000
    eqlyte annulus --r-in 1 --r-out 2
    eqlyte temperature --tau 0.5,1,2,4

Parameters are resolved as built-in defaults < ``--config`` file < flags.
Every run writes ``manifest.cfg`` next to its outputs; feeding it back with
``--config`` repeats the run.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import studies
from .io import read_config, write_config
from .mesh import MeshError
from .model import MixtureSpec, SolventDepletionError, SpeciesSpec
from .solver import NewtonConfig, SolverFailure
from .verify import run_convergence_study

logger = logging.getLogger("eqlyte")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("mms", "run", "sweep", "annulus", "temperature")


class ConfigError(ValueError):
    pass


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _cells(text) -> int:
    """Accept ``128``, ``1/128`` or ``0.0078125`` as the mesh size."""
    s = str(text).strip()
    if "/" in s:
        num, den = s.split("/", 1)
        h = float(num) / float(den)
    else:
        v = float(s)
        if v >= 1:
            if v != int(v):
                raise ValueError(f"cell count must be an integer, got {s}")
            return int(v)
        h = v
    if not h > 0:
        raise ValueError(f"mesh size must be positive, got {s}")
    n = round(1.0 / h)
    if n < 1 or abs(n * h - 1.0) > 1e-9:
        raise ValueError(f"h={s} does not divide the unit interval")
    return n


@dataclass
class RunConfig:
    command: str = "run"
    dim: int = 1
    h: int = 0                       # cells per unit length; 0 resolves to the study default
    voltage: float = 1.0
    khat: list = field(default_factory=lambda: [1.0])
    tau: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    r_in: float = 1.0
    r_out: float = 2.0
    n_radial: int = 32
    n_angular: int = 128
    levels: list = field(default_factory=lambda: [4, 8, 16, 32])
    out: str = "results"
    tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iter: int = 50
    damping_min: float = 1.0 / 64
    continuation: int = 1
    verbosity: int = 0
    M_C: float = 0.1
    M_A: float = 0.1
    z_C: int = 1
    z_A: int = -1
    chi: float = 1.0
    yC0: float = 0.4
    yA0: float = 0.4
    n0: float = 1.0
    Psi: float = 1.0
    Lambda: float = 1000.0

    def mixture(self, khat: float | None = None) -> MixtureSpec:
        return MixtureSpec(
            species=(SpeciesSpec("C", self.z_C, self.M_C, self.yC0),
                     SpeciesSpec("A", self.z_A, self.M_A, self.yA0)),
            chi=self.chi, Psi=self.Psi, Lambda=self.Lambda,
            Khat=self.khat[0] if khat is None else khat, n_avg=self.n0,
        )

    def newton(self) -> NewtonConfig:
        return NewtonConfig(abs_tol=self.tol, rel_tol=self.rel_tol, max_iter=self.max_iter,
                            damping_min=self.damping_min, continuation_steps=self.continuation)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_CASTS = {
    "command": str, "dim": int, "h": _cells, "voltage": float, "khat": _floats, "tau": _floats,
    "r_in": float, "r_out": float, "n_radial": int, "n_angular": int,
    "levels": lambda s: [_cells(v) for v in (s if isinstance(s, list) else str(s).split(","))],
    "out": str, "tol": float, "rel_tol": float, "damping_min": float, "max_iter": int, "continuation": int, "verbosity": int,
    "M_C": float, "M_A": float, "z_C": int, "z_A": int, "chi": float, "yC0": float,
    "yA0": float, "n0": float, "Psi": float, "Lambda": float,
}


def _apply(cfg: RunConfig, values: dict, source: str) -> None:
    for key, raw in values.items():
        if key.startswith("report."):
            continue
        if key not in _CASTS:
            raise ConfigError(f"{source}: unknown key '{key}'")
        try:
            setattr(cfg, key, _CASTS[key](raw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: bad value for '{key}': {raw!r} ({exc})") from exc


def _validate(cfg: RunConfig) -> None:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command '{cfg.command}'")
    if cfg.dim not in (1, 2, 3):
        raise ConfigError(f"dim must be 1, 2 or 3, got {cfg.dim}")
    if not 0 < cfg.r_in < cfg.r_out:
        raise ConfigError(f"need 0 < r_in < r_out, got r_in={cfg.r_in}, r_out={cfg.r_out}")
    if any(v <= 0 for v in cfg.khat) or any(v <= 0 for v in cfg.tau):
        raise ConfigError("khat and tau values must be positive")
    if not cfg.khat or not cfg.tau or not cfg.levels:
        raise ConfigError("khat, tau and levels must not be empty")
    if cfg.tol <= 0 or cfg.rel_tol <= 0 or cfg.max_iter < 1 or cfg.continuation < 1:
        raise ConfigError("tolerances must be positive, max_iter and continuation >= 1")
    if not 0 < cfg.damping_min <= 1:
        raise ConfigError(f"damping_min must lie in (0, 1], got {cfg.damping_min}")
    if cfg.h < 0 or cfg.n_radial < 1 or cfg.n_angular < 3:
        raise ConfigError("mesh counts must be positive and n_angular >= 3")
    try:
        cfg.mixture()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eqlyte", description="Equilibrium electrolyte finite-element studies")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--dim", help="spatial dimension (1, 2 or 3)")
    p.add_argument("--h", help="mesh size: cells per unit length (128) or h (1/128)")
    p.add_argument("--voltage", help="electrode potential magnitude")
    p.add_argument("--khat", help="bulk modulus, comma-separated for sweeps")
    p.add_argument("--tau", help="temperature scale factors, comma-separated")
    p.add_argument("--r-in", dest="r_in")
    p.add_argument("--r-out", dest="r_out")
    p.add_argument("--n-radial", dest="n_radial")
    p.add_argument("--n-angular", dest="n_angular")
    p.add_argument("--levels", help="MMS levels, cells per side, comma-separated")
    p.add_argument("--out", help="output directory")
    p.add_argument("--tol")
    p.add_argument("--max-iter", dest="max_iter")
    p.add_argument("--continuation", help="initial number of voltage ramp levels")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def parse_args(argv=None) -> RunConfig:
    ns = build_parser().parse_args(argv)
    cfg = RunConfig(command=ns.command)
    if ns.command == "sweep":
        cfg.khat = [0.1, 1.0, 10.0, 100.0, 1000.0]
    if ns.config:
        path = Path(ns.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            values = read_config(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        values.pop("command", None)
        _apply(cfg, values, str(path))
    flags = {k: v for k, v in vars(ns).items()
             if k not in ("command", "config", "verbose") and v is not None}
    _apply(cfg, flags, "command line")
    cfg.verbosity = max(cfg.verbosity, ns.verbose)
    _validate(cfg)
    if cfg.h == 0:
        # resolve the study default so the manifest carries the actual mesh
        sweep_1d = cfg.command == "sweep" and cfg.dim == 1
        cfg.h = studies.SWEEP_CELLS_1D if sweep_1d else studies.DEFAULT_CELLS[cfg.dim]
    return cfg


# ---------------------------------------------------------------------------


def _report_entries(report, prefix="report") -> dict:
    if report is None:
        return {}
    return {
        f"{prefix}.converged": report.converged,
        f"{prefix}.iterations": report.iterations,
        f"{prefix}.residual_norm": report.residual_norm,
        f"{prefix}.continuation_levels": report.continuation_levels,
        f"{prefix}.message": report.message or "ok",
    }


def _dispatch(cfg: RunConfig, out: Path, manifest: dict) -> None:
    newton = cfg.newton()
    cells = cfg.h
    if cfg.command == "mms":
        table = run_convergence_study(cfg.levels, config=newton)
        out.mkdir(parents=True, exist_ok=True)
        table.write_csv(out / "convergence.csv")
        (out / "convergence.txt").write_text(table.to_text() + "\n")
        print(table.to_text())
        for k, r in zip(cfg.levels, table.reports):
            manifest.update(_report_entries(r, f"report.level{k}"))
    elif cfg.command == "run":
        res = studies.run_compressible(cfg.dim, cells, cfg.voltage, cfg.mixture(), newton, out)
        manifest.update(_report_entries(res.report))
    elif cfg.command == "sweep":
        rows = studies.run_khat_sweep(cfg.khat, cfg.dim, cells, cfg.mixture(), newton, out)
        for r in rows:
            manifest.update(_report_entries(r["report"], f"report.khat{r['Khat']:g}"))
            print(f"Khat={r['Khat']:<8g} max|n-n0|={r['max_dev']:.6e}")
        if not all(r["converged"] for r in rows):
            raise SolverFailure("one or more sweep members failed")
    elif cfg.command == "annulus":
        res = studies.run_annulus(cfg.r_in, cfg.r_out, cfg.n_radial, cfg.n_angular,
                                  cfg.mixture(), newton, out)
        manifest.update(_report_entries(res.report))
        manifest["report.asymmetry"] = res.extra["asymmetry"]
        print(f"asymmetry A = {res.extra['asymmetry']:.6f}")
    elif cfg.command == "temperature":
        results = studies.run_temperature_sweep(cfg.tau, cfg.dim, cells, cfg.mixture(), newton, out)
        for res in results:
            manifest.update(_report_entries(res.report, f"report.tau{res.extra['tau']:g}"))


def main(argv=None) -> int:
    try:
        cfg = parse_args(argv)
    except ConfigError as exc:
        print(f"eqlyte: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(cfg.out)
    manifest = cfg.as_dict()
    code = EXIT_OK
    t0 = time.perf_counter()
    try:
        _dispatch(cfg, out, manifest)
    except SolverFailure as exc:
        print(f"eqlyte: solver failure: {exc}", file=sys.stderr)
        manifest.update(_report_entries(exc.report))
        code = EXIT_SOLVER
    except (SolventDepletionError, ArithmeticError) as exc:
        print(f"eqlyte: solver failure: {exc}", file=sys.stderr)
        manifest["report.message"] = str(exc)
        code = EXIT_SOLVER
    except (MeshError, ValueError) as exc:
        print(f"eqlyte: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"eqlyte: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    manifest["report.wall_time"] = time.perf_counter() - t0
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_config(out / "manifest.cfg", manifest, header="eqlyte run manifest")
    except OSError as exc:
        print(f"eqlyte: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
