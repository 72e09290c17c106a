"""Run configuration and the benchmark runners: h-convergence, square and
circular reservoirs, the 3D box, and static-scaling reports.

Every runner returns plain-data reports (dicts / dataclasses with ``to_dict``)
and, when an output directory is configured, writes a JSON summary, CSV
tables and VTU fields there.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .assembly import discretize, l2_errors
from .errors import ConfigurationError
from .physics import (annulus_levels, box3d_problem, circular_reservoir_problem, manufactured_problem,
                      square_reservoir_problem)
from .solvers import SolverOptions, newton_solve, vi_pipeline
from .vtk import write_vtu

__all__ = [
    "RunConfig",
    "ScalingRecord",
    "set_threads",
    "run_hconv",
    "run_square_reservoir",
    "run_circular_reservoir",
    "run_box3d",
    "static_scaling_report",
    "time_assembly",
    "PRESETS",
]

PRESETS = ("hconv", "square", "circular", "box3d")


@dataclass
class RunConfig:
    preset: str = "square"
    formulation: str = "RT0"
    eps: float = 1e-3
    beta: float | None = None          # None: preset default
    theta: float = np.pi / 3
    mesh_level: int = 0
    h: float = 1.0
    law: str = "linearized"
    levels: tuple = (8, 16, 32, 64)   # h-convergence meshes
    box_n: tuple = (25, 25, 12)
    rtol: float = 1e-8
    linear_rtol: float = 1e-7
    max_newton: int = 30
    max_vi: int = 50
    restart: int = 200
    inner: str = "ilu0"
    threads: int | None = None
    out: str | None = None

    def __post_init__(self):
        self.formulation = self.formulation.upper()
        self.levels = tuple(int(n) for n in self.levels)
        self.box_n = tuple(int(n) for n in self.box_n)

    def validate(self) -> "RunConfig":
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.formulation not in ("RT0", "VMS"):
            raise ConfigurationError(f"formulation must be RT0 or VMS, got {self.formulation!r}")
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        if self.beta is not None and self.beta < 0:
            raise ConfigurationError("beta must be non-negative")
        if self.preset == "circular" and not 0 <= self.mesh_level < len(annulus_levels()):
            raise ConfigurationError(f"mesh level must be in [0, {len(annulus_levels()) - 1}]")
        if self.preset == "box3d" and self.formulation != "RT0":
            raise ConfigurationError("the 3D preset runs RT0 only")
        if self.preset == "hconv" and len(self.levels) < 3:
            raise ConfigurationError("h-convergence needs at least 3 mesh levels")
        if self.h <= 0 or self.rtol <= 0 or self.linear_rtol <= 0:
            raise ConfigurationError("h and tolerances must be positive")
        if self.threads is not None and self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.law not in ("linearized", "exponential"):
            raise ConfigurationError(f"unknown viscosity law {self.law!r}")
        if self.out is not None:
            out = Path(self.out)
            try:
                out.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ConfigurationError(f"output directory {out} is not writable: {exc}") from exc
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Build from a (possibly nested) mapping; nested tables are flattened
        and unknown keys rejected."""
        flat = {}
        for key, val in data.items():
            if isinstance(val, dict):
                flat.update(val)
            else:
                flat[key.replace("-", "_")] = val
        flat = {k.replace("-", "_"): v for k, v in flat.items()}
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**flat)

    @classmethod
    def from_toml(cls, path, **overrides) -> "RunConfig":
        try:
            import tomllib
        except ModuleNotFoundError:   # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            cfg = cls.from_dict(tomllib.load(fh))
        return cfg.updated(**overrides)

    def updated(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def options(self) -> SolverOptions:
        return SolverOptions(rtol=self.rtol, max_newton=self.max_newton, max_vi=self.max_vi,
                             linear_rtol=self.linear_rtol, restart=self.restart, inner=self.inner)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"], d["box_n"] = list(self.levels), list(self.box_n)
        return d


@dataclass
class ScalingRecord:
    mesh_id: str
    formulation: str
    dofs: int
    newton_time: float
    vi_time: float
    total_time: float = field(default=None)

    def __post_init__(self):
        if self.total_time is None:
            self.total_time = self.newton_time + self.vi_time
        if abs(self.total_time - (self.newton_time + self.vi_time)) > 0.01 * max(self.total_time, 1e-300):
            raise ValueError("total time must equal the sum of the phases within 1%")

    @staticmethod
    def _rate(dofs, t):
        return dofs / t if t > 0 else float("inf")

    @property
    def newton_rate(self) -> float:
        return self._rate(self.dofs, self.newton_time)

    @property
    def vi_rate(self) -> float:
        return self._rate(self.dofs, self.vi_time)

    @property
    def total_rate(self) -> float:
        return self._rate(self.dofs, self.total_time)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(newton_rate=self.newton_rate, vi_rate=self.vi_rate, total_rate=self.total_rate)
        return d


def set_threads(n: int | None):
    """Set the numba thread count used by the assembly kernels."""
    if n is None:
        return
    import numba
    if n > numba.config.NUMBA_NUM_THREADS:
        raise ConfigurationError(f"{n} threads requested but numba was started with "
                                 f"{numba.config.NUMBA_NUM_THREADS}; set NUMBA_NUM_THREADS")
    numba.set_num_threads(n)


# output helpers ----------------------------------------------------------------------


def _out_dir(config: RunConfig):
    return Path(config.out) if config.out else None


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_csv(path: Path, rows: list):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _pipeline_fields(prob, sol, report) -> dict:
    """Pre- and post-VI pressure, velocity magnitudes and their absolute
    difference, at cells (RT0) or vertices (VMS)."""
    sol0 = report.unconstrained
    if prob.formulation == "RT0":
        u0, u1 = prob.cell_velocity(sol0), prob.cell_velocity(sol)
    else:
        nv, d = prob.mesh.n_vertices, prob.dim
        u0, u1 = sol0.u.reshape(d, nv).T, sol.u.reshape(d, nv).T
    return {
        "pressure_unconstrained": sol0.p,
        "pressure": sol.p,
        "velocity_unconstrained": u0,
        "velocity": u1,
        "velocity_magnitude_unconstrained": np.linalg.norm(u0, axis=1),
        "velocity_magnitude": np.linalg.norm(u1, axis=1),
        "velocity_abs_difference": np.linalg.norm(u1 - u0, axis=1),
    }


def _finish_pipeline(config: RunConfig, spec, sol, report, stem: str):
    prob = discretize(spec, config.formulation)
    flds = _pipeline_fields(prob, sol, report)
    out = _out_dir(config)
    summary = {"config": config.to_dict(), "report": report.to_dict(), "table": report.table_row()}
    if out is not None:
        cell_fields = tuple(flds) if prob.formulation == "RT0" else ()
        write_vtu(prob.mesh, flds, out / f"{stem}.vtu", cell_fields=cell_fields)
        _write_json(out / f"{stem}.json", summary)
        _write_csv(out / f"{stem}.csv", [report.table_row()])
    return summary, flds


# runners -------------------------------------------------------------------------------


def _slope(h, e):
    """Least-squares slope of log(e) against log(h)."""
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def run_hconv(config: RunConfig | None = None, betas=(0.0, 1.0)) -> dict:
    """L2 errors of the manufactured solution on nested unit-square meshes.

    Returns ``{beta: {"h", "err_u", "err_p", "rate_u", "rate_p", "pairwise_u",
    "pairwise_p"}}``; rates are least-squares slopes.
    """
    config = (config or RunConfig(preset="hconv")).validate()
    set_threads(config.threads)
    if config.beta is not None:
        betas = (config.beta,)
    table, rows = {}, []
    for beta in betas:
        hs, eu, ep = [], [], []
        for n in config.levels:
            spec = manufactured_problem(n, betaB=beta, law=config.law)
            try:
                sol, _ = newton_solve(spec, config.formulation, options=config.options())
            except Exception as exc:
                raise type(exc)(f"level n={n}: {exc}") from exc
            e_u, e_p = l2_errors(spec, sol)
            hs.append(1.0 / n)
            eu.append(e_u)
            ep.append(e_p)
            rows.append({"formulation": config.formulation, "beta": beta, "n": n, "h": 1.0 / n,
                         "err_u": e_u, "err_p": e_p})
        h, eu, ep = map(np.asarray, (hs, eu, ep))
        table[beta] = {
            "h": h.tolist(), "err_u": eu.tolist(), "err_p": ep.tolist(),
            "rate_u": _slope(h, eu), "rate_p": _slope(h, ep),
            "pairwise_u": (np.diff(np.log(eu)) / np.diff(np.log(h))).tolist(),
            "pairwise_p": (np.diff(np.log(ep)) / np.diff(np.log(h))).tolist(),
        }
    out = _out_dir(config)
    if out is not None:
        _write_csv(out / f"hconv_{config.formulation.lower()}.csv", rows)
        _write_json(out / f"hconv_{config.formulation.lower()}.json",
                    {"config": config.to_dict(), "table": {str(k): v for k, v in table.items()}})
    return table


def run_square_reservoir(config: RunConfig | None = None):
    """Anisotropic square reservoir through the full pipeline.

    Returns ``(summary, fields, solution)``.
    """
    config = (config or RunConfig()).validate()
    set_threads(config.threads)
    beta = 1e-8 if config.beta is None else config.beta
    spec = square_reservoir_problem(config.eps, h=config.h, betaB=beta, law=config.law)
    sol, report = vi_pipeline(spec, config.formulation, options=config.options())
    stem = f"square_{config.formulation.lower()}_eps{config.eps:g}"
    summary, flds = _finish_pipeline(config, spec, sol, report, stem)
    return summary, flds, sol


def run_circular_reservoir(config: RunConfig | None = None):
    """Borehole problem with both bounds at one annulus level.

    Returns ``(summary, fields, ScalingRecord)``.
    """
    config = (config or RunConfig(preset="circular")).validate()
    set_threads(config.threads)
    beta = 1e-8 if config.beta is None else config.beta
    spec = circular_reservoir_problem(config.mesh_level, betaB=beta, law=config.law, theta=config.theta)
    sol, report = vi_pipeline(spec, config.formulation, options=config.options())
    stem = f"circular_{config.formulation.lower()}_level{config.mesh_level}_beta{beta:g}"
    summary, flds = _finish_pipeline(config, spec, sol, report, stem)
    record = ScalingRecord(f"level{config.mesh_level}", config.formulation, report.n_dofs,
                           report.newton.wall_time, report.vi.wall_time)
    summary["scaling"] = record.to_dict()
    return summary, flds, record


def run_box3d(config: RunConfig | None = None, thread_counts=None):
    """3D box with the sinusoidal injection patch (RT0).

    ``thread_counts`` optionally repeats the run for each count and adds
    ``summary["threads"]`` with per-count phase timings. Returns
    ``(summary, fields, solution)``.
    """
    config = (config or RunConfig(preset="box3d")).validate()
    beta = 1e-8 if config.beta is None else config.beta
    spec = box3d_problem(config.box_n, betaB=beta, law=config.law)
    set_threads(config.threads)
    sol, report = vi_pipeline(spec, "RT0", options=config.options())
    stem = f"box3d_{'x'.join(map(str, config.box_n))}"
    summary, flds = _finish_pipeline(config, spec, sol, report, stem)
    if thread_counts:
        sweep = []
        for n in thread_counts:
            set_threads(n)
            spec_n = box3d_problem(config.box_n, betaB=beta, law=config.law)
            _, rep = vi_pipeline(spec_n, "RT0", options=config.options())
            sweep.append({"threads": n, **rep.table_row()})
        set_threads(config.threads or sweep[0]["threads"])
        summary["threads"] = sweep
        if _out_dir(config) is not None:
            _write_csv(_out_dir(config) / f"{stem}_threads.csv", sweep)
    return summary, flds, sol


def time_assembly(spec, formulation: str = "RT0", repeats: int = 3):
    """Best-of-``repeats`` wall time of one residual + Jacobian assembly at the
    default initial state, and the assembled system."""
    prob = discretize(spec, formulation)
    state = prob.initial_state()
    bs = prob.assemble(state)   # compile and warm caches
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        bs = prob.assemble(state)
        best = min(best, time.perf_counter() - t0)
    return best, bs


def static_scaling_report(records, path=None) -> dict:
    """Per-formulation (dofs, dofs/s) series for the non-VI phase, the VI
    phase and the total. With ``path`` (a directory), writes
    ``static_scaling.csv`` and ``static_scaling_series.json``."""
    records = list(records)
    if len(records) < 2:
        raise ValueError("a scaling report needs at least 2 records")
    series = {}
    for rec in sorted(records, key=lambda r: (r.formulation, r.dofs)):
        s = series.setdefault(rec.formulation, {"dofs": [], "newton": [], "vi": [], "total": []})
        s["dofs"].append(rec.dofs)
        s["newton"].append(rec.newton_rate)
        s["vi"].append(rec.vi_rate)
        s["total"].append(rec.total_rate)
    if path is not None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        _write_csv(path / "static_scaling.csv", [r.to_dict() for r in records])
        _write_json(path / "static_scaling_series.json", series)
    return series
