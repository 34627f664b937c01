"""Experiment drivers (convergence study, penalty sweep, energy runs) and CSV output."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import NONLINEAR_FORMS, SolverParams
from .cases import CASES
from .diagnostics import convergence_rates, error_norms
from .fem import TraceSpace
from .geometry import barycentric_coordinates, write_vtk
from .linalg import BACKENDS
from .timestep import Simulation

log = logging.getLogger(__name__)

COMMANDS = ("convergence", "penalty-sweep", "energy")
MAX_LEVEL = 4
MAX_LEVEL_UNLOCKED = 5

CONVERGENCE_COLUMNS = ["level", "h", "dt", "tau", "nu", "err_LinfL2", "err_L2H1", "err_uN", "err_pL2"]
RATE_COLUMNS = ["rate_LinfL2", "rate_L2H1", "rate_uN", "rate_pL2"]
SWEEP_COLUMNS = ["tau", "err_LinfL2", "err_L2H1", "err_pL2"]
ENERGY_COLUMNS = ["step", "time", "kinetic", "kinetic_norm"]


@dataclass
class ExperimentConfig:
    command: str
    levels: list = field(default_factory=lambda: [3])
    dt: float | None = None  # None: 2^(1-level)/10
    tau: float | None = None  # literal value; overrides tau_rule
    tau_rule: str = "h-2"
    tau_exponents: list = field(default_factory=lambda: list(range(17)))
    nu: float = 1.0
    case: str = "exact1"
    form: str = "convective"
    t_end: float = 1.0
    out: str = "."
    quad_degree: int = 4
    volume_degree: int = 2
    backend: str = "direct"
    vtk: bool = False
    allow_level5: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if not self.levels:
            raise ValueError("no levels given")
        cap = MAX_LEVEL_UNLOCKED if self.allow_level5 else MAX_LEVEL
        for lv in self.levels:
            if lv < 0 or lv > cap:
                raise ValueError(
                    f"level {lv} outside 0..{cap}"
                    + ("" if self.allow_level5 else " (level 5 needs --allow-level5)")
                )
        if list(self.levels) != sorted(self.levels):
            raise ValueError("levels must be ascending")
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}")
        if self.form not in NONLINEAR_FORMS:
            raise ValueError(f"unknown nonlinear form {self.form!r}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.tau is None and self.tau_rule != "h-2":
            raise ValueError(f"unknown tau rule {self.tau_rule!r} (only 'h-2')")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.nu < 0:
            raise ValueError("nu must be >= 0")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.command == "penalty-sweep" and not self.tau_exponents:
            raise ValueError("empty tau exponent list")
        if self.command == "energy" and self.case not in ("killing", "sol2a"):
            raise ValueError("energy runs support cases 'killing' and 'sol2a'")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    def dt_for(self, level: int) -> float:
        return self.dt if self.dt is not None else 2.0 ** (1 - level) / 10

    def tau_for(self, h: float) -> float:
        return self.tau if self.tau is not None else h**-2

    def params(self, level: int, h: float, **overrides) -> SolverParams:
        kw = dict(
            nu=self.nu,
            dt=self.dt_for(level),
            t_end=self.t_end,
            nonlinear_form=self.form,
            case=self.case,
            tau=self.tau_for(h),
        )
        kw.update(overrides)
        return SolverParams.for_level(level, h, **kw)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def format_csv(columns, rows, meta: dict) -> str:
    buf = io.StringIO()
    for k in sorted(meta):
        buf.write(f"# {k}={meta[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, columns, rows, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(columns, rows, meta))
    return path


def _meta(config: ExperimentConfig, **extra) -> dict:
    meta = {k: v for k, v in dataclasses.asdict(config).items() if k not in ("out",)}
    meta["rho_u"] = "h"
    meta["rho_p"] = "h"
    meta["version"] = __version__
    meta.update(extra)
    return meta


def surface_vertex_values(space: TraceSpace, values: np.ndarray) -> np.ndarray:
    """P1 field evaluated at the (unshared) vertices of the surface triangles."""
    surf = space.surface
    pts = surf.triangles.reshape(-1, 3)
    local = np.repeat(surf.parent, 3)
    lam = barycentric_coordinates(space.tet_points[local], space.tet_grads[local], pts)
    vals = np.asarray(values)
    if vals.ndim == 1 and vals.size == space.dofs.n_velocity:
        vals = vals.reshape(-1, 3)
    return np.einsum("qa,qa...->q...", lam, vals[space.tet_dofs[local]])


def _write_snapshot(path, space: TraceSpace, u, p) -> None:
    data = {"velocity": surface_vertex_values(space, u)}
    if p is not None:
        data["pressure"] = surface_vertex_values(space, p)
    write_vtk(path, space.surface, data)


def _simulate(config: ExperimentConfig, level: int, space: TraceSpace | None = None, **overrides):
    space = space if space is not None else TraceSpace.sphere(
        level, quad_degree=config.quad_degree, volume_degree=config.volume_degree
    )
    params = config.params(level, space.h, **overrides)
    sim = Simulation(config.case, params, space, backend=config.backend)
    traj = sim.run()
    return sim, traj


def run_convergence(config: ExperimentConfig) -> tuple[Path, list[dict]]:
    rows = []
    for level in config.levels:
        log.info("convergence: level %d", level)
        try:
            sim, traj = _simulate(config, level)
        except Exception as exc:
            raise RuntimeError(f"level {level}: {exc}") from exc
        prm = sim.params
        e = error_norms(sim.space, sim.data, traj.times[1:], traj.velocities[1:], traj.pressures[1:], prm.dt)
        row = {"level": level, "h": sim.space.h, "dt": prm.dt, "tau": prm.tau, "nu": prm.nu}
        row.update(e.as_dict())
        rows.append(row)
        if config.vtk:
            _write_snapshot(
                Path(config.out) / f"convergence_l{level}.vtk", sim.space, traj.velocities[-1], traj.pressures[-1]
            )
    if len(rows) > 1:
        for key, rcol in zip(CONVERGENCE_COLUMNS[5:], RATE_COLUMNS):
            for r, rate in zip(rows[1:], convergence_rates([r[key] for r in rows])):
                r[rcol] = rate
    path = write_csv(
        Path(config.out) / f"convergence_{config.case}_nu{config.nu:g}.csv",
        CONVERGENCE_COLUMNS + RATE_COLUMNS,
        rows,
        _meta(config),
    )
    return path, rows


def run_penalty_sweep(config: ExperimentConfig) -> tuple[Path, list[dict]]:
    level = config.levels[0]
    space = TraceSpace.sphere(level, quad_degree=config.quad_degree, volume_degree=config.volume_degree)
    rows = []
    for k in config.tau_exponents:
        tau = 2.0**k
        log.info("penalty sweep: tau = 2^%s", k)
        try:
            sim, traj = _simulate(config, level, space=space, tau=tau)
        except Exception as exc:
            raise RuntimeError(f"level {level}, tau=2^{k}: {exc}") from exc
        e = error_norms(space, sim.data, traj.times[1:], traj.velocities[1:], traj.pressures[1:], sim.params.dt)
        rows.append({"tau": tau, **e.as_dict()})
    path = write_csv(
        Path(config.out) / f"penalty_sweep_{config.case}_l{level}.csv",
        SWEEP_COLUMNS,
        rows,
        _meta(config, level=level, dt=config.dt_for(level)),
    )
    return path, rows


def run_energy(config: ExperimentConfig) -> tuple[Path, list[dict]]:
    level = config.levels[0]
    sim, traj = _simulate(config, level)
    norm = traj.kinetic_normalized
    rows = [
        {"step": k, "time": t, "kinetic": e, "kinetic_norm": en}
        for k, (t, e, en) in enumerate(zip(traj.times, traj.kinetic, norm))
    ]
    meta = _meta(
        config,
        level=level,
        dt=sim.params.dt,
        tau=sim.params.tau,
        max_balance_residual=max((r for r in traj.balance_residuals[1:]), default=0.0),
    )
    path = write_csv(
        Path(config.out) / f"energy_{config.case}_{config.form}_nu{config.nu:g}_l{level}.csv",
        ENERGY_COLUMNS,
        rows,
        meta,
    )
    if config.vtk:
        _write_snapshot(
            Path(config.out) / f"energy_{config.case}_{config.form}_l{level}.vtk",
            sim.space,
            traj.velocities[-1],
            traj.pressures[-1],
        )
    return path, rows


def run(config: ExperimentConfig):
    os.makedirs(config.out, exist_ok=True)
    return {
        "convergence": run_convergence,
        "penalty-sweep": run_penalty_sweep,
        "energy": run_energy,
    }[config.command](config)
