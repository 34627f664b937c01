"""Semi-implicit BDF time stepping: one BDF1 startup step, then BDF2 with
extrapolated convecting velocity."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    SolverParams,
    assemble_continuity_rhs,
    assemble_convection,
    assemble_momentum_rhs,
    assemble_system,
)
from .cases import CaseOnPoints, ManufacturedCase, get_case, spherical_mean
from .diagnostics import energy_balance, kinetic_energy
from .fem import TraceSpace, interpolate
from .linalg import SaddlePointSolver, SolverError

log = logging.getLogger(__name__)


def bdf1(u_k, u_km1, dt):
    return (u_k - u_km1) / dt


def bdf2(u_k, u_km1, u_km2, dt):
    return (3 * u_k - 4 * u_km1 + u_km2) / (2 * dt)


@dataclass
class TimeState:
    k: int
    t: float
    u_prev: np.ndarray
    u_prev2: np.ndarray | None = None
    p_current: np.ndarray | None = None
    log: list = field(default_factory=list)


@dataclass
class Trajectory:
    times: list
    velocities: list
    pressures: list
    kinetic: list
    balance_residuals: list
    meta: dict = field(default_factory=dict)

    @property
    def kinetic_normalized(self) -> list:
        e0 = self.kinetic[0]
        return [e / e0 if e0 else float("nan") for e in self.kinetic]


class Simulation:
    """One discretisation level with its assembled blocks and solver."""

    def __init__(
        self,
        case: ManufacturedCase | str,
        params: SolverParams,
        space: TraceSpace | None = None,
        backend: str = "direct",
    ):
        self.case = get_case(case) if isinstance(case, str) else case
        self.params = params
        self.space = space if space is not None else TraceSpace.sphere(params.level)
        self.system = assemble_system(self.space, params)
        self.solver = SaddlePointSolver(self.system, backend)
        self.data = CaseOnPoints(self.case, self.space.surface.qp)

    def initialize(self) -> TimeState:
        u0 = interpolate(
            self.case.velocity,
            0.0,
            self.space.dofs,
            self.space.mesh.vertices,
            origin_value=spherical_mean(lambda x: self.case.velocity(x, 0.0)),
        )
        state = TimeState(k=0, t=0.0, u_prev=u0.flat.copy())
        state.log.append({"step": 0, "time": 0.0, "kinetic": kinetic_energy(state.u_prev, self.system.M)})
        return state

    def advance(self, state: TimeState) -> TimeState:
        prm, sysm = self.params, self.system
        dt = prm.dt
        k = state.k + 1
        t = k * dt
        M = sysm.M
        if k == 1:
            sigma = 1.0 / dt
            history = M @ state.u_prev / dt
            u_tilde = state.u_prev
        else:
            sigma = 1.5 / dt
            history = M @ (4 * state.u_prev - state.u_prev2) / (2 * dt)
            u_tilde = 2 * state.u_prev - state.u_prev2
        C = None
        if prm.nonlinear_form != "none":
            C = assemble_convection(self.space, u_tilde, prm.nonlinear_form)
        F = assemble_momentum_rhs(self.space, self.data, t, prm)
        G = assemble_continuity_rhs(self.space, self.data, t)
        try:
            sol = self.solver.solve(sigma, F + history, G, C=C)
        except SolverError as exc:
            raise SolverError(f"step {k} (t={t:g}): {exc}") from exc

        bal = energy_balance(
            M, sysm.A, sysm.S, dt, sol.u, state.u_prev, state.u_prev2 if k > 1 else None, sol.p, F, G
        )
        state.log.append(
            {
                "step": k,
                "time": t,
                "kinetic": kinetic_energy(sol.u, M),
                "balance_residual": bal.residual,
                "solver_residual": sol.residual,
            }
        )
        return TimeState(k=k, t=t, u_prev=sol.u, u_prev2=state.u_prev, p_current=sol.p, log=state.log)

    def run(self, t_end: float | None = None) -> Trajectory:
        t_end = self.params.t_end if t_end is None else t_end
        ratio = t_end / self.params.dt
        n_steps = int(math.floor(ratio + 1e-9))
        if abs(ratio - round(ratio)) > 1e-9:
            log.warning("T/dt = %.6g is not an integer; running %d steps", ratio, n_steps)
        state = self.initialize()
        traj = Trajectory([0.0], [state.u_prev], [None], [state.log[0]["kinetic"]], [float("nan")])
        for _ in range(n_steps):
            state = self.advance(state)
            rec = state.log[-1]
            traj.times.append(rec["time"])
            traj.velocities.append(state.u_prev)
            traj.pressures.append(state.p_current)
            traj.kinetic.append(rec["kinetic"])
            traj.balance_residuals.append(rec["balance_residual"])
        traj.meta = {"n_steps": n_steps, "t_end": n_steps * self.params.dt}
        return traj


def initialize(case, params: SolverParams, space: TraceSpace | None = None) -> tuple[Simulation, TimeState]:
    sim = Simulation(case, params, space)
    return sim, sim.initialize()


def advance(sim: Simulation, state: TimeState) -> TimeState:
    return sim.advance(state)


def run(case, params: SolverParams, space: TraceSpace | None = None, backend: str = "direct") -> Trajectory:
    return Simulation(case, params, space, backend).run()
