"""Error norms, kinetic energy, discrete energy balance and convergence rates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cases import CaseOnPoints
from .fem import TraceSpace


@dataclass(frozen=True)
class ErrorNorms:
    err_LinfL2: float  # max_k ||u^k - u_h^k||
    err_L2H1: float  # (sum_k dt ||u^k - u_h^k||_1^2)^1/2
    err_uN: float  # (sum_k dt ||u_h . n_h||^2)^1/2
    err_pL2: float  # (sum_k dt ||p^k - p_h^k||^2)^1/2
    err_L2L2: float = 0.0  # (sum_k dt ||u^k - u_h^k||^2)^1/2

    def as_dict(self) -> dict:
        return {
            "err_LinfL2": self.err_LinfL2,
            "err_L2H1": self.err_L2H1,
            "err_uN": self.err_uN,
            "err_pL2": self.err_pL2,
        }


def kinetic_energy(u, M) -> float:
    u = np.ravel(u)
    return 0.5 * float(u @ (M @ u))


def _mean_zero(values: np.ndarray, w: np.ndarray) -> np.ndarray:
    return values - (w @ values) / w.sum()


def step_errors(space: TraceSpace, data: CaseOnPoints, t: float, u_h, p_h) -> dict:
    """Squared error integrals at one time level over the discrete surface."""
    surf = space.surface
    w = surf.qw
    uh_q = space.eval_at_surface(np.ravel(u_h))
    du = data.velocity(t) - uh_q
    grad_h = space.gradient_at_surface(np.ravel(u_h))
    P = space.tangent_projector
    grad_h = P @ grad_h @ P
    dG = data.surface_gradient(t) - grad_h
    l2 = float(w @ np.einsum("qi,qi->q", du, du))
    h1 = l2 + float(w @ np.einsum("qij,qij->q", dG, dG))
    un = np.einsum("qi,qi->q", uh_q, surf.qn)
    out = {"L2": l2, "H1": h1, "uN": float(w @ un**2)}
    if p_h is not None:
        dp = _mean_zero(data.pressure(t), w) - _mean_zero(space.eval_at_surface(np.ravel(p_h)), w)
        out["p"] = float(w @ dp**2)
    return out


def error_norms(space: TraceSpace, data: CaseOnPoints, times: Sequence[float], us, ps, dt: float) -> ErrorNorms:
    """Time-discrete norms over steps k >= 1 of a stored trajectory."""
    linf = h1 = un = pp = l2 = 0.0
    for t, u, p in zip(times, us, ps):
        e = step_errors(space, data, t, u, p)
        linf = max(linf, math.sqrt(e["L2"]))
        l2 += dt * e["L2"]
        h1 += dt * e["H1"]
        un += dt * e["uN"]
        pp += dt * e.get("p", 0.0)
    return ErrorNorms(linf, math.sqrt(h1), math.sqrt(un), math.sqrt(pp), math.sqrt(l2))


def convergence_rates(errors: Sequence[float]) -> list[float]:
    """log2 ratios of consecutive errors (mesh size halves per level)."""
    if len(errors) < 2:
        raise ValueError("need at least two levels")
    rates = []
    for a, b in zip(errors[:-1], errors[1:]):
        if a == 0 and b == 0:
            rates.append(float("nan"))
        elif b == 0:
            rates.append(float("inf"))
        else:
            rates.append(math.log2(a / b))
    return rates


@dataclass(frozen=True)
class BalanceTerms:
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return abs(self.lhs - self.rhs) / scale if scale > 0 else 0.0


def energy_balance(M, A, S, dt: float, u_k, u_km1, u_km2, p_k, F=None, G=None) -> BalanceTerms:
    """Both sides of the discrete energy identity for one step.

    With u_km2 = None the first-order (startup) step identity is used.
    """

    def sq(v):
        return float(v @ (M @ v))

    lhs = float(u_k @ (A @ u_k)) + float(p_k @ (S @ p_k))
    rhs = 0.0
    if F is not None:
        rhs += float(F @ u_k)
    if G is not None:
        rhs -= float(G @ p_k)
    if u_km2 is None:
        lhs += (sq(u_k) + sq(u_k - u_km1)) / (2 * dt)
        rhs += sq(u_km1) / (2 * dt)
    else:
        u_next_tilde = 2 * u_k - u_km1
        u_tilde = 2 * u_km1 - u_km2
        jump = (u_k - 2 * u_km1 + u_km2) / dt**2
        lhs += (sq(u_k) + sq(u_next_tilde)) / (4 * dt) + dt**3 / 4 * sq(jump)
        rhs += (sq(u_km1) + sq(u_tilde)) / (4 * dt)
    return BalanceTerms(lhs, rhs)


def energy_balance_residual(records, M, A, S, dt: float) -> list[float]:
    """Relative residual of the discrete energy identity for each step record.

    A record is (u_k, u_km1, u_km2, p_k, F, G), u_km2 None for the startup step.
    """
    return [energy_balance(M, A, S, dt, *r).residual for r in records]
