"""Exact solutions on the unit sphere and a finite-difference forcing oracle.

Every case is written as u(x, t) = sum_j a_j(t) U_j(x) and p(x, t) = sum_j
b_j(t) Q_j(x), with all spatial modes extended constantly along normals,
U_j(x) = U_j(x / |x|). Tangential derivatives are 4th-order central
differences of these normal extensions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ALPHA = float(np.sqrt(3.0 / (4.0 * np.pi)))
FD_STEP = 1e-3
_STENCIL = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))


def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(r == 0):
        raise ValueError("exact solutions are undefined at the origin")
    return x / r


def killing_field(x) -> np.ndarray:
    """Rigid rotation about the z axis, scaled so its kinetic energy on S^2 is 1."""
    x = np.asarray(x, dtype=float)
    if np.any(np.linalg.norm(x, axis=-1) == 0):
        raise ValueError("killing field evaluated at the origin")
    out = np.zeros_like(x)
    out[..., 0] = -ALPHA * x[..., 1]
    out[..., 1] = ALPHA * x[..., 0]
    return out


def sphere_projector(x) -> np.ndarray:
    n = _unit(x)
    return np.eye(3) - n[..., :, None] * n[..., None, :]


def shape_operator(x) -> np.ndarray:
    """H = P / |x| for the sphere through x; equals P on the unit sphere."""
    x = np.asarray(x, dtype=float)
    return sphere_projector(x) / np.linalg.norm(x, axis=-1)[..., None, None]


Mode = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    velocity_modes: tuple[Mode, ...]
    velocity_coeffs: Callable[[float], np.ndarray]
    velocity_rates: Callable[[float], np.ndarray]
    pressure_modes: tuple[Mode, ...] = ()
    pressure_coeffs: Callable[[float], np.ndarray] = field(default=lambda t: np.ones(1))
    divergence_free: bool = False
    zero_forcing: bool = False

    def velocity(self, x, t) -> np.ndarray:
        xh = _unit(x)
        out = np.zeros_like(xh)
        for a, mode in zip(self.velocity_coeffs(t), self.velocity_modes):
            out += a * mode(xh)
        return out

    def pressure(self, x, t) -> np.ndarray:
        xh = _unit(x)
        out = np.zeros(xh.shape[:-1])
        for b, mode in zip(self.pressure_coeffs(t), self.pressure_modes):
            out += b * mode(xh)
        return out


def _exp(t):
    return float(np.exp(-t))


def _z_xi(x):
    return x[..., 2:3] * killing_field(x)


def _x_xi(x):
    return x[..., 0:1] * killing_field(x)


def _xz_xi(x):
    return (x[..., 0] * x[..., 2])[..., None] * killing_field(x)


def _proj_ex(x):
    return np.array([1.0, 0.0, 0.0]) - x[..., 0:1] * x


def _p_sol2b(x):
    return x[..., 0] * x[..., 1] ** 3 + x[..., 2]


CASES: dict[str, ManufacturedCase] = {
    # u = (1 + z(1 - 3e^-t)) xi_z, p = 0
    "exact1": ManufacturedCase(
        "exact1",
        (killing_field, _z_xi),
        lambda t: np.array([1.0, 1.0 - 3.0 * _exp(t)]),
        lambda t: np.array([0.0, 3.0 * _exp(t)]),
        divergence_free=True,
    ),
    # u = x (2 + z(4 - 10e^-t)) xi_z, p = 0
    "sol2a": ManufacturedCase(
        "sol2a",
        (_x_xi, _xz_xi),
        lambda t: np.array([2.0, 4.0 - 10.0 * _exp(t)]),
        lambda t: np.array([0.0, 10.0 * _exp(t)]),
    ),
    # u = (1 - e^(1-6t)) P e_x, p = x y^3 + z
    "sol2b": ManufacturedCase(
        "sol2b",
        (_proj_ex,),
        lambda t: np.array([1.0 - np.exp(1.0 - 6.0 * t)]),
        lambda t: np.array([6.0 * np.exp(1.0 - 6.0 * t)]),
        pressure_modes=(_p_sol2b,),
    ),
    "killing": ManufacturedCase(
        "killing",
        (killing_field,),
        lambda t: np.ones(1),
        lambda t: np.zeros(1),
        divergence_free=True,
        zero_forcing=True,
    ),
}


def get_case(name: str) -> ManufacturedCase:
    try:
        return CASES[name]
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None


def sol2a_reference_energy(t):
    """Kinetic energy of the sol2a velocity on the unit sphere."""
    t = np.asarray(t, dtype=float)
    return (2.0 / 35.0) * (44.0 - 80.0 * np.exp(-t) + 100.0 * np.exp(-2.0 * t))


# ------------------------------------------------------------ FD derivatives

def fd_gradient(func, x, delta: float = FD_STEP) -> np.ndarray:
    """d func / d x along a trailing axis: shape func(x).shape + (3,)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for d in range(3):
        e = np.zeros(3)
        e[d] = delta
        acc = 0.0
        for k, c in _STENCIL:
            acc = acc + c * func(x + k * e)
        cols.append(acc / (12.0 * delta))
    return np.stack(cols, axis=-1)


def _normal_extension(mode: Mode) -> Mode:
    return lambda y: mode(_unit(y))


def surface_gradient_of(mode: Mode, x, delta: float = FD_STEP) -> np.ndarray:
    """P grad(U^e) P at sphere points x for a vector or scalar mode."""
    xh = _unit(x)
    P = sphere_projector(xh)
    J = fd_gradient(_normal_extension(mode), xh, delta)
    if J.ndim == xh.ndim:  # scalar mode
        return np.einsum("...ij,...j->...i", P, J)
    return P @ J @ P


def strain_of(mode: Mode, x, delta: float = FD_STEP) -> np.ndarray:
    G = surface_gradient_of(mode, x, delta)
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def viscous_term_of(mode: Mode, x, delta: float = FD_STEP) -> np.ndarray:
    """P div_Gamma E_s(U) at sphere points x."""
    xh = _unit(x)
    P = sphere_projector(xh)
    # E_s is itself normally extended by evaluating it at y / |y|
    D = fd_gradient(lambda y: strain_of(mode, y, delta), xh, delta)  # [..., i, j, k]
    div = np.einsum("...jk,...ijk->...i", P, D)
    return np.einsum("...ij,...j->...i", P, div)


# ---------------------------------------------------- pointwise case queries

def _velocity_mode(case: ManufacturedCase, t: float) -> Mode:
    return lambda y: case.velocity(y, t)


def exact_velocity(case: ManufacturedCase | str, x, t) -> np.ndarray:
    case = get_case(case) if isinstance(case, str) else case
    return case.velocity(x, t)


def exact_pressure(case: ManufacturedCase | str, x, t) -> np.ndarray:
    case = get_case(case) if isinstance(case, str) else case
    return case.pressure(x, t)


def exact_surface_gradient(case, x, t, delta: float = FD_STEP) -> np.ndarray:
    case = get_case(case) if isinstance(case, str) else case
    return surface_gradient_of(_velocity_mode(case, t), x, delta)


def exact_divergence(case, x, t, delta: float = FD_STEP) -> np.ndarray:
    return np.trace(exact_surface_gradient(case, x, t, delta), axis1=-2, axis2=-1)


def _check_on_sphere(x):
    r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    if np.any(np.abs(r - 1.0) > 1e-12):
        raise ValueError("forcing is evaluated on the unit sphere only; project points first")


def forcing(case, x, t, nu: float, delta: float = FD_STEP) -> np.ndarray:
    """f = du/dt + (grad_G u) u - nu P div_G E_s(u) + grad_G p, projected tangentially."""
    case = get_case(case) if isinstance(case, str) else case
    x = np.asarray(x, dtype=float)
    _check_on_sphere(x)
    if case.zero_forcing:
        return np.zeros_like(x)
    u_mode = _velocity_mode(case, t)
    dudt = np.zeros_like(x)
    for a, mode in zip(case.velocity_rates(t), case.velocity_modes):
        dudt += a * mode(x)
    u = case.velocity(x, t)
    G = surface_gradient_of(u_mode, x, delta)
    f = dudt + np.einsum("...ij,...j->...i", G, u) - nu * viscous_term_of(u_mode, x, delta)
    if case.pressure_modes:
        f += surface_gradient_of(lambda y: case.pressure(y, t), x, delta)
    return np.einsum("...ij,...j->...i", sphere_projector(x), f)


class CaseOnPoints:
    """Spatial modes of a case precomputed at fixed points (normal projection to
    the sphere is applied first), so that time-dependent queries are cheap."""

    def __init__(self, case: ManufacturedCase, points, delta: float = FD_STEP):
        self.case = case
        self.xh = _unit(points)
        self.P = sphere_projector(self.xh)
        self.U = np.array([m(self.xh) for m in case.velocity_modes]).reshape(-1, *self.xh.shape)
        self.G = np.array([surface_gradient_of(m, self.xh, delta) for m in case.velocity_modes]).reshape(
            -1, *self.xh.shape, 3
        )
        if case.zero_forcing:
            self.V = np.zeros_like(self.U)
        else:
            self.V = np.array([viscous_term_of(m, self.xh, delta) for m in case.velocity_modes]).reshape(
                self.U.shape
            )
        self.Q = np.array([m(self.xh) for m in case.pressure_modes]).reshape(-1, len(self.xh))
        self.gradQ = np.array(
            [surface_gradient_of(m, self.xh, delta) for m in case.pressure_modes]
        ).reshape(-1, *self.xh.shape)

    def velocity(self, t) -> np.ndarray:
        return np.tensordot(self.case.velocity_coeffs(t), self.U, axes=1)

    def surface_gradient(self, t) -> np.ndarray:
        return np.tensordot(self.case.velocity_coeffs(t), self.G, axes=1)

    def divergence(self, t) -> np.ndarray:
        return np.trace(self.surface_gradient(t), axis1=-2, axis2=-1)

    def pressure(self, t) -> np.ndarray:
        if not len(self.Q):
            return np.zeros(len(self.xh))
        return np.tensordot(self.case.pressure_coeffs(t), self.Q, axes=1)

    def forcing(self, t, nu: float) -> np.ndarray:
        if self.case.zero_forcing:
            return np.zeros_like(self.xh)
        a = self.case.velocity_coeffs(t)
        f = np.tensordot(self.case.velocity_rates(t), self.U, axes=1)
        f += np.einsum("...ij,...j->...i", self.surface_gradient(t), self.velocity(t))
        f -= nu * np.tensordot(a, self.V, axes=1)
        if len(self.gradQ):
            f += np.tensordot(self.case.pressure_coeffs(t), self.gradQ, axes=1)
        return np.einsum("...ij,...j->...i", self.P, f)


def sphere_quadrature(n_polar: int = 24, n_azimuth: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre in z times trapezoid in azimuth on the unit sphere.

    Exact for polynomials of degree < min(2 * n_polar, n_azimuth).
    """
    z, wz = np.polynomial.legendre.leggauss(n_polar)
    phi = 2 * np.pi * np.arange(n_azimuth) / n_azimuth
    Z, PHI = np.meshgrid(z, phi, indexing="ij")
    r = np.sqrt(1 - Z**2)
    pts = np.stack([r * np.cos(PHI), r * np.sin(PHI), Z], axis=-1).reshape(-1, 3)
    w = np.repeat(wz, n_azimuth) * (2 * np.pi / n_azimuth)
    return pts, w


def spherical_mean(func) -> np.ndarray:
    """Mean of func over the unit sphere; the centre value of its harmonic extension."""
    pts, w = sphere_quadrature()
    return np.tensordot(w, func(pts), axes=1) / w.sum()
