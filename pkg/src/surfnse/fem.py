"""P1 bulk finite element spaces on the strip of cut tetrahedra."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import (
    LevelSet,
    SurfaceMesh,
    barycentric_gradients,
    build_surface_mesh,
    normalize_gradients,
    p2_gradient,
    projectors,
    sphere_level_set,
    tet_quadrature_rule,
)
from .mesh import ActiveSet, BackgroundMesh, build_background_mesh, select_active_elements

BARY_TOL = 1e-12
PROJECTORS = ("facet", "p2")


@dataclass(frozen=True)
class DofMap:
    """Scalar dofs at every vertex of an active tet, numbered in vertex order.

    Velocity dof of scalar dof i and component c is 3 * i + c.
    """

    active_vertices: np.ndarray
    vertex_to_scalar_dof: dict

    @classmethod
    def from_active(cls, active: ActiveSet) -> "DofMap":
        verts = np.asarray(active.active_vertices)
        return cls(verts, {int(v): i for i, v in enumerate(verts)})

    @property
    def n_scalar(self) -> int:
        return len(self.active_vertices)

    @property
    def n_velocity(self) -> int:
        return 3 * self.n_scalar

    @property
    def n_pressure(self) -> int:
        return self.n_scalar

    def scalar_dofs(self, vertex_ids: np.ndarray) -> np.ndarray:
        # active_vertices is sorted
        idx = np.searchsorted(self.active_vertices, vertex_ids)
        if np.any(idx >= self.n_scalar) or np.any(self.active_vertices[np.minimum(idx, self.n_scalar - 1)] != vertex_ids):
            raise KeyError("vertex is not part of the active strip")
        return idx


@dataclass
class FEField:
    """Nodal values, shape (n_scalar,) for scalars or (n_scalar, 3) for vectors."""

    values: np.ndarray
    dofs: DofMap

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.dofs.n_scalar:
            raise ValueError(f"field has {self.values.shape[0]} nodes, dof map has {self.dofs.n_scalar}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @classmethod
    def from_flat(cls, flat, dofs: DofMap) -> "FEField":
        flat = np.asarray(flat, dtype=float)
        if flat.size == dofs.n_velocity:
            return cls(flat.reshape(-1, 3), dofs)
        return cls(flat, dofs)


def _single_tet_gradients(tet_points) -> tuple[np.ndarray, float]:
    pts = np.asarray(tet_points, dtype=float)
    vol = np.linalg.det(pts[1:] - pts[0]) / 6.0
    if not vol > 0:
        raise ValueError(f"degenerate or inverted tetrahedron (volume {vol:.3e})")
    grads, _ = barycentric_gradients(pts[None])
    return grads[0], float(vol)


def p1_basis(tet_points, point) -> np.ndarray:
    """Values of the 4 P1 basis functions (barycentric coordinates) at ``point``."""
    pts = np.asarray(tet_points, dtype=float)
    grads, _ = _single_tet_gradients(pts)
    lam = np.empty(4)
    lam[1:] = grads[1:] @ (np.asarray(point, dtype=float) - pts[0])
    lam[0] = 1 - lam[1:].sum()
    if np.any(lam < -BARY_TOL) or np.any(lam > 1 + BARY_TOL):
        raise ValueError(f"point outside tetrahedron (barycentric {lam})")
    return lam


def p1_eval(tet_points, nodal_values, point):
    return np.tensordot(p1_basis(tet_points, point), np.asarray(nodal_values, dtype=float), axes=1)


def p1_gradient(tet_points, nodal_values) -> np.ndarray:
    """Constant gradient on the tet; (3,) for scalar values, (d, 3) for (4, d) values."""
    grads, _ = _single_tet_gradients(tet_points)
    vals = np.asarray(nodal_values, dtype=float)
    return np.tensordot(vals.T, grads, axes=1) if vals.ndim > 1 else vals @ grads


class TraceSpace:
    """Background mesh, active strip, discrete surface and dof numbering for one level."""

    def __init__(
        self,
        mesh: BackgroundMesh,
        levelset: LevelSet,
        quad_degree: int = 4,
        volume_degree: int = 2,
        projector: str = "facet",
    ):
        if projector not in PROJECTORS:
            raise ValueError(f"unknown projector {projector!r}; choose from {PROJECTORS}")
        self.projector = projector
        self.mesh = mesh
        self.levelset = levelset
        self.active = select_active_elements(mesh, levelset.p1_values(mesh))
        if len(self.active) == 0:
            raise ValueError("level set does not intersect the background mesh")
        self.surface: SurfaceMesh = build_surface_mesh(mesh, self.active, levelset, quad_degree)
        self.dofs = DofMap.from_active(self.active)
        self.volume_degree = volume_degree
        self.tet_points = mesh.tet_points(self.active.active_tets)
        self.tet_dofs = self.dofs.scalar_dofs(mesh.tets[self.active.active_tets])
        self.tet_grads, self.tet_volumes = barycentric_gradients(self.tet_points)

    @classmethod
    def sphere(cls, level: int, **kwargs) -> "TraceSpace":
        return cls(build_background_mesh(level), sphere_level_set(), **kwargs)

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def n_active(self) -> int:
        return len(self.active)

    @property
    def strip_volume(self) -> float:
        return float(self.tet_volumes.sum())

    @cached_property
    def tangent_projector(self) -> np.ndarray:
        """Projector used for tangential derivatives at surface quadrature points, (nq, 3, 3).

        "facet" projects onto the planar triangles of the discrete surface, which
        keeps the discrete divergence of smooth tangential fields O(h^2)
        consistent; "p2" uses the reconstructed normal throughout.
        """
        if self.projector == "p2":
            return self.surface.qP
        return projectors(self.surface.q_facet_normals)

    @cached_property
    def surface_grads(self) -> np.ndarray:
        """Full P1 basis gradients at each surface quadrature point, (nq, 4, 3)."""
        return self.tet_grads[self.surface.q_local]

    @cached_property
    def surface_dofs(self) -> np.ndarray:
        return self.tet_dofs[self.surface.q_local]

    @cached_property
    def volume_quadrature(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Barycentric points (q, 4), weights (n_active, q), P2 normals (n_active, q, 3)."""
        bary, w = tet_quadrature_rule(self.volume_degree)
        nt, nq = self.n_active, len(w)
        p2 = self.levelset.p2_values(self.tet_points)
        lam = np.broadcast_to(bary, (nt, nq, 4)).reshape(-1, 4)
        grads = np.repeat(self.tet_grads, nq, axis=0)
        g = p2_gradient(grads, np.repeat(p2, nq, axis=0), lam)
        normals = normalize_gradients(g).reshape(nt, nq, 3)
        return bary, self.tet_volumes[:, None] * w[None, :], normals

    @cached_property
    def vertex_points(self) -> np.ndarray:
        return self.mesh.vertices[self.dofs.active_vertices]

    def eval_at_surface(self, field: FEField | np.ndarray) -> np.ndarray:
        """Values of a P1 field at the surface quadrature points."""
        vals = field.values if isinstance(field, FEField) else np.asarray(field)
        if vals.ndim == 1 and vals.size == self.dofs.n_velocity:
            vals = vals.reshape(-1, 3)
        return np.einsum("qa,qa...->q...", self.surface.q_bary, vals[self.surface_dofs])

    def gradient_at_surface(self, field: FEField | np.ndarray) -> np.ndarray:
        """Full gradient of a P1 field at surface quadrature points: (nq, 3) or (nq, 3, 3)
        with [c, d] = d u_c / d x_d for vector fields."""
        vals = field.values if isinstance(field, FEField) else np.asarray(field)
        if vals.ndim == 1 and vals.size == self.dofs.n_velocity:
            vals = vals.reshape(-1, 3)
        local = vals[self.surface_dofs]
        if local.ndim == 2:
            return np.einsum("qa,qad->qd", local, self.surface_grads)
        return np.einsum("qac,qad->qcd", local, self.surface_grads)


def interpolate(func, t: float, dofs: DofMap, vertices: np.ndarray, origin_value=None) -> FEField:
    """Nodal interpolant of ``func(x, t)`` at the active vertices.

    ``vertices`` are the background mesh vertices (all of them). Normally
    extended fields are undefined at the origin, which is an active vertex on
    very coarse meshes; pass ``origin_value`` to use there instead of failing.
    """
    pts = vertices[dofs.active_vertices]
    at_origin = np.linalg.norm(pts, axis=1) == 0.0
    if at_origin.any() and origin_value is None:
        bad = int(dofs.active_vertices[np.flatnonzero(at_origin)[0]])
        raise ValueError(f"function undefined at active vertex {bad} (origin)")
    with np.errstate(all="raise"):
        try:
            vals = np.asarray(func(pts[~at_origin], t), dtype=float)
        except FloatingPointError as exc:
            raise ValueError(f"function undefined at an active vertex: {exc}") from exc
    out = np.empty((len(pts),) + vals.shape[1:])
    out[~at_origin] = vals
    if at_origin.any():
        out[at_origin] = origin_value
    return FEField(out, dofs)
