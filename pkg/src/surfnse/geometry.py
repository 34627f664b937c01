"""Level sets, the piecewise planar discrete surface and quadrature rules.

The discrete surface is the zero set of the P1 nodal interpolant of the level
set, extracted tet by tet (marching tetrahedra). Normals at quadrature points
come from the gradient of a per-tet P2 interpolant of the level set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import ActiveSet, BackgroundMesh, snap_zero

GRAD_EPS = 1e-10

# P2 edge nodes, in the order used for nodal values 4..9
TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


@dataclass(frozen=True)
class LevelSet:
    """Scalar level-set function, vectorised over points of shape (..., 3)."""

    phi: Callable[[np.ndarray], np.ndarray]

    def p1_values(self, mesh: BackgroundMesh) -> np.ndarray:
        return np.asarray(self.phi(mesh.vertices), dtype=float)

    def p2_values(self, tet_points: np.ndarray) -> np.ndarray:
        """Nodal P2 values (k, 10): 4 vertices then the 6 edge midpoints."""
        mids = np.stack([(tet_points[:, i] + tet_points[:, j]) / 2 for i, j in TET_EDGES], axis=1)
        nodes = np.concatenate([tet_points, mids], axis=1)
        return np.asarray(self.phi(nodes), dtype=float)


def sphere_level_set(radius: float = 1.0) -> LevelSet:
    return LevelSet(lambda x: np.linalg.norm(x, axis=-1) - radius)


# ---------------------------------------------------------------- quadrature

def _sym_triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
    if degree == 2:
        b = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        return b, np.full(3, 1 / 3)
    if degree <= 4:
        a1, w1 = 0.445948490915965, 0.223381589678011
        a2, w2 = 0.091576213509771, 0.109951743655322
        pts, wts = [], []
        for a, w in ((a1, w1), (a2, w2)):
            c = 1 - 2 * a
            pts += [[c, a, a], [a, c, a], [a, a, c]]
            wts += [w] * 3
        wts = np.array(wts)
        return np.array(pts), wts / wts.sum()
    if degree == 5:
        s = np.sqrt(15.0)
        pts, wts = [[1 / 3, 1 / 3, 1 / 3]], [9 / 40]
        for a, w in (((6 - s) / 21, (155 - s) / 1200), ((6 + s) / 21, (155 + s) / 1200)):
            c = 1 - 2 * a
            pts += [[c, a, a], [a, c, a], [a, a, c]]
            wts += [w] * 3
        return np.array(pts), np.array(wts)
    raise ValueError(f"no triangle rule of degree {degree} (supported: 1..5)")


def triangle_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points (q, 3) and weights (q,) summing to 1 on a triangle."""
    return _sym_triangle_rule(degree)


def tet_quadrature_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points (q, 4) and weights (q,) summing to 1 on a tetrahedron."""
    if degree == 1:
        return np.full((1, 4), 0.25), np.array([1.0])
    if degree == 2:
        a, b = 0.5854101966249685, 0.1381966011250105
        pts = np.full((4, 4), b)
        np.fill_diagonal(pts, a)
        return pts, np.full(4, 0.25)
    if degree == 3:
        pts = np.full((5, 4), 1 / 6)
        pts[0] = 0.25
        for i in range(4):
            pts[i + 1, i] = 0.5
        return pts, np.array([-4 / 5] + [9 / 20] * 4)
    raise ValueError(f"unsupported tetrahedron quadrature degree {degree} (use 1, 2 or 3)")


def volume_quadrature(tet: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points and weights on one tetrahedron (4, 3)."""
    tet = np.asarray(tet, dtype=float)
    bary, w = tet_quadrature_rule(degree)
    vol = abs(np.linalg.det(tet[1:] - tet[0])) / 6
    return bary @ tet, w * vol


# ------------------------------------------------------------ element helpers

def barycentric_gradients(tet_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Constant gradients of the 4 barycentric coordinates, (k, 4, 3), and volumes (k,)."""
    e = tet_points[:, 1:] - tet_points[:, :1]
    det = np.linalg.det(e)
    grads = np.empty(tet_points.shape[:1] + (4, 3))
    grads[:, 1:] = np.linalg.inv(e).transpose(0, 2, 1)
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    return grads, det / 6.0


def barycentric_coordinates(tet_points: np.ndarray, grads: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points x (k, 3) in their tets (k, 4, 3)."""
    lam = np.empty(x.shape[:1] + (4,))
    lam[:, 1:] = np.einsum("kij,kj->ki", grads[:, 1:], x - tet_points[:, 0])
    lam[:, 0] = 1 - lam[:, 1:].sum(axis=1)
    return lam


def p2_gradient(grads: np.ndarray, p2_vals: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Gradient of the P2 interpolant at barycentric points.

    grads: (k, 4, 3) barycentric gradients, p2_vals: (k, 10), lam: (k, 4).
    """
    out = np.einsum("k,ki->ki", p2_vals[:, 0] * (4 * lam[:, 0] - 1), grads[:, 0])
    for i in range(1, 4):
        out += (p2_vals[:, i] * (4 * lam[:, i] - 1))[:, None] * grads[:, i]
    for m, (i, j) in enumerate(TET_EDGES):
        out += (4 * p2_vals[:, 4 + m])[:, None] * (
            lam[:, j, None] * grads[:, i] + lam[:, i, None] * grads[:, j]
        )
    return out


def normalize_gradients(g: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(g, axis=-1)
    if np.any(norm < GRAD_EPS):
        bad = int(np.argmin(norm))
        raise ValueError(
            f"level-set gradient {norm[bad]:.3e} below {GRAD_EPS} at quadrature point {bad}; "
            "geometry is not resolved"
        )
    return g / norm[:, None]


def projectors(normals: np.ndarray) -> np.ndarray:
    return np.eye(3)[None] - normals[:, :, None] * normals[:, None, :]


# --------------------------------------------------------- marching tetrahedra

def _triangle_area(tri: np.ndarray) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])))


def cut_tetrahedron(tet_points, phi_vals, min_area: float = 0.0) -> list[np.ndarray]:
    """Zero set of the linear interpolant of phi_vals on one tet, as 0, 1 or 2 triangles.

    Triangle vertex order makes the geometric normal point towards increasing phi.
    Triangles with area below ``min_area`` are dropped.
    """
    pts = np.asarray(tet_points, dtype=float)
    vals = snap_zero(phi_vals)
    neg = [i for i in range(4) if vals[i] < 0]
    pos = [i for i in range(4) if vals[i] > 0]
    if not neg or not pos:
        return []

    def crossing(i: int, j: int) -> np.ndarray:
        s = vals[i] / (vals[i] - vals[j])
        return pts[i] + s * (pts[j] - pts[i])

    if len(neg) == 1 or len(pos) == 1:
        lone, others = (neg[0], pos) if len(neg) == 1 else (pos[0], neg)
        tris = [np.array([crossing(lone, o) for o in others])]
    else:
        a, b = neg
        c, d = pos
        quad = [crossing(a, c), crossing(a, d), crossing(b, d), crossing(b, c)]
        if np.linalg.norm(quad[0] - quad[2]) <= np.linalg.norm(quad[1] - quad[3]):
            tris = [np.array([quad[0], quad[1], quad[2]]), np.array([quad[0], quad[2], quad[3]])]
        else:
            tris = [np.array([quad[0], quad[1], quad[3]]), np.array([quad[1], quad[2], quad[3]])]

    # gradient of the linear interpolant fixes the orientation
    e = pts[1:] - pts[0]
    grad = np.linalg.solve(e, vals[1:] - vals[0])
    out = []
    for tri in tris:
        if _triangle_area(tri) < min_area:
            continue
        if np.dot(np.cross(tri[1] - tri[0], tri[2] - tri[0]), grad) < 0:
            tri = tri[[0, 2, 1]]
        out.append(tri)
    return out


@dataclass(frozen=True)
class SurfaceMesh:
    """Piecewise planar surface with per-quadrature-point normals and projectors.

    Quadrature arrays are ordered by triangle, and triangles by active-tet
    position, so points of one parent tet are contiguous.
    """

    triangles: np.ndarray  # (nt, 3, 3)
    parent: np.ndarray  # (nt,) index into the active tet list
    areas: np.ndarray  # (nt,)
    qp: np.ndarray  # (nq, 3)
    qw: np.ndarray  # (nq,)
    qn: np.ndarray  # (nq, 3) normalised P2 level-set gradient
    qP: np.ndarray  # (nq, 3, 3)
    q_tri: np.ndarray  # (nq,)
    q_local: np.ndarray  # (nq,) index into the active tet list
    q_bary: np.ndarray  # (nq, 4) barycentric coordinates in the parent tet
    facet_normals: np.ndarray | None = None  # (nt, 3) unit normals of the planar triangles
    n_dropped: int = 0

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def q_facet_normals(self) -> np.ndarray:
        return self.facet_normals[self.q_tri]


def build_surface_mesh(
    mesh: BackgroundMesh, active: ActiveSet, ls: LevelSet, quad_degree: int = 4
) -> SurfaceMesh:
    if len(active) == 0:
        raise ValueError("empty active set: the level set does not cut the background mesh")
    phi1 = snap_zero(ls.p1_values(mesh))
    tet_pts = mesh.tet_points(active.active_tets)
    tet_phi = phi1[mesh.tets[active.active_tets]]
    min_area = 1e-14 * mesh.h**2

    tris, parents, dropped = [], [], 0
    for k in range(len(tet_pts)):
        cut = cut_tetrahedron(tet_pts[k], tet_phi[k])
        kept = [t for t in cut if _triangle_area(t) >= min_area]
        dropped += len(cut) - len(kept)
        tris += kept
        parents += [k] * len(kept)
    triangles = np.array(tris).reshape(-1, 3, 3)
    parent = np.array(parents, dtype=int)
    cross = np.cross(triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)

    bary_t, w_t = triangle_quadrature(quad_degree)
    nq_t = len(w_t)
    qp = np.einsum("qi,tij->tqj", bary_t, triangles).reshape(-1, 3)
    qw = (areas[:, None] * w_t[None, :]).ravel()
    q_tri = np.repeat(np.arange(len(triangles)), nq_t)
    q_local = parent[q_tri]

    grads, _ = barycentric_gradients(tet_pts)
    q_bary = barycentric_coordinates(tet_pts[q_local], grads[q_local], qp)
    p2 = ls.p2_values(tet_pts)
    qn = normalize_gradients(p2_gradient(grads[q_local], p2[q_local], q_bary))
    return SurfaceMesh(
        triangles=triangles,
        parent=parent,
        areas=areas,
        qp=qp,
        qw=qw,
        qn=qn,
        qP=projectors(qn),
        q_tri=q_tri,
        q_local=q_local,
        q_bary=q_bary,
        facet_normals=cross / (2 * areas[:, None]),
        n_dropped=dropped,
    )


def write_vtk(path, surface: SurfaceMesh, point_data: dict | None = None) -> None:
    """Legacy ASCII VTK polydata of the surface triangles.

    Triangles are written with unshared vertices (3 per triangle); ``point_data``
    maps names to arrays of shape (3 * n_triangles,) or (3 * n_triangles, 3).
    """
    pts = surface.triangles.reshape(-1, 3)
    nt = surface.n_triangles
    lines = [
        "# vtk DataFile Version 3.0",
        "trace surface",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {len(pts)} double",
    ]
    lines += [f"{p[0]:.16e} {p[1]:.16e} {p[2]:.16e}" for p in pts]
    lines.append(f"POLYGONS {nt} {4 * nt}")
    lines += [f"3 {3 * t} {3 * t + 1} {3 * t + 2}" for t in range(nt)]
    lines += [f"CELL_DATA {nt}", "SCALARS area double 1", "LOOKUP_TABLE default"]
    lines += [f"{a:.16e}" for a in surface.areas]
    if point_data:
        lines.append(f"POINT_DATA {len(pts)}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 2:
                lines.append(f"VECTORS {name} double")
                lines += [f"{v[0]:.16e} {v[1]:.16e} {v[2]:.16e}" for v in values]
            else:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.16e}" for v in values]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
