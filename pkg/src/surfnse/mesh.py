"""Structured tetrahedral background mesh of the box [-5/3, 5/3]^3."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

BOX_HALF_WIDTH = 5.0 / 3.0
# zero nodal level-set values are snapped to this positive value
ZERO_SNAP = 1e-14


@dataclass(frozen=True)
class BackgroundMesh:
    level: int
    n: int
    h: float
    vertices: np.ndarray  # (nv, 3)
    tets: np.ndarray  # (nt, 4), positively oriented
    cube_origin: np.ndarray = field(default_factory=lambda: np.full(3, -BOX_HALF_WIDTH))
    cube_extent: float = 2 * BOX_HALF_WIDTH

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def tet_points(self, idx=None) -> np.ndarray:
        """Vertex coordinates of tets, shape (k, 4, 3)."""
        tets = self.tets if idx is None else self.tets[idx]
        return self.vertices[tets]

    def signed_volumes(self, idx=None) -> np.ndarray:
        pts = self.tet_points(idx)
        e = pts[:, 1:] - pts[:, :1]
        return np.linalg.det(e) / 6.0


@dataclass(frozen=True)
class ActiveSet:
    active_tets: np.ndarray
    active_vertices: np.ndarray

    def __len__(self) -> int:
        return len(self.active_tets)


def _kuhn_local_tets() -> list[tuple[int, int, int, int]]:
    # each axis permutation is a monotone path 000 -> 111 through the cube corners;
    # corner (i, j, k) has local index i + 2j + 4k
    tets = []
    for perm in permutations(range(3)):
        corner = [0, 0, 0]
        path = [0]
        for axis in perm:
            corner[axis] = 1
            path.append(corner[0] + 2 * corner[1] + 4 * corner[2])
        tets.append(tuple(path))
    return tets


def build_background_mesh(level: int) -> BackgroundMesh:
    """Tessellate the box into n^3 cubes (n = 2^(level+1)), six Kuhn tets each."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    n = 2 ** (level + 1)
    n_vert = (n + 1) ** 3
    n_tet = 6 * n**3
    try:
        coords = np.linspace(-BOX_HALF_WIDTH, BOX_HALF_WIDTH, n + 1)
        # x fastest
        zz, yy, xx = np.meshgrid(coords, coords, coords, indexing="ij")
        vertices = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

        i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        # cube loop with x fastest
        i, j, k = k.ravel(), j.ravel(), i.ravel()
        base = i + (n + 1) * (j + (n + 1) * k)
        offsets = np.array(
            [dx + (n + 1) * (dy + (n + 1) * dz) for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)]
        )
        corners = base[:, None] + offsets[None, :]  # (n^3, 8)
        local = np.array(_kuhn_local_tets())
        tets = corners[:, local].reshape(-1, 4)
    except MemoryError as exc:
        raise MemoryError(
            f"level {level}: cannot allocate {n_vert} vertices and {n_tet} tetrahedra"
        ) from exc

    e = vertices[tets[:, 1:]] - vertices[tets[:, :1]]
    neg = np.linalg.det(e) < 0
    tets[neg] = tets[neg][:, [1, 0, 2, 3]]
    h = 2 * BOX_HALF_WIDTH / n
    return BackgroundMesh(level=level, n=n, h=h, vertices=vertices, tets=tets)


def snap_zero(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.where(values == 0.0, ZERO_SNAP, values)


def select_active_elements(mesh: BackgroundMesh, phi_nodal: np.ndarray) -> ActiveSet:
    """Tets on which the snapped P1 level-set interpolant changes sign."""
    phi_nodal = np.asarray(phi_nodal, dtype=float)
    if phi_nodal.shape != (mesh.n_vertices,):
        raise ValueError(
            f"expected {mesh.n_vertices} nodal values, got shape {phi_nodal.shape}"
        )
    vals = snap_zero(phi_nodal)[mesh.tets]
    mixed = (vals < 0).any(axis=1) & (vals > 0).any(axis=1)
    active = np.flatnonzero(mixed)
    verts = np.unique(mesh.tets[active]) if len(active) else np.empty(0, dtype=int)
    return ActiveSet(active_tets=active, active_vertices=verts)
