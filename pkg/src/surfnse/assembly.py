"""Assembly of the discrete forms on the discrete surface and the active strip.

Velocity dofs are interleaved (3 * scalar_dof + component). All element
contributions are first summed per parent tet and then scattered into a
precomputed CSR pattern with ``np.bincount``, so results do not depend on
thread scheduling.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .cases import CaseOnPoints
from .fem import FEField, TraceSpace

NONLINEAR_FORMS = ("convective", "rotational", "none")
_CHUNK_TETS = 2048


@dataclass(frozen=True)
class SolverParams:
    nu: float
    tau: float
    rho_u: float
    rho_p: float
    dt: float
    t_end: float = 1.0
    level: int = 3
    nonlinear_form: str = "convective"
    case: str = "exact1"

    def __post_init__(self):
        if not self.nu >= 0:
            raise ValueError(f"nu must be >= 0, got {self.nu}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.rho_u >= 0:
            raise ValueError(f"rho_u must be >= 0, got {self.rho_u}")
        if not self.rho_p > 0:
            raise ValueError(f"rho_p must be > 0, got {self.rho_p}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.nonlinear_form not in NONLINEAR_FORMS:
            raise ValueError(f"unknown nonlinear form {self.nonlinear_form!r}")

    @classmethod
    def for_level(cls, level: int, h: float, tau=None, rho_u=None, rho_p=None, **kwargs):
        """Defaults: tau = h^-2, rho_u = rho_p = h."""
        return cls(
            tau=h**-2 if tau is None else tau,
            rho_u=h if rho_u is None else rho_u,
            rho_p=h if rho_p is None else rho_p,
            level=level,
            **kwargs,
        )


def assembly_threads() -> int:
    try:
        return max(1, int(os.environ.get("SURFNSE_THREADS", "1")))
    except ValueError:
        return 1


class _Pattern:
    """CSR sparsity pattern plus the map from per-tet local entries to CSR slots."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        self.shape = shape
        self.local_shape = rows.shape[1:]
        key = rows.ravel().astype(np.int64) * shape[1] + cols.ravel()
        uniq, self.slot = np.unique(key, return_inverse=True)
        r, c = np.divmod(uniq, shape[1])
        self.indptr = np.searchsorted(r, np.arange(shape[0] + 1)).astype(np.int64)
        self.indices = c.astype(np.int64)
        self.nnz = len(uniq)

    def matrix(self, local: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.slot, weights=np.ravel(local), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


class Assembler:
    """Per-tet element loops for one TraceSpace."""

    def __init__(self, space: TraceSpace):
        self.space = space
        self.threads = assembly_threads()
        surf = space.surface
        nt = space.n_active
        # q ranges per active tet (points are grouped by parent tet)
        self.q_start = np.searchsorted(surf.q_local, np.arange(nt + 1))

    # --------------------------------------------------------------- patterns
    @cached_property
    def _vdofs(self) -> np.ndarray:
        return (3 * self.space.tet_dofs[:, :, None] + np.arange(3)).reshape(-1, 12)

    @cached_property
    def vv(self) -> _Pattern:
        d = self._vdofs
        n = self.space.dofs.n_velocity
        return _Pattern(
            np.broadcast_to(d[:, :, None], d.shape + (12,)),
            np.broadcast_to(d[:, None, :], d.shape[:1] + (12, 12)),
            (n, n),
        )

    @cached_property
    def ss(self) -> _Pattern:
        d = self.space.tet_dofs
        n = self.space.dofs.n_scalar
        return _Pattern(
            np.broadcast_to(d[:, :, None], d.shape + (4,)),
            np.broadcast_to(d[:, None, :], d.shape[:1] + (4, 4)),
            (n, n),
        )

    @cached_property
    def sv(self) -> _Pattern:
        d = self.space.tet_dofs
        v = self._vdofs
        return _Pattern(
            np.broadcast_to(d[:, :, None], d.shape + (12,)),
            np.broadcast_to(v[:, None, :], d.shape[:1] + (4, 12)),
            (self.space.dofs.n_scalar, self.space.dofs.n_velocity),
        )

    # ------------------------------------------------------------ surface loop
    def surface_integral(self, kernel, local_shape: tuple[int, ...]) -> np.ndarray:
        """Sum ``kernel(q_slice)`` (shape (nq_chunk,) + local_shape) per parent tet."""
        nt = self.space.n_active
        out = np.zeros((nt,) + local_shape)
        chunks = [(s, min(s + _CHUNK_TETS, nt)) for s in range(0, nt, _CHUNK_TETS)]

        def work(chunk):
            t0, t1 = chunk
            q0, q1 = self.q_start[t0], self.q_start[t1]
            if q1 == q0:
                return
            vals = kernel(slice(q0, q1))
            owners = self.space.surface.q_local[q0:q1]
            starts = np.flatnonzero(np.r_[True, owners[1:] != owners[:-1]])
            out[owners[starts]] = np.add.reduceat(vals, starts, axis=0)

        if self.threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                list(pool.map(work, chunks))
        else:
            for c in chunks:
                work(c)
        return out

    def _qdata(self, q: slice):
        s = self.space
        surf = s.surface
        G = s.surface_grads[q]  # (k, 4, 3)
        P = s.tangent_projector[q]
        g = G @ P  # rows P grad psi_a (P symmetric)
        return surf.qw[q], surf.q_bary[q], surf.qn[q], P, g

    # ------------------------------------------------------------------ forms
    def scalar_mass_local(self) -> np.ndarray:
        def k(q):
            w, lam, *_ = self._qdata(q)
            return w[:, None, None] * lam[:, :, None] * lam[:, None, :]

        return self.surface_integral(k, (4, 4))

    def strain_local(self) -> np.ndarray:
        def k(q):
            w, _, _, P, g = self._qdata(q)
            gg = np.einsum("kad,kbd->kab", g, g)
            t1 = np.einsum("kab,kcd->kacbd", gg, P)
            t2 = np.einsum("kbc,kad->kacbd", g, g)
            return 0.5 * w[:, None, None, None, None] * (t1 + t2)

        return self.surface_integral(k, (4, 3, 4, 3))

    def penalty_local(self) -> np.ndarray:
        def k(q):
            w, lam, n, *_ = self._qdata(q)
            return np.einsum("k,ka,kb,kc,kd->kacbd", w, lam, lam, n, n)

        return self.surface_integral(k, (4, 3, 4, 3))

    def normal_stab_local(self) -> np.ndarray:
        """Scalar (grad psi_a . n)(grad psi_b . n) integrated over each active tet."""
        _, w, normals = self.space.volume_quadrature
        dn = np.einsum("tad,tqd->tqa", self.space.tet_grads, normals)
        return np.einsum("tq,tqa,tqb->tab", w, dn, dn)

    def coupling_local(self) -> np.ndarray:
        def k(q):
            w, lam, _, _, g = self._qdata(q)
            return np.einsum("k,kic,kj->kijc", w, g, lam)

        return self.surface_integral(k, (4, 4, 3))

    def stiffness_local(self) -> np.ndarray:
        G = self.space.tet_grads
        return self.space.tet_volumes[:, None, None] * np.einsum("tad,tbd->tab", G, G)

    def convection_local(self, w_q: np.ndarray, form: str) -> np.ndarray:
        """Unsymmetrised c(w, u, v) (or its rotational counterpart); rows test, cols trial."""

        def k(q):
            w, lam, _, P, g = self._qdata(q)
            wq = w_q[q]
            gw = np.einsum("kbd,kd->kb", g, wq)
            loc = np.einsum("k,ka,kcd,kb->kacbd", w, lam, P, gw)
            if form == "rotational":
                Pw = np.einsum("kde,ke->kd", P, wq)
                loc -= np.einsum("k,ka,kbc,kd->kacbd", w, lam, g, Pw)
            return loc

        return self.surface_integral(k, (4, 3, 4, 3))

    def vector_load_local(self, f_q: np.ndarray) -> np.ndarray:
        def k(q):
            w, lam, *_ = self._qdata(q)
            return np.einsum("k,ka,kc->kac", w, lam, f_q[q])

        return self.surface_integral(k, (4, 3))

    def scalar_load_local(self, kernel) -> np.ndarray:
        return self.surface_integral(kernel, (4,))

    # ---------------------------------------------------------------- scatter
    def velocity_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        return self.vv.matrix(local.reshape(-1, 12, 12))

    def scalar_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        return self.ss.matrix(local)

    def blockdiag_velocity(self, scalar_local: np.ndarray) -> sp.csr_matrix:
        loc = np.einsum("tab,cd->tacbd", scalar_local, np.eye(3))
        return self.velocity_matrix(loc)

    def scatter_vector(self, local: np.ndarray, size: int, dofs: np.ndarray) -> np.ndarray:
        return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=size)

    def velocity_vector(self, local: np.ndarray) -> np.ndarray:
        return self.scatter_vector(local.reshape(-1, 12), self.space.dofs.n_velocity, self._vdofs)

    def scalar_vector(self, local: np.ndarray) -> np.ndarray:
        return self.scatter_vector(local, self.space.dofs.n_scalar, self.space.tet_dofs)


def _assembler(space: TraceSpace) -> Assembler:
    asm = getattr(space, "_assembler", None)
    if asm is None:
        asm = Assembler(space)
        space._assembler = asm
    return asm


# ------------------------------------------------------------- public forms

def assemble_scalar_mass(space: TraceSpace) -> sp.csr_matrix:
    a = _assembler(space)
    return a.scalar_matrix(a.scalar_mass_local())


def assemble_mass(space: TraceSpace) -> sp.csr_matrix:
    """Velocity mass matrix on the discrete surface, block diagonal in components."""
    a = _assembler(space)
    return a.blockdiag_velocity(a.scalar_mass_local())


@dataclass(frozen=True)
class ViscousParts:
    strain: sp.csr_matrix  # int E_s(u):E_s(v)
    penalty: sp.csr_matrix  # int u_N v_N
    normal_stab: sp.csr_matrix  # int_strip (grad u n).(grad v n)

    def combine(self, params: SolverParams) -> sp.csr_matrix:
        return (params.nu * self.strain + params.tau * self.penalty + params.rho_u * self.normal_stab).tocsr()


def assemble_viscous_parts(space: TraceSpace) -> ViscousParts:
    a = _assembler(space)
    return ViscousParts(
        strain=a.velocity_matrix(a.strain_local()),
        penalty=a.velocity_matrix(a.penalty_local()),
        normal_stab=a.blockdiag_velocity(a.normal_stab_local()),
    )


def assemble_viscous(space: TraceSpace, params: SolverParams) -> sp.csr_matrix:
    return assemble_viscous_parts(space).combine(params)


def assemble_pressure_coupling(space: TraceSpace) -> sp.csr_matrix:
    """B[i, 3j + c] = int (P grad psi_i)_c psi_j."""
    a = _assembler(space)
    return a.sv.matrix(a.coupling_local().reshape(-1, 4, 12))


def assemble_stiffness(space: TraceSpace) -> sp.csr_matrix:
    """Full-gradient stiffness over the active strip (exact: P1 gradients are constant)."""
    a = _assembler(space)
    return a.scalar_matrix(a.stiffness_local())


def assemble_pressure_stab(space: TraceSpace, params: SolverParams) -> sp.csr_matrix:
    return (params.rho_p * assemble_stiffness(space)).tocsr()


def assemble_convection(space: TraceSpace, u_tilde: FEField | np.ndarray, form: str) -> sp.csr_matrix:
    """Skew-symmetrised convection matrix C, with u^T C v = c*(u_tilde, v, u)."""
    if form not in NONLINEAR_FORMS:
        raise ValueError(f"unknown nonlinear form {form!r}; choose from {NONLINEAR_FORMS}")
    a = _assembler(space)
    n = space.dofs.n_velocity
    if form == "none":
        return sp.csr_matrix((n, n))
    w_q = space.eval_at_surface(u_tilde)
    N = a.velocity_matrix(a.convection_local(w_q, form))
    return (0.5 * (N - N.T)).tocsr()


def mean_constraint(space: TraceSpace) -> np.ndarray:
    """m_i = int psi_i over the discrete surface."""
    a = _assembler(space)

    def k(q):
        return space.surface.qw[q, None] * space.surface.q_bary[q]

    return a.scalar_vector(a.scalar_load_local(k))


def assemble_momentum_rhs(space: TraceSpace, data: CaseOnPoints, t: float, params: SolverParams) -> np.ndarray:
    """F[3i + c] = int f_c psi_i with f evaluated at the quadrature points."""
    a = _assembler(space)
    if data.case.zero_forcing:
        return np.zeros(space.dofs.n_velocity)
    return a.velocity_vector(a.vector_load_local(data.forcing(t, params.nu)))


def assemble_continuity_rhs(space: TraceSpace, data: CaseOnPoints, t: float) -> np.ndarray:
    """G[i] = int (P grad psi_i) . u_exact; identically zero for solenoidal cases."""
    a = _assembler(space)
    if data.case.divergence_free:
        return np.zeros(space.dofs.n_scalar)
    u = data.velocity(t)

    def k(q):
        w, _, _, _, g = a._qdata(q)
        return w[:, None] * np.einsum("kad,kd->ka", g, u[q])

    return a.scalar_vector(a.scalar_load_local(k))


@dataclass
class StepSystem:
    """Time-independent blocks of one discretisation plus the per-step pieces."""

    space: TraceSpace
    params: SolverParams
    M: sp.csr_matrix
    parts: ViscousParts
    B: sp.csr_matrix
    K_p: sp.csr_matrix  # strip stiffness, S = rho_p * K_p
    m: np.ndarray
    C: sp.csr_matrix | None = None
    F: np.ndarray | None = None
    G: np.ndarray | None = None
    _A: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def A(self) -> sp.csr_matrix:
        if self._A is None:
            self._A = self.parts.combine(self.params)
        return self._A

    @property
    def S(self) -> sp.csr_matrix:
        return (self.params.rho_p * self.K_p).tocsr()

    @property
    def n_u(self) -> int:
        return self.M.shape[0]

    @property
    def n_p(self) -> int:
        return self.B.shape[0]


def assemble_system(space: TraceSpace, params: SolverParams) -> StepSystem:
    return StepSystem(
        space=space,
        params=params,
        M=assemble_mass(space),
        parts=assemble_viscous_parts(space),
        B=assemble_pressure_coupling(space),
        K_p=assemble_stiffness(space),
        m=mean_constraint(space),
    )
