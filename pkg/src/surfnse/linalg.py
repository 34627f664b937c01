"""Sparse storage helpers and the per-step saddle-point solve.

The step operator is

    [[sigma M + A + C, B^T, 0],
     [B,               -S,  m],
     [0,               m^T, 0]]

where the last row/column is a Lagrange multiplier fixing the mean of the
pressure over the discrete surface.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import structural_rank

from .assembly import StepSystem

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
GMRES_RESTART = 100
GMRES_MAXITER = 5000
BACKENDS = ("direct", "gmres", "auto")
# desk-scale systems below this size are factorised directly under "auto"
AUTO_DIRECT_LIMIT = 200_000
# preconditioned iterations allowed before a stale factorisation is renewed
STALE_ITERATIONS = 30


class SolverError(RuntimeError):
    pass


def as_csr(A) -> sp.csr_matrix:
    """CSR copy with sorted, duplicate-free column indices."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    if not np.all(np.isfinite(A.data)):
        raise ValueError("matrix has non-finite entries")
    return A


def spmv(A, x) -> np.ndarray:
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    return A @ x


@dataclass
class StepSolution:
    u: np.ndarray
    p: np.ndarray
    lam: float
    residual: float
    iterations: int = 0


class SaddlePointSolver:
    """Builds and solves the step operator; factorisations are cached when the
    operator does not change between steps (no convection matrix)."""

    def __init__(self, system: StepSystem, backend: str = "direct"):
        if backend not in BACKENDS:
            raise ValueError(f"unknown solver backend {backend!r}; choose from {BACKENDS}")
        if system.B.shape != (system.n_p, system.n_u):
            raise ValueError(f"coupling block has shape {system.B.shape}")
        if system.params.rho_p <= 0:
            raise ValueError("pressure stabilisation must be positive")
        self.system = system
        n = system.n_u + system.n_p + 1
        if backend == "auto":
            backend = "direct" if n <= AUTO_DIRECT_LIMIT else "gmres"
        self.backend = backend
        self._cache_key = None
        self._cache = None
        self._stale = None

    def operator(self, sigma: float, C=None) -> sp.csr_matrix:
        s = self.system
        top = sigma * s.M + s.A
        if C is not None:
            top = top + C
        m = sp.csr_matrix(s.m[:, None])
        K = sp.bmat(
            [[top, s.B.T, None], [s.B, -s.S, m], [None, m.T, sp.csr_matrix((1, 1))]],
            format="csc",
        )
        return K

    @staticmethod
    def _check_structure(K):
        # SuperLU can crash instead of failing cleanly on structurally singular input
        K = K.copy()
        K.eliminate_zeros()
        rank = structural_rank(K)
        if rank < K.shape[0]:
            raise SolverError(f"singular step operator: structural rank {rank} < {K.shape[0]}")

    def _direct(self, K, key):
        if key is not None and key == self._cache_key:
            return self._cache
        self._check_structure(K)
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SolverError(f"singular step operator: {exc}") from exc
        if key is not None:
            self._cache_key, self._cache = key, lu
        return lu

    def _reuse_stale(self, K, b, sigma, bnorm):
        """Solve with the factorisation of an earlier step as GMRES preconditioner.

        The convection matrix changes slowly between steps, so a few
        iterations usually suffice; returns None if they do not.
        """
        if self._stale is None or self._stale[0] != sigma:
            return None
        lu = self._stale[1]
        pre = spla.LinearOperator(K.shape, lu.solve)
        x, _ = spla.gmres(
            K, b, x0=lu.solve(b), M=pre, rtol=1e-13, atol=0.0, restart=STALE_ITERATIONS, maxiter=1
        )
        if np.all(np.isfinite(x)) and np.linalg.norm(K @ x - b) <= 0.1 * RESIDUAL_TOL * bnorm:
            return x
        return None

    def _ilu(self, K, key):
        if key is not None and key == self._cache_key:
            return self._cache
        self._check_structure(K)
        try:
            ilu = spla.spilu(K, drop_tol=1e-6, fill_factor=20)
        except RuntimeError as exc:
            raise SolverError(f"incomplete factorisation failed: {exc}") from exc
        if key is not None:
            self._cache_key, self._cache = key, ilu
        return ilu

    def solve(self, sigma: float, rhs_u, rhs_p, C=None, rhs_lam: float = 0.0) -> StepSolution:
        s = self.system
        rhs_u = np.asarray(rhs_u, dtype=float)
        rhs_p = np.asarray(rhs_p, dtype=float)
        if rhs_u.shape != (s.n_u,) or rhs_p.shape != (s.n_p,):
            raise ValueError("right-hand side does not match the system size")
        b = np.concatenate([rhs_u, rhs_p, [rhs_lam]])
        K = self.operator(sigma, C)
        key = ("sigma", sigma) if C is None else None
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return StepSolution(np.zeros(s.n_u), np.zeros(s.n_p), 0.0, 0.0)
        iters = 0
        if self.backend == "direct":
            x = self._reuse_stale(K, b, sigma, bnorm) if C is not None else None
            if x is None:
                lu = self._direct(K, key)
                x = lu.solve(b)
                # one step of iterative refinement guards badly scaled (large tau) systems
                x += lu.solve(b - K @ x)
                if C is not None:
                    self._stale = (sigma, lu)
        else:
            ilu = self._ilu(K, key)
            pre = spla.LinearOperator(K.shape, ilu.solve)
            count = [0]

            def cb(_):
                count[0] += 1

            x, info = spla.gmres(
                K,
                b,
                M=pre,
                rtol=1e-13,
                atol=0.0,
                restart=GMRES_RESTART,
                maxiter=GMRES_MAXITER // GMRES_RESTART,
                callback=cb,
                callback_type="pr_norm",
            )
            iters = count[0]
            if info < 0:
                raise SolverError(f"GMRES breakdown (info={info})")
        res = float(np.linalg.norm(K @ x - b) / bnorm)
        if not np.all(np.isfinite(x)) or res > RESIDUAL_TOL:
            raise SolverError(
                f"{self.backend} solve did not reach residual {RESIDUAL_TOL:g}: got {res:.3e}"
                + (f" after {iters} iterations" if iters else "")
            )
        nu, npr = s.n_u, s.n_p
        return StepSolution(x[:nu], x[nu : nu + npr], float(x[-1]), res, iters)


def solve_step(system: StepSystem, sigma: float, rhs_u, rhs_p, C=None, backend: str = "direct"):
    """One-off solve of the step operator; returns (u, p) as flat arrays."""
    sol = SaddlePointSolver(system, backend).solve(sigma, rhs_u, rhs_p, C=C)
    return sol.u, sol.p
