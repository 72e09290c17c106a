"""Krylov solver, ILU(0) and the block Schur-complement preconditioner.

The saddle-point Jacobian [[A, B], [C, D]] is preconditioned with the full
block factorization

    P^{-1} = [[I, -A^{-1}B], [0, I]] diag(A^{-1}, S^{-1}) [[I, 0], [-C A^{-1}, I]],

where A^{-1} is one ILU(0) sweep and S is approximated by the explicitly
assembled S_p = D - C diag(A)^{-1} B, itself inverted by one ILU(0) sweep.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels as kern
from .errors import SingularPreconditionerError

__all__ = [
    "as_csr",
    "ILU0",
    "ilu0",
    "GMRESInfo",
    "gmres",
    "SchurPreconditioner",
    "build_schur_preconditioner",
    "apply_schur_preconditioner",
]


def as_csr(A) -> sp.csr_matrix:
    """CSR copy with sorted, duplicate-free column indices and an explicit
    (possibly zero) diagonal."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    n = min(A.shape)
    diag_present = np.zeros(n, dtype=bool)
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    on_diag = rows == A.indices
    diag_present[rows[on_diag]] = True
    if not diag_present.all():
        coo = A.tocoo()
        missing = np.flatnonzero(~diag_present)
        A = sp.csr_matrix((np.concatenate([coo.data, np.zeros(len(missing))]),
                           (np.concatenate([coo.row, missing]), np.concatenate([coo.col, missing]))),
                          shape=A.shape)
        A.sort_indices()
    return A


class ILU0:
    """Zero-fill incomplete LU on the pattern of ``A``."""

    def __init__(self, A, shift: float = 1e-12):
        A = as_csr(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("ILU(0) needs a square matrix")
        self.shape = A.shape
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
        self.diag_pos = np.flatnonzero(rows == A.indices).astype(np.int64)
        self.lu, self.shifts = kern.ilu0_factor(self.indptr, self.indices, A.data, self.diag_pos, shift)
        if self.shifts:
            warnings.warn(f"ILU(0): {self.shifts} zero pivots shifted", RuntimeWarning, stacklevel=2)

    def solve(self, b) -> np.ndarray:
        return kern.ilu0_solve(self.indptr, self.indices, self.lu, self.diag_pos,
                               np.ascontiguousarray(b, dtype=float))

    __call__ = solve

    def factors(self):
        """Unit lower triangular L and upper triangular U as CSR matrices."""
        M = sp.csr_matrix((self.lu, self.indices, self.indptr), shape=self.shape)
        L = sp.tril(M, k=-1, format="csr") + sp.eye(self.shape[0], format="csr")
        U = sp.triu(M, format="csr")
        return L, U


def ilu0(matrix, shift: float = 1e-12) -> ILU0:
    return ILU0(matrix, shift)


@dataclass
class GMRESInfo:
    iterations: int = 0
    converged: bool = False
    residuals: list = field(default_factory=list)   # preconditioned-free true residual estimates
    breakdown: bool = False
    reason: str = ""


def _as_operator(A):
    if A is None:
        return lambda v: v
    if sp.issparse(A) or isinstance(A, np.ndarray):
        return lambda v: A @ v
    if callable(A):
        return A
    if hasattr(A, "matvec"):
        return A.matvec
    raise TypeError(f"cannot use {type(A).__name__} as a linear operator")


def gmres(operator, preconditioner, rhs, rtol: float = 1e-7, max_iter: int = 1000,
          restart: int = 200, x0=None, atol: float = 0.0):
    """Right-preconditioned restarted GMRES.

    Stops when ``||b - A x|| <= max(rtol ||b||, atol)``. Returns ``(x, info)``.
    """
    A = _as_operator(operator)
    M = _as_operator(preconditioner)
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    info = GMRESInfo()
    bnorm = np.linalg.norm(b)
    target = max(rtol * bnorm, atol)
    r = b - A(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    info.residuals.append(beta)
    if beta <= target or bnorm == 0.0:
        info.converged = True
        info.reason = "initial residual below tolerance"
        return x, info
    m = max(1, min(restart, n))
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    while info.iterations < max_iter:
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        k_used = 0
        for k in range(m):
            w = A(M(V[k]))
            # classical Gram-Schmidt, twice
            h = V[: k + 1] @ w
            w = w - V[: k + 1].T @ h
            h2 = V[: k + 1] @ w
            w = w - V[: k + 1].T @ h2
            h += h2
            hn = np.linalg.norm(w)
            H[: k + 1, k] = h
            H[k + 1, k] = hn
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            info.iterations += 1
            k_used = k + 1
            res = abs(g[k + 1])
            info.residuals.append(res)
            happy = hn <= 1e-14 * max(beta, 1e-300)
            if res <= target or happy or info.iterations >= max_iter:
                info.breakdown = bool(happy and res > target)
                break
            V[k + 1] = w / hn
        y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used]) if k_used else np.zeros(0)
        x = x + M(V[:k_used].T @ y)
        r = b - A(x)
        beta = np.linalg.norm(r)
        if beta <= target:
            info.converged = True
            info.reason = "converged"
            return x, info
        if info.breakdown:
            info.reason = "breakdown"
            return x, info
    info.reason = "max_iter reached"
    return x, info


@dataclass
class SchurPreconditioner:
    J_up: sp.csr_matrix
    J_pu: sp.csr_matrix
    A_inv: ILU0
    S_p: sp.csr_matrix
    S_inv: object
    lumped: np.ndarray

    @property
    def n_u(self) -> int:
        return self.J_up.shape[0]

    @property
    def shape(self):
        n = self.J_up.shape[0] + self.J_up.shape[1]
        return (n, n)

    def __call__(self, v):
        return apply_schur_preconditioner(self, v)


def schur_complement(J_uu, J_up, J_pu, J_pp):
    """S_p = J_pp - J_pu diag(J_uu)^{-1} J_up (explicit sparse product)."""
    lumped = J_uu.diagonal()
    if np.any(lumped <= 0):
        raise SingularPreconditionerError("diagonal of the velocity block is not positive")
    S = sp.csr_matrix(J_pp) - sp.csr_matrix(J_pu) @ sp.diags(1.0 / lumped) @ sp.csr_matrix(J_up)
    return as_csr(S), lumped


def build_schur_preconditioner(blocks, inner: str = "ilu0", S_p=None) -> SchurPreconditioner:
    """Build the block preconditioner from ``blocks`` (anything with J_uu,
    J_up, J_pu, J_pp). ``S_p`` may be passed to override the assembled
    approximation of the Schur complement."""
    lumped = blocks.J_uu.diagonal()
    if S_p is None:
        S_p, lumped = schur_complement(blocks.J_uu, blocks.J_up, blocks.J_pu, blocks.J_pp)
    else:
        S_p = as_csr(S_p)
    row_nnz = np.diff(S_p.indptr)
    absrow = np.asarray(abs(S_p).sum(axis=1)).ravel()
    if np.any(row_nnz == 0) or np.any(absrow == 0):
        row = int(np.flatnonzero((row_nnz == 0) | (absrow == 0))[0])
        raise SingularPreconditionerError(f"Schur complement approximation has an empty row ({row})")
    if inner == "ilu0":
        S_inv = ILU0(S_p)
    elif inner == "amg":
        import pyamg
        ml = pyamg.smoothed_aggregation_solver(-S_p if S_p.diagonal().mean() < 0 else S_p)
        sign = -1.0 if S_p.diagonal().mean() < 0 else 1.0
        S_inv = _AMGSweep(ml, sign)
    elif inner == "lu":
        from scipy.sparse.linalg import splu
        S_inv = splu(S_p.tocsc()).solve
    else:
        raise ValueError(f"unknown inner preconditioner {inner!r}")
    return SchurPreconditioner(sp.csr_matrix(blocks.J_up), sp.csr_matrix(blocks.J_pu),
                               ILU0(blocks.J_uu), S_p, S_inv, lumped)


class _AMGSweep:
    def __init__(self, ml, sign):
        self.ml, self.sign = ml, sign

    def __call__(self, b):
        return self.sign * self.ml.solve(b, maxiter=1, cycle="V", tol=1e-30)


def apply_schur_preconditioner(pc: SchurPreconditioner, vector) -> np.ndarray:
    v = np.asarray(vector, dtype=float)
    if v.shape[0] != pc.shape[0]:
        raise ValueError(f"vector of length {v.shape[0]} does not match preconditioner size {pc.shape[0]}")
    nu = pc.n_u
    yu = pc.A_inv(v[:nu])
    yp = pc.S_inv(v[nu:] - pc.J_pu @ yu)
    xu = yu - pc.A_inv(pc.J_up @ yp)
    return np.concatenate([xu, yp])
