"""Dense matrix helpers: column-major vectorization, Kronecker products,
stacking, a thin SVD in the ``M = U @ diag(D) @ V`` convention and an SPD
factor ``O`` with ``O.T @ S @ O = I``.
"""
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .errors import DomainError, NumericalError, ShapeError

ZERO_SVD_TOL = 1e-14


class ThinSvd(NamedTuple):
    """``M = U @ np.diag(D) @ V`` with ``V`` orthogonal (not transposed).

    ``D`` is stored as the 1-D array of singular values, descending.
    """
    U: np.ndarray
    D: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return (self.U * self.D) @ self.V


def vec(A):
    return np.asarray(A).reshape(-1, order="F")


def unvec(v, shape):
    v = np.asarray(v)
    rows, cols = shape
    if v.ndim != 1 or v.size != rows * cols:
        raise ShapeError(f"cannot unvec a vector of size {v.size} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def kron(A, B):
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))


def hstack(mats: Sequence[np.ndarray]):
    mats = [np.atleast_2d(m) for m in mats]
    rows = {m.shape[0] for m in mats}
    if len(rows) > 1:
        raise ShapeError(f"hstack needs equal row counts, got {sorted(rows)}")
    return np.hstack(mats)


def vstack(mats: Sequence[np.ndarray]):
    mats = [np.atleast_2d(m) for m in mats]
    cols = {m.shape[1] for m in mats}
    if len(cols) > 1:
        raise ShapeError(f"vstack needs equal column counts, got {sorted(cols)}")
    return np.vstack(mats)


def thin_svd(M) -> ThinSvd:
    M = np.asarray(M, dtype=float)
    d, N = M.shape
    if d < N:
        raise ShapeError(f"thin_svd needs rows >= cols, got {d}x{N}")
    if not np.all(np.isfinite(M)):
        raise NumericalError("thin_svd input contains non-finite entries")
    if np.linalg.norm(M) < ZERO_SVD_TOL:
        return ThinSvd(np.eye(d, N), np.zeros(N), np.eye(N))
    try:
        U, D, Wt = linalg.svd(M, full_matrices=False)
    except linalg.LinAlgError:
        try:
            U, D, Wt = linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
        except linalg.LinAlgError as exc:
            raise NumericalError(
                f"SVD did not converge (|M|_F={np.linalg.norm(M):.3e}, "
                f"max|M|={np.abs(M).max():.3e})") from exc
    return ThinSvd(U, D, Wt)


def spd_factor(S):
    """Return ``(O, O_inv)`` with ``O.T @ S @ O = I``.

    Uses ``S = L @ L.T`` so that ``O = L^{-T}`` and ``O_inv = L.T``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"spd_factor needs a square matrix, got {S.shape}")
    asym = np.abs(S - S.T).max() if S.size else 0.0
    if asym > 1e-12 * max(1.0, np.abs(S).max()):
        raise DomainError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    try:
        L = linalg.cholesky(S, lower=True)
    except linalg.LinAlgError as exc:
        eigs = np.linalg.eigvalsh(S)
        raise DomainError(
            f"matrix is not positive definite (smallest eigenvalue {eigs[0]:.3e})") from exc
    O = linalg.solve_triangular(L, np.eye(S.shape[0]), lower=True).T
    return O, L.T.copy()
