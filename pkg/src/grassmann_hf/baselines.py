"""Euclidean reference solvers for the UHF problem.

``nrlm`` is Newton-Raphson on the Lagrangian
``L = f(C1, C2) - tr(eps1^T c1(C1)) - tr(eps2^T c2(C2))`` with
``c(C) = C^T S C - I``.  ``scf_diis`` is the usual Roothaan-Hall fixed point
iteration accelerated by DIIS extrapolation of the Fock matrices.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Tuple

import numpy as np
from scipy import linalg

from .hf import IntegralSet, SpinPair, density, energy, fock_pair
from .manifold import MetricBasis
from .matops import hstack, kron, unvec, vec
from .optim import OptTrace, Status, StopCriteria

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-12
DIIS_COND_LIMIT = 1e12


@dataclass
class MultiplierState:
    eps_alpha: np.ndarray
    eps_beta: np.ndarray

    def __iter__(self):
        return iter((self.eps_alpha, self.eps_beta))

    @classmethod
    def initial(cls, pair, euc_grads):
        """``eps = C^T G / 2``, exact at any stationary feasible point."""
        return cls(*(0.5 * C.T @ G for C, G in zip(pair, euc_grads)))


def constraint(C, metric: MetricBasis):
    return C.T @ metric.S @ C - np.eye(C.shape[1])


def constraint_jacobian(C, metric: MetricBasis):
    """``J`` with ``J vec(V) = vec(C^T S V + V^T S C)``."""
    d, N = C.shape
    CtS = C.T @ metric.S
    if N == 0:
        return np.zeros((0, 0))
    eye = np.eye(N)
    second = hstack([kron(CtS, eye[:, [j]]) for j in range(N)])
    return kron(eye, CtS) + second


def lagrangian_gradient(pair, mult: MultiplierState, euc_grads, metrics):
    """Stack ``[vec(G_i - S C_i (eps_i + eps_i^T)); vec(-c_i)]``."""
    orbital, residual = [], []
    for C, eps, G, metric in zip(pair, mult, euc_grads, metrics):
        if eps.shape != (C.shape[1],) * 2:
            raise ValueError(f"multiplier shape {eps.shape} does not match N={C.shape[1]}")
        orbital.append(vec(G - metric.S @ C @ (eps + eps.T)))
        residual.append(vec(-constraint(C, metric)))
    return np.concatenate(orbital + residual)


def lagrangian_hessian(pair, mult: MultiplierState, euc_hess, jacobians, metrics):
    """KKT matrix ``[[Hf - blockdiag((eps+eps^T) (x) S), -J^T], [-J, 0]]``."""
    C1, C2 = pair
    n1, n2 = C1.size, C2.size
    m1, m2 = C1.shape[1] ** 2, C2.shape[1] ** 2
    n, m = n1 + n2, m1 + m2
    K = np.zeros((n + m, n + m))
    K[:n, :n] = euc_hess
    for (lo, hi), eps, metric in zip(((0, n1), (n1, n)), mult, metrics):
        if hi > lo:
            K[lo:hi, lo:hi] -= kron(eps + eps.T, metric.S)
    J = np.zeros((m, n))
    J[:m1, :n1] = jacobians[0]
    J[m1:, n1:] = jacobians[1]
    K[:n, n:] = -J.T
    K[n:, :n] = -J
    return K


def _lagrangian_value(E, pair, mult, metrics):
    return E - sum(float(np.sum(eps * constraint(C, m))) for C, eps, m in zip(pair, mult, metrics))


def nrlm(cost, x0, mult0=None, crit=StopCriteria(50)):
    """Newton-Raphson on the Lagrangian stationarity system.

    The KKT matrix is singular (symmetric constraint rows are duplicated and
    the orbital-rotation gauge is free), so each step is the minimum-norm
    least-squares solution of ``K delta = -grad L``.
    """
    metrics = cost.metrics
    C1, C2 = (np.array(C, dtype=float) for C in x0)
    if mult0 is None:
        mult0 = MultiplierState.initial((C1, C2), cost.euclidean_gradient(C1, C2))
    e1, e2 = (np.array(e, dtype=float) for e in mult0)
    n1, n2 = C1.size, C2.size
    m1 = C1.shape[1] ** 2
    trace = OptTrace()
    L_prev = math.inf
    for k in range(crit.max_iter + 1):
        pair, mult = (C1, C2), MultiplierState(e1, e2)
        E = cost.value(C1, C2)
        G = cost.euclidean_gradient(C1, C2)
        grad = lagrangian_gradient(pair, mult, G, metrics)
        gnorm = float(np.linalg.norm(grad))
        L = _lagrangian_value(E, pair, mult, metrics)
        if not (np.isfinite(E) and np.isfinite(gnorm)):
            trace.record(k, E, gnorm)
            trace.finish(Status.NUMERICAL_FAILURE, "non-finite Lagrangian or gradient")
            break
        status = None
        if gnorm <= crit.tol_grad:
            status = Status.CONVERGED_GRAD
        elif abs(L_prev - L) <= crit.tol_val:
            status = Status.CONVERGED_VAL
        elif k == crit.max_iter:
            status = Status.MAX_ITER
        if status is not None:
            trace.record(k, E, gnorm)
            trace.finish(status)
            break
        J = (constraint_jacobian(C1, metrics[0]), constraint_jacobian(C2, metrics[1]))
        K = lagrangian_hessian(pair, mult, cost.euclidean_hessian(C1, C2), J, metrics)
        delta, *_ = linalg.lstsq(K, -grad, lapack_driver="gelsd")
        if not np.all(np.isfinite(delta)):
            trace.record(k, E, gnorm)
            trace.finish(Status.NUMERICAL_FAILURE, "KKT solve produced non-finite step")
            break
        trace.record(k, E, gnorm, float(np.linalg.norm(delta[:n1 + n2])))
        C1 = C1 + unvec(delta[:n1], C1.shape)
        C2 = C2 + unvec(delta[n1:n1 + n2], C2.shape)
        e1 = e1 + unvec(delta[n1 + n2:n1 + n2 + m1], e1.shape)
        e2 = e2 + unvec(delta[n1 + n2 + m1:], e2.shape)
        L_prev = L
    return SpinPair(C1, C2), MultiplierState(e1, e2), trace


# -- SCF with DIIS --------------------------------------------------------------

class DiisHistory:
    """Last ``capacity`` Fock matrices and commutator errors, per spin."""

    def __init__(self, capacity=2):
        if capacity < 0:
            raise ValueError("DIIS window must be non-negative")
        self.capacity = capacity
        self.entries: Deque[Tuple[Tuple[np.ndarray, ...], Tuple[np.ndarray, ...]]] = deque(
            maxlen=max(capacity, 1))

    def __len__(self):
        return len(self.entries)

    def push(self, focks, errors):
        if self.capacity == 0:
            return
        self.entries.append((tuple(f.copy() for f in focks), tuple(e.copy() for e in errors)))

    def extrapolate(self, focks):
        """DIIS combination of the stored Fock matrices (falls back to ``focks``)."""
        entries = list(self.entries)
        while len(entries) > 1:
            coeffs = _diis_coefficients([e for _, e in entries])
            if coeffs is not None:
                return tuple(sum(c * F[s] for c, (F, _) in zip(coeffs, entries))
                             for s in range(len(focks)))
            logger.debug("DIIS system singular with %d entries; dropping oldest", len(entries))
            entries.pop(0)
            self.entries.popleft()
        return tuple(focks)


def _diis_coefficients(errors: List[Tuple[np.ndarray, ...]]):
    m = len(errors)
    B = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            B[i, j] = sum(float(np.sum(a * b)) for a, b in zip(errors[i], errors[j]))
    scale = np.max(np.abs(np.diag(B)))
    if not scale > 0:
        return None
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = B / scale
    A[:m, m] = A[m, :m] = -1.0
    rhs = np.zeros(m + 1)
    rhs[m] = -1.0
    if np.linalg.cond(A) > DIIS_COND_LIMIT:
        return None
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return None
    return sol[:m]


def aufbau(F, S, n_occ):
    """Lowest ``n_occ`` generalized eigenvectors of ``F c = lambda S c``."""
    w, V = linalg.eigh(F, S)
    if 0 < n_occ < len(w) and w[n_occ] - w[n_occ - 1] < DEGENERACY_TOL:
        logger.warning("degenerate aufbau occupation: eigenvalues %.12g and %.12g tie",
                       w[n_occ - 1], w[n_occ])
    return V[:, :n_occ]


def commutator(F, P, S):
    return F @ P @ S - S @ P @ F


def scf_diis(ints: IntegralSet, guess, diis_window=2, crit=StopCriteria(100)):
    """Unrestricted SCF iteration with DIIS on the spin-stacked errors.

    The recorded gradient norm is the Frobenius norm of ``FPS - SPF`` over
    both spins.
    """
    Ca, Cb = (np.array(C, dtype=float) for C in guess)
    S = ints.S
    history = DiisHistory(diis_window)
    trace = OptTrace()
    E_prev = math.inf
    for k in range(crit.max_iter + 1):
        Pa, Pb = density(Ca), density(Cb)
        focks = fock_pair(Pa, Pb, ints)
        E = energy((Ca, Cb), ints)
        errors = (commutator(focks[0], Pa, S), commutator(focks[1], Pb, S))
        err = math.sqrt(sum(float(np.sum(e * e)) for e in errors))
        if not (np.isfinite(E) and np.isfinite(err)):
            trace.record(k, E, err)
            trace.finish(Status.NUMERICAL_FAILURE, "non-finite energy or Fock matrix")
            break
        status = None
        if err <= crit.tol_grad:
            status = Status.CONVERGED_GRAD
        elif abs(E_prev - E) <= crit.tol_val:
            status = Status.CONVERGED_VAL
        elif k == crit.max_iter:
            status = Status.MAX_ITER
        if status is not None:
            trace.record(k, E, err)
            trace.finish(status)
            break
        history.push(focks, errors)
        Fa, Fb = history.extrapolate(focks)
        try:
            new_a = aufbau(Fa, S, ints.n_alpha)
            new_b = aufbau(Fb, S, ints.n_beta)
        except (linalg.LinAlgError, ValueError) as exc:
            trace.record(k, E, err)
            trace.finish(Status.NUMERICAL_FAILURE, f"eigenproblem failed: {exc}")
            break
        step = math.sqrt(float(np.sum((density(new_a) - Pa) ** 2) + np.sum((density(new_b) - Pb) ** 2)))
        trace.record(k, E, err, step)
        Ca, Cb = new_a, new_b
        E_prev = E
    return SpinPair(Ca, Cb), trace
