"""Riemannian optimizers on ``Gr(N1, d1) x Gr(N2, d2)``.

Gradient descent, Newton-Raphson (augmented Hessian system) and nonlinear
conjugate gradient with Fletcher-Reeves or Polak-Ribiere coefficients, all
with constant step sizes and exponential-map updates.
"""
import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Tuple

import numpy as np
from scipy import linalg

from .errors import SingularSystemError
from .manifold import (
    Geodesic,
    HorizontalTangent,
    MetricBasis,
    ProductPoint,
    grassmann_dim,
    project_horizontal,
    reorthonormalize,
    riemannian_gradient,
)
from .matops import kron, unvec, vec

logger = logging.getLogger(__name__)

REORTH_EVERY = 50


class CostModel(Protocol):
    def value(self, C1: np.ndarray, C2: np.ndarray) -> float: ...

    def euclidean_gradient(self, C1: np.ndarray, C2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]: ...

    def euclidean_hessian(self, C1: np.ndarray, C2: np.ndarray) -> np.ndarray: ...


class Status(str, enum.Enum):
    CONVERGED_GRAD = "ConvergedGrad"
    CONVERGED_VAL = "ConvergedVal"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"

    @property
    def converged(self):
        return self in (Status.CONVERGED_GRAD, Status.CONVERGED_VAL)


@dataclass(frozen=True)
class StopCriteria:
    max_iter: int = 1000
    tol_grad: float = 1e-8
    tol_val: float = 1e-10

    def __post_init__(self):
        if self.max_iter <= 0 or self.tol_grad <= 0 or self.tol_val <= 0:
            raise ValueError(f"stopping criteria must be positive: {self}")


@dataclass
class IterRecord:
    k: int
    energy: float
    grad_norm: float
    step_norm: float
    wall_time: float
    phase: str = ""


@dataclass
class OptTrace:
    records: List[IterRecord] = field(default_factory=list)
    status: Optional[Status] = None
    switch_iteration: Optional[int] = None
    message: str = ""
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def record(self, k, energy, grad_norm, step_norm=0.0, phase=""):
        if self.records and k < self.records[-1].k:
            raise ValueError("iterations must be recorded in order")
        self.records.append(IterRecord(k, float(energy), float(grad_norm), float(step_norm),
                                       time.perf_counter() - self._t0, phase))

    def finish(self, status: Status, message=""):
        if self.status is not None:
            raise RuntimeError(f"status already set to {self.status}")
        self.status = status
        self.message = message

    def extend(self, other: "OptTrace"):
        self.records.extend(other.records)

    @property
    def iterations(self):
        return len(self.records) - 1 if self.records else 0

    @property
    def final(self) -> IterRecord:
        return self.records[-1]

    @property
    def energies(self):
        return np.array([r.energy for r in self.records])

    @property
    def grad_norms(self):
        return np.array([r.grad_norm for r in self.records])


# -- per-iterate evaluation ------------------------------------------------

@dataclass
class _State:
    x: ProductPoint
    energy: float
    euc_grads: Tuple[np.ndarray, np.ndarray]
    grads: Tuple[HorizontalTangent, HorizontalTangent]
    grad_norm: float


def _evaluate(cost: CostModel, x: ProductPoint) -> _State:
    C1, C2 = x.first.C, x.second.C
    E = cost.value(C1, C2)
    G1, G2 = cost.euclidean_gradient(C1, C2)
    if not (np.isfinite(E) and np.all(np.isfinite(G1)) and np.all(np.isfinite(G2))):
        # callers check _finite before touching the gradients
        nan = (HorizontalTangent(x.first, np.full_like(C1, np.nan), check=False),
               HorizontalTangent(x.second, np.full_like(C2, np.nan), check=False))
        return _State(x, E, (G1, G2), nan, math.nan)
    rg = (riemannian_gradient(x.first, G1), riemannian_gradient(x.second, G2))
    gn = math.sqrt(max(_pinner(rg, rg), 0.0))
    return _State(x, E, (G1, G2), rg, gn)


def _pinner(etas, mus):
    # etas/mus are pairs of HorizontalTangent at a common point
    total = 0.0
    for e, m in zip(etas, mus):
        total += float(np.sum(e.eta * (e.base.metric.S @ m.eta)))
    return total


def _finite(state: _State):
    return (np.isfinite(state.energy) and np.isfinite(state.grad_norm))


def _maybe_reorth(x: ProductPoint, n_steps, every) -> ProductPoint:
    if every and n_steps % every == 0:
        return ProductPoint(reorthonormalize(x.first), reorthonormalize(x.second))
    return x


def _check_stop(state: _State, E_prev, crit: StopCriteria):
    if state.grad_norm <= crit.tol_grad:
        return Status.CONVERGED_GRAD
    if abs(E_prev - state.energy) <= crit.tol_val:
        return Status.CONVERGED_VAL
    return None


def product_dim(x: ProductPoint):
    return grassmann_dim(x.first.N, x.first.d) + grassmann_dim(x.second.N, x.second.d)


# -- gradient descent -------------------------------------------------------

def rgd(cost: CostModel, x0: ProductPoint, step_size=0.02, crit=StopCriteria(1000),
        reorth_every=REORTH_EVERY):
    """Riemannian gradient descent with a constant step."""
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    trace = OptTrace()
    x, E_prev = x0, math.inf
    for k in range(crit.max_iter + 1):
        state = _evaluate(cost, x)
        if not _finite(state):
            trace.record(k, state.energy, state.grad_norm, 0.0)
            trace.finish(Status.NUMERICAL_FAILURE, "non-finite energy or gradient")
            return x, trace
        status = _check_stop(state, E_prev, crit)
        if status is not None or k == crit.max_iter:
            trace.record(k, state.energy, state.grad_norm, 0.0)
            trace.finish(status or Status.MAX_ITER)
            return x, trace
        trace.record(k, state.energy, state.grad_norm, step_size * state.grad_norm)
        x = ProductPoint(*(Geodesic(-g).point(step_size) for g in state.grads))
        x = _maybe_reorth(x, k + 1, reorth_every)
        E_prev = state.energy
    raise AssertionError("unreachable")


# -- Newton-Raphson ----------------------------------------------------------

def _proj_S_inv(C, metric: MetricBasis):
    """``(I - C C^T S) S^{-1}`` as an explicit d x d matrix."""
    S_inv = metric.S_inv()
    return S_inv - C @ (C.T @ (metric.S @ S_inv))


def assemble_riemannian_hessian(C1, C2, euc_grads, euc_hess, metrics):
    """Matrix of the Riemannian Hessian acting on ``vec(eta1), vec(eta2)``.

    ``blockdiag(I (x) proj_i S_i^{-1}) @ euc_hess - blockdiag(G_i^T C_i (x) I)``.
    """
    (G1, G2), (m1, m2) = euc_grads, metrics
    d1, N1 = C1.shape
    d2, N2 = C2.shape
    n1, n2 = d1 * N1, d2 * N2
    euc_hess = np.asarray(euc_hess, dtype=float)
    if euc_hess.shape != (n1 + n2, n1 + n2):
        raise ValueError(f"Hessian shape {euc_hess.shape} does not match {(n1 + n2,) * 2}")
    left = np.zeros_like(euc_hess)
    left[:n1, :n1] = kron(np.eye(N1), _proj_S_inv(C1, m1)) if n1 else 0.0
    left[n1:, n1:] = kron(np.eye(N2), _proj_S_inv(C2, m2)) if n2 else 0.0
    R = left @ euc_hess
    if n1:
        R[:n1, :n1] -= kron(G1.T @ C1, np.eye(d1))
    if n2:
        R[n1:, n1:] -= kron(G2.T @ C2, np.eye(d2))
    return R


def augment_system(C1, C2, riem_hess, riem_grads, metrics):
    """Stack the horizontality constraints under the Riemannian Hessian.

    Returns ``(A, rhs)`` with ``A`` of shape
    ``(d1 N1 + d2 N2 + N1^2 + N2^2, d1 N1 + d2 N2)``.
    """
    (m1, m2) = metrics
    d1, N1 = C1.shape
    d2, N2 = C2.shape
    n1, n2 = d1 * N1, d2 * N2
    hor1 = np.zeros((N1 * N1, n1 + n2))
    hor2 = np.zeros((N2 * N2, n1 + n2))
    if n1:
        hor1[:, :n1] = kron(np.eye(N1), C1.T @ m1.S)
    if n2:
        hor2[:, n1:] = kron(np.eye(N2), C2.T @ m2.S)
    A = np.vstack([riem_hess, hor1, hor2])
    g1, g2 = (np.asarray(getattr(g, "eta", g)) for g in riem_grads)
    rhs = -np.concatenate([vec(g1), vec(g2), np.zeros(N1 * N1 + N2 * N2)])
    return A, rhs


def solve_augmented(A, rhs):
    """Least-squares solve that refuses rank-deficient systems."""
    if A.shape[1] == 0:
        return np.zeros(0)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(rhs))):
        raise SingularSystemError("augmented system has non-finite entries")
    sol, _, rank, sv = linalg.lstsq(A, rhs, lapack_driver="gelsd")
    cond = sv[0] / sv[-1] if sv[-1] > 0 else math.inf
    if rank < A.shape[1]:
        raise SingularSystemError(f"augmented Newton system has rank {rank} < {A.shape[1]}", cond)
    return sol


def newton_direction(cost: CostModel, state: _State):
    """Solve the augmented Newton system at ``state``; returns horizontal pair."""
    x = state.x
    C1, C2 = x.first.C, x.second.C
    metrics = (x.first.metric, x.second.metric)
    H = cost.euclidean_hessian(C1, C2)
    R = assemble_riemannian_hessian(C1, C2, state.euc_grads, H, metrics)
    A, rhs = augment_system(C1, C2, R, state.grads, metrics)
    sol = solve_augmented(A, rhs)
    n1 = C1.size
    eta1 = unvec(sol[:n1], C1.shape)
    eta2 = unvec(sol[n1:], C2.shape)
    # strip roundoff-level vertical parts before stepping
    return project_horizontal(x.first, eta1), project_horizontal(x.second, eta2)


def rnr(cost: CostModel, x0: ProductPoint, crit=StopCriteria(50), reorth_every=REORTH_EVERY,
        trace: Optional[OptTrace] = None, k0=0, phase=""):
    """Riemannian Newton-Raphson: full steps along the Newton geodesic."""
    trace = trace if trace is not None else OptTrace()
    x, E_prev = x0, math.inf
    for k in range(crit.max_iter + 1):
        state = _evaluate(cost, x)
        if not _finite(state):
            trace.record(k0 + k, state.energy, state.grad_norm, 0.0, phase)
            trace.finish(Status.NUMERICAL_FAILURE, "non-finite energy or gradient")
            return x, trace
        status = _check_stop(state, E_prev, crit)
        if status is not None or k == crit.max_iter:
            trace.record(k0 + k, state.energy, state.grad_norm, 0.0, phase)
            trace.finish(status or Status.MAX_ITER)
            return x, trace
        try:
            etas = newton_direction(cost, state)
        except SingularSystemError as exc:
            trace.record(k0 + k, state.energy, state.grad_norm, 0.0, phase)
            trace.finish(Status.NUMERICAL_FAILURE, str(exc))
            return x, trace
        step = math.sqrt(max(_pinner(etas, etas), 0.0))
        trace.record(k0 + k, state.energy, state.grad_norm, step, phase)
        x = ProductPoint(*(Geodesic(e).point(1.0) for e in etas))
        x = _maybe_reorth(x, k + 1, reorth_every)
        E_prev = state.energy
    raise AssertionError("unreachable")


# -- conjugate gradient --------------------------------------------------------

def fletcher_reeves(g_new_sq, g_old_sq):
    return g_new_sq / g_old_sq


def polak_ribiere(g_new_sq, g_new_dot_transported_old, g_old_sq):
    return (g_new_sq - g_new_dot_transported_old) / g_old_sq


def linear_cg(H, b, variant="FR", tol=1e-12, max_iter=None):
    """Conjugate gradients for ``H x = b`` sharing the nonlinear coefficients.

    Exact step lengths ``<v, r>/<v, H v>`` take the place of the constant
    step; with identity transport this is classical linear CG.  Returns
    ``(x, iterates)``.
    """
    H = np.asarray(H, dtype=float)
    b = np.asarray(b, dtype=float)
    n = b.size
    max_iter = n if max_iter is None else max_iter
    x = np.zeros(n)
    r = b - H @ x
    v = r.copy()
    iterates = [x.copy()]
    for k in range(max_iter):
        if np.linalg.norm(r) <= tol * max(1.0, np.linalg.norm(b)):
            break
        Hv = H @ v
        alpha = (v @ r) / (v @ Hv)
        x = x + alpha * v
        r_new = r - alpha * Hv
        iterates.append(x.copy())
        # r plays the role of the negative gradient of 1/2 x^T H x - b^T x
        if variant == "FR":
            beta = fletcher_reeves(r_new @ r_new, r @ r)
        else:
            beta = polak_ribiere(r_new @ r_new, r_new @ r, r @ r)
        v = r_new + beta * v
        r = r_new
    return x, iterates


def rcg(cost: CostModel, x0: ProductPoint, step_size=0.01, variant="FR", crit=StopCriteria(300),
        reorth_every=REORTH_EVERY, trace: Optional[OptTrace] = None, k0=0, phase=""):
    """Riemannian nonlinear conjugate gradient with constant step.

    The search direction is reset to the negative gradient whenever the
    iteration count is a multiple of the manifold dimension.
    """
    variant = variant.upper()
    if variant not in ("FR", "PR"):
        raise ValueError(f"variant must be FR or PR, got {variant!r}")
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    trace = trace if trace is not None else OptTrace()
    dim = max(product_dim(x0), 1)
    t = step_size
    state = _evaluate(cost, x0)
    E_prev = math.inf
    direction = None
    for k in range(crit.max_iter + 1):
        x = state.x
        if not _finite(state):
            trace.record(k0 + k, state.energy, state.grad_norm, 0.0, phase)
            trace.finish(Status.NUMERICAL_FAILURE, "non-finite energy or gradient")
            return x, trace
        status = _check_stop(state, E_prev, crit)
        if status is not None or k == crit.max_iter:
            trace.record(k0 + k, state.energy, state.grad_norm, 0.0, phase)
            trace.finish(status or Status.MAX_ITER)
            return x, trace
        if direction is None or k % dim == 0:
            direction = tuple(-g for g in state.grads)
        dir_norm = math.sqrt(max(_pinner(direction, direction), 0.0))
        trace.record(k0 + k, state.energy, state.grad_norm, t * dir_norm, phase)

        geos = tuple(Geodesic(v) for v in direction)
        x_new = ProductPoint(*(geo.point(t) for geo in geos))
        x_new = _maybe_reorth(x_new, k + 1, reorth_every)
        new = _evaluate(cost, x_new)
        g_old_sq = state.grad_norm ** 2
        g_new_sq = new.grad_norm ** 2
        if g_old_sq == 0.0:
            alpha = 0.0
        elif variant == "FR":
            alpha = fletcher_reeves(g_new_sq, g_old_sq)
        else:
            moved_grads = tuple(HorizontalTangent(pt, geo.transport_matrix(g.eta, t), check=False)
                                for pt, geo, g in zip(x_new, geos, state.grads))
            alpha = polak_ribiere(g_new_sq, _pinner(new.grads, moved_grads), g_old_sq)
        moved_dir = tuple(geo.transport_matrix(v.eta, t) for geo, v in zip(geos, direction))
        # re-projection only removes roundoff drift off the horizontal space
        direction = tuple(project_horizontal(pt, -g.eta + alpha * mv)
                          for pt, g, mv in zip(new.x, new.grads, moved_dir))
        E_prev = state.energy
        state = new
    raise AssertionError("unreachable")


# -- hybrid ---------------------------------------------------------------------

@dataclass(frozen=True)
class HybridConfig:
    cg_step: float = 0.01
    switch_grad_tol: float = 1e-3
    crit: StopCriteria = StopCriteria(300)
    nr_max_iter: int = 50
    cg_variant: str = "FR"


def hybrid(cost: CostModel, x0: ProductPoint, cfg: HybridConfig = HybridConfig()):
    """RCG until the gradient norm drops below ``switch_grad_tol``, then RNR.

    If the Newton phase fails numerically, RCG resumes from the last good
    iterate for the remaining iteration budget.
    """
    if not cfg.switch_grad_tol > cfg.crit.tol_grad:
        raise ValueError("switch_grad_tol must exceed tol_grad")
    nr_crit = StopCriteria(cfg.nr_max_iter, cfg.crit.tol_grad, cfg.crit.tol_val)
    trace = OptTrace()
    start = _evaluate(cost, x0)
    x, used = x0, 0
    if not start.grad_norm < cfg.switch_grad_tol:
        # conjugate-gradient phase stops once the gradient is small enough
        cg_crit = StopCriteria(cfg.crit.max_iter, cfg.switch_grad_tol, cfg.crit.tol_val)
        cg_trace = OptTrace()
        x, cg_trace = rcg(cost, x0, cfg.cg_step, cfg.cg_variant, cg_crit, trace=cg_trace, phase="cg")
        used = cg_trace.final.k
        if cg_trace.status is Status.NUMERICAL_FAILURE:
            trace.extend(cg_trace)
            trace.finish(Status.NUMERICAL_FAILURE, cg_trace.message)
            return x, trace
        # the Newton phase re-records the switch iterate with its step
        cg_trace.records.pop()
        trace.extend(cg_trace)
    trace.switch_iteration = used
    nr_trace = OptTrace()
    x_nr, nr_trace = rnr(cost, x, nr_crit, trace=nr_trace, k0=used, phase="nr")
    if nr_trace.status is not Status.NUMERICAL_FAILURE:
        trace.extend(nr_trace)
        trace.finish(nr_trace.status, nr_trace.message)
        return x_nr, trace
    k_resume = nr_trace.final.k
    nr_trace.records.pop()
    trace.extend(nr_trace)
    logger.warning("Newton phase failed (%s); resuming conjugate gradient", nr_trace.message)
    resume = x_nr if _finite(_evaluate(cost, x_nr)) else x
    remaining = max(cfg.crit.max_iter - used, 1)
    x_cg, cg2 = rcg(cost, resume, cfg.cg_step, cfg.cg_variant,
                    StopCriteria(remaining, cfg.crit.tol_grad, cfg.crit.tol_val),
                    trace=OptTrace(), k0=k_resume, phase="cg")
    trace.extend(cg2)
    trace.finish(cg2.status, f"after Newton failure: {nr_trace.message}")
    return x_cg, trace


# -- a small reference cost -------------------------------------------------------

class TraceQuadraticCost:
    """``f(C1, C2) = tr(C1^T A1 C1) + tr(C2^T A2 C2)`` (block Rayleigh quotient)."""

    def __init__(self, A1, A2=None):
        self.A1 = np.asarray(A1, dtype=float)
        self.A2 = self.A1 if A2 is None else np.asarray(A2, dtype=float)

    def value(self, C1, C2):
        return float(np.sum(C1 * (self.A1 @ C1)) + np.sum(C2 * (self.A2 @ C2)))

    def euclidean_gradient(self, C1, C2):
        return 2.0 * self.A1 @ C1, 2.0 * self.A2 @ C2

    def euclidean_hessian(self, C1, C2):
        N1, N2 = C1.shape[1], C2.shape[1]
        n1, n2 = C1.size, C2.size
        H = np.zeros((n1 + n2, n1 + n2))
        if n1:
            H[:n1, :n1] = kron(np.eye(N1), 2.0 * self.A1)
        if n2:
            H[n1:, n1:] = kron(np.eye(N2), 2.0 * self.A2)
        return H
