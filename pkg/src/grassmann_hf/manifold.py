"""Grassmann manifolds as quotients of S-metric Stiefel manifolds.

A point ``[C]`` is stored through a representative ``C`` (d x N) with
``C.T @ S @ C = I``; tangent vectors are horizontal lifts ``eta`` with
``C.T @ S @ eta = 0``.  Inner products are ``tr(eta.T @ S @ mu)``.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import DomainError, ShapeError, UsageError
from .matops import ThinSvd, spd_factor, thin_svd

FEASIBILITY_TOL = 1e-10
HORIZONTAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MetricBasis:
    """SPD metric matrix ``S`` with a factor ``O`` (``O.T S O = I``)."""
    S: np.ndarray
    O: np.ndarray
    O_inv: np.ndarray
    _cho: tuple = field(repr=False)

    @classmethod
    def from_matrix(cls, S):
        S = np.array(S, dtype=float)
        O, O_inv = spd_factor(S)
        # O_inv = L.T, so the Cholesky factor comes for free
        return cls(S, O, O_inv, (O_inv, False))

    @classmethod
    def identity(cls, d):
        return cls.from_matrix(np.eye(d))

    @property
    def dim(self):
        return self.S.shape[0]

    def apply_S_inv(self, X):
        X = np.asarray(X, dtype=float)
        if X.size == 0:
            return X.copy()
        return linalg.cho_solve(self._cho, X)

    def S_inv(self):
        return self.apply_S_inv(np.eye(self.dim))


def feasibility_residual(metric: MetricBasis, C):
    N = C.shape[1]
    return np.linalg.norm(C.T @ metric.S @ C - np.eye(N))


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    """Stiefel representative ``C`` of the class ``[C]``."""
    metric: MetricBasis
    C: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        if C.ndim != 2 or C.shape[0] != self.metric.dim:
            raise ShapeError(f"representative has shape {C.shape}, metric dim {self.metric.dim}")
        if C.shape[1] > C.shape[0]:
            raise ShapeError(f"need N <= d, got {C.shape}")
        object.__setattr__(self, "C", C)
        if self.check:
            res = feasibility_residual(self.metric, C)
            if not res < FEASIBILITY_TOL:
                raise DomainError(f"C^T S C deviates from identity by {res:.3e}")

    @property
    def N(self):
        return self.C.shape[1]

    @property
    def d(self):
        return self.C.shape[0]

    def projector(self):
        """``C C^T S``; equal for all representatives of the same class."""
        return self.C @ (self.C.T @ self.metric.S)

    def same_class(self, other, tol=1e-8):
        return np.linalg.norm(self.projector() - other.projector()) < tol


@dataclass(frozen=True, eq=False)
class HorizontalTangent:
    base: GrassmannPoint
    eta: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if eta.shape != self.base.C.shape:
            raise ShapeError(f"tangent shape {eta.shape} != point shape {self.base.C.shape}")
        object.__setattr__(self, "eta", eta)
        if self.check:
            res = horizontality_residual(self.base, eta)
            if not res < HORIZONTAL_TOL * max(1.0, np.linalg.norm(eta)):
                raise DomainError(f"tangent is not horizontal (|C^T S eta| = {res:.3e})")

    def __neg__(self):
        return HorizontalTangent(self.base, -self.eta, check=False)

    def scaled(self, a):
        return HorizontalTangent(self.base, a * self.eta, check=False)

    def __add__(self, other):
        _same_base(self.base, other.base)
        return HorizontalTangent(self.base, self.eta + other.eta, check=False)

    def __sub__(self, other):
        _same_base(self.base, other.base)
        return HorizontalTangent(self.base, self.eta - other.eta, check=False)


@dataclass(frozen=True, eq=False)
class ProductPoint:
    first: GrassmannPoint
    second: GrassmannPoint

    def __iter__(self):
        return iter((self.first, self.second))


def horizontality_residual(pt: GrassmannPoint, eta):
    return np.linalg.norm(pt.C.T @ pt.metric.S @ eta)


def grassmann_dim(N, d):
    return N * (d - N)


def _same_base(a: GrassmannPoint, b: GrassmannPoint):
    if a is b:
        return
    if a.metric is not b.metric or a.C.shape != b.C.shape or not np.array_equal(a.C, b.C):
        raise UsageError("tangent vectors live at different base points")


def project_stiefel_tangent(pt: GrassmannPoint, mu):
    """Orthogonal projection onto ``T_C St``: ``C^T S nu`` antisymmetric."""
    C, S = pt.C, pt.metric.S
    CtSmu = C.T @ S @ mu
    return mu - C @ (0.5 * (CtSmu + CtSmu.T))


def _horizontal(pt: GrassmannPoint, mu):
    # (I - C C^T S) mu when C^T S C = I; the Gram solve keeps the result
    # exactly horizontal at slightly drifted representatives, which would
    # otherwise feed the drift back into every step
    C = pt.C
    if C.shape[1] == 0:
        return mu.copy()
    SC = pt.metric.S @ C
    gram = C.T @ SC
    return mu - C @ linalg.solve(gram, SC.T @ mu, assume_a="pos")


def project_horizontal(pt: GrassmannPoint, mu) -> HorizontalTangent:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != pt.C.shape:
        raise ShapeError(f"shape {mu.shape} does not match point {pt.C.shape}")
    return HorizontalTangent(pt, _horizontal(pt, mu), check=False)


def riemannian_gradient(pt: GrassmannPoint, euc_grad) -> HorizontalTangent:
    """Horizontal lift of the gradient from the Euclidean one."""
    return project_horizontal(pt, pt.metric.apply_S_inv(euc_grad))


def inner(eta: HorizontalTangent, mu: HorizontalTangent) -> float:
    _same_base(eta.base, mu.base)
    return float(np.sum(eta.eta * (eta.base.metric.S @ mu.eta)))


def norm(eta: HorizontalTangent) -> float:
    return float(np.sqrt(max(inner(eta, eta), 0.0)))


class Geodesic:
    """Geodesic ``t -> exp_[C](t eta)`` with its parallel transport.

    The thin SVD of ``O^{-1} eta`` is computed once and shared between
    the point, velocity and transport evaluations.
    """

    def __init__(self, direction: HorizontalTangent, svd: Optional[ThinSvd] = None):
        self.start = direction.base
        self.direction = direction
        metric = self.start.metric
        self.svd = svd if svd is not None else thin_svd(metric.O_inv @ direction.eta)
        self._OU = metric.O @ self.svd.U
        self._CVt = self.start.C @ self.svd.V.T

    def point(self, t, check=False) -> GrassmannPoint:
        U, D, V = self.svd
        C_t = (self._CVt * np.cos(t * D) + self._OU * np.sin(t * D)) @ V
        return GrassmannPoint(self.start.metric, C_t, check=check)

    def velocity_matrix(self, t):
        """``gamma'(t)``, i.e. the transport of the initial direction."""
        U, D, V = self.svd
        return ((-self._CVt * np.sin(t * D) + self._OU * np.cos(t * D)) * D) @ V

    def transport_matrix(self, mu, t):
        U, D, V = self.svd
        a = U.T @ (self.start.metric.O_inv @ mu)
        a_rot = (-self._CVt * np.sin(t * D)) @ a + (self._OU * (np.cos(t * D) - 1.0)) @ a
        return mu + a_rot

    def transport(self, mu: HorizontalTangent, t, end: Optional[GrassmannPoint] = None) -> HorizontalTangent:
        _same_base(self.start, mu.base)
        if end is None:
            end = self.point(t)
        return HorizontalTangent(end, self.transport_matrix(mu.eta, t), check=False)


def geodesic(pt: GrassmannPoint, eta: HorizontalTangent, t) -> GrassmannPoint:
    _same_base(pt, eta.base)
    if t == 0:
        return GrassmannPoint(pt.metric, pt.C.copy(), check=False)
    return Geodesic(eta).point(t)


def parallel_transport(pt: GrassmannPoint, direction: HorizontalTangent,
                       mu: HorizontalTangent, t) -> HorizontalTangent:
    _same_base(pt, direction.base)
    g = Geodesic(direction)
    return g.transport(mu, t)


def product_inner(p: ProductPoint, etas, mus) -> float:
    if len(etas) != 2 or len(mus) != 2:
        raise UsageError("product tangents need exactly two components")
    for base, e, m in zip(p, etas, mus):
        _same_base(base, e.base)
        _same_base(base, m.base)
    return inner(etas[0], mus[0]) + inner(etas[1], mus[1])


def product_norm(p: ProductPoint, etas) -> float:
    return float(np.sqrt(max(product_inner(p, etas, etas), 0.0)))


def product_exp(p: ProductPoint, etas, t) -> ProductPoint:
    if len(etas) != 2:
        raise UsageError("product tangents need exactly two components")
    return ProductPoint(geodesic(p.first, etas[0], t), geodesic(p.second, etas[1], t))


def reorthonormalize(pt: GrassmannPoint) -> GrassmannPoint:
    """Restore ``C^T S C = I`` without changing the spanned subspace.

    Symmetric (Loewdin) orthonormalization: ``C (C^T S C)^{-1/2}``.
    """
    C = pt.C
    if C.shape[1] == 0:
        return GrassmannPoint(pt.metric, C.copy(), check=False)
    M = C.T @ pt.metric.S @ C
    M = 0.5 * (M + M.T)
    w, Q = np.linalg.eigh(M)
    if w[0] <= 1e-14 * max(1.0, w[-1]):
        raise DomainError(f"representative is rank deficient (Gram eigenvalue {w[0]:.3e})")
    C_new = C @ (Q / np.sqrt(w)) @ Q.T
    return GrassmannPoint(pt.metric, C_new, check=False)


def random_point(metric: MetricBasis, N, seed) -> GrassmannPoint:
    rng = np.random.default_rng(seed)
    d = metric.dim
    Q, _ = np.linalg.qr(rng.standard_normal((d, N)))
    return reorthonormalize(GrassmannPoint(metric, metric.O @ Q, check=False))


def random_horizontal(pt: GrassmannPoint, seed) -> HorizontalTangent:
    rng = np.random.default_rng(seed)
    return project_horizontal(pt, rng.standard_normal(pt.C.shape))
