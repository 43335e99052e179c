"""Unrestricted Hartree-Fock energy model on a pair of Grassmannians.

Two-electron integrals use the index order ``g[i, j, k, l] = <ij|kl>``:
indices ``i, k`` belong to electron 1 and ``j, l`` to electron 2.  In
chemists' notation this is ``(ik|jl)``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .manifold import MetricBasis

SYMMETRY_TOL = 1e-12


def eightfold_images(i, j, k, l):
    """All index tuples equivalent to ``(i, j, k, l)`` for real orbitals."""
    base = [(i, j, k, l), (k, j, i, l), (i, l, k, j), (k, l, i, j)]
    return set(base) | {(b, a, d, c) for a, b, c, d in base}


def symmetry_violation(g):
    """Largest deviation of ``g`` from 8-fold symmetry, with its index."""
    perms = [(2, 1, 0, 3), (0, 3, 2, 1), (1, 0, 3, 2)]
    worst, where = 0.0, None
    for perm in perms:
        diff = np.abs(g - g.transpose(perm))
        if diff.size and diff.max() > worst:
            worst = float(diff.max())
            where = np.unravel_index(np.argmax(diff), diff.shape)
    return worst, where


@dataclass(frozen=True, eq=False)
class IntegralSet:
    """Problem data: overlap, core Hamiltonian, two-electron tensor (hartree)."""
    S: np.ndarray
    h: np.ndarray
    g: np.ndarray
    e_nuc: float
    n_alpha: int
    n_beta: int
    metric: MetricBasis = field(init=False, repr=False)

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        h = np.array(self.h, dtype=float)
        g = np.array(self.g, dtype=float)
        d = S.shape[0]
        if S.shape != (d, d) or h.shape != (d, d) or g.shape != (d,) * 4:
            raise ShapeError(f"inconsistent integral shapes S{S.shape} h{h.shape} g{g.shape}")
        if not (0 < self.n_alpha <= d and 0 <= self.n_beta <= d):
            raise DomainError(f"electron counts na={self.n_alpha} nb={self.n_beta} invalid for d={d}")
        asym = np.abs(h - h.T).max()
        if asym > SYMMETRY_TOL:
            raise DomainError(f"h is not symmetric (max deviation {asym:.3e})")
        worst, where = symmetry_violation(g)
        if worst > SYMMETRY_TOL:
            idx = tuple(int(x) + 1 for x in where)
            raise DomainError(f"g violates 8-fold symmetry at {idx} by {worst:.3e}")
        for name, arr in (("S", S), ("h", h), ("g", g)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} has non-finite entries")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "e_nuc", float(self.e_nuc))
        object.__setattr__(self, "metric", MetricBasis.from_matrix(S))

    @property
    def d(self):
        return self.S.shape[0]


@dataclass(frozen=True, eq=False)
class SpinPair:
    C_alpha: np.ndarray
    C_beta: np.ndarray

    def __iter__(self):
        return iter((self.C_alpha, self.C_beta))


def density(C):
    return C @ C.T


def coulomb(P, g):
    return np.einsum("ikjl,kl->ij", g, P)


def exchange(P, g):
    return np.einsum("ijkl,kl->ij", g, P)


def fock(P_alpha, P_beta, spin, ints: IntegralSet):
    if spin not in ("alpha", "beta"):
        raise ValueError(f"spin must be 'alpha' or 'beta', got {spin!r}")
    P_same = P_alpha if spin == "alpha" else P_beta
    return ints.h + coulomb(P_alpha + P_beta, ints.g) - exchange(P_same, ints.g)


def fock_pair(P_alpha, P_beta, ints: IntegralSet):
    J = coulomb(P_alpha + P_beta, ints.g)
    return (ints.h + J - exchange(P_alpha, ints.g),
            ints.h + J - exchange(P_beta, ints.g))


def electronic_energy(pair, ints: IntegralSet) -> float:
    Ca, Cb = pair
    Pa, Pb = density(Ca), density(Cb)
    Fa, Fb = fock_pair(Pa, Pb, ints)
    return 0.5 * float(np.sum((Pa + Pb) * ints.h + Pa * Fa + Pb * Fb))


def energy(pair, ints: IntegralSet) -> float:
    """Total energy in hartree, nuclear repulsion included."""
    return electronic_energy(pair, ints) + ints.e_nuc


def euclidean_gradient(pair, ints: IntegralSet):
    Ca, Cb = pair
    Fa, Fb = fock_pair(density(Ca), density(Cb), ints)
    return 2.0 * Fa @ Ca, 2.0 * Fb @ Cb


def _pack(T):
    """Map a ``T[p, q, r, s]`` tensor onto ``H[p + d q, r + d s]``."""
    d1, n1, d2, n2 = T.shape
    return T.transpose(1, 0, 3, 2).reshape(n1 * d1, n2 * d2)


def _same_spin_einsum(C, F, g):
    d, N = C.shape
    # 2 F_pr delta_qs + 2 sum_ij C_iq C_js (2 g_pjir - g_pijr - g_pirj)
    T = np.einsum("iq,js,pjir->pqrs", C, C, 2.0 * g)
    T -= np.einsum("iq,js,pijr->pqrs", C, C, g)
    T -= np.einsum("iq,js,pirj->pqrs", C, C, g)
    T *= 2.0
    T += 2.0 * np.einsum("pr,qs->pqrs", F, np.eye(N))
    return _pack(T)


def _mixed_spin_einsum(Ca, Cb, g):
    # H_ba[r + d s, p + d q] = 4 sum_ij Ca_iq Cb_js g_pjir
    T = 4.0 * np.einsum("iq,js,pjir->rspq", Ca, Cb, g)
    return _pack(T)


def _same_spin_loop(C, F, g):
    d, N = C.shape
    H = np.zeros((d * N, d * N))
    for s in range(N):
        for r in range(d):
            for q in range(N):
                for p in range(d):
                    if s == q:
                        val = 2.0 * F[p, r]
                        val -= 2.0 * C[:, q] @ (g[p, :, r, :] - g[p, r, :, :].T) @ C[:, q]
                    else:
                        M = 2.0 * g[p, :, :, r].T - g[p, :, :, r] - g[p, :, r, :]
                        val = 2.0 * C[:, q] @ M @ C[:, s]
                    H[r + d * s, p + d * q] = val
    return H


def _mixed_spin_loop(Ca, Cb, g):
    d, Na = Ca.shape
    Nb = Cb.shape[1]
    H = np.zeros((d * Nb, d * Na))
    for s in range(Nb):
        for r in range(d):
            for q in range(Na):
                for p in range(d):
                    # sum_ij 4 Ca[i, q] Cb[j, s] g[p, j, i, r]
                    H[r + d * s, p + d * q] = 4.0 * Cb[:, s] @ g[p, :, :, r] @ Ca[:, q]
    return H


def euclidean_hessian(pair, ints: IntegralSet, method="einsum"):
    """Second derivatives of the energy in vectorized block form.

    Returns ``[[H_aa, H_ba.T], [H_ba, H_bb]]`` of size ``d Na + d Nb``,
    columns ordered by column-major vectorization of ``(C_alpha, C_beta)``.
    ``method="loop"`` follows the explicit index loops and serves as a
    cross-check for the default contraction.
    """
    Ca, Cb = pair
    Fa, Fb = fock_pair(density(Ca), density(Cb), ints)
    if method == "einsum":
        same, mixed = _same_spin_einsum, _mixed_spin_einsum
    elif method == "loop":
        same, mixed = _same_spin_loop, _mixed_spin_loop
    else:
        raise ValueError(f"unknown Hessian method {method!r}")
    Haa = same(Ca, Fa, ints.g)
    Hbb = same(Cb, Fb, ints.g)
    Hba = mixed(Ca, Cb, ints.g)
    return np.block([[Haa, Hba.T], [Hba, Hbb]])


class HFCost:
    """Energy of the UHF problem as a cost model over ``(C_alpha, C_beta)``."""

    def __init__(self, ints: IntegralSet, hessian_method="einsum"):
        self.ints = ints
        self.hessian_method = hessian_method

    @property
    def metrics(self):
        return self.ints.metric, self.ints.metric

    def value(self, C1, C2):
        return energy((C1, C2), self.ints)

    def euclidean_gradient(self, C1, C2):
        return euclidean_gradient((C1, C2), self.ints)

    def euclidean_hessian(self, C1, C2):
        return euclidean_hessian((C1, C2), self.ints, method=self.hessian_method)


def core_orbitals(ints: IntegralSet):
    """Generalized eigenvectors of ``(h, S)``, ascending, S-orthonormal."""
    from scipy import linalg
    w, V = linalg.eigh(ints.h, ints.S)
    return w, V


def random_integral_set(d, n_alpha, n_beta, seed, n_factors=None, overlap_scale=0.1,
                        g_scale=0.5, e_nuc=0.0) -> IntegralSet:
    """Synthetic but physically shaped integrals for tests and demos.

    ``g[i, j, k, l] = sum_m B_m[i, k] B_m[j, l]`` with symmetric ``B_m``,
    which has 8-fold symmetry and a positive semidefinite Coulomb matrix.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d)) * overlap_scale
    S = np.eye(d) + 0.5 * (A + A.T)
    # keep S comfortably SPD
    w = np.linalg.eigvalsh(S)
    if w[0] < 0.5:
        S += (0.5 - w[0]) * np.eye(d)
    X = rng.standard_normal((d, d)) * 0.3
    h = np.diag(np.linspace(-2.0, 1.0, d)) + 0.5 * (X + X.T)
    n_factors = d if n_factors is None else n_factors
    B = rng.standard_normal((n_factors, d, d))
    B = 0.5 * (B + B.transpose(0, 2, 1)) * np.sqrt(g_scale / n_factors)
    g = np.einsum("mik,mjl->ijkl", B, B)
    return IntegralSet(S, h, g, e_nuc, n_alpha, n_beta)
