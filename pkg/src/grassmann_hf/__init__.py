"""Riemannian optimization on products of generalized Grassmannians, applied
to unrestricted Hartree-Fock."""
from .hf import HFCost, IntegralSet, SpinPair, energy, random_integral_set
from .manifold import GrassmannPoint, HorizontalTangent, MetricBasis, ProductPoint
from .optim import HybridConfig, OptTrace, Status, StopCriteria, hybrid, rcg, rgd, rnr
from .baselines import nrlm, scf_diis

__all__ = [
    "HFCost", "IntegralSet", "SpinPair", "energy", "random_integral_set",
    "GrassmannPoint", "HorizontalTangent", "MetricBasis", "ProductPoint",
    "HybridConfig", "OptTrace", "Status", "StopCriteria", "hybrid", "rcg", "rgd", "rnr",
    "nrlm", "scf_diis",
]
