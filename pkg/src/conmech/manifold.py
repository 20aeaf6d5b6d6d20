"""Configuration-space geometry: kinematical metrics and their Christoffel symbols."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from . import _fd
from .errors import ConfigurationError, GeometryError

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class ConfigurationSpace:
    dimension: int
    labels: tuple = ()

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigurationError("configuration space dimension must be >= 1")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"q{i + 1}" for i in range(self.dimension)))
        if len(self.labels) != self.dimension:
            raise ConfigurationError(
                f"{len(self.labels)} coordinate labels for a {self.dimension}-dimensional space"
            )


class MetricField:
    """Position-dependent symmetric positive-definite metric G_ab(q).

    ``derivative(q)`` returns dG[a, b, c] = dG_ab/dq^c. When no analytic
    derivative is given it is computed by central differences with step
    ``h * max(1, |q^c|)``.
    """

    def __init__(self, dimension: int, evaluate: Callable, derivative: Optional[Callable] = None, h: float = _fd.BASE_STEP):
        if derivative is None and not h > 0:
            raise ConfigurationError("finite-difference step must be positive")
        self.dimension = dimension
        self._evaluate = evaluate
        self._derivative = derivative
        self.h = h
        self.is_constant = False

    @property
    def provenance(self) -> str:
        return "analytic" if self._derivative is not None else "finite-difference"

    @classmethod
    def constant(cls, matrix) -> "MetricField":
        G = np.array(matrix, dtype=float)
        k = G.shape[0]
        zeros = np.zeros((k, k, k))
        G.setflags(write=False)
        field = cls(k, lambda q: G, lambda q: zeros)
        field._check(G, np.zeros(k))
        scipy.linalg.cho_factor(G)
        field.is_constant = True
        field._G = G
        return field

    def __call__(self, q) -> np.ndarray:
        if self.is_constant:
            return self._G
        G = np.asarray(self._evaluate(np.asarray(q, dtype=float)), dtype=float)
        return self._check(G, q)

    def _check(self, G, q):
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise GeometryError(f"metric evaluator returned shape {G.shape}", point=q)
        if np.max(np.abs(G - G.T), initial=0.0) >= SYMMETRY_TOL * max(1.0, np.max(np.abs(G))):
            raise GeometryError("metric is not symmetric", point=np.array(q, dtype=float))
        return G

    def factor(self, q):
        """Cholesky factor of G(q); raises GeometryError where G is not positive definite."""
        G = self(q)
        try:
            return scipy.linalg.cho_factor(G)
        except np.linalg.LinAlgError as exc:
            raise GeometryError(f"metric is singular or indefinite at q={np.asarray(q)}", point=np.array(q)) from exc

    def inverse(self, q) -> np.ndarray:
        c = self.factor(q)
        return scipy.linalg.cho_solve(c, np.eye(c[0].shape[0]))

    def derivative(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._derivative is not None:
            return np.asarray(self._derivative(q), dtype=float)
        return _fd.jacobian(self._evaluate, q, self.h)


@dataclass
class ParticleSystemSpec:
    """N point masses in n-dimensional space embedded through a chart q -> (r_1 .. r_N).

    ``positions(q)`` returns an (N, n) array and ``jacobians(q)`` an (N, n, k)
    array of dr_A/dq.
    """

    masses: Sequence[float]
    spatial_dim: int
    dimension: int
    positions: Callable
    jacobians: Callable
    spatial_metric: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        if np.any(self.masses <= 0):
            raise ConfigurationError("particle masses must be positive")
        if self.spatial_metric is None:
            self.spatial_metric = np.eye(self.spatial_dim)

    def kinetic_energy(self, q, v) -> float:
        """Kinetic energy summed over particles, through the embedding Jacobians."""
        Jr = self._checked_jacobians(q)
        vel = Jr @ np.asarray(v, dtype=float)
        g = self.spatial_metric
        return 0.5 * float(np.einsum("a,ai,ij,aj->", self.masses, vel, g, vel))

    def _checked_jacobians(self, q):
        Jr = np.asarray(self.jacobians(np.asarray(q, dtype=float)), dtype=float)
        expected = (self.masses.size, self.spatial_dim, self.dimension)
        if Jr.shape != expected:
            raise ConfigurationError(f"particle Jacobians have shape {Jr.shape}, expected {expected}")
        return Jr


def build_particle_metric(spec: ParticleSystemSpec) -> MetricField:
    """G_ab = sum_A m_A (dr_A/dq^a) . (dr_A/dq^b)."""
    g = spec.spatial_metric
    m = spec.masses

    def evaluate(q):
        Jr = spec._checked_jacobians(q)
        G = np.einsum("A,Aia,ij,Ajb->ab", m, Jr, g, Jr)
        return 0.5 * (G + G.T)

    return MetricField(spec.dimension, evaluate)


def christoffel(metric: MetricField, q) -> np.ndarray:
    """Gamma[a, b, c] = 1/2 G^{ai} (G_ib,c + G_ic,b - G_bc,i)."""
    q = np.asarray(q, dtype=float)
    Ginv = metric.inverse(q)
    dG = metric.derivative(q)
    # dG[i, b, c] = G_ib,c
    lowered = dG + np.transpose(dG, (0, 2, 1)) - np.transpose(dG, (2, 0, 1))
    gamma = 0.5 * np.einsum("ai,ibc->abc", Ginv, lowered)
    return 0.5 * (gamma + np.transpose(gamma, (0, 2, 1)))


def covariant_acceleration(metric: MetricField, q, v, a) -> np.ndarray:
    """D^2 q^a/Dt^2 = a^a + Gamma^a_bc v^b v^c."""
    v = np.asarray(v, dtype=float)
    return np.asarray(a, dtype=float) + np.einsum("abc,b,c->a", christoffel(metric, q), v, v)
