"""Reaction-force laws. Pure covector-valued formulas; multipliers come from the solver."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import (
    HolonomicConstraints,
    PfaffianConstraints,
    as_velocity,
)
from .errors import ConfigurationError


class ReactionModel(enum.Enum):
    IDEAL_DALEMBERT = "ideal"
    APPELL_CHETAEV = "appell_chetaev"
    VAKONOMIC = "vakonomic"

    @classmethod
    def parse(cls, name) -> "ReactionModel":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "ideal": cls.IDEAL_DALEMBERT,
            "ideal_dalembert": cls.IDEAL_DALEMBERT,
            "dalembert": cls.IDEAL_DALEMBERT,
            "idealdalembert": cls.IDEAL_DALEMBERT,
            "appell_chetaev": cls.APPELL_CHETAEV,
            "appellchetaev": cls.APPELL_CHETAEV,
            "appell": cls.APPELL_CHETAEV,
            "vakonomic": cls.VAKONOMIC,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigurationError(f"unknown reaction model {name!r}") from None

    def accepts(self, C) -> bool:
        if self is ReactionModel.IDEAL_DALEMBERT:
            return isinstance(C, (HolonomicConstraints, PfaffianConstraints))
        return True


@dataclass
class MultiplierState:
    """lambda (ideal / Appell-Chetaev) or mu with its rate (vakonomic)."""

    values: np.ndarray
    rates: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.rates is not None:
            self.rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
            if self.rates.shape != self.values.shape:
                raise ConfigurationError("multiplier values and rates differ in length")


def ideal_reaction(C, q, lam) -> np.ndarray:
    """R_i = lambda^a dF_a/dq^i (holonomic) or lambda^a omega_ai (Pfaffian)."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if isinstance(C, HolonomicConstraints):
        B = C.jacobian(q)
    elif isinstance(C, PfaffianConstraints):
        B = C.omega(q)
    else:
        raise ConfigurationError("ideal d'Alembert reactions need holonomic or Pfaffian constraints")
    return lam @ B


def appell_chetaev_reaction(C, q, v, lam) -> np.ndarray:
    """R_i = lambda^a dF_a/dv^i."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return lam @ as_velocity(C).Fv(q, v)


def vakonomic_reaction(C, q, v, a, mu, mudot) -> np.ndarray:
    """Reaction of the constrained variational principle.

    R_i = mu^a dF_a/dq^i - mudot^a dF_a/dv^i
          - mu^a (d2F_a/dv^i dq^j) v^j - mu^a (d2F_a/dv^i dv^j) a^j
    """
    Cv = as_velocity(C)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    mudot = np.atleast_1d(np.asarray(mudot, dtype=float))
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    return (
        mu @ Cv.Fq(q, v)
        - mudot @ Cv.Fv(q, v)
        - np.einsum("a,aij,j->i", mu, Cv.Fvq(q, v), v)
        - np.einsum("a,aij,j->i", mu, Cv.Fvv(q, v), a)
    )


def pfaffian_vakonomic_reaction(P: PfaffianConstraints, q, v, mu, mudot) -> np.ndarray:
    """Closed form for homogeneous Pfaffian constraints:
    R_i = mu^a (d omega_aj/dq^i - d omega_ai/dq^j) v^j - mudot^a omega_ai.
    """
    dw = P.omega_derivative(q)  # dw[a, i, j] = d omega_ai / dq^j
    curl = np.transpose(dw, (0, 2, 1)) - dw
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    mudot = np.atleast_1d(np.asarray(mudot, dtype=float))
    return np.einsum("a,aij,j->i", mu, curl, np.asarray(v, dtype=float)) - mudot @ P.omega(q)


def reaction_power(R, v) -> float:
    return float(np.asarray(R, dtype=float) @ np.asarray(v, dtype=float))
