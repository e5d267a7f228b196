"""
Gramians, steady-state cost, Frechet derivatives and stationarity residuals
of a linear coherent observer.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from cqf_errors import DimensionMismatch
from filter_model import ObserverSpec, StateSpace, build_ito
from matops import (
    DEFAULT_HURWITZ_MARGIN,
    ale_residual,
    frob_inner,
    solve_ale,
    symmetrize,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GramianSet:
    """Controllability Gramian P, observability Gramian Q and Hankelian E = QP"""

    P: np.ndarray
    Q: np.ndarray
    E: np.ndarray
    n: int

    @property
    def P11(self):
        return self.P[: self.n, : self.n]

    @property
    def P12(self):
        return self.P[: self.n, self.n :]

    @property
    def P22(self):
        return self.P[self.n :, self.n :]

    @property
    def Q11(self):
        return self.Q[: self.n, : self.n]

    @property
    def Q12(self):
        return self.Q[: self.n, self.n :]

    @property
    def Q22(self):
        return self.Q[self.n :, self.n :]

    @property
    def E11(self):
        return self.E[: self.n, : self.n]

    @property
    def E12(self):
        return self.E[: self.n, self.n :]

    @property
    def E21(self):
        return self.E[self.n :, : self.n]

    @property
    def E22(self):
        return self.E[self.n :, self.n :]


@dataclass(frozen=True, eq=False)
class GradientReport:
    """Cost, derivatives with respect to (r, N1) and the stationarity residuals"""

    cost: float
    dZ_dr: np.ndarray
    dZ_dN1: np.ndarray
    stat1_residual: np.ndarray
    stat2_residual: np.ndarray

    @property
    def grad_norm(self) -> float:
        return float(np.hypot(np.linalg.norm(self.dZ_dr), np.linalg.norm(self.dZ_dN1)))


@dataclass(frozen=True)
class StationarityVerdict:
    stationary: bool
    stat1_norm: float
    stat2_norm: float
    scale: float
    tol: float

    @property
    def label(self) -> str:
        return "stationary" if self.stationary else "not_stationary"


def gramians(
    ss: StateSpace, hurwitz_margin: float = DEFAULT_HURWITZ_MARGIN
) -> GramianSet:
    """
    Solve the controllability and observability ALEs of the cascade.

    Raises:
        NotHurwitz: if the composite matrix is not Hurwitz
        SingularSystem: if a Lyapunov solve fails
    """
    P = solve_ale(ss.calA, ss.calB @ ss.calB.T, hurwitz_margin)
    Q = solve_ale(ss.calA.T, ss.calC.T @ ss.calC, hurwitz_margin)
    return GramianSet(P=P, Q=Q, E=Q @ P, n=ss.n)


def gramian_residuals(ss: StateSpace, g: GramianSet) -> Dict[str, float]:
    """Relative residuals of both Gramian ALEs."""
    return {
        "P": ale_residual(ss.calA, g.P, ss.calB @ ss.calB.T),
        "Q": ale_residual(ss.calA.T, g.Q, ss.calC.T @ ss.calC),
    }


def cost(ss: StateSpace, g: GramianSet) -> float:
    """Steady-state mean square estimation error Tr(C P C^T)."""
    return float(np.trace(ss.calC @ g.P @ ss.calC.T))


def dual_cost(ss: StateSpace, g: GramianSet) -> float:
    """Same cost through the observability Gramian, <Q, B B^T>."""
    return frob_inner(g.Q, ss.calB @ ss.calB.T)


def ccr_residual(ss: StateSpace) -> np.ndarray:
    """A Theta + Theta A^T + B J B^T for the cascade; zero when the CCRs are preserved."""
    return (
        ss.calA @ ss.blockTheta
        + ss.blockTheta @ ss.calA.T
        + ss.calB @ ss.blockJ @ ss.calB.T
    )


def quantum_covariance(ss: StateSpace, g: GramianSet) -> np.ndarray:
    """Second-moment matrix P + i Theta of the invariant Gaussian state."""
    return g.P + 1j * ss.blockTheta


def uncertainty_margin(ss: StateSpace, g: GramianSet) -> float:
    """Smallest eigenvalue of the Hermitian matrix P + i Theta (nonnegative for a valid state)."""
    return float(np.min(np.linalg.eigvalsh(quantum_covariance(ss, g))))


def gradient(ss: StateSpace, g: GramianSet, obs: ObserverSpec) -> GradientReport:
    """
    Frechet derivatives of the cost with respect to r and N1.

    dZ_dr = -4 S(vartheta E22). The N1 derivative is
    4 Pi((C E21^T + B^T Q12 + b1^T Q22) vartheta - J b1^T E22)
    - 8 Pi J Pi^T N1 S(vartheta E22); the second term vanishes wherever the
    first stationarity condition holds.

    Raises:
        DimensionMismatch: if the observer does not match the state space
    """
    if obs.vartheta.shape != (ss.nu, ss.nu) or obs.Pi.shape[1] != ss.C.shape[0]:
        raise DimensionMismatch(
            "Observer does not match the state space",
            details=f"nu={ss.nu}, m={ss.C.shape[0]}, Pi {obs.Pi.shape}",
        )
    vartheta, Pi, N1 = obs.vartheta, obs.Pi, obs.N1
    J = build_ito(Pi.shape[1])

    stat1 = symmetrize(vartheta @ g.E22)
    coupling = ss.C @ g.E21.T + ss.B.T @ g.Q12 + ss.b1.T @ g.Q22
    stat2 = Pi @ coupling @ vartheta - Pi @ J @ ss.b1.T @ g.E22

    dZ_dr = -4 * stat1
    dZ_dN1 = 4 * stat2 - 8 * Pi @ J @ Pi.T @ N1 @ stat1

    return GradientReport(
        cost=cost(ss, g),
        dZ_dr=dZ_dr,
        dZ_dN1=dZ_dN1,
        stat1_residual=stat1,
        stat2_residual=stat2,
    )


def check_stationarity(report: GradientReport, tol: float) -> StationarityVerdict:
    """Both residual norms within tol * (1 + |cost|)."""
    scale = 1.0 + abs(report.cost)
    stat1_norm = float(np.linalg.norm(report.stat1_residual))
    stat2_norm = float(np.linalg.norm(report.stat2_residual))
    stationary = stat1_norm <= tol * scale and stat2_norm <= tol * scale
    logger.debug(
        f"Stationarity check: stat1={stat1_norm:.3e}, stat2={stat2_norm:.3e}, "
        f"bound={tol * scale:.3e}"
    )
    return StationarityVerdict(
        stationary=stationary,
        stat1_norm=stat1_norm,
        stat2_norm=stat2_norm,
        scale=scale,
        tol=tol,
    )


def cascade_increment(
    ss: StateSpace,
    obs: ObserverSpec,
    dr: np.ndarray,
    dN1: np.ndarray,
    second_order: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Change (dA, dB) of the cascade matrices when (r, N1) moves to (r + dr, N1 + dN1).

    The observer drift is quadratic in N1; with second_order the term
    2 vartheta dN1^T K dN1 (K = Pi J Pi^T) is kept and the increment is exact,
    without it the result is the directional derivative.
    """
    n, nu, m, mu = ss.n, ss.nu, ss.C.shape[0], obs.mu
    vartheta, Pi, N1 = obs.vartheta, obs.Pi, obs.N1
    K = Pi @ build_ito(m) @ Pi.T
    da = dr + dN1.T @ K @ N1 + N1.T @ K @ dN1
    if second_order:
        da = da + dN1.T @ K @ dN1
    da = 2 * vartheta @ da
    db1 = 2 * vartheta @ dN1.T @ Pi
    dcalA = np.block([[np.zeros((n, n)), np.zeros((n, nu))], [db1 @ ss.C, da]])
    dcalB = np.block([[np.zeros((n, m)), np.zeros((n, mu))], [db1, np.zeros((nu, mu))]])
    return dcalA, dcalB


def cost_change(
    ss: StateSpace,
    P: np.ndarray,
    obs: ObserverSpec,
    new_ss: StateSpace,
    new_obs: ObserverSpec,
    hurwitz_margin: float = DEFAULT_HURWITZ_MARGIN,
) -> float:
    """
    Exact cost difference Z(new) - Z(old) from one Lyapunov solve.

    The increment dP = P(new) - P(old) solves
    calA' dP + dP calA'^T + dA P + P dA^T + dB B^T + B dB^T + dB dB^T = 0,
    where calA' is the new drift and (dA, dB) the exact cascade increment.
    The difference is accurate relative to its own size, not to the cost.

    Raises:
        NotHurwitz: if the new cascade is not Hurwitz
    """
    dcalA, dcalB = cascade_increment(ss, obs, new_obs.r - obs.r, new_obs.N1 - obs.N1)
    forcing = (
        dcalA @ P
        + P @ dcalA.T
        + dcalB @ ss.calB.T
        + ss.calB @ dcalB.T
        + dcalB @ dcalB.T
    )
    dP = solve_ale(new_ss.calA, forcing, hurwitz_margin)
    return frob_inner(new_ss.calC.T @ new_ss.calC, dP)


def analyze(
    ss: StateSpace, obs: ObserverSpec, hurwitz_margin: float = DEFAULT_HURWITZ_MARGIN
) -> Tuple[GramianSet, GradientReport]:
    """Gramians and gradient report in one call."""
    g = gramians(ss, hurwitz_margin)
    return g, gradient(ss, g, obs)


def model_cost(model) -> float:
    """Cost of a CQFModel from the controllability Gramian alone."""
    ss = model.assemble()
    P = solve_ale(ss.calA, ss.calB @ ss.calB.T, model.hurwitz_margin)
    return float(np.trace(ss.calC @ P @ ss.calC.T))
