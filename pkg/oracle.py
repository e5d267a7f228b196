"""
Independent checks of the closed-form derivatives: central finite
differences of the cost, directional derivatives through the Gramian
sensitivity ALE, and a numerical form of the Gaussian moment identity.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, Tuple

import numpy as np

from analysis import cascade_increment, gradient, gramians, model_cost
from cqf_errors import DimensionMismatch, InvalidSpec, NotHurwitz, NotHurwitzAfterShrink
from filter_model import CQFModel
from matops import ale_residual, frob_inner, relative_error, solve_ale
from weyl import qcf

DEFAULT_FD_STEP = 1e-6
DEFAULT_MOMENT_STEP = 1e-5
MAX_STEP_SHRINKS = 10
SENSITIVITY_TOL = 1e-9
FD_TOL = 1e-5

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Direction:
    """Perturbation of the observer energy matrix r or the coupling matrix N1"""

    kind: str
    value: np.ndarray

    @classmethod
    def dr(cls, value) -> "Direction":
        return cls("dr", np.asarray(value, dtype=np.float64))

    @classmethod
    def dN1(cls, value) -> "Direction":
        return cls("dN1", np.asarray(value, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class SensitivitySolution:
    direction: Direction
    dP: np.ndarray
    dCost: float
    residual: float


def _perturbation(model: CQFModel, ss, direction: Direction):
    """
    Derivatives of the cascade matrices along one direction.

    Raises:
        DimensionMismatch: if the direction does not match r or N1
        InvalidSpec: if an r direction is not symmetric
    """
    obs = model.observer
    zero_r = np.zeros(obs.r.shape)
    zero_n1 = np.zeros(obs.N1.shape)

    if direction.kind == "dr":
        if direction.value.shape != obs.r.shape:
            raise DimensionMismatch("dr direction must be nu x nu")
        if not np.array_equal(direction.value, direction.value.T):
            raise InvalidSpec(["direction.dr: energy matrix direction must be symmetric"])
        return cascade_increment(ss, obs, direction.value, zero_n1, second_order=False)
    if direction.kind == "dN1":
        if direction.value.shape != obs.N1.shape:
            raise DimensionMismatch("dN1 direction must match N1")
        return cascade_increment(ss, obs, zero_r, direction.value, second_order=False)
    raise ValueError(f"Unknown direction kind {direction.kind!r}")


def sensitivity_directional(model: CQFModel, direction: Direction) -> SensitivitySolution:
    """
    Directional derivative of the cost through the Gramian sensitivity ALE
    calA dP + dP calA^T + (dA P + P dA^T + dB B^T + B dB^T) = 0.

    Raises:
        NotHurwitz: if the cascade is not Hurwitz
        SingularSystem: if a Lyapunov solve fails
    """
    ss = model.assemble()
    P = solve_ale(ss.calA, ss.calB @ ss.calB.T, model.hurwitz_margin)
    dcalA, dcalB = _perturbation(model, ss, direction)
    forcing = dcalA @ P + P @ dcalA.T + dcalB @ ss.calB.T + ss.calB @ dcalB.T
    dP = solve_ale(ss.calA, forcing, model.hurwitz_margin)
    return SensitivitySolution(
        direction=direction,
        dP=dP,
        dCost=frob_inner(ss.calC.T @ ss.calC, dP),
        residual=ale_residual(ss.calA, dP, forcing),
    )


def _r_basis(nu: int) -> Iterator[Tuple[int, int, np.ndarray]]:
    """Symmetric basis of S_nu: e_i e_i^T and e_i e_j^T + e_j e_i^T."""
    for i in range(nu):
        for j in range(i, nu):
            E = np.zeros((nu, nu))
            E[i, j] = 1.0
            E[j, i] = 1.0
            yield i, j, E


def _n1_basis(shape) -> Iterator[Tuple[int, int, np.ndarray]]:
    for i in range(shape[0]):
        for j in range(shape[1]):
            E = np.zeros(shape)
            E[i, j] = 1.0
            yield i, j, E


def _assemble_gradient(
    model: CQFModel, derivative: Callable[[Direction, float], float]
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient matrices from directional derivatives along the basis directions."""
    obs = model.observer
    grad_r = np.zeros((obs.nu, obs.nu))
    for i, j, E in _r_basis(obs.nu):
        value = derivative(Direction.dr(E), obs.r[i, j])
        if i == j:
            grad_r[i, i] = value
        else:
            grad_r[i, j] = grad_r[j, i] = value / 2
    grad_n1 = np.zeros(obs.N1.shape)
    for i, j, E in _n1_basis(obs.N1.shape):
        grad_n1[i, j] = derivative(Direction.dN1(E), obs.N1[i, j])
    return grad_r, grad_n1


def sensitivity_gradient(model: CQFModel) -> Tuple[np.ndarray, np.ndarray]:
    """(dZ_dr, dZ_dN1) assembled from sensitivity-ALE directional derivatives."""
    return _assemble_gradient(
        model, lambda direction, _: sensitivity_directional(model, direction).dCost
    )


def _shifted(model: CQFModel, direction: Direction, t: float) -> CQFModel:
    obs = model.observer
    if direction.kind == "dr":
        return model.with_observer(obs.with_parameters(r=obs.r + t * direction.value))
    return model.with_observer(obs.with_parameters(N1=obs.N1 + t * direction.value))


def central_difference(f: Callable[[float], float], h: float, label: str = "scalar") -> float:
    """
    (f(h) - f(-h)) / 2h for a one-parameter family f(t), halving h while a
    shifted evaluation leaves the Hurwitz region.

    Raises:
        NotHurwitzAfterShrink: if f(+-h) stays non-Hurwitz after MAX_STEP_SHRINKS halvings
    """
    for _ in range(MAX_STEP_SHRINKS + 1):
        try:
            return (f(h) - f(-h)) / (2 * h)
        except NotHurwitz:
            logger.warning(f"Finite-difference step {h:.3e} leaves the Hurwitz region, halving")
            h *= 0.5
    raise NotHurwitzAfterShrink(
        "Finite-difference step could not be made stable",
        details=f"{label} direction after {MAX_STEP_SHRINKS} halvings",
    )


def fd_cost_gradient(
    model: CQFModel, h: float = DEFAULT_FD_STEP
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Central finite differences of the cost over r (symmetric directions) and N1.

    Each entry uses the step h * (1 + |entry|).

    Raises:
        NotHurwitzAfterShrink: if a perturbed model stays non-Hurwitz
    """
    model.assemble()
    return _assemble_gradient(
        model,
        lambda direction, entry: central_difference(
            lambda t: model_cost(_shifted(model, direction, t)),
            h * (1.0 + abs(entry)),
            direction.kind,
        ),
    )


def moment_oracle(
    u: np.ndarray, g, vartheta: np.ndarray, h: float = DEFAULT_MOMENT_STEP
) -> np.ndarray:
    """
    E*(X W_u) from the quasi-characteristic function:
    -i d/dlambda qcf at lambda = [0; u], minus [0; vartheta u] qcf([0; u]).
    """
    u = np.asarray(u, dtype=np.float64)
    point = np.concatenate([np.zeros(g.n), u])
    grad = np.zeros(point.size)
    for k in range(point.size):
        step = np.zeros(point.size)
        step[k] = h
        grad[k] = (qcf(point + step, g.P) - qcf(point - step, g.P)) / (2 * h)
    shift = np.concatenate([np.zeros(g.n), vartheta @ u])
    return -1j * grad - shift * qcf(point, g.P)


@dataclass(frozen=True, eq=False)
class AgreementTable:
    """Closed-form, sensitivity-ALE and finite-difference gradients side by side"""

    closed_form: Tuple[np.ndarray, np.ndarray]
    sensitivity: Tuple[np.ndarray, np.ndarray]
    finite_difference: Tuple[np.ndarray, np.ndarray]
    h: float

    @staticmethod
    def _error(first, second) -> float:
        return relative_error(
            np.concatenate([first[0].ravel(), first[1].ravel()]),
            np.concatenate([second[0].ravel(), second[1].ravel()]),
        )

    @property
    def sensitivity_error(self) -> float:
        return self._error(self.sensitivity, self.closed_form)

    @property
    def fd_error(self) -> float:
        return self._error(self.finite_difference, self.closed_form)

    def passes(self, sensitivity_tol: float = SENSITIVITY_TOL, fd_tol: float = FD_TOL) -> bool:
        return self.sensitivity_error <= sensitivity_tol and self.fd_error <= fd_tol

    def to_dict(self) -> Dict[str, object]:
        def pair(grads):
            return {"dZ_dr": grads[0].tolist(), "dZ_dN1": grads[1].tolist()}

        return {
            "h": self.h,
            "closed_form": pair(self.closed_form),
            "sensitivity": pair(self.sensitivity),
            "finite_difference": pair(self.finite_difference),
            "max_rel_err_sensitivity": self.sensitivity_error,
            "max_rel_err_fd": self.fd_error,
        }


def triple_agreement(model: CQFModel, h: float = DEFAULT_FD_STEP) -> AgreementTable:
    ss = model.assemble()
    report = gradient(ss, gramians(ss, model.hurwitz_margin), model.observer)
    return AgreementTable(
        closed_form=(report.dZ_dr, report.dZ_dN1),
        sensitivity=sensitivity_gradient(model),
        finite_difference=fd_cost_gradient(model, h),
        h=h,
    )
