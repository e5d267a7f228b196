"""
Gateaux derivatives of the filtering cost along Weyl variations of the
observer Hamiltonian, K = Re(alpha W_u), and coupling operators,
M = Re(beta W_u), with W_u = exp(i u^T xi).

Both derivatives are evaluated through Gaussian moment identities over the
invariant state of the cascade, whose quasi-characteristic function is
exp(-|lambda|_P^2 / 2).
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from analysis import GramianSet, check_stationarity, gradient, gramians
from cqf_errors import DimensionMismatch, Stat1Violated
from filter_model import CQFModel, ObserverSpec, StateSpace
from matops import symmetrize

# Hamiltonian amplitudes cycled through by the scan
SCAN_ALPHAS = (1.0 + 0.0j, 1.0j, 1.0 + 1.0j)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeylQuery:
    """Amplitudes alpha (Hamiltonian), beta (coupling) and Weyl frequency u"""

    alpha: complex
    beta: np.ndarray
    u: np.ndarray

    def to_dict(self):
        return {
            "alpha": [self.alpha.real, self.alpha.imag],
            "beta_re": self.beta.real.tolist(),
            "beta_im": self.beta.imag.tolist(),
            "u": self.u.tolist(),
        }


@dataclass(frozen=True)
class WeylDerivative:
    dK: float
    dM: float
    gauss_factor: float


@dataclass(frozen=True, eq=False)
class WeylScanReport:
    samples: int
    radius: float
    seed: int
    cost: float
    max_dK: float
    argmax_K: Optional[WeylQuery]
    max_dM: Optional[float]
    argmax_M: Optional[WeylQuery]

    @property
    def dM_computed(self) -> bool:
        return self.max_dM is not None

    @property
    def total(self) -> float:
        return self.max_dK + (self.max_dM or 0.0)

    def passes(self, tol: float) -> bool:
        return self.dM_computed and self.total <= tol * (1.0 + abs(self.cost))

    def to_dict(self):
        return {
            "samples": self.samples,
            "radius": self.radius,
            "seed": self.seed,
            "cost": self.cost,
            "max_dK": self.max_dK,
            "argmax_K": self.argmax_K.to_dict() if self.argmax_K else None,
            "max_dM": self.max_dM,
            "argmax_M": self.argmax_M.to_dict() if self.argmax_M else None,
            "dM_computed": self.dM_computed,
        }


def qcf(lam: np.ndarray, P: np.ndarray) -> float:
    """Quasi-characteristic function exp(-lambda^T P lambda / 2) of the invariant state."""
    return float(np.exp(-0.5 * lam @ P @ lam))


def gauss_factor(u: np.ndarray, g: GramianSet) -> float:
    return float(np.exp(-0.5 * u @ g.P22 @ u))


def _check_frequency(u: np.ndarray, g: GramianSet):
    nu = g.P.shape[0] - g.n
    if u.shape != (nu,):
        raise DimensionMismatch(
            "Weyl frequency has the wrong length", details=f"{u.shape} vs ({nu},)"
        )


def weyl_first_moment(u: np.ndarray, g: GramianSet, vartheta: np.ndarray) -> np.ndarray:
    """
    First moment E*(X W_u) of the cascade variables against a Weyl operator.

    Equals exp(-|u|_P22^2 / 2) (i P_{.2} u - [0; vartheta u]).
    """
    u = np.asarray(u, dtype=np.float64)
    _check_frequency(u, g)
    if vartheta.shape != (u.size, u.size):
        raise DimensionMismatch("vartheta does not match the Weyl frequency")
    shift = np.concatenate([np.zeros(g.n), vartheta @ u])
    return gauss_factor(u, g) * (1j * (g.P[:, g.n :] @ u) - shift)


def weyl_deriv_K(q: WeylQuery, g: GramianSet, vartheta: np.ndarray) -> float:
    """Derivative along K: 4 u^T S(vartheta E22) u exp(-|u|_P22^2 / 2) Re(alpha)."""
    u = np.asarray(q.u, dtype=np.float64)
    _check_frequency(u, g)
    S = symmetrize(vartheta @ g.E22)
    return float(4 * (u @ S @ u) * gauss_factor(u, g) * np.real(q.alpha))


def _require_stat1(report, tol: float):
    verdict = check_stationarity(report, tol)
    if verdict.stat1_norm > tol * verdict.scale:
        raise Stat1Violated(
            "Coupling derivative needs S(vartheta E22) = 0",
            details=f"|stat1|={verdict.stat1_norm:.3e} > {tol * verdict.scale:.3e}",
        )


def weyl_deriv_M(
    q: WeylQuery,
    g: GramianSet,
    ss: StateSpace,
    obs: ObserverSpec,
    tol: float = 1e-6,
) -> float:
    """
    Derivative along M:
    4 Im(beta)^T Pi(J b1^T E22 - (C E21^T + B^T Q12 + b1^T Q22) vartheta) u exp(-|u|_P22^2 / 2).

    Raises:
        Stat1Violated: if |S(vartheta E22)| exceeds tol * (1 + |cost|)
    """
    u = np.asarray(q.u, dtype=np.float64)
    _check_frequency(u, g)
    report = gradient(ss, g, obs)
    _require_stat1(report, tol)
    beta_im = np.imag(np.asarray(q.beta, dtype=np.complex128))
    return float(-4 * (beta_im @ report.stat2_residual @ u) * gauss_factor(u, g))


def weyl_derivative(
    q: WeylQuery, g: GramianSet, ss: StateSpace, obs: ObserverSpec, tol: float = 1e-6
) -> WeylDerivative:
    return WeylDerivative(
        dK=weyl_deriv_K(q, g, obs.vartheta),
        dM=weyl_deriv_M(q, g, ss, obs, tol),
        gauss_factor=gauss_factor(np.asarray(q.u, dtype=np.float64), g),
    )


def recover_r_gradient(g: GramianSet, vartheta: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """
    Rebuild dZ/dr from Weyl Hamiltonian derivatives alone.

    dK at u = step*e_j and u = step*(e_j + e_k) is divided by its Gaussian factor
    and polarized into the quadratic form of S(vartheta E22); the r-gradient is
    -4 times that matrix.
    """
    nu = vartheta.shape[0]
    basis = np.eye(nu)
    zero_beta = np.zeros(0, dtype=np.complex128)

    def quadratic(u):
        q = WeylQuery(alpha=1.0 + 0.0j, beta=zero_beta, u=u)
        return weyl_deriv_K(q, g, vartheta) / (4 * gauss_factor(u, g)) / step**2

    diagonal = np.array([quadratic(step * basis[j]) for j in range(nu)])
    S = np.diag(diagonal)
    for j in range(nu):
        for k in range(j + 1, nu):
            pair = quadratic(step * (basis[j] + basis[k]))
            S[j, k] = S[k, j] = (pair - diagonal[j] - diagonal[k]) / 2
    return -4 * S


def sample_ball(rng: np.random.Generator, dim: int, radius: float, count: int) -> np.ndarray:
    """Uniform draws from the closed ball of given radius in R^dim."""
    directions = rng.standard_normal((count, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = radius * rng.uniform(size=(count, 1)) ** (1.0 / max(dim, 1))
    return directions / norms * radii


def weyl_scan(
    model: CQFModel,
    samples: int = 1000,
    radius: float = 3.0,
    seed: int = 0,
    tol: float = 1e-6,
) -> WeylScanReport:
    """
    Maximum Weyl derivatives over seeded random queries.

    u is uniform in the ball of the given radius, alpha cycles through
    1, i, 1+i and beta has unit-modulus entries with random phases. The
    coupling derivative is left out (max_dM None) when the first
    stationarity condition fails at tol.
    """
    ss = model.assemble()
    g = gramians(ss, model.hurwitz_margin)
    obs = model.observer
    report = gradient(ss, g, obs)

    rng = np.random.default_rng(seed)
    U = sample_ball(rng, obs.nu, radius, samples)
    phases = rng.uniform(0.0, 2 * np.pi, size=(samples, obs.p))
    betas = np.exp(1j * phases)
    alphas = np.array([SCAN_ALPHAS[k % len(SCAN_ALPHAS)] for k in range(samples)])

    gauss = np.exp(-0.5 * np.einsum("ki,ij,kj->k", U, g.P22, U))
    quad = np.einsum("ki,ij,kj->k", U, report.stat1_residual, U)
    dK = 4 * quad * gauss * alphas.real

    def query(k):
        return WeylQuery(alpha=complex(alphas[k]), beta=betas[k], u=U[k])

    k_best = int(np.argmax(np.abs(dK))) if samples else None
    max_dK = float(np.abs(dK[k_best])) if samples else 0.0

    stat1_ok = True
    try:
        _require_stat1(report, tol)
    except Stat1Violated as e:
        logger.warning(f"Weyl scan skips coupling derivatives: {e.details}")
        stat1_ok = False

    max_dM, argmax_M = None, None
    if stat1_ok:
        dM = -4 * np.einsum("kp,pi,ki->k", betas.imag, report.stat2_residual, U) * gauss
        if samples:
            m_best = int(np.argmax(np.abs(dM)))
            max_dM, argmax_M = float(np.abs(dM[m_best])), query(m_best)
        else:
            max_dM = 0.0

    logger.debug(f"Weyl scan: {samples} samples, max|dK|={max_dK:.3e}, max|dM|={max_dM}")
    return WeylScanReport(
        samples=samples,
        radius=radius,
        seed=seed,
        cost=report.cost,
        max_dK=max_dK,
        argmax_K=query(k_best) if samples else None,
        max_dM=max_dM,
        argmax_M=argmax_M,
    )
