"""
Dense real-matrix kernel: Lyapunov solver, spectral abscissa, symmetrizer,
Frobenius inner product and block helpers.
"""

import logging

import numpy as np

from cqf_errors import (
    ConvergenceFailure,
    DimensionMismatch,
    NonFiniteMatrix,
    NotHurwitz,
    SingularSystem,
)

DEFAULT_HURWITZ_MARGIN = 1e-9
ALE_RESIDUAL_TOL = 1e-10

# quadrature block of the CCR and Ito matrices
BJ = np.array([[0.0, 1.0], [-1.0, 0.0]])

logger = logging.getLogger(__name__)


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """
    Convert input to a finite 2-D float64 array.

    Raises:
        DimensionMismatch: if the value is not two-dimensional
        NonFiniteMatrix: if any entry is NaN or Inf
    """
    try:
        mat = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DimensionMismatch(f"{name} is not a rectangular real matrix", str(e))
    if mat.ndim != 2:
        raise DimensionMismatch(
            f"{name} must be two-dimensional", details=f"got shape {mat.shape}"
        )
    if not np.all(np.isfinite(mat)):
        raise NonFiniteMatrix(f"{name} has non-finite entries")
    return mat


def _require_square(M: np.ndarray, name: str) -> int:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square", details=f"shape {M.shape}")
    return M.shape[0]


def spectral_abscissa(A: np.ndarray) -> float:
    """Largest real part over the eigenvalues of a square matrix."""
    d = _require_square(A, "A")
    if d == 0:
        return -np.inf
    try:
        eigenvalues = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as e:
        raise ConvergenceFailure("Eigenvalue iteration did not converge", str(e))
    return float(np.max(eigenvalues.real))


def is_hurwitz(A: np.ndarray, margin: float = DEFAULT_HURWITZ_MARGIN) -> bool:
    return spectral_abscissa(A) < -margin


def require_hurwitz(
    A: np.ndarray, which: str, margin: float = DEFAULT_HURWITZ_MARGIN
) -> float:
    """Return the spectral abscissa of A or raise NotHurwitz."""
    abscissa = spectral_abscissa(A)
    if abscissa >= -margin:
        raise NotHurwitz(which, abscissa, margin)
    return abscissa


def symmetrize(M: np.ndarray) -> np.ndarray:
    """Symmetrizer (M + M^T) / 2."""
    _require_square(M, "M")
    return (M + M.T) / 2


def frob_inner(M: np.ndarray, N: np.ndarray) -> float:
    """Frobenius inner product Tr(M^T N) of two real matrices."""
    if M.shape != N.shape:
        raise DimensionMismatch(
            "Frobenius inner product needs equal shapes",
            details=f"{M.shape} vs {N.shape}",
        )
    return float(np.sum(M * N))


def ale_residual(A: np.ndarray, X: np.ndarray, V: np.ndarray) -> float:
    """Relative residual ||AX + XA^T + V||_F / (1 + ||V||_F)."""
    residual = A @ X + X @ A.T + V
    return float(np.linalg.norm(residual) / (1.0 + np.linalg.norm(V)))


def solve_ale(
    A: np.ndarray, V: np.ndarray, hurwitz_margin: float = DEFAULT_HURWITZ_MARGIN
) -> np.ndarray:
    """
    Solve the algebraic Lyapunov equation A X + X A^T + V = 0.

    The equation is vectorized as (I kron A + A kron I) vec(X) = -vec(V)
    (column-major vec) and solved by dense LU.

    Args:
        A: Hurwitz matrix of order d
        V: symmetric matrix of order d
        hurwitz_margin: required distance of the spectrum from the imaginary axis

    Returns:
        Symmetric solution X

    Raises:
        NotHurwitz: if the spectral abscissa of A is not below -hurwitz_margin
        SingularSystem: if the linear solve fails
        DimensionMismatch: if the shapes are incompatible
    """
    d = _require_square(A, "A")
    if V.shape != (d, d):
        raise DimensionMismatch(
            "Lyapunov right-hand side has the wrong shape",
            details=f"A is {A.shape}, V is {V.shape}",
        )
    require_hurwitz(A, "Lyapunov", hurwitz_margin)
    if d == 0:
        return np.zeros((0, 0))

    identity = np.eye(d)
    kron_operator = np.kron(identity, A) + np.kron(A, identity)
    try:
        vec_x = np.linalg.solve(kron_operator, -V.reshape(-1, order="F"))
    except np.linalg.LinAlgError as e:
        raise SingularSystem("Lyapunov operator is singular", str(e))

    X = vec_x.reshape((d, d), order="F")
    X = (X + X.T) / 2

    residual = ale_residual(A, X, V)
    logger.debug(f"ALE of order {d} solved, relative residual {residual:.3e}")
    if residual > ALE_RESIDUAL_TOL:
        logger.warning(
            f"ALE residual {residual:.3e} exceeds {ALE_RESIDUAL_TOL:.0e} (order {d})"
        )
    return X


def symplectic_ccr(dim: int) -> np.ndarray:
    """Block-diagonal CCR matrix blkdiag(bJ, ..., bJ) of even order dim."""
    return np.kron(np.eye(dim // 2), BJ)


def block_diag(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    return np.block(
        [
            [first, np.zeros((first.shape[0], second.shape[1]))],
            [np.zeros((second.shape[0], first.shape[1])), second],
        ]
    )


def relative_error(value: np.ndarray, reference: np.ndarray, floor: float = 1e-300) -> float:
    """||value - reference||_F scaled by the larger of the two norms."""
    value = np.asarray(value)
    reference = np.asarray(reference)
    scale = max(np.linalg.norm(value), np.linalg.norm(reference), floor)
    return float(np.linalg.norm(value - reference) / scale)
