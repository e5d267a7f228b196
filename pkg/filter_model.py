"""
Quantum plant, observer and cost data, and the real state-space matrices
derived from them.

The plant has CCR matrix Theta, energy matrix R and coupling matrix N; the
observer has CCR matrix vartheta, energy matrix r, coupling N1 to the selected
plant output Pi Y and coupling N2 to its own noise.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from cqf_errors import GenerationFailed, InvalidSpec, OddDimension
from filter_schema import (
    CostDocument,
    ModelDocument,
    ObserverDocument,
    PlantDocument,
)
from matops import (
    DEFAULT_HURWITZ_MARGIN,
    as_matrix,
    block_diag,
    require_hurwitz,
    spectral_abscissa,
    symmetrize,
    symplectic_ccr,
)

# rejection budget of each half (plant, observer) of a random instance
MAX_GENERATION_ATTEMPTS = 1000
DEFAULT_STABILITY_MARGIN = 0.1

logger = logging.getLogger(__name__)


def _frozen(value, name: str) -> np.ndarray:
    mat = as_matrix(value, name)
    mat.flags.writeable = False
    return mat


@dataclass(frozen=True, eq=False)
class PlantSpec:
    """Linear quantum plant (open quantum harmonic oscillator)"""

    n: int
    m: int
    Theta: np.ndarray
    R: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        for name in ("Theta", "R", "N"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))


@dataclass(frozen=True, eq=False)
class ObserverSpec:
    """Linear coherent observer; (r, N1) are the decision variables"""

    nu: int
    p: int
    mu: int
    vartheta: np.ndarray
    r: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    Pi: np.ndarray

    def __post_init__(self):
        for name in ("vartheta", "r", "N1", "N2", "Pi"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))

    @property
    def pi_columns(self) -> Optional[List[int]]:
        """1-based selected columns, or None if some row is not a unit row"""
        columns = []
        for row in self.Pi:
            ones = np.flatnonzero(row == 1.0)
            if len(ones) != 1 or np.count_nonzero(row) != 1:
                return None
            columns.append(int(ones[0]) + 1)
        return columns

    def with_parameters(
        self,
        r: Optional[np.ndarray] = None,
        N1: Optional[np.ndarray] = None,
        N2: Optional[np.ndarray] = None,
    ) -> "ObserverSpec":
        return ObserverSpec(
            nu=self.nu,
            p=self.p,
            mu=self.mu,
            vartheta=self.vartheta,
            r=self.r if r is None else r,
            N1=self.N1 if N1 is None else N1,
            N2=self.N2 if N2 is None else N2,
            Pi=self.Pi,
        )


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Estimation error E = F X - G xi"""

    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        for name in ("F", "G"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))

    @property
    def q(self) -> int:
        return self.F.shape[0]


@dataclass(frozen=True, eq=False)
class ItoStructure:
    """Imaginary parts of the Ito matrices Omega = I + iJ and Mho = I + i ImMho"""

    J: np.ndarray
    ImMho: np.ndarray


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Real state-space matrices of the plant, observer and their cascade"""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    a: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    calA: np.ndarray
    calB: np.ndarray
    calC: np.ndarray
    blockTheta: np.ndarray
    blockJ: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True, eq=False)
class CQFModel:
    """Plant, observer and cost of one filtering problem"""

    plant: PlantSpec
    observer: ObserverSpec
    cost: CostSpec
    hurwitz_margin: float = field(default=DEFAULT_HURWITZ_MARGIN)

    def with_observer(self, observer: ObserverSpec) -> "CQFModel":
        return CQFModel(self.plant, observer, self.cost, self.hurwitz_margin)

    def assemble(self) -> StateSpace:
        return assemble(self.plant, self.observer, self.cost, self.hurwitz_margin)


class Dims(NamedTuple):
    n: int
    m: int
    nu: int
    p: int
    mu: int


def build_ito(m: int) -> np.ndarray:
    """
    CCR matrix J of an m-dimensional quantum Wiener process.

    Raises:
        OddDimension: if m is odd
    """
    if m % 2:
        raise OddDimension(f"Field dimension must be even, got {m}")
    return symplectic_ccr(m)


def ito_structure(m: int, mu: int) -> ItoStructure:
    return ItoStructure(J=build_ito(m), ImMho=build_ito(mu))


def selector_matrix(columns: Sequence[int], m: int) -> np.ndarray:
    """
    Selector Pi with a single 1 per row at the given 1-based columns.

    Raises:
        InvalidSpec: if a column lies outside 1..m
    """
    bad = [c for c in columns if not 1 <= c <= m]
    if bad:
        raise InvalidSpec([f"observer.pi_columns: {bad} outside 1..{m}"])
    Pi = np.zeros((len(columns), m))
    for row, column in enumerate(columns):
        Pi[row, column - 1] = 1.0
    return Pi


def _check_shape(violations, name, mat, shape):
    if mat.shape != shape:
        violations.append(f"{name}: expected shape {shape}, got {mat.shape}")
        return False
    return True


def _plant_violations(plant: PlantSpec) -> List[str]:
    violations = []
    n, m = plant.n, plant.m
    if m % 2:
        violations.append(f"plant.m: field dimension {m} must be even")
    if _check_shape(violations, "plant.theta", plant.Theta, (n, n)):
        if np.linalg.norm(plant.Theta + plant.Theta.T) != 0:
            violations.append("plant.theta: CCR matrix must be antisymmetric")
    if _check_shape(violations, "plant.R", plant.R, (n, n)):
        if np.linalg.norm(plant.R - plant.R.T) != 0:
            violations.append("plant.R: energy matrix must be symmetric")
    _check_shape(violations, "plant.N", plant.N, (m, n))
    return violations


def _observer_violations(obs: ObserverSpec, m: int) -> List[str]:
    violations = []
    nu, p, mu = obs.nu, obs.p, obs.mu
    if p % 2:
        violations.append(f"observer.p: selected output dimension {p} must be even")
    if mu % 2:
        violations.append(f"observer.mu: noise dimension {mu} must be even")
    if p > m:
        violations.append(f"observer.p: {p} exceeds the plant field dimension {m}")
    if _check_shape(violations, "observer.vartheta", obs.vartheta, (nu, nu)):
        if np.linalg.norm(obs.vartheta + obs.vartheta.T) != 0:
            violations.append("observer.vartheta: CCR matrix must be antisymmetric")
    if _check_shape(violations, "observer.r", obs.r, (nu, nu)):
        if np.linalg.norm(obs.r - obs.r.T) != 0:
            violations.append("observer.r: energy matrix must be symmetric")
    _check_shape(violations, "observer.N1", obs.N1, (p, nu))
    _check_shape(violations, "observer.N2", obs.N2, (mu, nu))
    if not _check_shape(violations, "observer.pi", obs.Pi, (p, m)):
        return violations

    if not np.all((obs.Pi == 0.0) | (obs.Pi == 1.0)):
        violations.append("observer.pi: entries must be 0 or 1")
        return violations
    if np.any(obs.Pi.sum(axis=1) != 1):
        violations.append("observer.pi: each row must hold exactly one 1")
        return violations
    if np.any(obs.Pi.sum(axis=0) > 1):
        violations.append("observer.pi: each column may hold at most one 1")
    columns = obs.pi_columns
    for k in range(0, len(columns) - 1, 2):
        first, second = columns[k], columns[k + 1]
        if first % 2 != 1 or second != first + 1:
            violations.append(
                f"observer.pi: columns {first},{second} are not an adjacent quadrature pair"
            )
    return violations


def _cost_violations(cost: CostSpec, n: int, nu: int) -> List[str]:
    violations = []
    if cost.F.shape[1] != n:
        violations.append(f"cost.F: expected {n} columns, got {cost.F.shape[1]}")
    if cost.G.shape[1] != nu:
        violations.append(f"cost.G: expected {nu} columns, got {cost.G.shape[1]}")
    if cost.F.shape[0] != cost.G.shape[0]:
        violations.append(
            f"cost: F and G must have the same number of rows "
            f"({cost.F.shape[0]} vs {cost.G.shape[0]})"
        )
    return violations


def collect_violations(
    plant: PlantSpec, obs: ObserverSpec, cost: CostSpec
) -> List[str]:
    """All invariant violations of a plant/observer/cost triple."""
    return (
        _plant_violations(plant)
        + _observer_violations(obs, plant.m)
        + _cost_violations(cost, plant.n, obs.nu)
    )


def validate(
    plant: PlantSpec, obs: ObserverSpec, cost: CostSpec
) -> Tuple[PlantSpec, ObserverSpec, CostSpec]:
    """
    Check every type invariant of the triple.

    Raises:
        InvalidSpec: with per-field diagnostics
    """
    violations = collect_violations(plant, obs, cost)
    if violations:
        raise InvalidSpec(violations)
    return plant, obs, cost


def derive_plant(plant: PlantSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Plant drift A = 2 Theta (R + N^T J N), noise B = 2 Theta N^T, output C = 2 J N."""
    J = build_ito(plant.m)
    Theta, R, N = plant.Theta, plant.R, plant.N
    A = 2 * Theta @ (R + N.T @ J @ N)
    B = 2 * Theta @ N.T
    C = 2 * J @ N
    return A, B, C


def derive_observer(obs: ObserverSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Observer matrices of the linear observer QSDE.

    a = 2 vartheta (r + N1^T Pi J Pi^T N1 + N2^T ImMho N2),
    b1 = 2 vartheta N1^T Pi (nu x m), b2 = 2 vartheta N2^T.
    """
    ito = ito_structure(obs.Pi.shape[1], obs.mu)
    vartheta, Pi, N1, N2 = obs.vartheta, obs.Pi, obs.N1, obs.N2
    a = 2 * vartheta @ (obs.r + N1.T @ Pi @ ito.J @ Pi.T @ N1 + N2.T @ ito.ImMho @ N2)
    b1 = 2 * vartheta @ N1.T @ Pi
    b2 = 2 * vartheta @ N2.T
    return a, b1, b2


def assemble(
    plant: PlantSpec,
    obs: ObserverSpec,
    cost: CostSpec,
    hurwitz_margin: float = DEFAULT_HURWITZ_MARGIN,
) -> StateSpace:
    """
    Composite plant-observer state space.

    Raises:
        NotHurwitz: if the plant matrix A or the observer matrix a is not Hurwitz
    """
    A, B, C = derive_plant(plant)
    a, b1, b2 = derive_observer(obs)
    require_hurwitz(A, "plant", hurwitz_margin)
    require_hurwitz(a, "observer", hurwitz_margin)

    n, nu = plant.n, obs.nu
    ito = ito_structure(plant.m, obs.mu)
    calA = np.block([[A, np.zeros((n, nu))], [b1 @ C, a]])
    calB = np.block([[B, np.zeros((n, obs.mu))], [b1, b2]])
    calC = np.hstack([cost.F, -cost.G])
    return StateSpace(
        A=A,
        B=B,
        C=C,
        a=a,
        b1=b1,
        b2=b2,
        calA=calA,
        calB=calB,
        calC=calC,
        blockTheta=block_diag(plant.Theta, obs.vartheta),
        blockJ=block_diag(ito.J, ito.ImMho),
    )


def random_positive(rng: np.random.Generator, d: int) -> np.ndarray:
    """Energy matrix M M^T / d + I with a standard normal M."""
    M = rng.standard_normal((d, d))
    return symmetrize(M @ M.T) / max(d, 1) + np.eye(d)


def oriented_coupling(N: np.ndarray, ccr: np.ndarray) -> np.ndarray:
    """
    Swap the rows of each field pair (a, b) of N where a^T ccr b < 0.

    A pair contributes the eigenvalue -2 a^T ccr b (twice) to the damping part
    of the drift, so after the swap every pair damps.
    """
    N = np.array(N, dtype=np.float64)
    for k in range(0, N.shape[0] - 1, 2):
        if N[k] @ ccr @ N[k + 1] < 0:
            N[[k, k + 1]] = N[[k + 1, k]]
    return N


def draw_plant(
    rng: np.random.Generator,
    n: int,
    m: int,
    stability_margin: float = DEFAULT_STABILITY_MARGIN,
) -> Optional[PlantSpec]:
    """Random plant with spectral abscissa below -stability_margin, or None."""
    Theta = symplectic_ccr(n)
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        plant = PlantSpec(
            n=n,
            m=m,
            Theta=Theta,
            R=random_positive(rng, n),
            N=oriented_coupling(rng.standard_normal((m, n)), Theta),
        )
        A, _, _ = derive_plant(plant)
        if spectral_abscissa(A) < -stability_margin:
            logger.debug(f"Plant accepted after {attempt} rejections")
            return plant
    return None


def draw_observer(
    rng: np.random.Generator,
    vartheta: np.ndarray,
    Pi: np.ndarray,
    mu: int,
    stability_margin: float = DEFAULT_STABILITY_MARGIN,
    N2: Optional[np.ndarray] = None,
) -> Optional[ObserverSpec]:
    """
    Random observer (r, N1, and N2 unless given) with spectral abscissa below
    -stability_margin, or None.
    """
    nu, p = vartheta.shape[0], Pi.shape[0]
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        obs = ObserverSpec(
            nu=nu,
            p=p,
            mu=mu,
            vartheta=vartheta,
            r=random_positive(rng, nu),
            N1=oriented_coupling(rng.standard_normal((p, nu)), vartheta),
            N2=oriented_coupling(rng.standard_normal((mu, nu)), vartheta) if N2 is None else N2,
            Pi=Pi,
        )
        a, _, _ = derive_observer(obs)
        if spectral_abscissa(a) < -stability_margin:
            logger.debug(f"Observer accepted after {attempt} rejections")
            return obs
    return None


def random_instance(
    seed: int,
    dims: Dims,
    q: Optional[int] = None,
    stability_margin: float = DEFAULT_STABILITY_MARGIN,
) -> CQFModel:
    """
    Seeded random filtering problem with Hurwitz plant and observer.

    R and r are positive definite and every coupling pair is oriented to damp.
    The plant and the observer are drawn by separate rejection loops, in that
    order, followed by F and G, so a rejected half is redrawn on its own.

    Raises:
        OddDimension: if n, m, nu, p or mu is odd
        GenerationFailed: if either half is rejected MAX_GENERATION_ATTEMPTS times
    """
    n, m, nu, p, mu = dims
    for name, value in dims._asdict().items():
        if value % 2:
            raise OddDimension(f"Dimension {name}={value} must be even")
    q = n if q is None else q

    rng = np.random.default_rng(seed)
    plant = draw_plant(rng, n, m, stability_margin)
    if plant is None:
        raise GenerationFailed(
            f"No Hurwitz plant after {MAX_GENERATION_ATTEMPTS} attempts",
            details=f"seed={seed}, dims={tuple(dims)}",
        )
    obs = draw_observer(
        rng, symplectic_ccr(nu), selector_matrix(range(1, p + 1), m), mu, stability_margin
    )
    if obs is None:
        raise GenerationFailed(
            f"No Hurwitz observer after {MAX_GENERATION_ATTEMPTS} attempts",
            details=f"seed={seed}, dims={tuple(dims)}",
        )
    F = rng.standard_normal((q, n))
    G = rng.standard_normal((q, nu))
    return CQFModel(plant, obs, CostSpec(F=F, G=G))


def _matrix_from_rows(rows, name: str, cols: int) -> np.ndarray:
    if len(rows) == 0:
        return np.zeros((0, cols))
    return as_matrix(rows, name)


def model_from_document(doc: ModelDocument) -> CQFModel:
    """Numeric model from a parsed document; shapes are checked by validate()."""
    pd, od, cd = doc.plant, doc.observer, doc.cost
    plant = PlantSpec(
        n=pd.n,
        m=pd.m,
        Theta=_matrix_from_rows(pd.theta, "plant.theta", pd.n),
        R=_matrix_from_rows(pd.R, "plant.R", pd.n),
        N=_matrix_from_rows(pd.N, "plant.N", pd.n),
    )
    obs = ObserverSpec(
        nu=od.nu,
        p=od.p,
        mu=od.mu,
        vartheta=_matrix_from_rows(od.vartheta, "observer.vartheta", od.nu),
        r=_matrix_from_rows(od.r, "observer.r", od.nu),
        N1=_matrix_from_rows(od.N1, "observer.N1", od.nu),
        N2=_matrix_from_rows(od.N2, "observer.N2", od.nu),
        Pi=selector_matrix(od.pi_columns, pd.m),
    )
    cost = CostSpec(
        F=_matrix_from_rows(cd.F, "cost.F", pd.n),
        G=_matrix_from_rows(cd.G, "cost.G", od.nu),
    )
    return CQFModel(plant, obs, cost)


def model_to_document(model: CQFModel) -> ModelDocument:
    plant, obs, cost = model.plant, model.observer, model.cost
    return ModelDocument(
        plant=PlantDocument(
            n=plant.n,
            m=plant.m,
            theta=plant.Theta.tolist(),
            R=plant.R.tolist(),
            N=plant.N.tolist(),
        ),
        observer=ObserverDocument(
            nu=obs.nu,
            p=obs.p,
            mu=obs.mu,
            vartheta=obs.vartheta.tolist(),
            r=obs.r.tolist(),
            N1=obs.N1.tolist(),
            N2=obs.N2.tolist(),
            pi_columns=obs.pi_columns or [],
        ),
        cost=CostDocument(F=cost.F.tolist(), G=cost.G.tolist()),
    )


def load_model(path) -> CQFModel:
    """
    Read a model file.

    Raises:
        pydantic.ValidationError: if the JSON does not follow the model schema
        InvalidSpec: if the selector columns are out of range
    """
    text = Path(path).read_text(encoding="utf-8")
    return model_from_document(ModelDocument.model_validate_json(text))


def dump_model(model: CQFModel) -> str:
    return json.dumps(model_to_document(model).model_dump(), indent=2)
