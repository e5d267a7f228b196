"""
Pydantic models for model files, optimizer configuration and run reports.

Matrices are row-major nested lists of numbers; selector columns are 1-based.
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

SCHEMA_VERSION = "cqf-report/1"
TOOL_VERSION = "1.0.0"

Matrix = List[List[float]]


class PlantDocument(BaseModel):
    """Quantum plant: CCR matrix, energy matrix and coupling matrix"""

    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=0)
    m: int = Field(ge=0)
    theta: Matrix
    R: Matrix
    N: Matrix


class ObserverDocument(BaseModel):
    """Linear coherent observer energy and coupling data"""

    model_config = ConfigDict(extra="forbid")

    nu: int = Field(ge=0)
    p: int = Field(ge=0)
    mu: int = Field(ge=0)
    vartheta: Matrix
    r: Matrix
    N1: Matrix
    N2: Matrix
    pi_columns: List[int]


class CostDocument(BaseModel):
    """Weights of the estimation error F X - G xi"""

    model_config = ConfigDict(extra="forbid")

    F: Matrix
    G: Matrix


class ModelDocument(BaseModel):
    """Complete filtering problem as stored on disk"""

    model_config = ConfigDict(extra="forbid")

    plant: PlantDocument
    observer: ObserverDocument
    cost: CostDocument


class OptimizerConfig(BaseModel):
    """Safeguarded gradient descent settings"""

    model_config = ConfigDict(extra="forbid")

    max_iters: int = Field(default=100000, ge=0)
    grad_tol: float = Field(default=1e-8, gt=0)
    armijo_c1: float = Field(default=1e-4, gt=0, lt=1)
    backtrack: float = Field(default=0.5, gt=0, lt=1)
    init_step: float = Field(default=1.0, gt=0)
    max_step: float = Field(default=1e6, gt=0)
    # trial step after an accepted move: alternating Barzilai-Borwein steps,
    # or the previous step grown by 1 / backtrack
    step_rule: Literal["barzilai-borwein", "expand"] = "barzilai-borwein"
    hurwitz_margin: float = Field(default=1e-9, gt=0)
    trace_every: int = Field(default=10, ge=1)
    min_step: float = Field(default=1e-16, gt=0)
    stationarity_tol: float = Field(default=1e-6, gt=0)


class RunReport(BaseModel):
    """Envelope of every command line report"""

    model_config = ConfigDict(extra="forbid")

    command: str
    inputs: Dict[str, Any] = Field(default_factory=dict)
    outputs: Dict[str, Any] = Field(default_factory=dict)
    versions: Dict[str, str] = Field(
        default_factory=lambda: {"tool": TOOL_VERSION, "schema": SCHEMA_VERSION}
    )
    timing: Optional[Dict[str, float]] = None
