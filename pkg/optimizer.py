"""
Safeguarded gradient descent over the observer energy matrix r and coupling
matrix N1: Barzilai-Borwein trial steps, Armijo backtracking on the exact cost
change, and Hurwitz guarding by step rejection.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from analysis import (
    GradientReport,
    GramianSet,
    StationarityVerdict,
    check_stationarity,
    cost_change,
    gradient,
    gramians,
)
from cqf_errors import AllStartsFailed, CQFError, NotHurwitz, StepCollapse
from filter_model import DEFAULT_STABILITY_MARGIN, CQFModel, StateSpace, draw_observer
from filter_schema import OptimizerConfig
from matops import frob_inner, spectral_abscissa, symmetrize

logger = logging.getLogger(__name__)


class Status(str, Enum):
    """Terminal status of a descent run"""

    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    STEP_COLLAPSE = "StepCollapse"


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    cost: float
    grad_norm: float
    step: float
    stat1_norm: float
    stat2_norm: float
    spectral_abscissa: float


@dataclass(eq=False)
class OptimizerTrace:
    records: List[TraceRecord] = field(default_factory=list)
    status: Optional[Status] = None
    iterations: int = 0

    def to_dict(self):
        return {
            "status": self.status.value if self.status else None,
            "iterations": self.iterations,
            "records": [vars(record) for record in self.records],
        }


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    model: CQFModel
    trace: OptimizerTrace
    report: GradientReport
    verdict: StationarityVerdict

    @property
    def cost(self) -> float:
        return self.report.cost

    @property
    def status(self) -> Status:
        return self.trace.status


@dataclass(frozen=True)
class StartSummary:
    index: int
    status: str
    cost: Optional[float]
    iterations: int
    grad_norm: Optional[float]


@dataclass(frozen=True, eq=False)
class MultistartResult:
    best: OptimizationResult
    best_index: int
    summaries: List[StartSummary]


def _evaluate(model: CQFModel) -> Tuple[StateSpace, GramianSet, GradientReport, float]:
    ss = model.assemble()
    g = gramians(ss, model.hurwitz_margin)
    return ss, g, gradient(ss, g, model.observer), spectral_abscissa(ss.calA)


def _record(iteration, report, cost, step, abscissa) -> TraceRecord:
    return TraceRecord(
        iter=iteration,
        cost=cost,
        grad_norm=report.grad_norm,
        step=step,
        stat1_norm=float(np.linalg.norm(report.stat1_residual)),
        stat2_norm=float(np.linalg.norm(report.stat2_residual)),
        spectral_abscissa=abscissa,
    )


def _descent_step(model: CQFModel, report: GradientReport, t: float) -> CQFModel:
    obs = model.observer
    r = symmetrize(obs.r - t * report.dZ_dr)
    N1 = obs.N1 - t * report.dZ_dN1
    return model.with_observer(obs.with_parameters(r=r, N1=N1))


def _pair_inner(first, second) -> float:
    return frob_inner(first[0], second[0]) + frob_inner(first[1], second[1])


def barzilai_borwein(s, y, iteration: int) -> Optional[float]:
    """
    Barzilai-Borwein step from the parameter move s = (dr, dN1) and the
    gradient change y; the long step s.s / s.y on even iterations, the short
    step s.y / y.y on odd ones. None when s.y <= 0.
    """
    sy = _pair_inner(s, y)
    if sy <= 0:
        return None
    if iteration % 2:
        return sy / _pair_inner(y, y)
    return _pair_inner(s, s) / sy


def _next_step(config: OptimizerConfig, t, old_model, model, old_report, report, iteration):
    grown = t / config.backtrack
    if config.step_rule == "barzilai-borwein":
        s = (
            model.observer.r - old_model.observer.r,
            model.observer.N1 - old_model.observer.N1,
        )
        y = (report.dZ_dr - old_report.dZ_dr, report.dZ_dN1 - old_report.dZ_dN1)
        step = barzilai_borwein(s, y, iteration)
        if step is not None:
            grown = step
    return min(max(grown, config.min_step), config.max_step)


def optimize(model: CQFModel, config: Optional[OptimizerConfig] = None) -> OptimizationResult:
    """
    Descend from the model's observer until the gradient norm falls below
    grad_tol * (1 + |cost|).

    Plant data, vartheta, N2 and Pi stay fixed. A trial step is rejected when
    the observer loses the Hurwitz property or the Armijo condition
    Z(new) - Z <= -c1 * t * |grad|^2 fails; the step then shrinks by the
    backtracking factor. The cost change is solved for directly, so the test
    stays meaningful when it is far below the rounding level of the cost.
    After an accepted step the next trial comes from config.step_rule.

    Trace records carry the cost accumulated from the accepted changes, which
    is strictly decreasing; the result's report holds a fresh evaluation.

    Raises:
        NotHurwitz: if the initial model is not Hurwitz
        StepCollapse: if no acceptable step above min_step exists; the partial
            result is attached as ``result``
    """
    config = config or OptimizerConfig()
    model = CQFModel(model.plant, model.observer, model.cost, config.hurwitz_margin)

    ss, g, report, abscissa = _evaluate(model)
    tracked = report.cost
    trace = OptimizerTrace(records=[_record(0, report, tracked, 0.0, abscissa)])
    t = config.init_step
    iteration = 0

    while True:
        if report.grad_norm <= config.grad_tol * (1.0 + abs(report.cost)):
            trace.status = Status.CONVERGED
            break
        if iteration >= config.max_iters:
            trace.status = Status.MAX_ITERS
            break

        slope = config.armijo_c1 * report.grad_norm**2
        candidate = None
        while t >= config.min_step:
            trial = _descent_step(model, report, t)
            try:
                change = cost_change(
                    ss, g.P, model.observer, trial.assemble(), trial.observer, config.hurwitz_margin
                )
            except NotHurwitz:
                logger.debug(f"iter {iteration}: step {t:.3e} rejected (not Hurwitz)")
                t *= config.backtrack
                continue
            if change <= -t * slope:
                candidate = trial
                break
            t *= config.backtrack

        if candidate is None:
            trace.status = Status.STEP_COLLAPSE
            break

        previous_model, previous_report = model, report
        model = candidate
        iteration += 1
        tracked += change
        ss, g, report, abscissa = _evaluate(model)
        if iteration % config.trace_every == 0:
            trace.records.append(_record(iteration, report, tracked, t, abscissa))
        logger.debug(
            f"iter {iteration}: cost={tracked:.12g}, |grad|={report.grad_norm:.3e}, step={t:.3e}"
        )
        t = _next_step(config, t, previous_model, model, previous_report, report, iteration)

    if trace.records[-1].iter != iteration:
        trace.records.append(_record(iteration, report, tracked, t, abscissa))
    trace.iterations = iteration

    result = OptimizationResult(
        model=model,
        trace=trace,
        report=report,
        verdict=check_stationarity(report, config.stationarity_tol),
    )
    logger.info(
        f"Descent finished: {trace.status.value} after {iteration} iterations, cost={report.cost:.12g}"
    )
    if trace.status is Status.STEP_COLLAPSE:
        error = StepCollapse(
            "Line search collapsed without an acceptable move",
            details=f"iteration {iteration}, |grad|={report.grad_norm:.3e}",
        )
        error.result = result
        raise error
    return result


def _random_start(model: CQFModel, rng: np.random.Generator) -> Optional[CQFModel]:
    """Random (r, N1) with the model's N2 and a Hurwitz observer, or None."""
    obs = model.observer
    margin = max(DEFAULT_STABILITY_MARGIN, model.hurwitz_margin)
    trial = draw_observer(rng, obs.vartheta, obs.Pi, obs.mu, margin, N2=obs.N2)
    return None if trial is None else model.with_observer(trial)


def multistart(
    model: CQFModel,
    config: Optional[OptimizerConfig] = None,
    starts: int = 1,
    seed: int = 0,
    include_given: bool = True,
) -> MultistartResult:
    """
    Run optimize from several initial observers and keep the lowest-cost
    converged run (ties broken by start index).

    With include_given, start 0 is the model's own observer and the other
    starts - 1 are seeded random draws; otherwise all starts are random.

    Raises:
        AllStartsFailed: if no run converged
    """
    config = config or OptimizerConfig()
    rng = np.random.default_rng(seed)
    summaries = []
    converged = []

    for index in range(starts):
        start = model if include_given and index == 0 else _random_start(model, rng)
        if start is None:
            summaries.append(StartSummary(index, "GenerationFailed", None, 0, None))
            continue
        try:
            result = optimize(start, config)
        except StepCollapse as e:
            result = e.result
        except CQFError as e:
            logger.warning(f"Start {index} failed: {e.message}")
            summaries.append(StartSummary(index, type(e).__name__, None, 0, None))
            continue

        summaries.append(
            StartSummary(
                index=index,
                status=result.status.value,
                cost=result.cost,
                iterations=result.trace.iterations,
                grad_norm=result.report.grad_norm,
            )
        )
        if result.status is Status.CONVERGED:
            converged.append((result.cost, index, result))

    if not converged:
        raise AllStartsFailed(
            f"None of {starts} starts converged",
            details=", ".join(f"{s.index}:{s.status}" for s in summaries),
        )
    _, best_index, best = min(converged, key=lambda item: (item[0], item[1]))
    return MultistartResult(best=best, best_index=best_index, summaries=summaries)
