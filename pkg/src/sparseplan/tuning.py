"""Partition-count auto-tuning.

Iteration time as a function of the partition count P is modeled as

    t(P) = theta0 + theta1 / P + theta2 * P

a convex function whose minimizer sqrt(theta1 / theta2) is bracketed by the
sampled P range, so no extrapolation is ever needed.  Samples come from a
doubling/halving search that stops once the relative improvement falls below
a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ClusterSpec, GraphSpec, SpecError
from .placement import DistributedPlan
from .simulate import ComputeProfile, simulate_training


class TuningError(ValueError):
    pass


@dataclass(frozen=True)
class CostModelParams:
    theta0: float
    theta1: float
    theta2: float
    samples: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(tuple(s) for s in self.samples))
        if self.theta1 < 0 or self.theta2 < 0:
            raise TuningError("theta1 and theta2 must be non-negative")

    @property
    def sampled_range(self) -> tuple[int, int]:
        if not self.samples:
            raise TuningError("no samples recorded")
        ps = [p for p, _ in self.samples]
        return min(ps), max(ps)


@dataclass(frozen=True)
class TuneResult:
    best_p: int
    params: CostModelParams
    samples_taken: int
    predicted_time: float

    def to_dict(self) -> dict:
        return {
            "best_p": self.best_p,
            "theta": [self.params.theta0, self.params.theta1, self.params.theta2],
            "samples": [[p, t] for p, t in self.params.samples],
            "samples_taken": self.samples_taken,
            "predicted_time_us": self.predicted_time,
        }


def predict_time(params: CostModelParams, p: int) -> float:
    if p < 1:
        raise TuningError(f"partition count must be >= 1, got {p}")
    return params.theta0 + params.theta1 / p + params.theta2 * p


def fit_theta(samples: list[tuple[int, float]]) -> CostModelParams:
    """Least-squares fit of the cost model with theta1, theta2 >= 0.

    Solves the unconstrained normal equations in the basis (1, 1/P, P); if a
    slope coefficient comes out negative it is clamped to zero and the fit is
    repeated without that basis column.
    """
    distinct = sorted({p for p, _ in samples})
    if len(distinct) < 3:
        raise TuningError(f"need samples at >= 3 distinct partition counts, got {len(distinct)}")
    ps = np.array([p for p, _ in samples], dtype=float)
    ts = np.array([t for _, t in samples], dtype=float)

    active = [True, True]  # theta1, theta2
    while True:
        cols = [np.ones_like(ps)]
        if active[0]:
            cols.append(1.0 / ps)
        if active[1]:
            cols.append(ps)
        design = np.stack(cols, axis=1)
        coef, *_ = np.linalg.lstsq(design, ts, rcond=None)
        theta = [coef[0], 0.0, 0.0]
        i = 1
        for j in range(2):
            if active[j]:
                theta[j + 1] = coef[i]
                i += 1
        violated = [j for j in range(2) if active[j] and theta[j + 1] < 0]
        if not violated:
            return CostModelParams(
                theta0=float(theta[0]),
                theta1=float(theta[1]),
                theta2=float(theta[2]),
                samples=tuple((int(p), float(t)) for p, t in samples),
            )
        for j in violated:
            active[j] = False


def optimal_p(params: CostModelParams) -> int:
    """Minimizer of the fitted model, clamped into the sampled range.

    The real-valued minimizer sqrt(theta1/theta2) is rounded to whichever of
    floor/ceil predicts the smaller time (ties to the smaller P), then clamped
    so the answer never extrapolates beyond the sampled range.
    """
    lo, hi = params.sampled_range
    if params.theta2 == 0:
        return hi
    if params.theta1 == 0:
        return lo
    root = math.sqrt(params.theta1 / params.theta2)
    floor_p = max(1, math.floor(root))
    ceil_p = max(1, math.ceil(root))
    if predict_time(params, floor_p) <= predict_time(params, ceil_p):
        best = floor_p
    else:
        best = ceil_p
    return min(max(best, lo), hi)


def sample_search(
    evaluator: Callable[[int], float],
    start_p: int,
    threshold: float = 0.10,
    max_p: int = 1 << 20,
) -> list[tuple[int, float]]:
    """Adaptive doubling/halving sampling of the evaluator.

    Starting at ``start_p``, double P while each new time improves on the
    previous by more than ``threshold`` relative; the first non-improving
    probe is kept and stops that direction.  Then halve from ``start_p`` under
    the same rule, stopping at P=1 at the latest.  Every P is evaluated
    exactly once.
    """
    if start_p < 1:
        raise TuningError(f"start_p must be >= 1, got {start_p}")
    if not (0 <= threshold < 1):
        raise TuningError(f"threshold must be in [0, 1), got {threshold}")
    start_p = min(start_p, max_p)

    times: dict[int, float] = {}

    def evaluate(p: int) -> float:
        if p not in times:
            try:
                times[p] = evaluator(p)
            except Exception as exc:
                raise TuningError(f"evaluator failed at P={p}: {exc}") from exc
        return times[p]

    def improves(prev: float, new: float) -> bool:
        return (prev - new) > threshold * prev

    prev = evaluate(start_p)
    p = start_p
    while p * 2 <= max_p:
        p *= 2
        t = evaluate(p)
        if not improves(prev, t):
            break
        prev = t

    prev = times[start_p]
    p = start_p
    while p > 1:
        p //= 2
        t = evaluate(p)
        if not improves(prev, t):
            break
        prev = t

    return sorted(times.items())


def tune_evaluator(
    evaluator: Callable[[int], float],
    start_p: int,
    threshold: float = 0.10,
    max_p: int = 1 << 20,
) -> TuneResult:
    """Sample, fit, and pick the best partition count for a time evaluator."""
    samples = sample_search(evaluator, start_p, threshold, max_p)
    if len({p for p, _ in samples}) < 3:
        # The feasible P range was too narrow to fit the model; fall back to
        # the best sampled point with a flat (constant) cost model.
        best, best_t = min(samples, key=lambda s: s[1])
        params = CostModelParams(best_t, 0.0, 0.0, samples=tuple(samples))
        return TuneResult(best, params, len(samples), best_t)
    params = fit_theta(samples)
    best = optimal_p(params)
    return TuneResult(
        best_p=best,
        params=params,
        samples_taken=len(samples),
        predicted_time=predict_time(params, best),
    )


def tune(
    graph: GraphSpec,
    cluster: ClusterSpec,
    plan_builder: Callable[[int], DistributedPlan],
    profile: ComputeProfile,
    threshold: float = 0.10,
    iterations: int = 100,
    seed: int = 0,
) -> TuneResult:
    """Tune the shared partition count for a graph's partitionable sparse variables.

    The evaluator simulates training on the plan built for each candidate P.
    Sampling starts at the machine count and P never exceeds the smallest
    partitionable variable.
    """
    candidates = [
        v for v in graph.variables if v.kind == "sparse" and v.partitionable
    ]
    if not candidates:
        raise TuningError("graph has no partitionable sparse variable to tune")
    max_p = min(v.elements for v in candidates)
    start_p = min(max(cluster.machines, 1), max_p)

    def evaluator(p: int) -> float:
        plan = plan_builder(p)
        return simulate_training(
            plan, graph, cluster, profile, iterations=iterations, seed=seed
        )

    return tune_evaluator(evaluator, start_p, threshold, max_p)
