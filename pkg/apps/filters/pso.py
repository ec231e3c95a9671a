"""Inertia-weight particle swarm optimizer over the unit box."""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from apps.core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

LOG_EVERY = 25


@dataclass(frozen=True)
class PsoConfig:
    """Swarm constants. Positions live in ``[0, 1]^d``."""

    w: float = 0.8
    c1: float = 0.15
    c2: float = 0.05
    n_particles: int = 100
    max_iters: int = 300
    penalty: float = 10.0
    stagnation_iters: int = 50
    stagnation_tol: float = 1e-9

    def __post_init__(self):
        for name in ("w", "c1", "c2", "penalty", "stagnation_tol"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"PSO {name} must be non-negative")
        if self.n_particles < 2:
            raise ConfigurationError(f"PSO needs at least 2 particles, got {self.n_particles}")
        if self.max_iters < 1 or self.stagnation_iters < 1:
            raise ConfigurationError("max_iters and stagnation_iters must be positive")

    @property
    def non_finite_cost(self) -> float:
        return self.penalty * 100.0


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_cost: float = float("inf")


@dataclass
class PsoResult:
    best: np.ndarray
    cost: float
    history: List[float] = field(default_factory=list)
    best_history: List[np.ndarray] = field(default_factory=list)
    iterations: int = 0
    stagnated: bool = False
    particles: List[Particle] = field(default_factory=list)


def penalized_costs(cost: Callable, positions: np.ndarray, cfg: PsoConfig, vectorized: bool) -> np.ndarray:
    """Cost at the clipped position plus ``penalty`` per dimension outside [0, 1]."""
    clipped = np.clip(positions, 0.0, 1.0)
    violations = np.count_nonzero((positions < 0.0) | (positions > 1.0), axis=-1)
    if vectorized:
        raw = np.asarray(cost(clipped), dtype=float).reshape(len(positions))
    else:
        raw = np.array([float(cost(x)) for x in clipped])
    raw = np.where(np.isfinite(raw), raw, cfg.non_finite_cost)
    return raw + cfg.penalty * violations


def pso_minimize(
    cost: Callable,
    dims: int,
    cfg: PsoConfig = PsoConfig(),
    seed: int = 0,
    vectorized: bool = False,
    initial_positions: Optional[np.ndarray] = None,
) -> PsoResult:
    """Minimize ``cost`` over ``[0, 1]^dims``.

    ``cost`` takes one vector, or the whole ``(n_particles, dims)`` swarm when
    ``vectorized`` is set. Stops after ``max_iters`` or when the global best
    has not improved by more than ``stagnation_tol`` for ``stagnation_iters``
    iterations.
    """
    if dims < 1:
        raise ConfigurationError(f"dims must be positive, got {dims}")
    rng = np.random.default_rng(seed)

    if initial_positions is None:
        positions = rng.uniform(0.0, 1.0, size=(cfg.n_particles, dims))
    else:
        positions = np.array(initial_positions, dtype=float).reshape(-1, dims)
    velocities = np.zeros_like(positions)
    costs = penalized_costs(cost, positions, cfg, vectorized)
    pbest, pbest_cost = positions.copy(), costs.copy()

    leader = int(np.argmin(pbest_cost))
    gbest, gbest_cost = pbest[leader].copy(), float(pbest_cost[leader])
    result = PsoResult(best=gbest, cost=gbest_cost, history=[gbest_cost], best_history=[gbest.copy()])
    last_improvement = 0

    for iteration in range(1, cfg.max_iters + 1):
        r1 = rng.uniform(size=positions.shape)
        r2 = rng.uniform(size=positions.shape)
        velocities = (
            cfg.w * velocities
            + cfg.c1 * r1 * (pbest - positions)
            + cfg.c2 * r2 * (gbest - positions)
        )
        positions = positions + velocities
        costs = penalized_costs(cost, positions, cfg, vectorized)

        improved = costs < pbest_cost
        pbest[improved] = positions[improved]
        pbest_cost[improved] = costs[improved]

        leader = int(np.argmin(pbest_cost))
        if pbest_cost[leader] < gbest_cost:
            if gbest_cost - pbest_cost[leader] > cfg.stagnation_tol:
                last_improvement = iteration
            gbest, gbest_cost = pbest[leader].copy(), float(pbest_cost[leader])

        result.history.append(gbest_cost)
        result.best_history.append(gbest.copy())
        result.iterations = iteration
        if iteration % LOG_EVERY == 0:
            logger.info("PSO iteration %d: best cost %.6g", iteration, gbest_cost)
        if iteration - last_improvement >= cfg.stagnation_iters:
            result.stagnated = True
            break

    result.particles = [
        Particle(position=x.copy(), velocity=v.copy(), best_position=b.copy(), best_cost=float(c))
        for x, v, b, c in zip(positions, velocities, pbest, pbest_cost)
    ]
    result.best = np.clip(gbest, 0.0, 1.0)
    result.cost = gbest_cost
    logger.info(
        "PSO finished after %d iterations (%s): best cost %.6g at %s",
        result.iterations,
        "stagnated" if result.stagnated else "iteration cap",
        gbest_cost,
        np.array2string(result.best, precision=4),
    )
    return result

