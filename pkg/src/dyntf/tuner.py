"""Differential-evolution adaptation of the regularization pair.

A swarm of P individuals each carries a hyperparameter vector
v = (lam, lam_b) and a private copy of the factor model. Every outer
iteration each individual advances its model by one multiplicative-update
epoch under its own hyperparameters and is scored by the validation
fitness H = RMSE/2 + MAE/2. New vectors come from mutation around the
global best tau,

    candidate = tau + mu * (v_r1 - v_r2)    (clamped into bounds)

followed by binomial crossover with the previous vector.

Two best-selection rules are provided. "argmin_h" replaces tau whenever
an individual's H beats tau's recorded H, which makes the recorded-H
sequence non-increasing. "paper_f" scores individuals by the normalized
consecutive-H difference

    F_p = (H(v_p) - H(v_{p-1})) / (H(v_P) - H_prev)

with H(v_0) taken as H_prev, the last individual's H from the previous
iteration, and sweeps p = 1..P replacing tau whenever F_p > F_{p-1}
(F_0 = 0). When the F denominator is zero the fitness is undefined and
that iteration falls back to argmin_h.

RNG is split into one stream per individual derived from the master
seed, so concurrent and sequential evaluation schedules draw identical
values.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricSeries, convergence_rounds
from .model import FactorModel, HyperParams
from .trainer import TrainConfig, TrainReport, nmu_epoch, validation_metrics


@dataclass
class DEAConfig:
    """Differential-evolution settings.

    bounds is (lam_min, lam_max, lam_b_min, lam_b_max). max_iterations
    caps the outer loop on its own; the training epoch cap applies as
    well since each iteration costs each individual one epoch.
    """

    population: int = 10
    max_iterations: int = 1000
    scale_factor: float = 0.4
    crossover_prob: float = 0.9
    bounds: tuple[float, float, float, float] = (1e-4, 0.5, 1e-4, 0.5)
    best_rule: str = "argmin_h"
    seed: int | np.random.SeedSequence = 0

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0 <= self.crossover_prob <= 1):
            raise ValueError("crossover_prob must lie in [0, 1]")
        lo1, hi1, lo2, hi2 = self.bounds
        if lo1 > hi1 or lo2 > hi2:
            raise ValueError("bounds must be ordered (min <= max)")
        if self.best_rule not in ("argmin_h", "paper_f"):
            raise ValueError("best_rule must be 'argmin_h' or 'paper_f'")


@dataclass
class Individual:
    """One hyperparameter vector with its private model replica."""

    v: np.ndarray
    model: FactorModel = field(repr=False)
    rng: np.random.Generator = field(repr=False)
    h_current: float | None = None
    fitness: float | None = None
    rmse_current: float | None = None
    mae_current: float | None = None

    def hyperparams(self) -> HyperParams:
        return HyperParams(lam=float(self.v[0]), lam_b=float(self.v[1]))


@dataclass
class Swarm:
    individuals: list[Individual]
    tau: np.ndarray
    tau_h: float
    iteration: int = 0


def init_swarm(config: DEAConfig, template: FactorModel) -> Swarm:
    """Draw P vectors inside bounds and clone the template per individual.

    Each vector component is min + theta * (max - min) with a fresh
    theta ~ uniform[0, 1). tau starts as the first individual's vector
    with an infinite recorded H, pending the first evaluation.
    """
    seed = config.seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    lo1, hi1, lo2, hi2 = config.bounds
    individuals = []
    for child in ss.spawn(config.population):
        rng = np.random.default_rng(child)
        theta = rng.random(2)
        v = np.array([lo1 + theta[0] * (hi1 - lo1), lo2 + theta[1] * (hi2 - lo2)])
        individuals.append(Individual(v=v, model=template.copy(), rng=rng))
    return Swarm(individuals=individuals, tau=individuals[0].v.copy(),
                 tau_h=math.inf, iteration=0)


def mutate_and_bound(swarm: Swarm, p: int, config: DEAConfig) -> np.ndarray:
    """tau + mu * (v_r1 - v_r2) with r1 != r2, both != p, clamped into bounds."""
    if len(swarm.individuals) < 3:
        raise ValueError("mutation needs at least 3 individuals")
    ind = swarm.individuals[p]
    others = [q for q in range(len(swarm.individuals)) if q != p]
    pick = ind.rng.choice(len(others), size=2, replace=False)
    r1, r2 = others[pick[0]], others[pick[1]]
    candidate = swarm.tau + config.scale_factor * (swarm.individuals[r1].v
                                                   - swarm.individuals[r2].v)
    lo1, hi1, lo2, hi2 = config.bounds
    candidate[0] = min(max(candidate[0], lo1), hi1)
    candidate[1] = min(max(candidate[1], lo2), hi2)
    return candidate


def crossover(previous: np.ndarray, mutant: np.ndarray, config: DEAConfig,
              rng: np.random.Generator) -> np.ndarray:
    """Binomial crossover: take the mutant component where theta <= C_p or
    at the one forced dimension m*, otherwise keep the previous component."""
    dim = previous.size
    m_star = int(rng.integers(dim))
    theta = rng.random(dim)
    take = theta <= config.crossover_prob
    take[m_star] = True
    return np.where(take, mutant, previous)


def evaluate_individual(individual: Individual, train, validation,
                        mode: str = "att", denom_floor: float = 1e-12,
                        threads: int = 1) -> float:
    """One epoch on the individual's private model, then validation H.

    Stores h_current (and the underlying rmse/mae) on the individual and
    returns H.
    """
    nmu_epoch(individual.model, train, individual.hyperparams(),
              mode=mode, denom_floor=denom_floor, threads=threads)
    r, m, h = validation_metrics(individual.model, validation)
    individual.rmse_current = r
    individual.mae_current = m
    individual.h_current = h
    return h


def paper_fitness(h_values, h_last: float) -> np.ndarray | None:
    """Normalized consecutive-H differences, or None when the denominator
    (H of the last individual this iteration minus h_last) is zero."""
    h = np.asarray(h_values, dtype=float)
    denom = h[-1] - h_last
    if denom == 0:
        return None
    prev = np.concatenate(([h_last], h[:-1]))
    return (h - prev) / denom


def update_best(swarm: Swarm, config: DEAConfig) -> np.ndarray:
    """Refresh tau from the evaluated individuals and return it.

    Under paper_f every individual must carry a fitness value; if any is
    None (undefined fitness this iteration) the argmin_h rule is applied
    instead, as documented.
    """
    inds = swarm.individuals
    use_paper = (config.best_rule == "paper_f"
                 and all(ind.fitness is not None for ind in inds))
    if use_paper:
        f_prev = 0.0
        for ind in inds:
            if ind.fitness > f_prev:
                swarm.tau = ind.v.copy()
                swarm.tau_h = ind.h_current
            f_prev = ind.fitness
    else:
        best = min(range(len(inds)), key=lambda q: inds[q].h_current)
        if inds[best].h_current < swarm.tau_h:
            swarm.tau = inds[best].v.copy()
            swarm.tau_h = inds[best].h_current
    return swarm.tau


def adapt_train(template: FactorModel, train, validation, dea: DEAConfig,
                tc: TrainConfig, threads: int = 1,
                on_iteration=None) -> tuple[FactorModel, TrainReport]:
    """Full adaptive run: evolve (lam, lam_b) while training the swarm.

    Per iteration: evaluate every individual (one epoch each), build the
    next-iteration trial vectors from the current population and tau,
    compute fitness under the configured rule, update tau, then install
    the trial vectors. Stops at min(max_iterations, max_epochs) or once
    the best H changes by less than the tolerance between iterations,
    where "best H" is the iteration's minimum H under argmin_h and tau's
    recorded H under paper_f.

    The returned model is the replica of the lowest-H individual; the
    report's final_hp echoes tau, and its per-epoch series track the
    iteration-best individual. `on_iteration(swarm)` runs after each
    tau update, for callers that want to watch the swarm.

    Args:
        template: starting parameters, copied into each individual.
        threads: individuals evaluated concurrently when > 1 (results are
            schedule-independent; each replica is private).
    """
    if validation.n_entries == 0:
        raise ValueError("empty validation set")
    template.validate()
    swarm = init_swarm(dea, template)
    # H of the untrained template stands in for the previous iteration's
    # last-individual H on the first fitness evaluation
    _, _, h_last = validation_metrics(template, validation)

    cap = min(dea.max_iterations, tc.max_epochs)
    rmse_trace: list[float] = []
    mae_trace: list[float] = []
    h_trace: list[float] = []
    termination = "max_epochs"
    h_best_prev: float | None = None
    for t in range(1, cap + 1):
        swarm.iteration = t
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(
                    lambda ind: evaluate_individual(ind, train, validation,
                                                    mode=tc.mode,
                                                    denom_floor=tc.denom_floor),
                    swarm.individuals))
        else:
            for ind in swarm.individuals:
                evaluate_individual(ind, train, validation, mode=tc.mode,
                                    denom_floor=tc.denom_floor)
        h_values = [ind.h_current for ind in swarm.individuals]

        # next-iteration vectors come from the evaluated population snapshot
        trials = []
        for p, ind in enumerate(swarm.individuals):
            mutant = mutate_and_bound(swarm, p, dea)
            trials.append(crossover(ind.v, mutant, dea, ind.rng))

        if dea.best_rule == "paper_f":
            fit = paper_fitness(h_values, h_last)
            for p, ind in enumerate(swarm.individuals):
                ind.fitness = None if fit is None else float(fit[p])
        update_best(swarm, dea)

        best_idx = int(np.argmin(h_values))
        rmse_trace.append(swarm.individuals[best_idx].rmse_current)
        mae_trace.append(swarm.individuals[best_idx].mae_current)
        h_trace.append(h_values[best_idx])
        h_best = h_values[best_idx] if dea.best_rule == "argmin_h" else swarm.tau_h

        if on_iteration is not None:
            on_iteration(swarm)

        if h_best_prev is not None and abs(h_best - h_best_prev) < tc.tolerance:
            termination = "tolerance"
            break
        h_best_prev = h_best
        h_last = h_values[-1]
        for ind, trial in zip(swarm.individuals, trials):
            ind.v = trial

    best = min(swarm.individuals, key=lambda ind: ind.h_current)
    final_hp = HyperParams(lam=float(swarm.tau[0]), lam_b=float(swarm.tau[1]))
    report = TrainReport(
        epochs_run=len(h_trace),
        per_epoch_rmse=rmse_trace,
        per_epoch_mae=mae_trace,
        per_epoch_h=h_trace,
        cr_rmse=convergence_rounds(MetricSeries(rmse_trace, tc.tolerance)),
        cr_mae=convergence_rounds(MetricSeries(mae_trace, tc.tolerance)),
        termination=termination,
        final_hp=final_hp,
        best_lambda=float(swarm.tau[0]),
        best_lambda_b=float(swarm.tau[1]),
        population=dea.population,
        best_rule=dea.best_rule,
    )
    return best.model, report
