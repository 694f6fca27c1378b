"""Joint decision and control: mode switching, search and tracking objectives,
and action selection.

Each step every agent is assigned a mode (search or track) and a mobility
action.  Tracking agents independently minimize a cardinality-variance score
computed through a pseudo-update with an ideal measurement set; searching
agents jointly minimize the area-averaged probability that no searching agent
detects a target.  A genetic-algorithm backend optimizes modes and actions
together as a weighted blend of the two objectives.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import filters, models
from .geometry import Rect

log = logging.getLogger(__name__)

MODE_SEARCH = "search"
MODE_TRACK = "track"

BACKEND_GREEDY = "greedy"
BACKEND_EXHAUSTIVE = "exhaustive"
BACKEND_GA = "ga"
BACKENDS = (BACKEND_GREEDY, BACKEND_EXHAUSTIVE, BACKEND_GA)


class InfeasibleSeparationError(RuntimeError):
    """Raised when even the all-stay assignment violates the separation constraint."""


@dataclass(frozen=True)
class PlanConfig:
    """Planner settings.

    backend selects how searching agents are coordinated: "greedy" enumerates
    joint actions exhaustively while at most exhaustiveLimit agents search and
    falls back to sequential best response beyond that; "exhaustive" always
    enumerates; "ga" optimizes modes and actions jointly with a genetic
    algorithm blending the two objectives with weight w.
    """

    dMin: float = 5.0
    gridStep: float = 2.0
    backend: str = BACKEND_GREEDY
    exhaustiveLimit: int = 2
    powerSetModes: bool = False
    w: float = 0.5
    gaPopulation: int = 64
    gaMaxIters: int = 30
    gaEpsilon: float = 1e-4
    gaMutation: float | None = None  # per-agent gene rate; None means 1/|S|

    def __post_init__(self):
        if self.dMin < 0:
            raise ValueError("dMin must be non-negative")
        if self.gridStep <= 0:
            raise ValueError("gridStep must be positive")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")
        if self.gaPopulation < 2:
            raise ValueError("gaPopulation must be at least 2")
        if self.gaMaxIters < 0:
            raise ValueError("gaMaxIters must be non-negative")
        if self.gaEpsilon < 0:
            raise ValueError("gaEpsilon must be non-negative")
        if self.exhaustiveLimit < 0:
            raise ValueError("exhaustiveLimit must be non-negative")


@dataclass(frozen=True)
class ModeAssignment:
    """Partition of agent indices into searchers and trackers."""

    searchSet: frozenset
    trackSet: frozenset


@dataclass
class PlanResult:
    """Chosen modes and actions plus the achieved objective values."""

    modes: ModeAssignment
    actions: dict  # agent index -> chosen position (2,)
    searchCost: float
    trackCosts: dict  # agent index -> tracking score of the chosen action
    separationFallback: bool = False


def predicted_target_estimates(density) -> np.ndarray:
    """Pre-estimated target states: means of components with existence above 0.5."""
    states = [c.mean() for c in density if c.r > 0.5]
    if not states:
        return np.zeros((0, 4))
    return np.array(states)


def pims(predicted_states, u) -> list[models.Measurement]:
    """Predicted ideal measurement set: the noise-free, clutter-free measurement
    of every predicted state as seen from hypothesized position u (the mode of
    a Gaussian likelihood is its mean)."""
    states = np.asarray(predicted_states, dtype=float).reshape(-1, 4)
    return [models.noise_free_measurement(x, u) for x in states]


def tracking_score(stats: filters.CardinalityStats, v: int) -> float:
    """Cardinality-variance tracking score: 4 sigma / v when at least one target
    is expected, otherwise the maximal score 1."""
    if stats.nHat >= 1.0 and v > 0:
        return 4.0 * stats.variance / v
    return 1.0


def tracking_cost(
    predictive,
    u,
    sp: models.SensingParams,
    area: Rect,
    predicted_states: np.ndarray | None = None,
) -> float:
    """Tracking objective for hypothesized position u, in [0, 1] (lower is better).

    A pseudo-update of the predictive density with the ideal measurement set
    generated at u yields a pseudo-posterior; the score is the normalized
    cardinality variance of that posterior.  Degenerate pseudo-updates fall
    back to the maximal cost.
    """
    if predicted_states is None:
        predicted_states = predicted_target_estimates(predictive)
    try:
        Z = pims(predicted_states, u)
        pseudo = filters.update(predictive, Z, u, sp, area)
    except models.CoincidentPositionsError:
        return 1.0
    return tracking_score(filters.cardinality(pseudo), len(pseudo))


def search_value_at(p, actions):
    """Joint search value at locations p (..., 2): the probability that no listed
    agent detects a target there, assuming detection independence.

    ``actions`` is a sequence of (position, SensingParams) pairs.
    """
    p = np.asarray(p, dtype=float)
    val = np.ones(p.shape[:-1])
    for u, sp in actions:
        val = val * (1.0 - models.detection_prob_at(p, u, sp))
    if val.ndim == 0:
        return float(val)
    return val


def search_cost(actions, sp: models.SensingParams, area: Rect, gridStep: float = 2.0) -> float:
    """Area-averaged joint search value over the surveillance area, in [0, 1].

    Computed by midpoint quadrature on a regular grid.  An empty agent set is
    defined to cost 1 (nothing is being searched).
    """
    positions = list(actions.values()) if isinstance(actions, Mapping) else list(actions)
    if not positions:
        return 1.0
    grid = area.grid_centers(gridStep)
    vals = search_value_at(grid, [(u, sp) for u in positions])
    return float(vals.mean())


def select_modes(densities) -> ModeAssignment:
    """Mode per agent: track when the expected number of targets in its current
    density reaches one, search otherwise."""
    search, track = set(), set()
    for j, d in enumerate(densities):
        if sum(c.r for c in d) >= 1.0:
            track.add(j)
        else:
            search.add(j)
    return ModeAssignment(frozenset(search), frozenset(track))


def _candidate_fields(cands: np.ndarray, sp: models.SensingParams, grid: np.ndarray) -> np.ndarray:
    """Per-candidate miss-probability fields 1 - pD over the grid, shape (K, G)."""
    # One distance matrix per agent: (K, G)
    d = np.linalg.norm(grid[None, :, :] - cands[:, None, :], axis=-1)
    pd = np.where(d < sp.R0, sp.pDmax, np.maximum(0.0, sp.pDmax - sp.eta * (d - sp.R0)))
    return 1.0 - pd


def _separation_mask(cands: np.ndarray, others: list, d_min: float) -> np.ndarray:
    """Boolean mask of candidates farther than d_min from every listed position."""
    if not others:
        return np.ones(len(cands), dtype=bool)
    o = np.asarray(others, dtype=float)
    d = np.linalg.norm(cands[:, None, :] - o[None, :, :], axis=-1)
    return np.all(d > d_min, axis=1)


def plan(
    agents,
    densities,
    predicted_states=None,
    *,
    cfg: PlanConfig,
    sp: models.SensingParams,
    cp: models.ControlParams,
    area: Rect,
) -> PlanResult:
    """Heuristic one-step planner: modes from the cardinality threshold, per-agent
    tracking optimization, and joint (exhaustive or sequential-greedy) search
    optimization, all under the pairwise minimum-separation constraint.

    Separation is enforced conservatively: a candidate must clear both the
    already-committed new positions and the current positions of agents not yet
    committed, which keeps the stay action feasible for everyone as long as the
    current positions are themselves separated.
    """
    agents = [np.asarray(s, dtype=float) for s in agents]
    if predicted_states is None:
        predicted_states = [predicted_target_estimates(d) for d in densities]
    if cfg.powerSetModes and cfg.backend == BACKEND_EXHAUSTIVE:
        return _plan_power_set(agents, densities, predicted_states, cfg, sp, cp, area)
    modes = select_modes(densities)
    return _plan_with_modes(agents, densities, predicted_states, modes, cfg, sp, cp, area)


def _plan_with_modes(
    agents, densities, predicted_states, modes, cfg, sp, cp, area
) -> PlanResult:
    J = len(agents)
    cands = [models.admissible_controls(s, cp, area) for s in agents]
    chosen: dict = {}
    track_costs: dict = {}
    fallback = False

    def feasible(j: int) -> np.ndarray:
        others = [chosen[i] for i in chosen] + [
            agents[i] for i in range(J) if i != j and i not in chosen
        ]
        return _separation_mask(cands[j], others, cfg.dMin)

    # Tracking agents commit first, in index order, each minimizing its own score.
    for j in sorted(modes.trackSet):
        mask = feasible(j)
        if not mask.any():
            log.warning("agent %d has no separation-feasible action; staying put", j)
            chosen[j] = cands[j][0]
            track_costs[j] = tracking_cost(densities[j], cands[j][0], sp, area, predicted_states[j])
            fallback = True
            continue
        best_idx, best_cost = -1, np.inf
        for k in np.flatnonzero(mask):
            cost = tracking_cost(densities[j], cands[j][k], sp, area, predicted_states[j])
            if cost < best_cost:
                best_idx, best_cost = int(k), cost
        chosen[j] = cands[j][best_idx]
        track_costs[j] = best_cost

    search_idx = sorted(modes.searchSet)
    if search_idx:
        committed = [chosen[i] for i in chosen]
        exhaustive = cfg.backend == BACKEND_EXHAUSTIVE or (
            cfg.backend == BACKEND_GREEDY and len(search_idx) <= cfg.exhaustiveLimit
        )
        grid = area.grid_centers(cfg.gridStep)
        fields = {j: _candidate_fields(cands[j], sp, grid) for j in search_idx}
        if exhaustive:
            picks, cost = _search_exhaustive(
                search_idx, cands, fields, committed, cfg.dMin, agents
            )
        else:
            picks, cost = _search_greedy(search_idx, cands, fields, committed, cfg.dMin, agents)
        if picks is None:
            log.warning("no separation-feasible joint search assignment; staying put")
            fallback = True
            picks = {j: 0 for j in search_idx}
            cost = float(
                np.prod([fields[j][0] for j in search_idx], axis=0).mean()
            )
        for j in search_idx:
            chosen[j] = cands[j][picks[j]]
        search_cost_value = cost
    else:
        search_cost_value = 1.0

    actions = {j: chosen[j] for j in range(J)}
    if not fallback:
        pos = np.array([actions[j] for j in range(J)])
        if J > 1:
            dists = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
            iu = np.triu_indices(J, k=1)
            if np.any(dists[iu] <= cfg.dMin):
                fallback = True
                log.warning("chosen actions violate the separation contract")
    return PlanResult(modes, actions, search_cost_value, track_costs, fallback)


def _search_exhaustive(search_idx, cands, fields, committed, d_min, agents):
    """Minimize the joint search cost over the product of feasible candidates."""
    # Candidates are first screened against the committed (tracker) positions;
    # separation between searching agents is checked per joint combination.
    allowed = {
        j: np.flatnonzero(_separation_mask(cands[j], list(committed), d_min))
        for j in search_idx
    }
    if any(len(a) == 0 for a in allowed.values()):
        return None, None
    best_combo, best_cost = None, np.inf
    for combo in itertools.product(*(allowed[j] for j in search_idx)):
        pos = [cands[j][k] for j, k in zip(search_idx, combo)]
        ok = True
        for a in range(len(pos)):
            for b in range(a + 1, len(pos)):
                if np.linalg.norm(pos[a] - pos[b]) <= d_min:
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            continue
        joint = fields[search_idx[0]][combo[0]].copy()
        for j, k in zip(search_idx[1:], combo[1:]):
            joint *= fields[j][k]
        cost = float(joint.mean())
        if cost < best_cost:
            best_cost = cost
            best_combo = dict(zip(search_idx, (int(k) for k in combo)))
    if best_combo is None:
        return None, None
    return best_combo, best_cost


def _search_greedy(search_idx, cands, fields, committed, d_min, agents):
    """Sequential best response in agent-index order; undecided searchers are
    assumed to stay at their current positions."""
    J = len(agents)
    picks: dict = {}
    for pos_in_order, j in enumerate(search_idx):
        decided = [cands[i][picks[i]] for i in search_idx[:pos_in_order]]
        undecided_current = [agents[i] for i in search_idx[pos_in_order + 1 :]]
        mask = _separation_mask(cands[j], list(committed) + decided + undecided_current, d_min)
        if not mask.any():
            return None, None
        others_field = np.ones(fields[j].shape[1])
        for i in search_idx[:pos_in_order]:
            others_field = others_field * fields[i][picks[i]]
        for i in search_idx[pos_in_order + 1 :]:
            others_field = others_field * fields[i][0]  # stay for the undecided
        costs = fields[j] @ others_field / fields[j].shape[1]
        costs[~mask] = np.inf
        picks[j] = int(np.argmin(costs))
    joint = np.ones(fields[search_idx[0]].shape[1])
    for j in search_idx:
        joint = joint * fields[j][picks[j]]
    return picks, float(joint.mean())


def _plan_power_set(agents, densities, predicted_states, cfg, sp, cp, area) -> PlanResult:
    """Exhaustive mode search: evaluate every search/track partition and keep the
    assignment with the smallest total cost (search cost plus tracking scores).

    Exponential in the number of agents; intended for small teams only.
    """
    J = len(agents)
    if J > 4:
        raise ValueError("power-set mode search is limited to at most 4 agents")
    best: PlanResult | None = None
    best_total = np.inf
    for bits in range(2**J):
        track = frozenset(j for j in range(J) if bits & (1 << j))
        modes = ModeAssignment(frozenset(range(J)) - track, track)
        result = _plan_with_modes(
            agents, densities, predicted_states, modes, cfg, sp, cp, area
        )
        total = result.searchCost + sum(result.trackCosts.values())
        if total < best_total:
            best, best_total = result, total
    assert best is not None
    return best


def evaluate_assignment(
    modes: ModeAssignment,
    actions: Mapping,
    densities,
    predicted_states=None,
    *,
    cfg: PlanConfig,
    sp: models.SensingParams,
    area: Rect,
) -> float:
    """Blended objective w * search + (1 - w) * track of a full assignment.

    The tracking term is the mean tracking score over tracking agents (zero when
    no agent tracks); the search term is the joint search cost of the searching
    agents' actions (one when no agent searches).
    """
    if predicted_states is None:
        predicted_states = [predicted_target_estimates(d) for d in densities]
    xi_search = search_cost(
        {j: actions[j] for j in sorted(modes.searchSet)}, sp, area, cfg.gridStep
    )
    if modes.trackSet:
        xi_track = float(
            np.mean(
                [
                    tracking_cost(densities[j], actions[j], sp, area, predicted_states[j])
                    for j in sorted(modes.trackSet)
                ]
            )
        )
    else:
        xi_track = 0.0
    return cfg.w * xi_search + (1.0 - cfg.w) * xi_track


def plan_ga(
    agents,
    densities,
    predicted_states=None,
    *,
    cfg: PlanConfig,
    sp: models.SensingParams,
    cp: models.ControlParams,
    area: Rect,
    rng: np.random.Generator,
) -> PlanResult:
    """Genetic-algorithm planner over joint (mode, action) decisions.

    Each agent contributes one gene encoding a one-hot (mode, action) choice;
    candidates violating the pairwise separation constraint are pruned by
    assigning infinite fitness.  The population is seeded with the heuristic
    planner's assignment (and the all-stay-search assignment), so the returned
    fitness never exceeds the heuristic's.  Terminates after gaMaxIters
    generations or when the best fitness improves by less than gaEpsilon.
    """
    agents = [np.asarray(s, dtype=float) for s in agents]
    J = len(agents)
    if predicted_states is None:
        predicted_states = [predicted_target_estimates(d) for d in densities]
    cands = [models.admissible_controls(s, cp, area) for s in agents]
    K = [len(c) for c in cands]
    grid = area.grid_centers(cfg.gridStep)
    fields = [_candidate_fields(cands[j], sp, grid) for j in range(J)]
    track_tables = [
        np.array(
            [tracking_cost(densities[j], u, sp, area, predicted_states[j]) for u in cands[j]]
        )
        for j in range(J)
    ]

    def decode(genes):
        modes = [MODE_TRACK if genes[j] >= K[j] else MODE_SEARCH for j in range(J)]
        acts = [genes[j] - K[j] if genes[j] >= K[j] else genes[j] for j in range(J)]
        return modes, acts

    def feasible(genes) -> bool:
        _, acts = decode(genes)
        pos = np.array([cands[j][acts[j]] for j in range(J)])
        if J == 1:
            return True
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        iu = np.triu_indices(J, k=1)
        return bool(np.all(d[iu] > cfg.dMin))

    def fitness(genes) -> float:
        if not feasible(genes):
            return np.inf
        modes, acts = decode(genes)
        s_idx = [j for j in range(J) if modes[j] == MODE_SEARCH]
        t_idx = [j for j in range(J) if modes[j] == MODE_TRACK]
        if s_idx:
            joint = np.ones(grid.shape[0])
            for j in s_idx:
                joint = joint * fields[j][acts[j]]
            xi_search = float(joint.mean())
        else:
            xi_search = 1.0
        xi_track = float(np.mean([track_tables[j][acts[j]] for j in t_idx])) if t_idx else 0.0
        return cfg.w * xi_search + (1.0 - cfg.w) * xi_track

    heuristic = plan(
        agents, densities, predicted_states, cfg=cfg, sp=sp, cp=cp, area=area
    )
    seed = tuple(
        (K[j] if j in heuristic.modes.trackSet else 0)
        + int(
            np.argmin(np.linalg.norm(cands[j] - heuristic.actions[j], axis=1))
        )
        for j in range(J)
    )
    all_stay = tuple(0 for _ in range(J))
    population = [seed, all_stay]
    if J == 1:
        # The whole joint space fits in one population; enumerate it outright.
        population.extend((g,) for g in range(2 * K[0]))
    while len(population) < cfg.gaPopulation:
        population.append(tuple(int(rng.integers(2 * K[j])) for j in range(J)))

    scores = [fitness(g) for g in population]
    best_idx = int(np.argmin(scores))
    best, best_f = population[best_idx], scores[best_idx]
    if not np.isfinite(best_f):
        log.warning("no separation-feasible GA candidate; falling back to all-stay")
        modes = select_modes(densities)
        actions = {j: cands[j][0] for j in range(J)}
        s_cost = search_cost(
            {j: actions[j] for j in sorted(modes.searchSet)}, sp, area, cfg.gridStep
        )
        return PlanResult(modes, actions, s_cost, {}, separationFallback=True)

    mut = cfg.gaMutation if cfg.gaMutation is not None else 1.0 / J
    for _ in range(cfg.gaMaxIters):
        children = [best]
        while len(children) < len(population):
            pa = _tournament(population, scores, rng)
            pb = _tournament(population, scores, rng)
            if J >= 2:
                cut = int(rng.integers(1, J))
                child = list(pa[:cut] + pb[cut:])
            else:
                child = list(pa)
            for j in range(J):
                if rng.random() < mut:
                    child[j] = int(rng.integers(2 * K[j]))
            children.append(tuple(child))
        population = children
        scores = [fitness(g) for g in population]
        gen_best = int(np.argmin(scores))
        improvement = best_f - scores[gen_best]
        if scores[gen_best] < best_f:
            best, best_f = population[gen_best], scores[gen_best]
        if improvement < cfg.gaEpsilon:
            break

    modes_list, acts = decode(best)
    track = frozenset(j for j in range(J) if modes_list[j] == MODE_TRACK)
    modes = ModeAssignment(frozenset(range(J)) - track, track)
    actions = {j: cands[j][acts[j]] for j in range(J)}
    s_cost = search_cost(
        {j: actions[j] for j in sorted(modes.searchSet)}, sp, area, cfg.gridStep
    )
    track_costs = {j: float(track_tables[j][acts[j]]) for j in sorted(track)}
    return PlanResult(modes, actions, s_cost, track_costs, separationFallback=False)


def _tournament(population, scores, rng) -> tuple:
    i, j = rng.integers(len(population), size=2)
    return population[i] if scores[i] <= scores[j] else population[j]
