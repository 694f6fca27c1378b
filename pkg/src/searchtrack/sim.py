"""Scenario engine: scripted ground truth, measurement generation, the per-step
closed loop (predict, plan, move, measure, update) and Monte Carlo batching.

A scenario fully determines an episode: identical scenarios (including the
seed) produce bit-identical logs.  Trials of a Monte Carlo batch use derived
seeds and independent substreams, so they may run in parallel processes without
changing any result.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import control, filters, metrics, models
from .control import PlanConfig
from .filters import BirthModel
from .geometry import Rect
from .rng import substream

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """Raised when a scenario violates one of its invariants."""


@dataclass(frozen=True, eq=False)
class TargetScript:
    """A scripted target: alive on [birthStep, deathStep], evolving from birthState."""

    birthStep: int
    deathStep: int
    birthState: np.ndarray  # (4,) [px, vx, py, vy]

    def __post_init__(self):
        object.__setattr__(self, "birthState", np.asarray(self.birthState, dtype=float))
        if self.birthState.shape != (4,):
            raise ScenarioError("target birthState must be a 4-vector [px, vx, py, vy]")


@dataclass(frozen=True)
class FilterParams:
    """SMC housekeeping knobs: particles per component, pruning threshold, cap."""

    nParticles: int = 500
    rMin: float = 1e-3
    vMax: int = 100

    def __post_init__(self):
        if self.nParticles < 1:
            raise ValueError("nParticles must be positive")
        if self.rMin < 0:
            raise ValueError("rMin must be non-negative")
        if self.vMax < 1:
            raise ValueError("vMax must be positive")


@dataclass(frozen=True)
class MetricParams:
    """Evaluation settings recorded into episode logs."""

    ospaC: float = 100.0
    ospaP: float = 2.0
    coverageThreshold: float = 0.5

    def __post_init__(self):
        metrics.OspaParams(self.ospaC, self.ospaP)
        if not 0.0 < self.coverageThreshold <= 1.0:
            raise ValueError("coverageThreshold must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything needed to run one reproducible episode."""

    area: Rect = Rect(0.0, 100.0, 0.0, 100.0)
    horizon: int = 100
    seed: int = 0
    targets: tuple = ()
    truthQScale: float = 1.0  # scales process noise for scripted truth only
    agentStarts: tuple | None = None  # explicit (2,) positions, or None to spawn
    agentCount: int = 3  # used when spawning
    spawn: Rect | None = None  # spawn region; None means the whole area
    motion: models.MotionParams = field(default_factory=models.MotionParams)
    sensing: models.SensingParams = field(default_factory=models.SensingParams)
    control: models.ControlParams = field(default_factory=models.ControlParams)
    birth: BirthModel = field(default_factory=BirthModel)
    filter: FilterParams = field(default_factory=FilterParams)
    plan: PlanConfig = field(default_factory=PlanConfig)
    metrics: MetricParams = field(default_factory=MetricParams)

    def validate(self) -> None:
        if self.horizon < 1:
            raise ScenarioError("horizon must be at least 1")
        if self.seed < 0:
            raise ScenarioError("seed must be non-negative")
        if self.truthQScale < 0:
            raise ScenarioError("truthQScale must be non-negative")
        for i, t in enumerate(self.targets, start=1):
            if not 1 <= t.birthStep <= t.deathStep <= self.horizon:
                raise ScenarioError(
                    f"target {i}: requires 1 <= birthStep <= deathStep <= horizon"
                )
            if not self.area.contains(t.birthState[[0, 2]]):
                raise ScenarioError(f"target {i}: birth position lies outside the area")
        if self.agentStarts is not None:
            starts = [np.asarray(s, dtype=float) for s in self.agentStarts]
            if not starts:
                raise ScenarioError("agentStarts must not be empty")
            for j, s in enumerate(starts, start=1):
                if not self.area.contains(s):
                    raise ScenarioError(f"agent {j}: start position lies outside the area")
            for a in range(len(starts)):
                for b in range(a + 1, len(starts)):
                    if np.linalg.norm(starts[a] - starts[b]) <= self.plan.dMin:
                        raise ScenarioError(
                            f"agent starts {a + 1} and {b + 1} violate the dMin separation"
                        )
        else:
            if self.agentCount < 1:
                raise ScenarioError("agentCount must be at least 1")
            box = self.spawn if self.spawn is not None else self.area
            if not (
                box.xmin >= self.area.xmin
                and box.xmax <= self.area.xmax
                and box.ymin >= self.area.ymin
                and box.ymax <= self.area.ymax
            ):
                raise ScenarioError("spawn region must lie inside the area")

    def agent_count(self) -> int:
        return len(self.agentStarts) if self.agentStarts is not None else self.agentCount


def with_agent_count(scenario: Scenario, count: int) -> Scenario:
    """Copy of the scenario with the given number of agents."""
    if scenario.agentStarts is not None:
        if count > len(scenario.agentStarts):
            raise ScenarioError(
                f"scenario provides only {len(scenario.agentStarts)} explicit starts"
            )
        return replace(scenario, agentStarts=tuple(scenario.agentStarts[:count]))
    return replace(scenario, agentCount=count)


@dataclass
class StepRecord:
    """Everything logged for one closed-loop step."""

    step: int
    agents: np.ndarray  # (J, 2) positions after moving
    modes: tuple
    nHat: tuple
    variance: tuple
    nRounded: tuple
    estimates: tuple  # per agent: (m, 4) state estimates
    truthIds: tuple
    truthStates: np.ndarray  # (n, 4)
    measurements: tuple  # per agent: list of Measurement
    searchCost: float
    ospa: float
    coverage: float
    separationFallback: bool


@dataclass
class EpisodeLog:
    """Per-step record of one episode, for analysis and CSV emission."""

    scenario: Scenario
    startPositions: np.ndarray  # (J, 2)
    steps: list


def ground_truth(scenario: Scenario, rng: np.random.Generator) -> list:
    """Scripted per-step true target sets.

    Returns a list indexed by step (1-based; index 0 unused) of lists of
    (target id, state) pairs.  Births and deaths happen exactly at the scripted
    steps; between them states evolve by the target motion model, with the
    process noise scaled by truthQScale so scripted trajectories can be made
    as repeatable as an experiment requires.
    """
    mp = scenario.motion
    if scenario.truthQScale != 1.0:
        mp = models.MotionParams(
            T=mp.T, pS=mp.pS, F=mp.F, Q=scenario.truthQScale * mp.Q
        )
    steps: list = [[] for _ in range(scenario.horizon + 1)]
    for tid, t in enumerate(scenario.targets, start=1):
        x = t.birthState.copy()
        for k in range(t.birthStep, t.deathStep + 1):
            if k <= scenario.horizon:
                steps[k].append((tid, x.copy()))
            if k < t.deathStep:
                x = models.target_step(x, mp, rng)
    return steps


def generate_measurements(
    true_states,
    s,
    sp: models.SensingParams,
    area: Rect,
    rng: np.random.Generator,
) -> list:
    """One scan: detections of the true targets plus Poisson clutter.

    Each target is detected independently with its detection probability and
    then measured with range-dependent noise; clutter is uniform over the
    bearing-range window.  The output order is randomized, since measurement
    sets carry no order information.
    """
    out = []
    for x in true_states:
        if rng.random() < models.detection_prob(x, s, sp):
            out.append(models.measure(x, s, sp, rng))
    for _ in range(rng.poisson(sp.lambdaClutter)):
        bearing = rng.uniform(-np.pi, np.pi)
        rng_ = rng.uniform(0.0, area.diagonal)
        out.append(models.Measurement(float(bearing), float(rng_)))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def _spawn_positions(scenario: Scenario, rng: np.random.Generator) -> list:
    box = scenario.spawn if scenario.spawn is not None else scenario.area
    positions: list = []
    for j in range(scenario.agentCount):
        for _ in range(10_000):
            p = box.sample(rng)
            if all(np.linalg.norm(p - q) > scenario.plan.dMin for q in positions):
                positions.append(p)
                break
        else:
            raise ScenarioError(
                "could not spawn agents with the required pairwise separation"
            )
    return positions


def run_episode(scenario: Scenario) -> EpisodeLog:
    """Run one closed-loop episode.

    Per step: per-agent prediction, joint planning, agent motion, measurement
    generation from the new positions, per-agent update and pruning, metric
    logging.  Planner failures are logged and recovered with stay actions and a
    measurement-free update for that step.
    """
    scenario.validate()
    seed = scenario.seed
    truth = ground_truth(scenario, substream(seed, "truth"))

    if scenario.agentStarts is not None:
        positions = [np.asarray(s, dtype=float) for s in scenario.agentStarts]
    else:
        positions = _spawn_positions(scenario, substream(seed, "spawn"))
    J = len(positions)
    start_positions = np.array(positions)

    birth_rngs = [substream(seed, "agent", j, "birth") for j in range(J)]
    meas_rngs = [substream(seed, "agent", j, "measure") for j in range(J)]
    resample_rngs = [substream(seed, "agent", j, "resample") for j in range(J)]
    plan_rng = substream(seed, "plan")

    fp = scenario.filter
    posteriors = [[] for _ in range(J)]
    records: list = []

    for k in range(1, scenario.horizon + 1):
        preds = [
            filters.predict(posteriors[j], scenario.motion, scenario.birth, scenario.area, birth_rngs[j])
            for j in range(J)
        ]
        pstates = [control.predicted_target_estimates(d) for d in preds]
        recovery = False
        try:
            if scenario.plan.backend == control.BACKEND_GA:
                result = control.plan_ga(
                    positions, preds, pstates,
                    cfg=scenario.plan, sp=scenario.sensing, cp=scenario.control,
                    area=scenario.area, rng=plan_rng,
                )
            else:
                result = control.plan(
                    positions, preds, pstates,
                    cfg=scenario.plan, sp=scenario.sensing, cp=scenario.control,
                    area=scenario.area,
                )
        except Exception:
            log.exception("planner failed at step %d; recovering with stay actions", k)
            recovery = True
            modes = control.select_modes(preds)
            result = control.PlanResult(
                modes,
                {j: positions[j] for j in range(J)},
                control.search_cost(
                    {j: positions[j] for j in sorted(modes.searchSet)},
                    scenario.sensing, scenario.area, scenario.plan.gridStep,
                ),
                {},
                separationFallback=True,
            )
        positions = [np.asarray(result.actions[j], dtype=float) for j in range(J)]

        true_states = [x for _, x in truth[k]]
        if recovery:
            scans = [[] for _ in range(J)]
        else:
            scans = [
                generate_measurements(true_states, positions[j], scenario.sensing, scenario.area, meas_rngs[j])
                for j in range(J)
            ]

        posts = []
        for j in range(J):
            post = filters.update(preds[j], scans[j], positions[j], scenario.sensing, scenario.area)
            posts.append(filters.prune(post, fp.rMin, fp.vMax, fp.nParticles, resample_rngs[j]))

        stats = [filters.cardinality(p) for p in posts]
        estimates = tuple(filters.extract_states(posts[j], stats[j].nRounded) for j in range(J))
        merged = (
            np.vstack([e[:, [0, 2]] for e in estimates if len(e)])
            if any(len(e) for e in estimates)
            else np.zeros((0, 2))
        )
        _warn_near_duplicates(merged, k)
        truth_xy = (
            np.array([x[[0, 2]] for x in true_states]) if true_states else np.zeros((0, 2))
        )
        ospa_k = metrics.ospa(merged, truth_xy, scenario.metrics.ospaC, scenario.metrics.ospaP)
        coverage_k = metrics.coverage(
            positions, scenario.sensing, scenario.area,
            scenario.plan.gridStep, scenario.metrics.coverageThreshold,
        )

        modes_tuple = tuple(
            control.MODE_TRACK if j in result.modes.trackSet else control.MODE_SEARCH
            for j in range(J)
        )
        records.append(
            StepRecord(
                step=k,
                agents=np.array(positions),
                modes=modes_tuple,
                nHat=tuple(s.nHat for s in stats),
                variance=tuple(s.variance for s in stats),
                nRounded=tuple(s.nRounded for s in stats),
                estimates=estimates,
                truthIds=tuple(tid for tid, _ in truth[k]),
                truthStates=np.array(true_states) if true_states else np.zeros((0, 4)),
                measurements=tuple(scans),
                searchCost=result.searchCost,
                ospa=ospa_k,
                coverage=coverage_k,
                separationFallback=result.separationFallback,
            )
        )
        posteriors = posts

    return EpisodeLog(scenario=scenario, startPositions=start_positions, steps=records)


def _warn_near_duplicates(merged_xy: np.ndarray, step: int, radius: float = 2.0) -> None:
    # The union of per-agent estimates is not deduplicated; log when two
    # estimates are close enough that one target was probably counted twice.
    if len(merged_xy) < 2:
        return
    d = np.linalg.norm(merged_xy[:, None, :] - merged_xy[None, :, :], axis=-1)
    iu = np.triu_indices(len(merged_xy), k=1)
    if np.any(d[iu] < radius):
        log.debug("step %d: merged estimates closer than %.1f m; possible double count", step, radius)


@dataclass
class TrialSummary:
    """Per-step series and endpoint facts of one episode, for aggregation."""

    coverage: np.ndarray
    ospa: np.ndarray
    searchCost: np.ndarray
    firstDetection: int | None
    finalPositions: np.ndarray


@dataclass
class McAggregate:
    """Per-step mean/std tables over the trials of one agent-count configuration."""

    agentCount: int
    trials: int
    coverageMean: np.ndarray
    coverageStd: np.ndarray
    ospaMean: np.ndarray
    ospaStd: np.ndarray
    searchCostMean: np.ndarray
    searchCostStd: np.ndarray
    firstDetection: list
    finalPositions: list


def summarize_episode(episode: EpisodeLog) -> TrialSummary:
    return TrialSummary(
        coverage=np.array([r.coverage for r in episode.steps]),
        ospa=np.array([r.ospa for r in episode.steps]),
        searchCost=np.array([r.searchCost for r in episode.steps]),
        firstDetection=metrics.first_detection_time(episode),
        finalPositions=episode.steps[-1].agents.copy(),
    )


def _run_trial(scenario: Scenario) -> TrialSummary:
    return summarize_episode(run_episode(scenario))


def run_monte_carlo(
    scenario: Scenario,
    trials: int,
    agentCounts: Sequence[int] | None = None,
    jobs: int = 1,
) -> dict:
    """Seeded Monte Carlo batches, one per agent count.

    Trial t runs the scenario with seed (scenario.seed + t); aggregation is by
    trial index, so results are identical whether trials run serially or in a
    process pool (jobs > 1).
    Returns {agent count: McAggregate}.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    counts = list(agentCounts) if agentCounts else [scenario.agent_count()]
    out: dict = {}
    for count in counts:
        base = with_agent_count(scenario, count)
        base.validate()
        variants = [replace(base, seed=scenario.seed + t) for t in range(trials)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                summaries = list(pool.map(_run_trial, variants))
        else:
            summaries = [_run_trial(v) for v in variants]
        cov = np.array([s.coverage for s in summaries])
        osp = np.array([s.ospa for s in summaries])
        sc = np.array([s.searchCost for s in summaries])
        out[count] = McAggregate(
            agentCount=count,
            trials=trials,
            coverageMean=cov.mean(axis=0),
            coverageStd=cov.std(axis=0),
            ospaMean=osp.mean(axis=0),
            ospaStd=osp.std(axis=0),
            searchCostMean=sc.mean(axis=0),
            searchCostStd=sc.std(axis=0),
            firstDetection=[s.firstDetection for s in summaries],
            finalPositions=[s.finalPositions for s in summaries],
        )
    return out
