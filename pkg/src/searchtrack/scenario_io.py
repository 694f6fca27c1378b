"""Scenario text format, CSV emission, and run manifests.

Scenario files are INI-like: ``[section]`` headers with one ``key = value``
assignment per line.  ``#`` starts a comment and blank lines are ignored.
Unknown sections or keys are errors, not warnings.  The keys ``start``
(section ``agents``) and ``target`` (section ``targets``) may repeat; every
other key appears at most once.  Unspecified keys take the library defaults.

The full schema is documented in the project README, together with the exact
column headers of every emitted CSV file.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import control, filters, models, sim
from .geometry import Rect

_FORMAT_VERSION = "searchtrack-scenario-1"


class ScenarioParseError(sim.ScenarioError):
    """Syntax or schema error in a scenario document, with location."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        loc = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(f"{loc}{message}")
        self.line = line
        self.col = col


_SECTIONS = {
    "run": ("horizon", "seed"),
    "area": ("xmin", "xmax", "ymin", "ymax"),
    "motion": ("T", "pS"),
    "sensing": ("pDmax", "R0", "eta", "phi0", "betaPhi", "zeta0", "betaZeta", "lambda"),
    "control": ("deltaR", "NR", "Ntheta"),
    "birth": ("count", "rBirth", "velocityStd", "particles"),
    "filter": ("particles", "rMin", "vMax"),
    "plan": (
        "backend",
        "dMin",
        "gridStep",
        "w",
        "gaPopulation",
        "gaMaxIters",
        "gaEpsilon",
        "gaMutation",
        "exhaustiveLimit",
        "powerSetModes",
    ),
    "metrics": ("ospaC", "ospaP", "coverageThreshold"),
    "agents": ("count", "spawn", "start"),
    "targets": ("target", "truthQScale"),
}

_REPEATABLE = {("agents", "start"), ("targets", "target")}


def _split_sections(text: str, allow_duplicates: bool = False) -> dict:
    """Tokenize a scenario document into {section: [(key, value, line, col), ...]}."""
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        code = raw.split("#", 1)[0]
        stripped = code.strip()
        if not stripped:
            continue
        col = code.index(stripped[0]) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ScenarioParseError("unterminated section header", lineno, col)
            name = stripped[1:-1].strip()
            if name not in _SECTIONS:
                raise ScenarioParseError(f"unknown section '{name}'", lineno, col)
            current = name
            sections.setdefault(name, [])
            continue
        if current is None:
            raise ScenarioParseError("assignment outside of any section", lineno, col)
        if "=" not in stripped:
            raise ScenarioParseError("expected 'key = value'", lineno, col)
        key, value = stripped.split("=", 1)
        key = key.strip()
        value = value.strip()
        if key not in _SECTIONS[current]:
            raise ScenarioParseError(f"unknown key '{key}' in section '{current}'", lineno, col)
        if not value:
            raise ScenarioParseError(f"empty value for key '{key}'", lineno, col)
        entries = sections.setdefault(current, [])
        if (
            not allow_duplicates
            and (current, key) not in _REPEATABLE
            and any(k == key for k, *_ in entries)
        ):
            raise ScenarioParseError(f"duplicate key '{key}' in section '{current}'", lineno, col)
        entries.append((key, value, lineno, col))
    return sections


class _Section:
    """Typed access to one tokenized section."""

    def __init__(self, name: str, entries):
        self.name = name
        self.entries = entries or []

    def get(self, key: str, conv, default):
        for k, v, line, col in self.entries:
            if k == key:
                return conv(v, line, col)
        return default

    def get_all(self, key: str, conv) -> list:
        return [conv(v, line, col) for k, v, line, col in self.entries if k == key]

    def has(self, key: str) -> bool:
        return any(k == key for k, *_ in self.entries)


def _conv_float(v, line, col) -> float:
    try:
        return float(v)
    except ValueError:
        raise ScenarioParseError(f"expected a number, got '{v}'", line, col) from None


def _conv_int(v, line, col) -> int:
    try:
        return int(v)
    except ValueError:
        raise ScenarioParseError(f"expected an integer, got '{v}'", line, col) from None


def _conv_bool(v, line, col) -> bool:
    if v.lower() in ("true", "yes", "1"):
        return True
    if v.lower() in ("false", "no", "0"):
        return False
    raise ScenarioParseError(f"expected true/false, got '{v}'", line, col)


def _conv_backend(v, line, col) -> str:
    if v not in control.BACKENDS:
        raise ScenarioParseError(
            f"backend must be one of {'/'.join(control.BACKENDS)}, got '{v}'", line, col
        )
    return v


def _conv_mutation(v, line, col):
    if v.lower() == "auto":
        return None
    return _conv_float(v, line, col)


def _conv_floats(n: int):
    def conv(v, line, col):
        parts = v.split()
        if len(parts) != n:
            raise ScenarioParseError(f"expected {n} space-separated numbers, got '{v}'", line, col)
        return [_conv_float(p, line, col) for p in parts]

    return conv


def parse_scenario(text: str) -> sim.Scenario:
    """Decode a scenario document; unspecified fields take the library defaults.

    Raises :class:`ScenarioParseError` for syntax and schema problems (with the
    offending line and column) and :class:`sim.ScenarioError` naming the violated
    invariant for semantically invalid values.
    """
    sections = _split_sections(text)
    sec = {name: _Section(name, sections.get(name)) for name in _SECTIONS}

    try:
        area = Rect(
            sec["area"].get("xmin", _conv_float, 0.0),
            sec["area"].get("xmax", _conv_float, 100.0),
            sec["area"].get("ymin", _conv_float, 0.0),
            sec["area"].get("ymax", _conv_float, 100.0),
        )
        motion = models.MotionParams(
            T=sec["motion"].get("T", _conv_float, 1.0),
            pS=sec["motion"].get("pS", _conv_float, 0.99),
        )
        sensing = models.SensingParams(
            pDmax=sec["sensing"].get("pDmax", _conv_float, 0.99),
            R0=sec["sensing"].get("R0", _conv_float, 10.0),
            eta=sec["sensing"].get("eta", _conv_float, 0.003),
            phi0=sec["sensing"].get("phi0", _conv_float, np.pi / 180.0),
            betaPhi=sec["sensing"].get("betaPhi", _conv_float, 1e-5),
            zeta0=sec["sensing"].get("zeta0", _conv_float, 1.0),
            betaZeta=sec["sensing"].get("betaZeta", _conv_float, 3e-3),
            lambdaClutter=sec["sensing"].get("lambda", _conv_float, 5.0),
        )
        ctrl = models.ControlParams(
            deltaR=sec["control"].get("deltaR", _conv_float, 2.0),
            NR=sec["control"].get("NR", _conv_int, 2),
            Ntheta=sec["control"].get("Ntheta", _conv_int, 8),
        )
        birth = filters.BirthModel(
            count=sec["birth"].get("count", _conv_int, 4),
            rBirth=sec["birth"].get("rBirth", _conv_float, 0.02),
            velocityStd=sec["birth"].get("velocityStd", _conv_float, 1.0),
            nParticles=sec["birth"].get(
                "particles", _conv_int, sec["filter"].get("particles", _conv_int, 500)
            ),
        )
        filt = sim.FilterParams(
            nParticles=sec["filter"].get("particles", _conv_int, 500),
            rMin=sec["filter"].get("rMin", _conv_float, 1e-3),
            vMax=sec["filter"].get("vMax", _conv_int, 100),
        )
        plan = control.PlanConfig(
            backend=sec["plan"].get("backend", _conv_backend, control.BACKEND_GREEDY),
            dMin=sec["plan"].get("dMin", _conv_float, 5.0),
            gridStep=sec["plan"].get("gridStep", _conv_float, 2.0),
            w=sec["plan"].get("w", _conv_float, 0.5),
            gaPopulation=sec["plan"].get("gaPopulation", _conv_int, 64),
            gaMaxIters=sec["plan"].get("gaMaxIters", _conv_int, 30),
            gaEpsilon=sec["plan"].get("gaEpsilon", _conv_float, 1e-4),
            gaMutation=sec["plan"].get("gaMutation", _conv_mutation, None),
            exhaustiveLimit=sec["plan"].get("exhaustiveLimit", _conv_int, 2),
            powerSetModes=sec["plan"].get("powerSetModes", _conv_bool, False),
        )
        metric = sim.MetricParams(
            ospaC=sec["metrics"].get("ospaC", _conv_float, 100.0),
            ospaP=sec["metrics"].get("ospaP", _conv_float, 2.0),
            coverageThreshold=sec["metrics"].get("coverageThreshold", _conv_float, 0.5),
        )

        starts = sec["agents"].get_all("start", _conv_floats(2))
        if starts and (sec["agents"].has("count") or sec["agents"].has("spawn")):
            raise sim.ScenarioError(
                "agents: give either explicit 'start' positions or 'count'/'spawn', not both"
            )
        spawn_vals = sec["agents"].get("spawn", _conv_floats(4), None)
        spawn = Rect(*spawn_vals) if spawn_vals is not None else None

        targets = []
        for vals in sec["targets"].get_all("target", _conv_floats(6)):
            if vals[0] != int(vals[0]) or vals[1] != int(vals[1]):
                raise sim.ScenarioError("target birth and death steps must be integers")
            targets.append(
                sim.TargetScript(int(vals[0]), int(vals[1]), np.array(vals[2:6]))
            )

        scenario = sim.Scenario(
            area=area,
            horizon=sec["run"].get("horizon", _conv_int, 100),
            seed=sec["run"].get("seed", _conv_int, 0),
            targets=tuple(targets),
            truthQScale=sec["targets"].get("truthQScale", _conv_float, 1.0),
            agentStarts=tuple(np.array(s) for s in starts) if starts else None,
            agentCount=sec["agents"].get("count", _conv_int, 3),
            spawn=spawn,
            motion=motion,
            sensing=sensing,
            control=ctrl,
            birth=birth,
            filter=filt,
            plan=plan,
            metrics=metric,
        )
    except sim.ScenarioError:
        raise
    except ValueError as exc:
        raise sim.ScenarioError(str(exc)) from exc
    scenario.validate()
    return scenario


def apply_overrides(text: str, overrides) -> str:
    """Append ``section.key=value`` overrides to a scenario document.

    Later assignments win for non-repeatable keys, so appending a fresh section
    with the overridden key is equivalent to editing in place.
    """
    lines = [text]
    for item in overrides:
        if "=" not in item:
            raise sim.ScenarioError(f"override '{item}' is not of the form section.key=value")
        path, value = item.split("=", 1)
        if "." not in path:
            raise sim.ScenarioError(f"override '{item}' is not of the form section.key=value")
        section, key = path.split(".", 1)
        if section not in _SECTIONS or key not in _SECTIONS[section]:
            raise sim.ScenarioError(f"override '{item}' names an unknown setting")
        if (section, key) in _REPEATABLE:
            raise sim.ScenarioError(f"override '{item}' targets a repeatable key; edit the file")
        lines.append(f"[{section}]\n{key} = {value}")
    return "\n".join(lines)


def _resolve_duplicates(text: str) -> str:
    """Rewrite a document so each non-repeatable key appears once (last one wins)."""
    sections = _split_sections(text, allow_duplicates=True)
    merged: dict = {}
    for name, entries in sections.items():
        out = []
        seen: dict = {}
        for key, value, line, col in entries:
            if (name, key) in _REPEATABLE:
                out.append((key, value))
            elif key in seen:
                out[seen[key]] = (key, value)
            else:
                seen[key] = len(out)
                out.append((key, value))
        merged[name] = out
    parts = []
    for name, out in merged.items():
        parts.append(f"[{name}]")
        parts.extend(f"{k} = {v}" for k, v in out)
    return "\n".join(parts) + "\n"


def load_scenario(path, overrides=()) -> sim.Scenario:
    """Parse a scenario file, applying ``section.key=value`` overrides."""
    text = Path(path).read_text(encoding="utf-8")
    if overrides:
        text = apply_overrides(text, overrides)
        # Overrides append duplicate keys on purpose; collapse them before parsing.
        text = _resolve_duplicates(text)
    return parse_scenario(text)


def _fmt(v) -> str:
    return f"{float(v):.9g}"


def scenario_text(sc: sim.Scenario) -> str:
    """Canonical scenario document with every setting spelled out.

    Parsing this text reproduces the scenario exactly, which is how run
    manifests record the resolved configuration.
    """
    a = sc.area
    lines = [
        f"# {_FORMAT_VERSION}",
        "[run]",
        f"horizon = {sc.horizon}",
        f"seed = {sc.seed}",
        "[area]",
        f"xmin = {a.xmin!r}",
        f"xmax = {a.xmax!r}",
        f"ymin = {a.ymin!r}",
        f"ymax = {a.ymax!r}",
        "[motion]",
        f"T = {sc.motion.T!r}",
        f"pS = {sc.motion.pS!r}",
        "[sensing]",
        f"pDmax = {sc.sensing.pDmax!r}",
        f"R0 = {sc.sensing.R0!r}",
        f"eta = {sc.sensing.eta!r}",
        f"phi0 = {sc.sensing.phi0!r}",
        f"betaPhi = {sc.sensing.betaPhi!r}",
        f"zeta0 = {sc.sensing.zeta0!r}",
        f"betaZeta = {sc.sensing.betaZeta!r}",
        f"lambda = {sc.sensing.lambdaClutter!r}",
        "[control]",
        f"deltaR = {sc.control.deltaR!r}",
        f"NR = {sc.control.NR}",
        f"Ntheta = {sc.control.Ntheta}",
        "[birth]",
        f"count = {sc.birth.count}",
        f"rBirth = {sc.birth.rBirth!r}",
        f"velocityStd = {sc.birth.velocityStd!r}",
        f"particles = {sc.birth.nParticles}",
        "[filter]",
        f"particles = {sc.filter.nParticles}",
        f"rMin = {sc.filter.rMin!r}",
        f"vMax = {sc.filter.vMax}",
        "[plan]",
        f"backend = {sc.plan.backend}",
        f"dMin = {sc.plan.dMin!r}",
        f"gridStep = {sc.plan.gridStep!r}",
        f"w = {sc.plan.w!r}",
        f"gaPopulation = {sc.plan.gaPopulation}",
        f"gaMaxIters = {sc.plan.gaMaxIters}",
        f"gaEpsilon = {sc.plan.gaEpsilon!r}",
        f"gaMutation = {'auto' if sc.plan.gaMutation is None else repr(sc.plan.gaMutation)}",
        f"exhaustiveLimit = {sc.plan.exhaustiveLimit}",
        f"powerSetModes = {'true' if sc.plan.powerSetModes else 'false'}",
        "[metrics]",
        f"ospaC = {sc.metrics.ospaC!r}",
        f"ospaP = {sc.metrics.ospaP!r}",
        f"coverageThreshold = {sc.metrics.coverageThreshold!r}",
        "[agents]",
    ]
    if sc.agentStarts is not None:
        lines.extend(f"start = {s[0]!r} {s[1]!r}" for s in sc.agentStarts)
    else:
        lines.append(f"count = {sc.agentCount}")
        if sc.spawn is not None:
            b = sc.spawn
            lines.append(f"spawn = {b.xmin!r} {b.xmax!r} {b.ymin!r} {b.ymax!r}")
    lines.append("[targets]")
    lines.append(f"truthQScale = {sc.truthQScale!r}")
    for t in sc.targets:
        x = t.birthState
        lines.append(
            f"target = {t.birthStep} {t.deathStep} {x[0]!r} {x[1]!r} {x[2]!r} {x[3]!r}"
        )
    return "\n".join(lines) + "\n"


def episode_header(agent_count: int) -> str:
    cols = ["step"]
    for j in range(1, agent_count + 1):
        cols.extend([f"a{j}_sx", f"a{j}_sy", f"a{j}_mode", f"a{j}_nhat", f"a{j}_var"])
    cols.extend(["searchCost", "ospa", "coverage"])
    return ",".join(cols)


ESTIMATES_HEADER = "step,agent,target_index,px,py"
TRUTH_HEADER = "step,target_id,px,py"
MC_HEADER = "step,coverage_mean,coverage_std,ospa_mean,ospa_std,searchcost_mean,searchcost_std"
DETECTIONS_HEADER = "agents,trial,first_detection"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def emit_episode(log: sim.EpisodeLog, out_dir) -> list:
    """Write episode.csv, estimates.csv, truth.csv and manifest.json."""
    out = Path(out_dir)
    J = len(log.startPositions)
    rows = [episode_header(J)]
    for r in log.steps:
        cells = [str(r.step)]
        for j in range(J):
            cells.extend(
                [
                    _fmt(r.agents[j, 0]),
                    _fmt(r.agents[j, 1]),
                    r.modes[j],
                    _fmt(r.nHat[j]),
                    _fmt(r.variance[j]),
                ]
            )
        cells.extend([_fmt(r.searchCost), _fmt(r.ospa), _fmt(r.coverage)])
        rows.append(",".join(cells))
    files = [_write(out / "episode.csv", "\n".join(rows) + "\n")]

    est_rows = [ESTIMATES_HEADER]
    for r in log.steps:
        for j, est in enumerate(r.estimates, start=1):
            for idx, x in enumerate(est, start=1):
                est_rows.append(f"{r.step},{j},{idx},{_fmt(x[0])},{_fmt(x[2])}")
    files.append(_write(out / "estimates.csv", "\n".join(est_rows) + "\n"))

    truth_rows = [TRUTH_HEADER]
    for r in log.steps:
        for tid, x in zip(r.truthIds, r.truthStates):
            truth_rows.append(f"{r.step},{tid},{_fmt(x[0])},{_fmt(x[2])}")
    files.append(_write(out / "truth.csv", "\n".join(truth_rows) + "\n"))

    files.append(_write_manifest(out, log.scenario))
    return files


def emit_monte_carlo(aggregates: dict, scenario: sim.Scenario, out_dir) -> list:
    """Write one per-step mean/std table per agent count, a first-detection
    table, and manifest.json."""
    out = Path(out_dir)
    files = []
    for count in sorted(aggregates):
        agg = aggregates[count]
        rows = [MC_HEADER]
        for k in range(len(agg.coverageMean)):
            rows.append(
                ",".join(
                    [
                        str(k + 1),
                        _fmt(agg.coverageMean[k]),
                        _fmt(agg.coverageStd[k]),
                        _fmt(agg.ospaMean[k]),
                        _fmt(agg.ospaStd[k]),
                        _fmt(agg.searchCostMean[k]),
                        _fmt(agg.searchCostStd[k]),
                    ]
                )
            )
        files.append(_write(out / f"mc_agents{count}.csv", "\n".join(rows) + "\n"))
    det_rows = [DETECTIONS_HEADER]
    for count in sorted(aggregates):
        for t, fd in enumerate(aggregates[count].firstDetection):
            det_rows.append(f"{count},{t},{'' if fd is None else fd}")
    files.append(_write(out / "detections.csv", "\n".join(det_rows) + "\n"))
    files.append(_write_manifest(out, scenario))
    return files


def _write_manifest(out: Path, scenario: sim.Scenario) -> Path:
    from . import __version__

    manifest = {
        "format": _FORMAT_VERSION,
        "seed": scenario.seed,
        "codeVersion": __version__,
        "config": scenario_text(scenario),
    }
    return _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def emit_logs(obj, out_dir, scenario: sim.Scenario | None = None) -> list:
    """Emit CSV logs: dispatches on episode logs versus Monte Carlo aggregates."""
    if isinstance(obj, sim.EpisodeLog):
        return emit_episode(obj, out_dir)
    if isinstance(obj, dict):
        if scenario is None:
            raise ValueError("emitting Monte Carlo aggregates requires the scenario")
        return emit_monte_carlo(obj, scenario, out_dir)
    raise TypeError(f"cannot emit logs for {type(obj).__name__}")
