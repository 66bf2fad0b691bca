"""Experiment configuration: a single YAML file with nested blocks.

Grammar (all keys lowercase)::

    model:
      time: continuous | discrete
      motion:                       # continuous presets
        preset: brownian | absorbed_brownian | chain_ct | chain_dt
        tilt: {kind: drift, lam: <float>}          # brownian only
        tilt: {theta: <float>, score: [<float>..]} # chains
        rates: [[..], ..]           # chain_ct
        transition: [[..], ..]      # chain_dt (discrete models)
      offspring: {pmf: {<count>: <prob>, ...}}
      rate: {constant: <float>} | {preset: gaussian_bump, r_max: <float>}
      origin: <float>               # starting position / state
    query:
      k: <int>
      horizon: <float>              # continuous time
      generations: <int>            # discrete time
      statistic: {kind: ones | indicator_above | first_above | all_above
                        | state_indicators, ...}
      estimator: spine | direct | both
    run:
      replicates: <int>
      seed: <int>                   # mandatory; no wall-clock seeding
      workers: <int>
      max_population: <int>
      max_tuples: <int>
    output:
      directory: <path>
      formats: [csv, json]
      figures: true | false
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any

import yaml

from .estimators import all_above, first_above, indicator_above, ones
from .laws import BranchRate, OffspringLaw
from .motion import AbsorbedBrownian, BrownianMotion, ContinuousChain, DiscreteChain
from .sim_ct import BranchingModel
from .sim_dt import DiscreteModel, SpineStateStatistic


class ConfigError(ValueError):
    """Configuration problems, one line per offending field."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}" for p in problems))
        self.problems = problems


def _gaussian_bump(r_max: float, y: float) -> float:
    return r_max * math.exp(-0.5 * y * y)


_RATE_PRESETS = {"gaussian_bump": _gaussian_bump}


@dataclass(frozen=True)
class RunSettings:
    replicates: int
    seed: int
    workers: int = 1
    max_population: int = 1_000_000
    max_tuples: int = 2_000_000


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")
    figures: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    time_mode: str
    model: BranchingModel | DiscreteModel
    k: int
    horizon: float
    statistic: Any
    estimator: str
    run: RunSettings
    output: OutputSettings
    raw: dict = field(repr=False)

    def config_hash(self) -> str:
        """Hash of the experiment identity: worker count and output layout are
        execution details and do not enter."""
        scrubbed = json.loads(json.dumps(self.raw))
        scrubbed.pop("output", None)
        if isinstance(scrubbed.get("run"), dict):
            scrubbed["run"].pop("workers", None)
        canonical = json.dumps(scrubbed, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


class _Reader:
    """Walks a nested dict collecting per-field problems."""

    def __init__(self, data: dict):
        self.data = data
        self.problems: list[str] = []

    def get(self, path: str, default=None, required=False):
        node = self.data
        for key in path.split("."):
            if not isinstance(node, dict) or key not in node:
                if required:
                    self.problems.append(f"{path}: missing required field")
                return default
            node = node[key]
        return node

    def fail(self, path: str, message: str):
        self.problems.append(f"{path}: {message}")

    def expect_number(self, path: str, value, lo=None, hi=None):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            self.fail(path, f"expected a number, got {value!r}")
            return None
        if lo is not None and value < lo:
            self.fail(path, f"must be >= {lo}, got {value}")
            return None
        if hi is not None and value > hi:
            self.fail(path, f"must be <= {hi}, got {value}")
            return None
        return value

    def expect_int(self, path: str, value, lo=None):
        if not isinstance(value, int) or isinstance(value, bool):
            self.fail(path, f"expected an integer, got {value!r}")
            return None
        if lo is not None and value < lo:
            self.fail(path, f"must be >= {lo}, got {value}")
            return None
        return value


def _offspring(reader: _Reader) -> OffspringLaw | None:
    pmf = reader.get("model.offspring.pmf", required=True)
    if pmf is None:
        return None
    if not isinstance(pmf, dict) or not pmf:
        reader.fail("model.offspring.pmf", "expected a non-empty {count: prob} map")
        return None
    clean: dict[int, float] = {}
    for key, val in pmf.items():
        try:
            count = int(key)
        except (TypeError, ValueError):
            reader.fail("model.offspring.pmf", f"bad child count {key!r}")
            return None
        num = reader.expect_number(f"model.offspring.pmf[{key}]", val, lo=0.0)
        if num is None:
            return None
        clean[count] = float(num)
    try:
        return OffspringLaw(clean)
    except ValueError as exc:
        reader.fail("model.offspring.pmf", str(exc))
        return None


def _rate(reader: _Reader) -> BranchRate | None:
    block = reader.get("model.rate", required=True)
    if block is None:
        return None
    if not isinstance(block, dict):
        reader.fail("model.rate", "expected a mapping")
        return None
    if "constant" in block:
        value = reader.expect_number("model.rate.constant", block["constant"], lo=0.0)
        return None if value is None else BranchRate.const(float(value))
    preset = block.get("preset")
    if preset not in _RATE_PRESETS:
        reader.fail("model.rate.preset", f"unknown preset {preset!r}; known: {sorted(_RATE_PRESETS)}")
        return None
    r_max = reader.expect_number("model.rate.r_max", block.get("r_max"), lo=0.0)
    if r_max is None:
        return None
    return BranchRate(r_max=float(r_max), fn=partial(_RATE_PRESETS[preset], float(r_max)))


def _matrix(reader: _Reader, path: str, rows) -> tuple[tuple[float, ...], ...] | None:
    if not isinstance(rows, list) or not rows:
        reader.fail(path, "expected a non-empty list of rows")
        return None
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != len(rows):
            reader.fail(f"{path}[{i}]", "matrix must be square")
            return None
        out.append(tuple(float(x) for x in row))
    return tuple(out)


def _chain_tilt(reader: _Reader, block: dict, n_states: int):
    tilt = block.get("tilt")
    if tilt is None:
        return None, None
    theta = reader.expect_number("model.motion.tilt.theta", tilt.get("theta"))
    score = tilt.get("score")
    if score is not None:
        if not isinstance(score, list) or len(score) != n_states:
            reader.fail("model.motion.tilt.score", "need one score per state")
            score = None
        else:
            score = tuple(float(x) for x in score)
    return theta, score


def _motion_ct(reader: _Reader):
    block = reader.get("model.motion", required=True)
    if block is None:
        return None
    preset = block.get("preset")
    if preset == "brownian":
        tilt = block.get("tilt")
        if tilt is None:
            return BrownianMotion()
        if tilt.get("kind") != "drift":
            reader.fail("model.motion.tilt.kind", "brownian tilt must be 'drift'")
            return None
        lam = reader.expect_number("model.motion.tilt.lam", tilt.get("lam"))
        return None if lam is None else BrownianMotion(tilt_drift=float(lam))
    if preset == "absorbed_brownian":
        return AbsorbedBrownian()
    if preset == "chain_ct":
        rates = _matrix(reader, "model.motion.rates", block.get("rates"))
        if rates is None:
            return None
        theta, score = _chain_tilt(reader, block, len(rates))
        try:
            return ContinuousChain(rates, tilt_theta=theta, tilt_score=score)
        except ValueError as exc:
            reader.fail("model.motion.rates", str(exc))
            return None
    reader.fail("model.motion.preset", f"unknown continuous preset {preset!r}")
    return None


def _motion_dt(reader: _Reader) -> DiscreteChain | None:
    block = reader.get("model.motion", required=True)
    if block is None:
        return None
    if block.get("preset") != "chain_dt":
        reader.fail("model.motion.preset", "discrete models need preset 'chain_dt'")
        return None
    transition = _matrix(reader, "model.motion.transition", block.get("transition"))
    if transition is None:
        return None
    theta, score = _chain_tilt(reader, block, len(transition))
    try:
        return DiscreteChain(transition, tilt_theta=theta, tilt_score=score)
    except ValueError as exc:
        reader.fail("model.motion.transition", str(exc))
        return None


def _statistic_ct(reader: _Reader, k: int):
    block = reader.get("query.statistic", {"kind": "ones"})
    kind = block.get("kind", "ones")
    if kind == "ones":
        return ones(k)
    threshold = reader.expect_number("query.statistic.threshold", block.get("threshold"))
    if threshold is None:
        return None
    if kind == "indicator_above":
        if k != 1:
            reader.fail("query.statistic.kind", "indicator_above needs k = 1")
            return None
        return indicator_above(float(threshold))
    if kind == "first_above":
        return first_above(float(threshold), k)
    if kind == "all_above":
        return all_above(float(threshold), k)
    reader.fail("query.statistic.kind", f"unknown statistic {kind!r}")
    return None


def _statistic_dt(reader: _Reader, k: int, n_states: int):
    block = reader.get("query.statistic", {"kind": "ones"})
    kind = block.get("kind", "ones")
    if kind == "ones":
        return None  # all-ones statistic
    if kind == "state_indicators":
        states = block.get("states")
        if not isinstance(states, list) or len(states) != k:
            reader.fail("query.statistic.states", f"need exactly k={k} states")
            return None
        bad = [s for s in states if not isinstance(s, int) or not 0 <= s < n_states]
        if bad:
            reader.fail("query.statistic.states", f"states out of range: {bad}")
            return None
        return SpineStateStatistic.indicators(tuple(states), n_states)
    reader.fail("query.statistic.kind", f"unknown discrete statistic {kind!r}")
    return None


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a mapping"])
    reader = _Reader(data)

    time_mode = reader.get("model.time", "continuous")
    if time_mode not in ("continuous", "discrete"):
        reader.fail("model.time", f"expected continuous|discrete, got {time_mode!r}")

    k = reader.expect_int("query.k", reader.get("query.k", required=True), lo=1) or 1
    estimator = reader.get("query.estimator", "spine")
    if estimator not in ("spine", "direct", "both"):
        reader.fail("query.estimator", f"expected spine|direct|both, got {estimator!r}")

    replicates = reader.expect_int(
        "run.replicates", reader.get("run.replicates", required=True), lo=1
    )
    seed = reader.expect_int("run.seed", reader.get("run.seed", required=True), lo=0)
    workers = reader.expect_int("run.workers", reader.get("run.workers", 1), lo=1)
    max_population = reader.expect_int(
        "run.max_population", reader.get("run.max_population", 1_000_000), lo=1
    )
    max_tuples = reader.expect_int(
        "run.max_tuples", reader.get("run.max_tuples", 2_000_000), lo=1
    )

    directory = reader.get("output.directory", "out")
    formats = reader.get("output.formats", ["csv", "json"])
    if not isinstance(formats, list) or any(f not in ("csv", "json") for f in formats):
        reader.fail("output.formats", f"expected a list drawn from [csv, json], got {formats!r}")
        formats = ["csv", "json"]
    figures = reader.get("output.figures", True)
    if not isinstance(figures, bool):
        reader.fail("output.figures", "expected true/false")
        figures = True

    law = _offspring(reader)
    model = None
    statistic = None
    horizon = 0.0

    if time_mode == "continuous":
        motion = _motion_ct(reader)
        rate = _rate(reader)
        origin = reader.expect_number("model.origin", reader.get("model.origin", 0.0))
        horizon = reader.expect_number(
            "query.horizon", reader.get("query.horizon", required=True), lo=0.0
        )
        if horizon is not None and horizon <= 0:
            reader.fail("query.horizon", "must be positive")
        statistic = _statistic_ct(reader, k)
        if motion and rate and law and origin is not None and horizon:
            model = BranchingModel(motion, rate, law, float(origin))
    elif time_mode == "discrete":
        chain = _motion_dt(reader)
        generations = reader.expect_int(
            "query.generations", reader.get("query.generations", required=True), lo=1
        )
        origin = reader.expect_int("model.origin", reader.get("model.origin", 0), lo=0)
        horizon = float(generations or 0)
        if chain and law and generations and origin is not None:
            if origin >= chain.n_states:
                reader.fail("model.origin", "initial state outside the chain")
            else:
                statistic = _statistic_dt(reader, k, chain.n_states)
                try:
                    model = DiscreteModel(chain, law, generations, k, origin)
                except ValueError as exc:
                    reader.fail("model", str(exc))

    if reader.problems:
        raise ConfigError(reader.problems)
    assert model is not None

    return ExperimentConfig(
        time_mode=time_mode,
        model=model,
        k=k,
        horizon=float(horizon),
        statistic=statistic,
        estimator=estimator,
        run=RunSettings(
            replicates=replicates, seed=seed, workers=workers,
            max_population=max_population, max_tuples=max_tuples,
        ),
        output=OutputSettings(
            directory=str(directory), formats=tuple(formats), figures=figures
        ),
        raw=data,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    return config_from_dict(data)
