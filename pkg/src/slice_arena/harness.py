"""Experiment harness: the five evaluation scenarios over one config.

Scenario names:

* ``optimal``      exhaustive myopic placement (expected-power oracle)
* ``ppo-clean``    the trained admission policy, greedy, honest telemetry
* ``ppo-attacked`` a policy trained and evaluated under observation/reward
                   forgery
* ``ppo-mtd``      the shuffled ensemble serving under the same attack
* ``random``       uniform random decisions

All scenarios at one sweep point replay identical traffic (the environment
streams depend only on the episode seed), so differences in the metrics are
attributable to the policy alone. Training artifacts live in a directory
managed here: ``model.ckpt`` (clean), ``attacked_model.ckpt`` (poisoned
training), and ``ensemble/`` (manifest plus member checkpoints).
"""
from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .adversary import AttackConfig, PoisonedEnv
from .baselines import myopic_exhaustive_decision, random_policy_decision
from .config import ScenarioConfig
from .ensemble import (EnsembleSpec, default_member_configs, evaluate_policy,
                       evaluate_under_attack, load_ensemble, save_ensemble,
                       train_ensemble)
from .env import SliceEnv
from .metrics import EpisodeRecord, RunMetrics, aggregate, write_metrics
from .policy import load_checkpoint, save_checkpoint
from .ppo import PpoConfig, train

SCENARIO_NAMES = ("optimal", "ppo-clean", "ppo-attacked", "ppo-mtd", "random")

MODEL_CHECKPOINT = "model.ckpt"
ATTACKED_CHECKPOINT = "attacked_model.ckpt"
ENSEMBLE_DIRNAME = "ensemble"

# full per-slot enumeration is exact but exponential; above this many
# candidate assignments the optimal runner decides requests one at a time
FULL_ENUMERATION_LIMIT = 20_000

_STREAM_RANDOM_POLICY = 41


class MissingCheckpointError(FileNotFoundError):
    """A ppo-* scenario was requested before its artifacts were trained."""


@dataclass
class ScenarioResult:
    name: str
    seeds: Tuple[int, ...]
    per_seed: Tuple[RunMetrics, ...]
    aggregate: RunMetrics
    records: List[EpisodeRecord]


# ----------------------------------------------------------------- training

def train_single_models(scenario: ScenarioConfig, artifacts,
                        seed: int = 0, total_env_steps: int = 200_000,
                        attack: Optional[AttackConfig] = None,
                        ) -> Tuple[Path, Path]:
    """Train the clean serving model and its poisoned twin; returns the two
    checkpoint paths."""
    out = Path(artifacts)
    out.mkdir(parents=True, exist_ok=True)
    attack = attack if attack is not None else AttackConfig(seed=seed)
    config = PpoConfig(seed=seed, total_env_steps=total_env_steps)

    clean = train(lambda: SliceEnv(scenario), config)
    clean_path = out / MODEL_CHECKPOINT
    save_checkpoint(clean.params, str(clean_path))

    poisoned = train(lambda: PoisonedEnv(SliceEnv(scenario), attack), config)
    attacked_path = out / ATTACKED_CHECKPOINT
    save_checkpoint(poisoned.params, str(attacked_path))
    return clean_path, attacked_path


def train_defense_ensemble(scenario: ScenarioConfig, artifacts,
                           seed: int = 0, total_env_steps: int = 240_000,
                           attack: Optional[AttackConfig] = None,
                           selection_seed: int = 0,
                           gate_ratio: float = 0.9) -> Path:
    """Train the ensemble (one member poisoned) and write its manifest."""
    attack = attack if attack is not None else AttackConfig(seed=seed)
    spec = train_ensemble(scenario,
                          default_member_configs(seed, total_env_steps),
                          attack=attack, selection_seed=selection_seed,
                          gate_ratio=gate_ratio)
    return save_ensemble(spec, Path(artifacts) / ENSEMBLE_DIRNAME)


def _load_model(artifacts, filename: str):
    if artifacts is None:
        raise MissingCheckpointError(
            f"scenario needs {filename} but no artifacts directory was given")
    path = Path(artifacts) / filename
    if not path.is_file():
        raise MissingCheckpointError(f"no checkpoint at {path}; train first")
    return load_checkpoint(str(path))


def _load_defense(artifacts, selection_seed: int) -> EnsembleSpec:
    if artifacts is None:
        raise MissingCheckpointError(
            "ppo-mtd needs an ensemble but no artifacts directory was given")
    directory = Path(artifacts) / ENSEMBLE_DIRNAME
    if not (directory / "manifest.txt").is_file():
        raise MissingCheckpointError(
            f"no ensemble manifest under {directory}; train-ensemble first")
    return load_ensemble(directory, selection_seed=selection_seed)


# ------------------------------------------------------------ policy-free runs

def run_random(scenario: ScenarioConfig, seeds: Sequence[int],
               label: str = "random") -> List[EpisodeRecord]:
    records = []
    for seed in seeds:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((int(seed), _STREAM_RANDOM_POLICY))))
        env = SliceEnv(scenario)
        env.reset(int(seed))
        while not env.episode_done():
            decision = random_policy_decision(env.state,
                                              env.current_request_slice(), rng)
            env.step(decision)
        records.append(EpisodeRecord(scenario=label, seed=int(seed),
                                     slot_log=list(env.slot_log)))
    return records


def run_optimal(scenario: ScenarioConfig, seeds: Sequence[int],
                label: str = "optimal") -> List[EpisodeRecord]:
    """Myopic exhaustive placement: per slot, the assignment minimizing
    expected power minus priority bonus. Falls back to one-request-at-a-time
    optimization when the slot's joint space is too large to enumerate."""
    by_id = {s.slice_id: s for s in scenario.slices}
    n_choices = len(scenario.datacenters) + 1
    records = []
    for seed in seeds:
        env = SliceEnv(scenario)
        env.reset(int(seed))
        plan: deque = deque()
        plan_slot = -1
        while not env.episode_done():
            slot = env.state.slot_index
            if slot != plan_slot or not plan:
                requests = [by_id[sid] for sid in env.state.pending]
                if n_choices ** len(requests) > FULL_ENUMERATION_LIMIT:
                    requests = requests[:1]
                plan = deque(myopic_exhaustive_decision(
                    requests, env.state, scenario.kappa, scenario.datacenters))
                plan_slot = slot
            env.step(int(plan.popleft()))
        records.append(EpisodeRecord(scenario=label, seed=int(seed),
                                     slot_log=list(env.slot_log)))
    return records


# -------------------------------------------------------------- the scenarios

def run_scenario(name: str, config: ScenarioConfig,
                 seeds: Optional[Sequence[int]] = None, artifacts=None,
                 attack: Optional[AttackConfig] = None,
                 selection_seed: int = 0,
                 label: Optional[str] = None) -> ScenarioResult:
    """Execute one named scenario end-to-end and aggregate its metrics."""
    if name not in SCENARIO_NAMES:
        raise ValueError(f"unknown scenario {name!r}; expected one of "
                         f"{', '.join(SCENARIO_NAMES)}")
    seeds = tuple(int(s) for s in (config.seeds if seeds is None else seeds))
    label = name if label is None else label
    attack = attack if attack is not None else AttackConfig()

    if name == "random":
        records = run_random(config, seeds, label)
    elif name == "optimal":
        records = run_optimal(config, seeds, label)
    elif name == "ppo-clean":
        params = _load_model(artifacts, MODEL_CHECKPOINT)
        _, records = evaluate_policy(params, config, seeds, name=label)
    elif name == "ppo-attacked":
        params = _load_model(artifacts, ATTACKED_CHECKPOINT)
        _, records = evaluate_policy(params, config, seeds, attack=attack,
                                     name=label)
    else:  # ppo-mtd
        spec = _load_defense(artifacts, selection_seed)
        _, records = evaluate_under_attack(spec, config, attack, seeds=seeds,
                                           name=label)

    per_seed = tuple(aggregate([record], config) for record in records)
    return ScenarioResult(name=name, seeds=seeds, per_seed=per_seed,
                          aggregate=aggregate(records, config),
                          records=records)


def with_arrival_mean(config: ScenarioConfig, arrival_mean: float,
                      ) -> ScenarioConfig:
    """The same scenario with every slice's arrival mean replaced."""
    slices = tuple(dataclasses.replace(s, arrival_mean=float(arrival_mean))
                   for s in config.slices)
    return dataclasses.replace(config, slices=slices)


@dataclass
class SweepPoint:
    scenario: str
    arrival_mean: float
    result: ScenarioResult


def sweep(config: ScenarioConfig,
          arrival_values: Optional[Sequence[float]] = None,
          scenarios: Sequence[str] = SCENARIO_NAMES,
          seeds: Optional[Sequence[int]] = None, artifacts=None,
          attack: Optional[AttackConfig] = None,
          selection_seed: int = 0) -> List[SweepPoint]:
    """Rerun scenarios across arrival means, reusing trained checkpoints.

    Every scenario at one arrival value replays the same seeds. Records are
    labeled ``name@a<arrival>`` so the summary carries one row per
    (scenario, arrival) pair.
    """
    if arrival_values is None:
        arrival_values = config.arrival_sweep
    points = []
    for arrival in arrival_values:
        point_config = with_arrival_mean(config, arrival)
        for name in scenarios:
            label = f"{name}@a{arrival:g}"
            result = run_scenario(name, point_config, seeds=seeds,
                                  artifacts=artifacts, attack=attack,
                                  selection_seed=selection_seed, label=label)
            points.append(SweepPoint(scenario=name,
                                     arrival_mean=float(arrival),
                                     result=result))
    return points


def compare(config: ScenarioConfig, artifacts,
            seeds: Optional[Sequence[int]] = None,
            attack: Optional[AttackConfig] = None,
            selection_seed: int = 0) -> List[ScenarioResult]:
    """All five scenarios on identical seeds, in canonical order."""
    return [run_scenario(name, config, seeds=seeds, artifacts=artifacts,
                         attack=attack, selection_seed=selection_seed)
            for name in SCENARIO_NAMES]


def compare_table(results: Sequence[ScenarioResult]) -> str:
    """Plain-text comparison. Admission ratios are relative to the optimal
    scenario's overall admission rate; they are reported for inspection, not
    asserted anywhere."""
    optimal = next((r for r in results if r.name == "optimal"), None)
    baseline = optimal.aggregate.admission_rate if optimal else 0.0
    header = (f"{'scenario':<14} {'admission':>9} {'vs-optimal':>10} "
              f"{'norm-power':>10} {'slot-reward':>12} {'attacked':>9}")
    lines = [header, "-" * len(header)]
    for result in results:
        m = result.aggregate
        ratio = m.admission_rate / baseline if baseline > 0 else float("nan")
        lines.append(f"{result.name:<14} {m.admission_rate:>9.4f} "
                     f"{ratio:>10.4f} {m.mean_normalized_power:>10.4f} "
                     f"{m.mean_slot_reward:>12.2f} "
                     f"{m.attacked_fraction:>9.4f}")
    return "\n".join(lines)


def write_results(results: Sequence[ScenarioResult], out_dir,
                  config: ScenarioConfig) -> Tuple[Path, Path]:
    """Concatenate all records and emit metrics.csv + summary.csv."""
    records: List[EpisodeRecord] = []
    for result in results:
        records.extend(result.records)
    return write_metrics(records, out_dir, config)
