"""Black-box state and reward forgery against the admission agent.

The adversary knows the public scenario description (layout, capacities,
arrival means) and nothing else: no model parameters, no true resource
values. On an attacked decision step the agent observes a forged state
drawn from scratch (resource fractions uniform in [0,1], pending counts
redrawn from the arrival distributions) and later receives the reward the
forged state would have produced, keeping the perceived episode coherent:

- a placement that does not fit the forged remaining resources is reported
  as an infeasible attempt (-M penalty), whatever really happened;
- the slot-settling step reports -(phi_hat - kappa * bonus_hat), where
  phi_hat scales the forged utilization by the deployed-chain power ceiling
  and bonus_hat re-evaluates the current request under forged feasibility;
- everything else reports zero, exactly like a mid-slot step.

The true environment is never touched. PoisonedEnv presents the forgery to
the agent while the wrapped SliceEnv keeps evolving (and logging metrics)
from the true state; identical action sequences leave identical true
trajectories with or without the wrapper.

apply_attack is the one-shot form of the same transformation (draw the
Bernoulli, forge the observation, recompute the reward); PoisonedEnv splits
it across the observation/reward boundary of a decision step but routes
through the same two primitives.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import ScenarioConfig
from .env import PENDING_CAP, REJECT, SliceEnv, StepOutcome

_STREAM_ATTACK = 21


@dataclass(frozen=True)
class AttackConfig:
    """Attack intensity and bookkeeping.

    target_model_index only matters for ensemble runs: it names the member
    whose training the attack was crafted against.
    """

    attack_probability: float = 0.25
    target_model_index: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.attack_probability <= 1.0:
            raise ValueError(
                f"attack_probability must lie in [0, 1], got {self.attack_probability!r}")
        if self.target_model_index < 0:
            raise ValueError(
                f"target_model_index must be >= 0, got {self.target_model_index!r}")


@dataclass(frozen=True)
class StepContext:
    """What the forged reward needs to know about the true decision step.

    admitted_priorities lists the slot's earlier truly-admitted requests;
    the current one is re-evaluated against the forged picture instead.
    """

    decision: int
    demand_fraction: Optional[Tuple[float, float, float]]
    slot_final: bool
    admitted_priorities: Tuple[float, ...]
    current_priority: float


_MID_SLOT_REJECT = StepContext(
    decision=REJECT, demand_fraction=None, slot_final=False,
    admitted_priorities=(), current_priority=0.0)


class ForgeryAdversary:
    """Forges observations and rewards for one scenario."""

    def __init__(self, scenario: ScenarioConfig) -> None:
        self.scenario = scenario
        # power ceiling if every deployable chain ran at the priciest top
        top = max(hi for _, hi in (dc.power_range for dc in scenario.datacenters))
        self._power_scale = top * sum(s.chain_capacity for s in scenario.slices)

    def forge_observation(self, true_state, rng) -> np.ndarray:
        """Draw a fresh, feasible-looking observation of the true layout.

        true_state is accepted for the call shape but deliberately never
        read: the black-box contract grants the attacker no state access.
        """
        del true_state
        sc = self.scenario
        values = list(np.atleast_1d(rng.uniform(size=3 * len(sc.datacenters))))
        for s in sc.slices:
            count = min(int(rng.poisson(s.arrival_mean)), PENDING_CAP)
            values.append(count / PENDING_CAP)
        return np.asarray(values, dtype=np.float64)

    def forged_feasible(self, forged_obs: np.ndarray, dc_index: int,
                        demand_fraction: Tuple[float, float, float]) -> bool:
        """Does the demand fit the forged remaining fractions of this DC?

        The forged picture carries no chain counts, so only resources are
        checked (the cap channel is not observable to begin with).
        """
        remaining = forged_obs[3 * dc_index:3 * dc_index + 3]
        return bool(np.all(remaining >= np.asarray(demand_fraction) - 1e-12))

    def forged_reward(self, context: StepContext, forged_obs: np.ndarray) -> float:
        """The reward the forged state would have produced for this step."""
        sc = self.scenario
        reward = 0.0
        placed_ok = False
        if context.decision != REJECT:
            if self.forged_feasible(forged_obs, context.decision - 1,
                                    context.demand_fraction):
                placed_ok = True
            else:
                reward -= sc.m_penalty
        if context.slot_final:
            n_res = 3 * len(sc.datacenters)
            utilization = 1.0 - float(np.mean(forged_obs[:n_res]))
            phi_hat = utilization * self._power_scale
            bonus = sum(context.admitted_priorities)
            if placed_ok:
                bonus += context.current_priority
            reward -= phi_hat - sc.kappa * bonus
        return reward

    def apply_attack(self, step: Tuple[np.ndarray, float], config: AttackConfig,
                     rng, context: Optional[StepContext] = None):
        """One-shot forgery: (observation, reward) -> (observation, reward,
        attacked). Without a context the step is treated as a mid-slot
        rejection, whose forged reward is zero."""
        true_obs, true_reward = step
        if not rng.random() < config.attack_probability:
            return true_obs, float(true_reward), False
        forged = self.forge_observation(None, rng)
        return forged, self.forged_reward(context or _MID_SLOT_REJECT, forged), True


class PoisonedEnv:
    """SliceEnv wrapper that feeds the agent the adversary's forgery.

    Each decision step is attacked independently with probability
    attack_probability, decided before the observation is presented so the
    agent acts on the forged state. Metrics must be read from the wrapped
    env (its slot log is the ground truth); the wrapper only counts how
    many decisions per slot were attacked.
    """

    def __init__(self, env: SliceEnv, config: AttackConfig,
                 adversary: Optional[ForgeryAdversary] = None) -> None:
        self.env = env
        self.config = config
        self.adversary = adversary or ForgeryAdversary(env.scenario)
        self.attacked_by_slot: Dict[int, int] = {}
        self.lifetime_attacked = 0  # survives resets, unlike attacked_by_slot
        self._rng = None
        self._attacked_now = False
        self._forged_obs: Optional[np.ndarray] = None
        self._slot_admitted: List[float] = []

    # mirrored read-only surface
    @property
    def scenario(self) -> ScenarioConfig:
        return self.env.scenario

    @property
    def observation_size(self) -> int:
        return self.env.observation_size

    @property
    def n_actions(self) -> int:
        return self.env.n_actions

    def episode_done(self) -> bool:
        return self.env.episode_done()

    def has_pending(self) -> bool:
        return self.env.has_pending()

    def attacked_steps(self) -> int:
        return sum(self.attacked_by_slot.values())

    def reset(self, seed: int) -> np.ndarray:
        true_obs = self.env.reset(seed)
        self._rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((self.config.seed, seed, _STREAM_ATTACK))))
        self.attacked_by_slot = {}
        self._slot_admitted = []
        return self._arm(true_obs)

    def _arm(self, true_obs: np.ndarray) -> np.ndarray:
        """Decide the attack for the upcoming decision; returns what the
        agent gets to see."""
        self._attacked_now = False
        self._forged_obs = None
        if self.env.episode_done() or not self.env.has_pending():
            return true_obs
        if self._rng.random() < self.config.attack_probability:
            self._attacked_now = True
            self._forged_obs = self.adversary.forge_observation(
                self.env.state, self._rng)
            slot = self.env.state.slot_index
            self.attacked_by_slot[slot] = self.attacked_by_slot.get(slot, 0) + 1
            self.lifetime_attacked += 1
            return self._forged_obs
        return true_obs

    def step(self, decision: int) -> StepOutcome:
        env = self.env
        attacked = self._attacked_now
        forged_obs = self._forged_obs
        spec = env.current_request_slice() if env.has_pending() else None
        slot_final = env.pending_count() == 1

        outcome = env.step(decision)

        if attacked:
            demand_fraction = None
            if decision != REJECT:
                cap = env.scenario.datacenters[decision - 1].capacity
                d = spec.demand
                demand_fraction = (d.cpu / cap.cpu, d.memory / cap.memory,
                                   d.storage / cap.storage)
            context = StepContext(
                decision=int(decision),
                demand_fraction=demand_fraction,
                slot_final=slot_final,
                admitted_priorities=tuple(self._slot_admitted),
                current_priority=spec.priority,
            )
            reward = self.adversary.forged_reward(context, forged_obs)
        else:
            reward = outcome.reward

        if slot_final:
            self._slot_admitted = []
        elif outcome.admitted:
            self._slot_admitted.append(spec.priority)

        return StepOutcome(
            reward=reward,
            admitted=outcome.admitted,
            infeasible_attempt=outcome.infeasible_attempt,
            observation=self._arm(outcome.observation),
            episode_done=outcome.episode_done,
        )
