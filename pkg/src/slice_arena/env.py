"""Slot-structured admission and placement environment.

Time advances in slots. At the start of a slot each slice receives a Poisson
number of service requests; the requests are presented one at a time (grouped
by slice, in scenario order) and each must be rejected or placed on a single
data center. An admitted request instantiates one chain that holds the
slice's full resource demand on its data center and draws power until it
departs; lifetimes are geometric with mean 1/departure_prob, so a chain
admitted in slot t is active through slot t + L - 1 with P(L = k) =
p (1-p)^(k-1).

When the slot's last request has been decided the slot cost is settled:

    cost = phi_tot - kappa * sum of priorities over this slot's admissions

where phi_tot sums the power of every active chain (all of them, not only
the new ones). The step that decided the last request receives -cost as its
reward, on top of any infeasibility penalty it incurred itself. Earlier
steps in the slot receive 0, or -M_penalty for an infeasible placement
attempt. Slots with no arrivals are advanced internally; their cost (power
of still-active chains) is folded into the reward of the step that crossed
them, so no cost is ever dropped. Departures are sampled after the slot is
settled.

Observation layout (version 1): for each data center in scenario order the
remaining cpu, memory and storage as fractions of capacity, then for each
slice the count of still-undecided requests this slot divided by 32, clipped
to 1. The slice whose request is being decided is the first slice in
scenario order with a nonzero pending entry.

Randomness is split over two streams so that consumption depends only on
arrival counts, never on policy decisions: an arrival stream (one Poisson
draw per slice per slot) and a request stream (one power uniform and one
lifetime uniform per arriving request, drawn at arrival time). Two runs with
the same scenario and seed therefore see identical traffic regardless of the
admission decisions taken.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .dimensioning import TrafficProfile

if TYPE_CHECKING:
    from .config import ScenarioConfig

REJECT = 0
PENDING_CAP = 32
OBS_LAYOUT_VERSION = 1

_STREAM_ARRIVALS = 11
_STREAM_REQUESTS = 12


class NoPendingRequestError(RuntimeError):
    """step() was called with no request waiting for a decision."""


class InvalidDecisionError(ValueError):
    """Decision outside {REJECT, 1..N}."""


class InvalidScenarioError(ValueError):
    """Scenario fails environment-level validation."""


@dataclass(frozen=True)
class ResourceVector:
    cpu: float
    memory: float
    storage: float

    def __post_init__(self) -> None:
        for name in ("cpu", "memory", "storage"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu + other.cpu, self.memory + other.memory,
                              self.storage + other.storage)

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu - other.cpu, self.memory - other.memory,
                              self.storage - other.storage)

    def covers(self, demand: "ResourceVector") -> bool:
        return (self.cpu >= demand.cpu and self.memory >= demand.memory
                and self.storage >= demand.storage)

    def as_tuple(self) -> tuple:
        return (self.cpu, self.memory, self.storage)


@dataclass(frozen=True)
class DataCenterSpec:
    dc_id: str
    capacity: ResourceVector
    power_range: tuple

    def __post_init__(self) -> None:
        lo, hi = self.power_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"power_range must satisfy 0 < low <= high, got {self.power_range!r}")
        if min(self.capacity.as_tuple()) <= 0.0:
            raise ValueError("data center capacity must be positive in every component")


@dataclass(frozen=True)
class SliceSpec:
    slice_id: str
    priority: float
    demand: ResourceVector
    profile: TrafficProfile
    arrival_mean: float
    departure_prob: float
    chain_capacity: int

    def __post_init__(self) -> None:
        if self.priority <= 0.0:
            raise ValueError(f"priority must be positive, got {self.priority!r}")
        if min(self.demand.as_tuple()) <= 0.0:
            raise ValueError("demand must be positive in every component")
        if self.arrival_mean < 0.0:
            raise ValueError(f"arrival_mean must be >= 0, got {self.arrival_mean!r}")
        if not (0.0 <= self.departure_prob <= 1.0):
            raise ValueError(f"departure_prob must lie in [0, 1], got {self.departure_prob!r}")
        if self.chain_capacity < 1:
            raise ValueError(f"chain_capacity must be >= 1, got {self.chain_capacity!r}")


@dataclass
class Chain:
    slice_id: str
    dc_index: int
    power: float
    depart_after: float  # last slot index (inclusive) the chain is active; inf if never
    admitted_slot: int


@dataclass
class ClusterState:
    """Mutable cluster snapshot: remaining capacity, chain ledger, pending work."""

    remaining: List[ResourceVector]
    chains: List[Chain]
    pending: deque
    slot_index: int

    def active_count(self, slice_id: str) -> int:
        return sum(1 for c in self.chains if c.slice_id == slice_id)

    def total_power(self) -> float:
        return sum(c.power for c in self.chains)


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    admitted: bool
    infeasible_attempt: bool
    observation: np.ndarray
    episode_done: bool


@dataclass
class SliceSlotStats:
    arrived: int = 0
    admitted: int = 0
    rejected: int = 0
    infeasible: int = 0


@dataclass
class SlotRecord:
    slot: int
    power: float
    cost: float
    reward: float
    decisions: int
    per_slice: Dict[str, SliceSlotStats] = field(default_factory=dict)


def admission_feasible(state: ClusterState, slice_spec: SliceSpec, dc_index: int) -> bool:
    """True when the DC's remaining resources cover the demand and the slice
    still has a free chain slot."""
    if state.active_count(slice_spec.slice_id) >= slice_spec.chain_capacity:
        return False
    return state.remaining[dc_index].covers(slice_spec.demand)


def slot_cost(state: ClusterState, admitted_this_slot: Sequence[str], kappa: float,
              priorities: Mapping[str, float]) -> float:
    """Settled cost of the current slot under utilization-dependent power.

    phi_tot sums power over every active chain in the ledger; each admission
    this slot earns back kappa times its slice priority.
    """
    bonus = sum(priorities[sid] for sid in admitted_this_slot)
    return state.total_power() - kappa * bonus


class SliceEnv:
    """Sequential-decision admission environment over a ScenarioConfig."""

    def __init__(self, scenario: "ScenarioConfig", debug: bool = False) -> None:
        if not scenario.slices:
            raise InvalidScenarioError("scenario defines no slices")
        if not scenario.datacenters:
            raise InvalidScenarioError("scenario defines no data centers")
        self.scenario = scenario
        self.debug = debug
        self._priorities = {s.slice_id: s.priority for s in scenario.slices}
        self._slice_by_id = {s.slice_id: s for s in scenario.slices}
        self.state: Optional[ClusterState] = None
        self.slot_log: List[SlotRecord] = []
        self._done = True

    # ------------------------------------------------------------------ setup

    def reset(self, seed: int) -> np.ndarray:
        sc = self.scenario
        self._arrival_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((seed, _STREAM_ARRIVALS))))
        self._request_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((seed, _STREAM_REQUESTS))))
        self.state = ClusterState(
            remaining=[dc.capacity for dc in sc.datacenters],
            chains=[],
            pending=deque(),
            slot_index=0,
        )
        self.slot_log = []
        self._done = False
        self._chain_counter = 0
        self._request_attrs = deque()  # (power_uniform, lifetime) aligned with pending
        self._admitted_this_slot: List[str] = []
        self._penalties_this_slot = 0.0
        self._always_on_power = None
        if sc.power_mode == "always_on":
            self._always_on_power = self._draw_always_on_power()
        self._current_stats = {s.slice_id: SliceSlotStats() for s in sc.slices}
        self._current_decisions = 0
        self._draw_arrivals()
        # slots with no arrivals need no decision; cross them right away (the
        # ledger is empty at reset so they carry zero cost)
        self._advance_through_empty_slots()
        return self.observation()

    def _draw_always_on_power(self) -> float:
        # deployed chain slots draw a fixed price each; placement is a
        # round-robin fiction over the DCs just to pick a power range
        total = 0.0
        n = len(self.scenario.datacenters)
        for s in self.scenario.slices:
            for k in range(s.chain_capacity):
                lo, hi = self.scenario.datacenters[k % n].power_range
                total += lo + float(self._request_rng.uniform()) * (hi - lo)
        return total

    def _draw_arrivals(self) -> None:
        assert self.state is not None
        self._current_stats = {s.slice_id: SliceSlotStats() for s in self.scenario.slices}
        self._current_decisions = 0
        self._admitted_this_slot = []
        self._penalties_this_slot = 0.0
        for spec in self.scenario.slices:
            count = int(self._arrival_rng.poisson(spec.arrival_mean))
            self._current_stats[spec.slice_id].arrived = count
            for _ in range(count):
                u_power = float(self._request_rng.uniform())
                u_life = float(self._request_rng.uniform())
                self.state.pending.append(spec.slice_id)
                self._request_attrs.append((u_power, _geometric_lifetime(u_life, spec.departure_prob)))

    # ------------------------------------------------------------- inspection

    def has_pending(self) -> bool:
        return self.state is not None and len(self.state.pending) > 0

    def pending_count(self) -> int:
        return 0 if self.state is None else len(self.state.pending)

    def current_request_slice(self) -> SliceSpec:
        if not self.has_pending():
            raise NoPendingRequestError("no request is waiting for a decision")
        return self._slice_by_id[self.state.pending[0]]

    def admission_feasible(self, slice_id: str, dc_index: int) -> bool:
        return admission_feasible(self.state, self._slice_by_id[slice_id], dc_index)

    def observation(self) -> np.ndarray:
        assert self.state is not None
        sc = self.scenario
        values = []
        for dc, rem in zip(sc.datacenters, self.state.remaining):
            cap = dc.capacity
            values.extend((rem.cpu / cap.cpu, rem.memory / cap.memory,
                           rem.storage / cap.storage))
        counts = {s.slice_id: 0 for s in sc.slices}
        for sid in self.state.pending:
            counts[sid] += 1
        for s in sc.slices:
            values.append(min(counts[s.slice_id], PENDING_CAP) / PENDING_CAP)
        return np.asarray(values, dtype=np.float64)

    @property
    def observation_size(self) -> int:
        return 3 * len(self.scenario.datacenters) + len(self.scenario.slices)

    @property
    def n_actions(self) -> int:
        return 1 + len(self.scenario.datacenters)

    def episode_done(self) -> bool:
        return self._done

    # ------------------------------------------------------------------- step

    def step(self, decision: int) -> StepOutcome:
        if self._done or self.state is None:
            raise NoPendingRequestError("episode is finished; call reset()")
        if not self.has_pending():
            raise NoPendingRequestError("no request is waiting for a decision")
        if not isinstance(decision, (int, np.integer)):
            raise InvalidDecisionError(f"decision must be an integer, got {decision!r}")
        decision = int(decision)
        n_dcs = len(self.scenario.datacenters)
        if decision < 0 or decision > n_dcs:
            raise InvalidDecisionError(f"decision {decision} outside 0..{n_dcs}")

        state = self.state
        slice_id = state.pending.popleft()
        spec = self._slice_by_id[slice_id]
        u_power, lifetime = self._request_attrs.popleft()
        stats = self._current_stats[slice_id]
        self._current_decisions += 1

        reward = 0.0
        admitted = False
        infeasible = False
        if decision == REJECT:
            stats.rejected += 1
        else:
            dc_index = decision - 1
            if admission_feasible(state, spec, dc_index):
                lo, hi = self.scenario.datacenters[dc_index].power_range
                chain = Chain(
                    slice_id=slice_id,
                    dc_index=dc_index,
                    power=lo + u_power * (hi - lo),
                    depart_after=state.slot_index + lifetime - 1,
                    admitted_slot=state.slot_index,
                )
                state.chains.append(chain)
                state.remaining[dc_index] = state.remaining[dc_index] - spec.demand
                self._admitted_this_slot.append(slice_id)
                stats.admitted += 1
                admitted = True
            else:
                stats.infeasible += 1
                infeasible = True
                reward -= self.scenario.m_penalty
                self._penalties_this_slot += self.scenario.m_penalty

        if not state.pending:
            reward += self._settle_slot()
            reward += self._advance_through_empty_slots()

        if self.debug:
            self._check_conservation()
        return StepOutcome(
            reward=reward,
            admitted=admitted,
            infeasible_attempt=infeasible,
            observation=self.observation(),
            episode_done=self._done,
        )

    # -------------------------------------------------------------- internals

    def _phi_tot(self) -> float:
        if self._always_on_power is not None:
            return self._always_on_power
        return self.state.total_power()

    def _settle_slot(self) -> float:
        """Close the current slot; returns the -cost contribution for the
        step that decided its last request."""
        state = self.state
        power = self._phi_tot()
        bonus = sum(self._priorities[sid] for sid in self._admitted_this_slot)
        cost = power - self.scenario.kappa * bonus
        self.slot_log.append(SlotRecord(
            slot=state.slot_index,
            power=power,
            cost=cost,
            reward=-cost - self._penalties_this_slot,
            decisions=self._current_decisions,
            per_slice=self._current_stats,
        ))
        self._sample_departures()
        state.slot_index += 1
        if state.slot_index >= self.scenario.horizon:
            self._done = True
        else:
            self._draw_arrivals()
        return -cost

    def _advance_through_empty_slots(self) -> float:
        """Cross slots that arrived empty; their cost accrues to the caller."""
        accrued = 0.0
        state = self.state
        while not self._done and not state.pending:
            power = self._phi_tot()
            self.slot_log.append(SlotRecord(
                slot=state.slot_index,
                power=power,
                cost=power,
                reward=-power,
                decisions=0,
                per_slice=self._current_stats,
            ))
            accrued -= power
            self._sample_departures()
            state.slot_index += 1
            if state.slot_index >= self.scenario.horizon:
                self._done = True
            else:
                self._draw_arrivals()
        return accrued

    def _sample_departures(self) -> None:
        state = self.state
        keep: List[Chain] = []
        for chain in state.chains:
            if chain.depart_after <= state.slot_index:
                state.remaining[chain.dc_index] = (
                    state.remaining[chain.dc_index] + self._slice_by_id[chain.slice_id].demand)
            else:
                keep.append(chain)
        state.chains = keep

    def _check_conservation(self) -> None:
        state = self.state
        for i, dc in enumerate(self.scenario.datacenters):
            used = dc.capacity
            for chain in state.chains:
                if chain.dc_index == i:
                    used = used - self._slice_by_id[chain.slice_id].demand
            got = state.remaining[i].as_tuple()
            want = used.as_tuple()
            for g, w in zip(got, want):
                if abs(g - w) > 1e-9:
                    raise AssertionError(
                        f"resource conservation violated on DC {dc.dc_id}: {got} != {want}")


def _geometric_lifetime(u: float, p: float) -> float:
    """Inverse-CDF geometric draw on {1, 2, ...} with success probability p.

    p = 1 pins the lifetime to a single slot; p = 0 never departs.
    """
    if p >= 1.0:
        return 1.0
    if p <= 0.0:
        return math.inf
    k = math.ceil(math.log1p(-u) / math.log1p(-p))
    return float(max(1, k))
