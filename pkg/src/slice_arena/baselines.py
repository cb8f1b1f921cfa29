"""Non-learning comparison policies: random allocation and per-slot
exhaustive search.

The exhaustive search is myopic: it minimizes the current slot's settled
cost (power minus kappa-weighted admission bonus) over every joint
assignment of the slot's pending requests, applying requests in order and
checking resource and chain-capacity constraints cumulatively. It is not a
horizon-optimal planner. Candidate powers are not drawn yet at decision
time, so each admission is scored with the chosen DC's expected draw
(midpoint of its power range); the cost model assumes utilization-dependent
power.

Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import itertools
from typing import Dict, List, Optional, Sequence, Tuple

from .env import ClusterState, DataCenterSpec, REJECT, SliceSpec

ENUMERATION_LIMIT = 10 ** 6


class InstanceTooLargeError(ValueError):
    """The joint assignment space exceeds the enumeration guard."""


def random_policy_decision(state: ClusterState, slice_spec: SliceSpec, rng) -> int:
    """Uniform over {REJECT, DC 1..N}; no feasibility lookahead."""
    return int(rng.integers(0, len(state.remaining) + 1))


def _guard(n_dcs: int, n_requests: int) -> None:
    total = (n_dcs + 1) ** n_requests
    if total > ENUMERATION_LIMIT:
        raise InstanceTooLargeError(
            f"{n_requests} requests over {n_dcs} DCs span {total} assignments "
            f"(limit {ENUMERATION_LIMIT})")


def enumerate_assignments(requests: Sequence[SliceSpec],
                          state: ClusterState) -> List[Tuple[int, ...]]:
    """Every joint choice over {REJECT, 1..N} per request, lexicographic."""
    n = len(state.remaining)
    _guard(n, len(requests))
    return list(itertools.product(range(n + 1), repeat=len(requests)))


def assignment_cost(assignment: Sequence[int], requests: Sequence[SliceSpec],
                    state: ClusterState, kappa: float,
                    datacenters: Sequence[DataCenterSpec]) -> Optional[float]:
    """Slot cost of a joint assignment, or None when it is infeasible.

    Feasibility is cumulative in request order against the state's remaining
    resources and per-slice chain capacities.
    """
    remaining = list(state.remaining)
    extra: Dict[str, int] = {}
    power = state.total_power()
    bonus = 0.0
    for choice, spec in zip(assignment, requests):
        if choice == REJECT:
            continue
        dc = choice - 1
        active = state.active_count(spec.slice_id) + extra.get(spec.slice_id, 0)
        if active >= spec.chain_capacity:
            return None
        if not remaining[dc].covers(spec.demand):
            return None
        remaining[dc] = remaining[dc] - spec.demand
        extra[spec.slice_id] = extra.get(spec.slice_id, 0) + 1
        lo, hi = datacenters[dc].power_range
        power += (lo + hi) / 2.0
        bonus += spec.priority
    return power - kappa * bonus


def myopic_exhaustive_decision(requests: Sequence[SliceSpec], state: ClusterState,
                               kappa: float,
                               datacenters: Sequence[DataCenterSpec]) -> Tuple[int, ...]:
    """The feasible joint assignment with minimal slot cost.

    Ties go to the lexicographically smallest assignment vector. Searches
    depth-first in lexicographic order, pruning branches as soon as a
    placement fails, which is exact (an infeasible prefix cannot become
    feasible again) and fast near saturation.
    """
    n = len(datacenters)
    k = len(requests)
    _guard(n, k)

    base_active = {s.slice_id: state.active_count(s.slice_id) for s in requests}
    best_cost = [float("inf")]
    best: List[Tuple[int, ...]] = [()]
    choice_buf = [0] * k

    def descend(depth: int, remaining, extra: Dict[str, int],
                power: float, bonus: float) -> None:
        if depth == k:
            cost = power - kappa * bonus
            if cost < best_cost[0]:
                best_cost[0] = cost
                best[0] = tuple(choice_buf)
            return
        spec = requests[depth]
        for choice in range(n + 1):
            choice_buf[depth] = choice
            if choice == REJECT:
                descend(depth + 1, remaining, extra, power, bonus)
                continue
            dc = choice - 1
            if base_active[spec.slice_id] + extra.get(spec.slice_id, 0) \
                    >= spec.chain_capacity:
                continue
            if not remaining[dc].covers(spec.demand):
                continue
            next_remaining = list(remaining)
            next_remaining[dc] = next_remaining[dc] - spec.demand
            next_extra = dict(extra)
            next_extra[spec.slice_id] = next_extra.get(spec.slice_id, 0) + 1
            lo, hi = datacenters[dc].power_range
            descend(depth + 1, next_remaining, next_extra,
                    power + (lo + hi) / 2.0, bonus + spec.priority)

    descend(0, list(state.remaining), {}, state.total_power(), 0.0)
    return best[0]
