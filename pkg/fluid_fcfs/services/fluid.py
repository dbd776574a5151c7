"""
Exact piecewise-linear fluid trajectories of the ordered server levels.

Servers sitting at the same level form a group. Between events every group
moves at a constant speed determined by the customer types it alone still
serves (its effective set: compatible types not served by any group ahead).
Events are catch-ups between neighbouring groups and contacts with the
arrival frontier λt; both are solved in closed form. At each event every
co-located set is re-resolved into its unique ordered sub-partition.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.config import settings
from ..core.exceptions import ConvergenceError, ModeError, UsageError
from ..models.schemas import (
    FluidEventDocument,
    FluidEventKind,
    GroupDocument,
    RateMode,
    SegmentDocument,
    StabilityDocument,
    TrajectoryDocument,
)
from ..models.system import SystemSpec, iter_bits, popcount
from .lp import build_static_plan, static_plan_solver
from .pooling import compare, solve_tree_system

logger = logging.getLogger(__name__)

INFINITY = float("inf")


class FluidMode(str, Enum):
    SD = "SD"
    CD = "CD"
    TREE = "TREE"
    COMPLETE = "COMPLETE"


def fluid_mode(spec: SystemSpec) -> FluidMode:
    if spec.is_complete():
        return FluidMode.COMPLETE
    if spec.mode is RateMode.SD:
        return FluidMode.SD
    if spec.mode is RateMode.CD:
        return FluidMode.CD
    if spec.is_tree():
        return FluidMode.TREE
    raise ModeError("fluid dynamics are not determined by rates for GENERAL rates on a non-tree graph")


@dataclass(frozen=True)
class GroupSpeed:
    speed: float
    instant_merge: bool = False
    arrival_constrained: bool = False


@dataclass(frozen=True)
class FluidGroup:
    servers: int
    position: float
    speed: float
    arrival_constrained: bool = False

    def position_at(self, elapsed: float) -> float:
        return self.position + self.speed * elapsed


@dataclass(frozen=True)
class FluidSegment:
    start: float
    end: float
    groups: Tuple[FluidGroup, ...]


@dataclass(frozen=True)
class FluidEvent:
    time: float
    kind: FluidEventKind
    servers: int


@dataclass(frozen=True)
class FluidState:
    time: float
    groups: Tuple[Tuple[int, float], ...]
    arrival_frontier: float
    arrival_rate: Optional[float]


@dataclass(frozen=True)
class QueueProfile:
    """Fluid queue mass per gap (rows) and customer type (columns)"""
    between_groups: np.ndarray
    behind_frontier: np.ndarray


@dataclass(frozen=True)
class FluidTrajectory:
    spec: SystemSpec = field(repr=False, compare=False)
    arrival_rate: Optional[float]
    horizon: float
    segments: Tuple[FluidSegment, ...]
    events: Tuple[FluidEvent, ...]
    steady: bool

    @property
    def breakpoints(self) -> List[float]:
        return [segment.start for segment in self.segments]

    def segment_at(self, t: float) -> FluidSegment:
        for segment in reversed(self.segments):
            if segment.start <= t:
                return segment
        return self.segments[0]

    def state_at(self, t: float) -> FluidState:
        segment = self.segment_at(t)
        elapsed = t - segment.start
        merged: List[List] = []
        for group in segment.groups:
            position = group.position_at(elapsed)
            if merged and abs(position - merged[-1][1]) <= settings.merge_tolerance:
                merged[-1][0] |= group.servers
            else:
                merged.append([group.servers, position])
        frontier = INFINITY if self.arrival_rate is None else self.arrival_rate * t
        return FluidState(t, tuple((mask, pos) for mask, pos in merged), frontier, self.arrival_rate)

    def positions_at(self, t: float) -> np.ndarray:
        """Fluid level of every server at time t"""
        positions = np.zeros(self.spec.num_servers)
        for mask, position in self.state_at(t).groups:
            for j in iter_bits(mask):
                positions[j] = position
        return positions

    def queue_profile(self, t: float) -> QueueProfile:
        state = self.state_at(t)
        alpha = self.spec.alpha_array
        between = np.zeros((max(len(state.groups) - 1, 0), self.spec.num_customers))
        prefix = 0
        for g in range(len(state.groups) - 1):
            prefix |= state.groups[g][0]
            gap = state.groups[g + 1][1] - state.groups[g][1]
            for i in iter_bits(self.spec.unique_customers_mask(prefix)):
                between[g, i] = alpha[i] * gap
        if self.arrival_rate is None:
            behind = np.full(self.spec.num_customers, INFINITY)
        else:
            behind = alpha * max(state.arrival_frontier - state.groups[-1][1], 0.0)
        return QueueProfile(between_groups=between, behind_frontier=behind)

    def sample(self, resolution: float) -> List[Tuple[float, str, float]]:
        """Long-format rows (t, server group, position) on a regular time grid"""
        if resolution <= 0:
            raise UsageError("sampling resolution must be positive")
        end = self.horizon if math.isfinite(self.horizon) else max(self.breakpoints[-1] * 1.5, 1.0)
        rows = []
        steps = int(math.floor(end / resolution + 1e-9))
        for step in range(steps + 1):
            t = step * resolution
            for mask, position in self.state_at(t).groups:
                rows.append((t, "+".join(self.spec.server_names(mask)), position))
        return rows

    def to_document(self) -> TrajectoryDocument:
        spec = self.spec
        return TrajectoryDocument(
            arrival_rate=self.arrival_rate,
            horizon=self.horizon if math.isfinite(self.horizon) else None,
            steady=self.steady,
            breakpoints=self.breakpoints,
            segments=[
                SegmentDocument(
                    start=segment.start,
                    end=segment.end if math.isfinite(segment.end) else None,
                    groups=[
                        GroupDocument(
                            servers=spec.server_names(group.servers),
                            position=group.position,
                            speed=group.speed,
                            arrival_constrained=group.arrival_constrained,
                        )
                        for group in segment.groups
                    ],
                )
                for segment in self.segments
            ],
            events=[
                FluidEventDocument(time=event.time, kind=event.kind, servers=spec.server_names(event.servers))
                for event in self.events
            ],
        )


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    pooled_rate: float
    arrival_rate: float
    merge_time: Optional[float] = None
    drain_time: Optional[float] = None

    def to_document(self) -> StabilityDocument:
        return StabilityDocument(
            stable=self.stable,
            arrival_rate=self.arrival_rate,
            pooled_rate=self.pooled_rate,
            merge_time=self.merge_time,
            drain_time=self.drain_time,
        )


class SpeedModel:
    """Natural speed of a group given the servers ahead of it, memoized"""

    def __init__(self, spec: SystemSpec):
        self.spec = spec
        self.mode = fluid_mode(spec)
        self._cache: Dict[Tuple[int, int], float] = {}

    def effective_customers(self, group: int, successors: int) -> int:
        return self.spec.customers_mask(group) & ~self.spec.customers_mask(successors)

    def speed(self, group: int, successors: int) -> float:
        key = (group, successors)
        if key not in self._cache:
            self._cache[key] = self._speed(group, self.effective_customers(group, successors))
        return self._cache[key]

    def _speed(self, group: int, effective: int) -> float:
        spec = self.spec
        if not effective:
            return INFINITY
        if self.mode is FluidMode.SD:
            return spec.server_rate_of(group) / spec.alpha_of(effective)
        if self.mode is FluidMode.CD:
            return popcount(group) / spec.workload_of(effective)
        if self.mode is FluidMode.COMPLETE:
            return sum(
                1.0 / sum(spec.alpha[i] * spec.mean(j, i) for i in iter_bits(effective))
                for j in iter_bits(group)
            )
        return self._tree_speed(group, effective)

    def _tree_speed(self, group: int, effective: int) -> float:
        spec = self.spec
        attached = group & spec.servers_mask(effective)
        if attached == group:
            try:
                eta, mu = solve_tree_system(spec, group, effective)
                if all(value >= -settings.crp_tolerance for value in eta):
                    return mu
            except ModeError:
                pass
        if not attached:
            return INFINITY
        return static_plan_solver.solve_lp(spec, build_static_plan(spec, attached, effective)).mu_star


@dataclass
class _Block:
    servers: int
    position: float
    speed: float
    capped: bool = False


class FluidTracer:
    """Event-driven tracer of the fluid model"""

    def __init__(self, spec: SystemSpec):
        self.spec = spec
        self.speeds = SpeedModel(spec)
        self.arrival_rate = spec.arrival_rate
        self._resolution_cache: Dict[Tuple[int, int, bool], List[Tuple[int, float, bool]]] = {}

    # co-located set resolution
    def resolve(self, group: int, outer: int, at_frontier: bool) -> List[Tuple[int, float, bool]]:
        """
        Ordered sub-partition of a co-located set, back to front.

        Returns (servers, speed, capped) per block with strictly increasing
        speeds; falls back to the coarsest weakly valid partition on ties.
        """
        key = (group, outer, at_frontier)
        if key not in self._resolution_cache:
            if popcount(group) <= settings.exhaustive_limit:
                chains = self._chains(group, outer, at_frontier, strict=True, limit=2)
                if len(chains) > 1:
                    logger.warning(f"Co-located set {self.spec.server_names(group)} has several valid splits; using the first")
                if not chains:
                    chains = self._chains(group, outer, at_frontier, strict=False, limit=None)
                    if not chains:
                        raise ConvergenceError(f"no valid ordering of co-located servers {self.spec.server_names(group)}")
                    chains.sort(key=len)
                    logger.warning(f"Weak boundary in co-located set {self.spec.server_names(group)}; keeping it coarse")
                chain = chains[0]
            else:
                chain = self._greedy(group, outer, at_frontier)
            self._resolution_cache[key] = chain
        return self._resolution_cache[key]

    def _block_speed(self, block: int, successors: int, last: bool, at_frontier: bool) -> Tuple[float, bool]:
        natural = self.speeds.speed(block, successors)
        if not math.isfinite(natural):
            return natural, False
        if last and at_frontier and self.arrival_rate is not None and natural >= self.arrival_rate:
            return self.arrival_rate, True
        return natural, False

    def _pooled(self, block: int, successors: int, speed: float, strict: bool) -> bool:
        sub = (block - 1) & block
        while sub:
            rear = self.speeds.speed(sub, successors | (block & ~sub))
            sign = compare(rear, speed)
            if sign < 0 or (strict and sign == 0):
                return False
            sub = (sub - 1) & block
        return True

    def _chains(self, group: int, outer: int, at_frontier: bool, strict: bool, limit: Optional[int]):
        found: List[List[Tuple[int, float, bool]]] = []

        def extend(placed: int, last_speed: float, chain: List[Tuple[int, float, bool]]):
            if limit is not None and len(found) >= limit:
                return
            remaining = group & ~placed
            if not remaining:
                found.append(list(chain))
                return
            block = remaining
            while block:
                last = block == remaining
                successors = outer | (remaining & ~block)
                speed, capped = self._block_speed(block, successors, last, at_frontier)
                order = compare(speed, last_speed) if math.isfinite(last_speed) else 1
                if speed < INFINITY and (order > 0 or (not strict and order == 0)):
                    if self._pooled(block, successors, speed, strict):
                        chain.append((block, speed, capped))
                        extend(placed | block, speed, chain)
                        chain.pop()
                block = (block - 1) & remaining

        extend(0, -INFINITY, [])
        return found

    def _greedy(self, group: int, outer: int, at_frontier: bool) -> List[Tuple[int, float, bool]]:
        chain, remaining = [], group
        while remaining:
            best, best_speed = remaining, INFINITY
            sub = remaining
            while sub:
                speed = self.speeds.speed(sub, outer | (remaining & ~sub))
                sign = compare(speed, best_speed) if math.isfinite(best_speed) else -1
                if sign < 0 or (sign == 0 and popcount(sub) > popcount(best)):
                    best, best_speed = sub, speed
                sub = (sub - 1) & remaining
            if best == remaining:
                speed, capped = self._block_speed(remaining, outer, True, at_frontier)
                chain.append((remaining, speed, capped))
                break
            if at_frontier and self.arrival_rate is not None and best_speed >= self.arrival_rate:
                chain.append((remaining, self.arrival_rate, True))
                break
            chain.append((best, best_speed, False))
            remaining &= ~best
        return chain

    # main loop
    def trace(self, initial_positions: Sequence[float], horizon: float) -> FluidTrajectory:
        spec = self.spec
        positions = [float(p) for p in initial_positions]
        if len(positions) != spec.num_servers:
            raise UsageError(f"expected {spec.num_servers} initial positions, got {len(positions)}")
        if any(p > settings.merge_tolerance for p in positions):
            raise UsageError("initial fluid positions must be <= 0")
        if not horizon > 0:
            raise UsageError("horizon must be > 0")
        if self.speeds.mode is FluidMode.COMPLETE:
            return self._trace_complete(positions, horizon)

        tolerance = settings.merge_tolerance
        lam = self.arrival_rate
        events: List[FluidEvent] = []
        segments: List[FluidSegment] = []
        groups = _cluster(positions, tolerance)
        t = 0.0
        steady = False

        for _ in range(settings.max_fluid_events):
            frontier = INFINITY if lam is None else lam * t
            groups = self._instant_merges(groups, t, events)
            blocks = self._resolve_all(groups, frontier, t, events)

            dt, triggers = self._next_event(blocks, frontier)
            end = min(t + dt, horizon)
            segments.append(FluidSegment(
                start=t,
                end=end,
                groups=tuple(FluidGroup(b.servers, b.position, b.speed, b.capped) for b in blocks),
            ))
            if not math.isfinite(dt):
                steady = True
                break
            if t + dt >= horizon:
                break

            t = t + dt
            for block in blocks:
                block.position += block.speed * dt
            for kind, index in triggers:
                if kind == "catch_up":
                    blocks[index].position = blocks[index + 1].position
                else:
                    blocks[index].position = lam * t
                    events.append(FluidEvent(t, FluidEventKind.FRONTIER_CONTACT, blocks[index].servers))
            groups = self._merge_colocated(blocks, t, events)
        else:
            raise ConvergenceError(f"fluid trace exceeded {settings.max_fluid_events} events")

        if steady and math.isfinite(horizon):
            last = segments[-1]
            segments[-1] = FluidSegment(last.start, horizon, last.groups)
        logger.info(f"Fluid trace: {len(segments)} segment(s), {len(events)} event(s), steady={steady}")
        return FluidTrajectory(spec, lam, horizon, tuple(segments), tuple(events), steady)

    def _instant_merges(self, groups: List[List], t: float, events: List[FluidEvent]) -> List[List]:
        """Servers whose every compatible type is served ahead jump to the nearest group that still needs them"""
        spec = self.spec
        for g in range(len(groups) - 2, -1, -1):
            ahead = [spec.customers_mask(groups[h][0]) for h in range(len(groups))]
            movers = 0
            for j in iter_bits(groups[g][0]):
                served_ahead = 0
                for h in range(g + 1, len(groups)):
                    served_ahead |= ahead[h]
                if spec.server_masks[j] & ~served_ahead == 0:
                    movers |= 1 << j
            if not movers:
                continue
            for j in iter_bits(movers):
                target = g + 1
                while True:
                    beyond = 0
                    for h in range(target + 1, len(groups)):
                        beyond |= spec.customers_mask(groups[h][0])
                    if spec.server_masks[j] & ~beyond:
                        break
                    target += 1
                groups[target][0] |= 1 << j
            groups[g][0] &= ~movers
            events.append(FluidEvent(t, FluidEventKind.INSTANT_MERGE, movers))
        return [group for group in groups if group[0]]

    def _resolve_all(self, groups: List[List], frontier: float, t: float, events: List[FluidEvent]) -> List[_Block]:
        blocks: List[_Block] = []
        outer = 0
        for g in range(len(groups) - 1, -1, -1):
            mask, position = groups[g]
            at_frontier = g == len(groups) - 1 and math.isfinite(frontier) and abs(position - frontier) <= settings.merge_tolerance
            chain = self.resolve(mask, outer, at_frontier)
            if len(chain) > 1:
                events.append(FluidEvent(t, FluidEventKind.SPLIT, mask))
            if at_frontier and not chain[-1][2] and t > 0:
                events.append(FluidEvent(t, FluidEventKind.FRONTIER_RELEASE, chain[-1][0]))
            blocks[:0] = [_Block(servers, position, speed, capped) for servers, speed, capped in chain]
            outer |= mask
        return blocks

    def _next_event(self, blocks: List[_Block], frontier: float) -> Tuple[float, List[Tuple[str, int]]]:
        lam = self.arrival_rate
        candidates: List[Tuple[float, str, int]] = []
        for index in range(len(blocks) - 1):
            back, front = blocks[index], blocks[index + 1]
            closing = back.speed - front.speed
            if closing > 0 and compare(back.speed, front.speed) > 0:
                candidates.append((max(front.position - back.position, 0.0) / closing, "catch_up", index))
        front = blocks[-1]
        if lam is not None and not front.capped and front.speed > lam and compare(front.speed, lam) > 0:
            candidates.append((max(frontier - front.position, 0.0) / (front.speed - lam), "frontier", len(blocks) - 1))
        if not candidates:
            return INFINITY, []
        dt = min(candidate[0] for candidate in candidates)
        window = max(dt, 1.0) * 1e-12
        return dt, [(kind, index) for when, kind, index in candidates if when <= dt + window]

    def _merge_colocated(self, blocks: List[_Block], t: float, events: List[FluidEvent]) -> List[List]:
        groups: List[List] = []
        for block in blocks:
            if groups and abs(block.position - groups[-1][1]) <= settings.merge_tolerance:
                groups[-1][0] |= block.servers
                groups[-1][1] = max(groups[-1][1], block.position)
                events.append(FluidEvent(t, FluidEventKind.MERGE, groups[-1][0]))
            else:
                groups.append([block.servers, block.position])
        return groups

    def _trace_complete(self, positions: List[float], horizon: float) -> FluidTrajectory:
        """Every lagging server jumps to the leader at 0+ and the pooled group runs at μ until λt"""
        spec = self.spec
        lam = self.arrival_rate
        everyone = spec.all_servers
        leader = max(positions)
        mu = self.speeds.speed(everyone, 0)
        events: List[FluidEvent] = []
        if any(p < leader - settings.merge_tolerance for p in positions):
            lagging = sum(1 << j for j, p in enumerate(positions) if p < leader - settings.merge_tolerance)
            events.append(FluidEvent(0.0, FluidEventKind.INSTANT_MERGE, lagging))

        segments: List[FluidSegment] = []
        if lam is not None and mu >= lam and leader >= -settings.merge_tolerance:
            segments.append(FluidSegment(0.0, horizon, (FluidGroup(everyone, 0.0, lam, True),)))
        elif lam is not None and mu > lam and compare(mu, lam) > 0:
            contact = -leader / (mu - lam)
            segments.append(FluidSegment(0.0, min(contact, horizon), (FluidGroup(everyone, leader, mu),)))
            if contact < horizon:
                events.append(FluidEvent(contact, FluidEventKind.FRONTIER_CONTACT, everyone))
                segments.append(FluidSegment(contact, horizon, (FluidGroup(everyone, lam * contact, lam, True),)))
        else:
            segments.append(FluidSegment(0.0, horizon, (FluidGroup(everyone, leader, mu),)))
        return FluidTrajectory(spec, lam, horizon, tuple(segments), tuple(events), True)


def _cluster(positions: Sequence[float], tolerance: float) -> List[List]:
    order = sorted(range(len(positions)), key=lambda j: (positions[j], j))
    groups: List[List] = []
    for j in order:
        if groups and abs(positions[j] - groups[-1][1]) <= tolerance:
            groups[-1][0] |= 1 << j
            groups[-1][1] = max(groups[-1][1], positions[j])
        else:
            groups.append([1 << j, positions[j]])
    return groups


def segment_speeds(
    spec: SystemSpec,
    partition: Sequence[int],
    arrival_constrained: Optional[Sequence[bool]] = None,
) -> List[GroupSpeed]:
    """
    Speed of each group of an ordered partition (back to front)

    A group whose effective customer set is empty is reported as an instant
    merge with infinite speed.
    """
    speeds = SpeedModel(spec)
    flags = list(arrival_constrained) if arrival_constrained is not None else [False] * len(partition)
    if len(flags) != len(partition):
        raise UsageError("one arrival-constrained flag per group is required")
    result = []
    for g, group in enumerate(partition):
        successors = 0
        for later in partition[g + 1:]:
            successors |= later
        speed = speeds.speed(group, successors)
        if not math.isfinite(speed):
            result.append(GroupSpeed(INFINITY, instant_merge=True))
            continue
        if flags[g] and spec.arrival_rate is not None and speed >= spec.arrival_rate:
            result.append(GroupSpeed(spec.arrival_rate, arrival_constrained=True))
        else:
            result.append(GroupSpeed(speed))
    return result


def trace(spec: SystemSpec, initial_positions: Sequence[float], horizon: float) -> FluidTrajectory:
    try:
        return FluidTracer(spec).trace(initial_positions, horizon)
    except Exception as e:
        logger.error(f"Failed to trace fluid model: {e}")
        raise


def stability(spec: SystemSpec, initial_positions: Sequence[float]) -> StabilityVerdict:
    """Stable iff the rear group reaches the arrival frontier in finite time"""
    if spec.arrival_rate is None:
        raise UsageError("stability needs an arrival rate (lambda)")
    lam = spec.arrival_rate
    tracer = FluidTracer(spec)
    pooled = tracer.speeds.speed(spec.all_servers, 0)
    trajectory = tracer.trace(initial_positions, INFINITY)

    merge_time = next((segment.start for segment in trajectory.segments if _single_group(segment)), None)
    final = trajectory.segments[-1]
    stable = (
        trajectory.steady
        and _single_group(final)
        and final.groups[-1].arrival_constrained
        and compare(pooled, lam) > 0
    )
    drain_time = None
    if stable:
        drain_time = next(
            segment.start for segment in trajectory.segments
            if _single_group(segment) and segment.groups[-1].arrival_constrained
        )
    logger.info(f"Stability at lambda={lam}: stable={stable}, pooled rate {pooled:.6g}")
    return StabilityVerdict(stable=stable, pooled_rate=pooled, arrival_rate=lam, merge_time=merge_time, drain_time=drain_time)


def _single_group(segment: FluidSegment) -> bool:
    return len(segment.groups) == 1


def lipschitz_bound(spec: SystemSpec) -> float:
    """max over types c of (1/α_c) Σ_{s∈𝒮(c)} μ_{s,c}"""
    return max(
        sum(spec.rate(j, i) for j in iter_bits(spec.customer_masks[i])) / spec.alpha[i]
        for i in range(spec.num_customers)
    )


def merge_time_bound(spec: SystemSpec, initial_positions: Sequence[float]) -> Optional[float]:
    """
    Upper bound on the time until every server shares one level.

    The rear group always runs at least as fast as the slowest possible rear
    group and the leading group at most as fast as the fastest possible
    leading group; their difference bounds the rate at which the span shrinks.
    """
    if spec.num_servers == 1:
        return 0.0
    speeds = SpeedModel(spec)
    everyone = spec.all_servers
    slowest_rear, fastest_front = INFINITY, 0.0
    for mask in range(1, everyone):
        slowest_rear = min(slowest_rear, speeds.speed(mask, everyone & ~mask))
        fastest_front = max(fastest_front, speeds.speed(mask, 0))
    gap = slowest_rear - fastest_front
    if not gap > 0:
        return None
    return max(-min(initial_positions), 0.0) / gap
