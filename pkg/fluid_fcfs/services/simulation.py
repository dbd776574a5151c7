"""
Discrete-event simulation of FCFS-ALIS parallel service systems
"""
import heapq
import itertools
import logging
import math
import sys
from collections import Counter, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..core.config import settings
from ..core.exceptions import ModeError, RegimeError, UsageError
from ..models.schemas import (
    LawFamily,
    PermutationRow,
    PermutationTableDocument,
    RateMode,
    ReplicationVectorsDocument,
    SimEstimateDocument,
    SimulationMeta,
)
from ..models.system import SystemSpec, iter_bits
from .distributions import ExponentialLaw, ServiceLaw, StreamPurpose, UniformStream, VariateStream, get_law
from .lp import solve_static_plan

logger = logging.getLogger(__name__)

MAX_PERMUTATION_SERVERS = 8


def ordering_label(order) -> str:
    """1-based server indices joined by '-', most lagging server first"""
    return "-".join(str(j + 1) for j in order)


def permutation_labels(num_servers: int) -> List[str]:
    return [ordering_label(order) for order in itertools.permutations(range(num_servers))]


@dataclass(frozen=True)
class SimulationProtocol:
    warmup_services: int
    measured_services: int

    def __post_init__(self):
        if self.warmup_services < 0:
            raise UsageError("warmup must be >= 0 services")
        if self.measured_services < 1:
            raise UsageError("at least one measured service is required")


@dataclass(frozen=True)
class Decision:
    """One step of the assignment log: an arrival, a freed server, or an assignment"""
    kind: str
    time: float
    server: int = -1
    index: int = -1
    customer: int = -1


@dataclass
class ReplicationRecord:
    replication: int
    counts: np.ndarray
    span_histogram: Counter
    ordering_counts: Counter
    samples: int
    idle_events: int = 0
    queue_time_average: Optional[np.ndarray] = None
    decisions: List[Decision] = field(default_factory=list)

    @property
    def vector(self) -> np.ndarray:
        """Fraction of measured services per compatibility edge, in spec edge order"""
        return self.counts / self.counts.sum()

    def permutation_vector(self, labels: List[str]) -> np.ndarray:
        return np.array([self.ordering_counts.get(label, 0) for label in labels], dtype=float) / max(self.samples, 1)


class _TypeSampler:
    def __init__(self, alpha: np.ndarray, uniforms: UniformStream):
        self._cumulative = np.cumsum(alpha)
        self._last = len(alpha) - 1
        self._uniforms = uniforms
        self._block = np.empty(0, dtype=int)
        self._cursor = 0

    def next(self) -> int:
        if self._cursor >= len(self._block):
            drawn = np.searchsorted(self._cumulative, self._uniforms.block(), side="right")
            self._block = np.minimum(drawn, self._last)
            self._cursor = 0
        value = self._block[self._cursor]
        self._cursor += 1
        return int(value)


class FcfsAlisSimulator:
    """
    One replication of the FCFS-ALIS system.

    A freed server takes the longest-waiting compatible customer; an arriving
    customer goes to the longest-idle compatible server. With infinite supply
    there is always work: a freed server that finds nothing compatible in the
    waiting line draws fresh customers until one fits, leaving the rest waiting.
    """

    def __init__(
        self,
        spec: SystemSpec,
        law: ServiceLaw,
        seed_base: int,
        replication: int,
        infinite_supply: bool = True,
        record_decisions: int = 0,
    ):
        self.spec = spec
        self.law = law
        self.replication = replication
        self.infinite_supply = infinite_supply
        self.record_decisions = record_decisions
        self._seed_base = seed_base

        self._types = _TypeSampler(spec.alpha_array, UniformStream(seed_base, replication, StreamPurpose.CUSTOMER_TYPE))
        self._init = UniformStream(seed_base, replication, StreamPurpose.INITIALIZATION)
        self._services: Dict[int, VariateStream] = {}
        self._compatible_types = [list(iter_bits(spec.server_masks[j])) for j in range(spec.num_servers)]
        self._compatible_servers = [spec.customer_masks[i] for i in range(spec.num_customers)]

        self.waiting: List[Deque[int]] = [deque() for _ in range(spec.num_customers)]
        self.position = [0] * spec.num_servers
        self.in_service = [0] * spec.num_servers
        self.idle: List[int] = []
        self.events: List[Tuple[float, int]] = []
        self.clock = 0.0
        self.next_index = 0
        self.decisions: List[Decision] = []

    def _service_time(self, j: int, i: int) -> float:
        k = self.spec.edge_index[(j, i)]
        stream = self._services.get(k)
        if stream is None:
            uniforms = UniformStream(self._seed_base, self.replication, StreamPurpose.SERVICE, k)
            stream = VariateStream(self.law, self.spec.rate(j, i), uniforms)
            self._services[k] = stream
        return stream.next()

    def _log(self, kind: str, server: int = -1, index: int = -1, customer: int = -1):
        if len(self.decisions) < self.record_decisions:
            self.decisions.append(Decision(kind, self.clock, server, index, customer))

    def _start(self, j: int, index: int, i: int):
        self._log("assign", server=j, index=index, customer=i)
        self.position[j] = index
        self.in_service[j] = i
        heapq.heappush(self.events, (self.clock + self._service_time(j, i), j))

    def _arrive(self, i: int) -> int:
        index = self.next_index
        self.next_index += 1
        self._log("arrival", index=index, customer=i)
        return index

    def initialize(self):
        """All servers start service of successive customers, each of a type uniform over its compatibility set"""
        for j in range(self.spec.num_servers):
            options = self._compatible_types[j]
            i = options[min(int(self._init.next() * len(options)), len(options) - 1)]
            self._start(j, self._arrive(i), i)

    def _oldest_compatible(self, j: int) -> Optional[Tuple[int, int]]:
        best = None
        for i in self._compatible_types[j]:
            line = self.waiting[i]
            if line and (best is None or line[0] < best[0]):
                best = (line[0], i)
        return best

    def _serve_next(self, j: int) -> bool:
        """FCFS choice for a freed server; returns False when it goes idle"""
        found = self._oldest_compatible(j)
        if found is not None:
            index, i = found
            self.waiting[i].popleft()
            self._start(j, index, i)
            return True
        if not self.infinite_supply:
            self.idle.append(j)
            return False
        compatible = self.spec.server_masks[j]
        while True:
            i = self._types.next()
            index = self._arrive(i)
            if compatible >> i & 1:
                self._start(j, index, i)
                return True
            self.waiting[i].append(index)

    def _admit(self, i: int):
        """ALIS choice for an arriving customer"""
        index = self._arrive(i)
        compatible = self._compatible_servers[i]
        for rank, j in enumerate(self.idle):
            if compatible >> j & 1:
                del self.idle[rank]
                self._start(j, index, i)
                return
        self.waiting[i].append(index)

    def _levels(self) -> List[int]:
        """Busy servers at their customer's index, idle ones just past the last arrival, longest idle highest"""
        if not self.idle:
            return self.position
        levels = list(self.position)
        k = len(self.idle)
        for rank, j in enumerate(self.idle):
            levels[j] = self.next_index - 1 + (k - rank)
        return levels

    def run(self, protocol: SimulationProtocol) -> ReplicationRecord:
        spec = self.spec
        interarrival = None
        next_arrival = math.inf
        if not self.infinite_supply:
            uniforms = UniformStream(self._seed_base, self.replication, StreamPurpose.INTERARRIVAL)
            interarrival = VariateStream(ExponentialLaw(), spec.arrival_rate, uniforms)
            next_arrival = interarrival.next()

        self.initialize()
        counts = np.zeros(len(spec.edges))
        spans: Counter = Counter()
        orderings: Counter = Counter()
        queue_area = np.zeros(spec.num_customers)
        measuring_since = None
        idle_events = 0
        completed = 0
        total = protocol.warmup_services + protocol.measured_services
        track_orderings = spec.num_servers <= MAX_PERMUTATION_SERVERS

        while completed < total:
            next_completion = self.events[0][0] if self.events else math.inf
            if next_arrival < next_completion:
                self._advance(next_arrival, queue_area, measuring_since)
                self._admit(self._types.next())
                next_arrival = self.clock + interarrival.next()
                continue

            when, j = heapq.heappop(self.events)
            self._advance(when, queue_area, measuring_since)
            self._log("free", server=j)
            measuring = completed >= protocol.warmup_services
            if measuring:
                if measuring_since is None:
                    measuring_since = self.clock
                levels = self._levels()
                counts[spec.edge_index[(j, self.in_service[j])]] += 1
                spans[max(levels) - min(levels)] += 1
                if track_orderings:
                    orderings[ordering_label(sorted(range(spec.num_servers), key=levels.__getitem__))] += 1
            completed += 1
            if not self._serve_next(j) and measuring:
                idle_events += 1

        queue_average = None
        if not self.infinite_supply and measuring_since is not None and self.clock > measuring_since:
            queue_average = queue_area / (self.clock - measuring_since)
        return ReplicationRecord(
            replication=self.replication,
            counts=counts,
            span_histogram=spans,
            ordering_counts=orderings,
            samples=protocol.measured_services,
            idle_events=idle_events,
            queue_time_average=queue_average,
            decisions=self.decisions,
        )

    def _advance(self, when: float, queue_area: np.ndarray, measuring_since: Optional[float]):
        if measuring_since is not None and not self.infinite_supply:
            queue_area += (when - self.clock) * np.array([len(line) for line in self.waiting])
        self.clock = when


def _check_regime(spec: SystemSpec, infinite_supply: bool, allow_underload: bool):
    if infinite_supply:
        return
    if spec.arrival_rate is None:
        raise UsageError("a finite-arrival simulation needs lambda in the spec; use infinite supply otherwise")
    mu_star = solve_static_plan(spec).mu_star
    if spec.arrival_rate <= mu_star and not allow_underload:
        raise RegimeError(
            f"lambda={spec.arrival_rate:.6g} <= maximal throughput {mu_star:.6g}; matching rates depend on the load "
            f"in this regime (pass allow_underload to run anyway)"
        )


def run_replication(
    spec: SystemSpec,
    law,
    protocol: SimulationProtocol,
    seed: int,
    replication: int = 0,
    infinite_supply: bool = True,
    allow_underload: bool = False,
    record_decisions: int = 0,
) -> ReplicationRecord:
    """
    Simulate one replication: warmup, reset counters, then measure.

    Deterministic given (seed, replication); every random purpose and every
    edge draws from its own stream.
    """
    _check_regime(spec, infinite_supply, allow_underload)
    simulator = FcfsAlisSimulator(
        spec,
        law if isinstance(law, ServiceLaw) else get_law(law),
        seed,
        replication,
        infinite_supply=infinite_supply,
        record_decisions=record_decisions,
    )
    record = simulator.run(protocol)
    logger.debug(f"Replication {replication} finished at t={simulator.clock:.6g}")
    return record


@dataclass
class SimEstimate:
    spec: SystemSpec = field(repr=False)
    law: LawFamily
    r_hat: np.ndarray
    replication_vectors: np.ndarray
    span_histogram: Dict[int, int]
    permutation_frequencies: Dict[str, float]
    permutation_labels: List[str]
    permutation_vectors: np.ndarray
    meta: SimulationMeta
    idle_events: int = 0

    def to_document(self) -> SimEstimateDocument:
        spec = self.spec
        return SimEstimateDocument(
            servers=list(spec.servers),
            customers=list(spec.customers),
            edges=spec.edge_names(spec.edges),
            r_hat=self.r_hat.tolist(),
            span_histogram=sorted(self.span_histogram.items()),
            permutation_frequencies=self.permutation_frequencies,
            meta=self.meta,
        )

    def vectors_document(self, system: str = "") -> ReplicationVectorsDocument:
        return ReplicationVectorsDocument(
            system=system,
            law=self.law,
            edges=self.spec.edge_names(self.spec.edges),
            matching_vectors=self.replication_vectors.tolist(),
            permutation_labels=self.permutation_labels,
            permutation_vectors=self.permutation_vectors.tolist(),
        )

    def permutation_table(self) -> PermutationTableDocument:
        return PermutationTableDocument(
            rows=[PermutationRow(ordering=label, probability=self.permutation_frequencies.get(label, 0.0))
                  for label in self.permutation_labels]
        )


def _merge(spec: SystemSpec, law: LawFamily, records: List[ReplicationRecord], meta: SimulationMeta) -> SimEstimate:
    records = sorted(records, key=lambda record: record.replication)
    vectors = np.vstack([record.vector for record in records])
    mean = vectors.mean(axis=0)
    r_hat = np.zeros((spec.num_customers, spec.num_servers))
    for k, (j, i) in enumerate(spec.edges):
        r_hat[i, j] = mean[k]

    spans: Counter = Counter()
    orderings: Counter = Counter()
    for record in records:
        spans.update(record.span_histogram)
        orderings.update(record.ordering_counts)
    samples = sum(record.samples for record in records)

    labels = permutation_labels(spec.num_servers) if spec.num_servers <= MAX_PERMUTATION_SERVERS else []
    frequencies = {label: orderings.get(label, 0) / samples for label in labels}
    permutation_vectors = (
        np.vstack([record.permutation_vector(labels) for record in records]) if labels else np.empty((len(records), 0))
    )
    return SimEstimate(
        spec=spec,
        law=law,
        r_hat=r_hat,
        replication_vectors=vectors,
        span_histogram=dict(sorted(spans.items())),
        permutation_frequencies=frequencies,
        permutation_labels=labels,
        permutation_vectors=permutation_vectors,
        meta=meta,
        idle_events=sum(record.idle_events for record in records),
    )


def run_study(
    spec: SystemSpec,
    law,
    protocol: SimulationProtocol,
    replications: int,
    seed_base: int,
    infinite_supply: bool = True,
    allow_underload: bool = False,
    jobs: int = 1,
    progress: bool = True,
) -> SimEstimate:
    """
    Run independent replications and aggregate them by replication index.

    Args:
        law: a LawFamily (or its value) applied to every edge at the edge's rate
        jobs: worker processes; results do not depend on it

    Returns:
        SimEstimate with r̂ the mean of the replication vectors
    """
    if replications < 2:
        raise UsageError(f"a study needs at least 2 replications, got {replications}")
    family = get_law(law).family
    _check_regime(spec, infinite_supply, allow_underload)
    worker = partial(
        run_replication,
        spec,
        family,
        protocol,
        seed_base,
        infinite_supply=infinite_supply,
        allow_underload=True,
    )
    show = progress and sys.stderr.isatty()
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                records = list(tqdm(pool.map(worker, range(replications)), total=replications, disable=not show, desc=family.value))
        else:
            records = [
                worker(replication=rep)
                for rep in tqdm(range(replications), disable=not show, desc=family.value)
            ]
    except Exception as e:
        logger.error(f"Failed to run {family.value} study: {e}")
        raise

    meta = SimulationMeta(
        law=family,
        warmup_services=protocol.warmup_services,
        measured_services=protocol.measured_services,
        replications=replications,
        seed_base=seed_base,
        infinite_supply=infinite_supply,
    )
    estimate = _merge(spec, family, records, meta)
    logger.info(f"Study {family.value}: {replications} replications of {protocol.measured_services} services merged")
    return estimate


def permutation_distribution_theoretical(spec: SystemSpec) -> Dict[str, float]:
    """
    Stationary probability of each server ordering (most lagging first) for
    exponential server-dependent rates: the weight of an ordering is the
    product over its proper prefixes of 1/(β_prefix − α_𝒰(prefix)).
    """
    if spec.mode is not RateMode.SD:
        raise ModeError(f"the ordering distribution requires SD rates, spec is {spec.mode.value}")
    if spec.num_servers > MAX_PERMUTATION_SERVERS:
        raise UsageError(f"at most {MAX_PERMUTATION_SERVERS} servers are supported for orderings")
    total_rate = spec.total_server_rate
    weights: Dict[str, float] = {}
    for order in itertools.permutations(range(spec.num_servers)):
        weight, prefix = 1.0, 0
        for j in order[:-1]:
            prefix |= 1 << j
            factor = spec.server_rate_of(prefix) / total_rate - spec.alpha_of(spec.unique_customers_mask(prefix))
            if factor <= 0:
                raise ModeError(
                    f"ordering {ordering_label(order)} has a non-positive factor {factor:.6g}; "
                    f"complete resource pooling fails and the product form does not apply"
                )
            weight /= factor
        weights[ordering_label(order)] = weight
    norm = math.fsum(weights.values())
    return {label: weight / norm for label, weight in weights.items()}
