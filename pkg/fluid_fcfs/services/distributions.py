"""
Service-time laws and reproducible random streams
"""
import logging
from abc import ABC, abstractmethod
from enum import IntEnum
from typing import Dict, Optional

import numpy as np

from ..core.config import settings
from ..core.exceptions import UsageError
from ..models.schemas import LawFamily

logger = logging.getLogger(__name__)


class ServiceLaw(ABC):
    """
    A service-time family parameterized by its rate; every family has mean 1/rate.
    """

    family: LawFamily

    @abstractmethod
    def pullback(self, u: np.ndarray, rate: float) -> np.ndarray:
        """
        Converts uniform values on [0, 1) to service times at the given rate
        """
        pass

    @abstractmethod
    def cdf(self, x: float, rate: float) -> float:
        pass

    def mean(self, rate: float) -> float:
        return 1.0 / rate


class ExponentialLaw(ServiceLaw):
    family = LawFamily.EXPONENTIAL

    def pullback(self, u: np.ndarray, rate: float) -> np.ndarray:
        return -np.log1p(-u) / rate

    def cdf(self, x: float, rate: float) -> float:
        return 0.0 if x <= 0 else float(-np.expm1(-rate * x))


class ParetoLaw(ServiceLaw):
    """
    Density 3γ(γx + 1)^-4 on x ≥ 0 with γ = rate/2, so the mean is 1/(2γ) = 1/rate.
    """
    family = LawFamily.PARETO
    shape = 3.0

    def pullback(self, u: np.ndarray, rate: float) -> np.ndarray:
        gamma = rate / 2.0
        return ((1.0 - u) ** (-1.0 / self.shape) - 1.0) / gamma

    def cdf(self, x: float, rate: float) -> float:
        if x <= 0:
            return 0.0
        return 1.0 - (rate / 2.0 * x + 1.0) ** -self.shape


class UniformLaw(ServiceLaw):
    """Uniform on [low/rate, high/rate]"""

    def __init__(self, family: LawFamily, low: float, high: float):
        self.family = family
        self.low = low
        self.high = high

    def pullback(self, u: np.ndarray, rate: float) -> np.ndarray:
        return (self.low + (self.high - self.low) * u) / rate

    def cdf(self, x: float, rate: float) -> float:
        a, b = self.low / rate, self.high / rate
        return float(min(max((x - a) / (b - a), 0.0), 1.0))


LAWS: Dict[LawFamily, ServiceLaw] = {
    LawFamily.EXPONENTIAL: ExponentialLaw(),
    LawFamily.PARETO: ParetoLaw(),
    LawFamily.UNIFORM_WIDE: UniformLaw(LawFamily.UNIFORM_WIDE, 0.0, 2.0),
    LawFamily.UNIFORM_NARROW: UniformLaw(LawFamily.UNIFORM_NARROW, 0.9, 1.1),
}


def get_law(family) -> ServiceLaw:
    try:
        return LAWS[LawFamily(family)]
    except ValueError as e:
        raise UsageError(f"unknown service law '{family}', expected one of {[f.value for f in LawFamily]}") from e


class StreamPurpose(IntEnum):
    INTERARRIVAL = 0
    CUSTOMER_TYPE = 1
    INITIALIZATION = 2
    SERVICE = 3


class UniformStream:
    """
    Uniform variates from one PCG64 stream, drawn in blocks.

    The stream is identified by (seed base, replication, purpose, index), so
    adding streams never perturbs existing ones.
    """

    def __init__(self, seed_base: int, replication: int, purpose: StreamPurpose, index: int = 0, block_size: Optional[int] = None):
        sequence = np.random.SeedSequence(entropy=seed_base, spawn_key=(replication, int(purpose), index))
        self._generator = np.random.Generator(np.random.PCG64(sequence))
        self._block_size = block_size or settings.rng_block_size
        self._block = np.empty(0)
        self._cursor = 0

    def block(self) -> np.ndarray:
        return self._generator.random(self._block_size)

    def _refill(self):
        self._block = self.block()
        self._cursor = 0

    def next(self) -> float:
        if self._cursor >= len(self._block):
            self._refill()
        value = self._block[self._cursor]
        self._cursor += 1
        return float(value)


class VariateStream:
    """Service or interarrival times at a fixed rate, transformed a block at a time"""

    def __init__(self, law: ServiceLaw, rate: float, uniforms: UniformStream):
        self.law = law
        self.rate = rate
        self._uniforms = uniforms
        self._block = np.empty(0)
        self._cursor = 0

    def next(self) -> float:
        if self._cursor >= len(self._block):
            self._block = self.law.pullback(self._uniforms.block(), self.rate)
            self._cursor = 0
        value = self._block[self._cursor]
        self._cursor += 1
        return float(value)
