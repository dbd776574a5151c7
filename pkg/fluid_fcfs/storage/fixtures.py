"""
Golden reference data shipped with the package
"""
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..core.config import settings
from ..core.exceptions import UsageError
from ..models.schemas import MatchingRateFixture, PermutationFixture, PValueFixture
from ..models.system import SystemSpec
from ..services.spec_loader import load_spec
from .artifacts import read_document

logger = logging.getLogger(__name__)


class FixtureStore:
    """Reads fixture files from settings.fixtures_path (FLUID_FCFS_FIXTURES) or an explicit root"""

    def __init__(self, root: Optional[Path] = None):
        self._root = Path(root) if root is not None else None

    @property
    def root(self) -> Path:
        return self._root if self._root is not None else settings.fixtures_path

    def _file(self, name: str) -> Path:
        path = self.root / name
        if not path.is_file():
            raise UsageError(f"fixture {name} not found under {self.root}")
        return path

    def systems(self) -> List[str]:
        return sorted(path.stem for path in self.root.glob("system*.json"))

    def spec(self, system: str) -> SystemSpec:
        return load_spec(self._file(f"{system}.json"))

    def matching_rates(self, system: str) -> MatchingRateFixture:
        return read_document(self._file(f"matching_rates_{system}.json"), MatchingRateFixture)

    def theoretical_matrix(self, system: str) -> np.ndarray:
        return np.asarray(self.matching_rates(system).theoretical, dtype=float)

    def pvalues(self) -> PValueFixture:
        return read_document(self._file("pvalues.json"), PValueFixture)

    def permutations(self, system: str) -> PermutationFixture:
        return read_document(self._file(f"permutations_{system}.json"), PermutationFixture)

    def resolve(self, reference: str) -> Path:
        """A fixture name such as "system1" or a path to a file"""
        candidate = Path(reference)
        if candidate.is_file():
            return candidate
        return self._file(reference if reference.endswith(".json") else f"{reference}.json")


fixture_store = FixtureStore()
