"""
Output files of a run: JSON documents, CSV tables and the run manifest
"""
import csv
import logging
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from pydantic import BaseModel, ValidationError

from ..core.config import settings
from ..core.exceptions import UsageError
from ..models.schemas import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class ArtifactWriter:
    """Writes into one output directory and remembers every file for the manifest"""

    def __init__(self, out_dir: Optional[Path] = None):
        self.out_dir = Path(out_dir) if out_dir is not None else settings.output_dir
        self.outputs: List[str] = []
        self.started_at = datetime.now(timezone.utc)
        self._clock = time.perf_counter()

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        if name not in self.outputs:
            self.outputs.append(name)
        return path

    def write_json(self, name: str, document: BaseModel) -> Path:
        return self.write_text(name, document.model_dump_json(indent=2, by_alias=True))

    def write_text(self, name: str, text: str) -> Path:
        path = self._path(name)
        try:
            path.write_text(text, encoding="utf-8")
        except Exception as e:
            logger.error(f"Failed to write {path}: {e}")
            raise
        logger.debug(f"Wrote {path}")
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self._path(name)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\r\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
        logger.debug(f"Wrote {path}")
        return path

    def write_manifest(
        self,
        command: str,
        spec_path: Optional[str],
        parameters: Dict[str, Any],
        seeds: Sequence[int] = (),
    ) -> RunManifest:
        manifest = RunManifest(
            command=command,
            spec_path=spec_path,
            parameters=parameters,
            seeds=list(seeds),
            tool_version=settings.tool_version,
            outputs=list(self.outputs) + [MANIFEST_NAME],
            started_at=self.started_at,
            wall_clock_seconds=time.perf_counter() - self._clock,
        )
        self._path(MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"{command}: wrote {len(manifest.outputs)} file(s) to {self.out_dir}")
        return manifest


def read_document(path: Path, model: type) -> BaseModel:
    """Read and validate a JSON document written by a previous run"""
    try:
        return model.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e}") from e
    except ValidationError as e:
        raise UsageError(f"{path} is not a valid {model.__name__}: {e}") from e


def read_manifest(path: Path) -> RunManifest:
    return read_document(path, RunManifest)


def matrix_rows(row_names: Sequence[str], matrix) -> List[List[Any]]:
    return [[name] + [f"{value:.10g}" for value in row] for name, row in zip(row_names, matrix)]
