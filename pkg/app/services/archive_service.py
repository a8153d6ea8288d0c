"""
Append-only observation archive: one JSON record per line, flushed per observation
"""

import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import structlog
from pydantic import ValidationError as PydanticValidationError

from app.core.exceptions import ArchiveError, ArchiveLockedError, NotFoundError
from app.schemas.observation import Observation, RunManifest

logger = structlog.get_logger(__name__)


@dataclass
class ArchiveReadResult:
    observations: List[Observation] = field(default_factory=list)
    errors: List[Tuple[int, str]] = field(default_factory=list)
    truncated_tail: bool = False


def serialize(observation: Observation) -> str:
    """One archive line; Python float repr keeps values bit-exact"""
    return json.dumps(observation.model_dump(mode="json"), separators=(",", ":"))


def deserialize(line: str) -> Observation:
    return Observation.model_validate(json.loads(line))


class ArchiveService:
    """Reads, appends to and locks one archive file"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.lock_path = Path(f"{self.path}.lock")
        self.manifest_path = Path(f"{self.path}.manifest.json")

    def exists(self) -> bool:
        return self.path.is_file()

    def read(self) -> ArchiveReadResult:
        """Parse every line, collecting per-line errors instead of stopping"""
        if not self.path.is_file():
            raise NotFoundError("Archive", str(self.path))
        result = ArchiveReadResult()
        raw = self.path.read_text(encoding="utf-8")
        lines = raw.split("\n")
        ends_cleanly = raw.endswith("\n") or raw == ""
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                result.observations.append(deserialize(line))
            except (json.JSONDecodeError, PydanticValidationError) as e:
                is_tail = number == len(lines) and not ends_cleanly
                if is_tail:
                    result.truncated_tail = True
                message = str(e).splitlines()[0]
                result.errors.append((number, message))
                logger.warning("Corrupt archive record", path=str(self.path), line=number, error=message)
        return result

    def load_for_resume(self) -> List[Observation]:
        """Strict read: drops a crash-truncated last line, rejects anything else"""
        result = self.read()
        errors = result.errors
        if result.truncated_tail:
            line_number, _ = errors[-1]
            errors = errors[:-1]
            if not errors:
                self._drop_tail()
                logger.warning("Dropped truncated archive tail", path=str(self.path), line=line_number)
        if errors:
            line_number, message = errors[0]
            raise ArchiveError(message, line_number=line_number)
        validate_sequence(result.observations)
        return result.observations

    def _drop_tail(self) -> None:
        raw = self.path.read_bytes()
        cut = raw.rfind(b"\n") + 1
        with open(self.path, "r+b") as handle:
            handle.truncate(cut)

    def append(self, observation: Observation) -> None:
        """Append one record and force it to disk before returning"""
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(serialize(observation) + "\n")
            handle.flush()
            os.fsync(handle.fileno())
        logger.debug("Observation archived", path=str(self.path), iteration=observation.iteration)

    def write_manifest(self, manifest: RunManifest) -> None:
        self.manifest_path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")

    def read_manifest(self) -> RunManifest:
        if not self.manifest_path.is_file():
            raise NotFoundError("Run manifest", str(self.manifest_path))
        try:
            return RunManifest.model_validate_json(self.manifest_path.read_text(encoding="utf-8"))
        except PydanticValidationError as e:
            raise ArchiveError(f"invalid manifest {self.manifest_path}: {e.errors()[0]['msg']}")

    def _create_lock(self) -> int:
        return os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)

    def stale_lock_owner(self) -> Optional[int]:
        """PID recorded in the lock file if that process no longer exists"""
        try:
            pid = int(self.lock_path.read_text(encoding="ascii").strip())
        except (OSError, ValueError):
            return None
        if pid <= 0:
            return None
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return pid
        except PermissionError:
            pass  # alive, owned by another user
        return None

    @contextmanager
    def lock(self) -> Iterator[None]:
        """Exclusive ownership of the archive for the duration of a run

        A lock left by a process that has exited is taken over.
        """
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = self._create_lock()
        except FileExistsError:
            owner = self.stale_lock_owner()
            if owner is None:
                raise ArchiveLockedError(str(self.lock_path))
            logger.warning("Taking over stale archive lock", lock=str(self.lock_path), dead_pid=owner)
            self.lock_path.unlink(missing_ok=True)
            try:
                fd = self._create_lock()
            except FileExistsError:
                raise ArchiveLockedError(str(self.lock_path))
        try:
            os.write(fd, str(os.getpid()).encode("ascii"))
            os.close(fd)
            logger.debug("Archive lock acquired", lock=str(self.lock_path))
            yield
        finally:
            try:
                os.remove(self.lock_path)
            except FileNotFoundError:
                pass


def validate_sequence(observations: List[Observation], start: int = 0) -> None:
    """Iterations must run start, start+1, ... without gaps"""
    for offset, observation in enumerate(observations):
        expected = start + offset
        if observation.iteration != expected:
            raise ArchiveError(
                f"iteration {observation.iteration} found where {expected} was expected",
                line_number=offset + 1,
            )

