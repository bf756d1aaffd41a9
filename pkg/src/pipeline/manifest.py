"""Append-only JSON-lines record of every artifact a stage produced."""

import contextlib
import datetime
import os
from collections.abc import Iterator, Sequence
from pathlib import Path

from pydantic import BaseModel, ConfigDict

from src.errors import InputError, StageLockedError, StaleArtifactError
from src.utils.hashing import sha256_file

MANIFEST_NAME = "manifest.jsonl"
LOCK_NAME = ".stage.lock"


class ManifestEntry(BaseModel):
    """One produced file.

    Attributes:
        path (str): Location relative to the stage directory, with forward slashes.
        sha256 (str): Digest of the file contents.
        config_hash (str): `stage_hash` of the configuration that produced it.
        stage (str): Producing stage.
        timestamp (str): UTC time of recording, ISO 8601.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    path: str
    sha256: str
    config_hash: str
    stage: str
    timestamp: str


class Manifest:
    """The manifest file of one stage directory."""

    def __init__(self, directory: Path) -> None:
        """Binds the manifest to `directory`; nothing is read until needed."""
        self.directory = directory
        self.path = directory / MANIFEST_NAME

    def entries(self, stage: str | None = None) -> list[ManifestEntry]:
        """All entries in recording order, optionally for one stage only.

        Raises:
            InputError: If a line is not a valid entry.
        """
        if not self.path.exists():
            return []
        entries = []
        for number, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                entries.append(ManifestEntry.model_validate_json(line))
            except ValueError as e:
                raise InputError(f"{self.path} line {number} is not a manifest entry") from e
        return [entry for entry in entries if stage is None or entry.stage == stage]

    def current(self, stage: str) -> dict[str, ManifestEntry]:
        """The most recent entry of each file `stage` produced."""
        return {entry.path: entry for entry in self.entries(stage)}

    def has_outputs(self, stage: str) -> bool:
        """Whether any recorded output of `stage` is still on disk."""
        return any((self.directory / path).exists() for path in self.current(stage))

    def record(self, stage: str, paths: Sequence[Path], config_hash: str) -> list[ManifestEntry]:
        """Appends one entry per file.

        Args:
            stage (str): Producing stage.
            paths (Sequence[Path]): Files inside the stage directory.
            config_hash (str): Fingerprint of the producing configuration.
        """
        timestamp = datetime.datetime.now(tz=datetime.timezone.utc).isoformat(timespec="seconds")
        new = [
            ManifestEntry(
                path=path.relative_to(self.directory).as_posix(),
                sha256=sha256_file(path),
                config_hash=config_hash,
                stage=stage,
                timestamp=timestamp,
            )
            for path in paths
        ]
        self.directory.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as f:
            for entry in new:
                f.write(entry.model_dump_json() + "\n")
        return new

    def require(self, stage: str, config_hash: str) -> None:
        """Checks that `stage` ran with `config_hash` and its files are unchanged.

        Raises:
            StaleArtifactError: If the stage never ran, ran with another
                configuration, or one of its files is missing or modified.
        """
        current = self.current(stage)
        if not current:
            raise StaleArtifactError(stage, f"no artifacts of `{stage}` in {self.directory}")
        for path, entry in sorted(current.items()):
            if entry.config_hash != config_hash:
                raise StaleArtifactError(stage, f"{path} was produced by a different configuration")
            file = self.directory / path
            if not file.exists():
                raise StaleArtifactError(stage, f"{path} is missing")
            if sha256_file(file) != entry.sha256:
                raise StaleArtifactError(stage, f"{path} was modified after `{stage}` wrote it")


@contextlib.contextmanager
def stage_lock(directory: Path) -> Iterator[Path]:
    """Holds the stage directory lock for the duration of the block.

    Raises:
        StageLockedError: If another process holds the lock.
    """
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageLockedError(f"{directory} is locked by another stage; remove {lock} if no stage is running") from None
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield lock
    finally:
        lock.unlink(missing_ok=True)
