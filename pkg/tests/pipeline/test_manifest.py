"""Tests for manifest.py."""

import pytest

from src.errors import InputError, StageLockedError, StaleArtifactError
from src.pipeline.manifest import LOCK_NAME, Manifest, stage_lock
from src.utils.hashing import sha256_file


@pytest.fixture
def produced(tmp_path):
    """Fixture for a stage directory with two recorded files of stage "probe"."""
    (tmp_path / "acts").mkdir()
    paths = [tmp_path / "layers.csv", tmp_path / "acts" / "probe-0.actcache"]
    for path in paths:
        path.write_text(f"contents of {path.name}\n")
    manifest = Manifest(tmp_path)
    manifest.record("probe", paths, "hash-1")
    return manifest, paths


def test_entries(produced):
    """Tests that entries carry relative paths, digests and the config hash."""
    manifest, paths = produced
    entries = manifest.entries("probe")
    assert [entry.path for entry in entries] == ["layers.csv", "acts/probe-0.actcache"]
    assert entries[0].sha256 == sha256_file(paths[0])
    assert {entry.config_hash for entry in entries} == {"hash-1"}
    assert manifest.entries("eval") == []


def test_latest_entry_wins(produced):
    """Tests that re-recording a file supersedes its earlier entry."""
    manifest, paths = produced
    manifest.record("probe", paths[:1], "hash-2")
    assert len(manifest.entries()) == 3
    assert manifest.current("probe")["layers.csv"].config_hash == "hash-2"


def test_require_fresh(produced):
    """Tests that unchanged files recorded under the expected hash pass."""
    manifest, _ = produced
    manifest.require("probe", "hash-1")


def test_require_missing_stage(produced):
    """Tests that a stage that never ran is stale and named in the error."""
    manifest, _ = produced
    with pytest.raises(StaleArtifactError, match="train-sae") as info:
        manifest.require("train-sae", "hash-1")
    assert info.value.stage == "train-sae"


def test_require_other_config(produced):
    """Tests that artifacts from another configuration are stale."""
    manifest, _ = produced
    with pytest.raises(StaleArtifactError, match="different configuration"):
        manifest.require("probe", "hash-2")


def test_require_modified_file(produced):
    """Tests that a file changed after recording is stale."""
    manifest, paths = produced
    paths[1].write_text("tampered\n")
    with pytest.raises(StaleArtifactError, match="modified"):
        manifest.require("probe", "hash-1")


def test_require_deleted_file(produced):
    """Tests that a deleted file is stale."""
    manifest, paths = produced
    paths[0].unlink()
    with pytest.raises(StaleArtifactError, match="missing"):
        manifest.require("probe", "hash-1")
    assert manifest.has_outputs("probe")
    paths[1].unlink()
    assert not manifest.has_outputs("probe")


def test_corrupt_line(produced):
    """Tests that a line that is not an entry is reported with its number."""
    manifest, _ = produced
    with manifest.path.open("a") as f:
        f.write("{not json\n")
    with pytest.raises(InputError, match="line 3"):
        manifest.entries()


class TestStageLock:
    def test_excludes_second_holder(self, tmp_path):
        """Tests that the lock cannot be taken twice."""
        with stage_lock(tmp_path), pytest.raises(StageLockedError), stage_lock(tmp_path):
            pass

    def test_released(self, tmp_path):
        """Tests that the lock file is removed after the block, even on error."""
        with pytest.raises(RuntimeError), stage_lock(tmp_path):
            raise RuntimeError("stage failed")
        assert not (tmp_path / LOCK_NAME).exists()
        with stage_lock(tmp_path):
            assert (tmp_path / LOCK_NAME).exists()
