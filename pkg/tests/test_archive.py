"""
Archive file tests
"""

from datetime import datetime, timezone

import pytest

from app.core.exceptions import ArchiveError, ArchiveLockedError, NotFoundError
from app.schemas.observation import Observation, RunManifest
from app.services.archive_service import ArchiveService, deserialize, serialize, validate_sequence


def _observation(iteration: int, **overrides) -> Observation:
    values = dict(
        iteration=iteration,
        phase="warm-start",
        weights=[0.1 * iteration, 1.0 / 3.0],
        objectives_raw=[2.0 / 3.0, -1e-17 * (iteration + 1)],
        orientation=["maximize", "minimize"],
        eval_wall_seconds=0.25,
        fit_wall_seconds=0.0,
        propose_wall_seconds=0.0,
        seed=1234 + iteration,
    )
    values.update(overrides)
    return Observation(**values)


@pytest.fixture
def store(tmp_path) -> ArchiveService:
    service = ArchiveService(tmp_path / "run.archive.jsonl")
    for i in range(3):
        service.append(_observation(i))
    return service


def test_floats_survive_serialization():
    observation = _observation(2, objectives_raw=[0.1 + 0.2, 1e-300], reference=[-1.0 / 7.0, 5e-324])
    assert deserialize(serialize(observation)) == observation


def test_canonical_orientation():
    assert _observation(0, objectives_raw=[3.0, 2.0]).canonical() == [3.0, -2.0]


def test_non_finite_objectives_rejected():
    with pytest.raises(ValueError):
        _observation(0, objectives_raw=[float("nan"), 1.0])


def test_read_returns_observations_in_order(store):
    result = store.read()
    assert [o.iteration for o in result.observations] == [0, 1, 2]
    assert result.errors == [] and result.truncated_tail is False


def test_missing_archive(tmp_path):
    with pytest.raises(NotFoundError):
        ArchiveService(tmp_path / "absent.jsonl").read()


def test_truncated_tail_dropped_on_resume(store):
    with open(store.path, "a", encoding="utf-8") as handle:
        handle.write(serialize(_observation(3))[:40])
    assert store.read().truncated_tail is True

    observations = store.load_for_resume()
    assert [o.iteration for o in observations] == [0, 1, 2]
    assert store.path.read_text().endswith("\n")
    assert store.read().errors == []


def test_corrupt_middle_line_reports_line_number(store):
    lines = store.path.read_text().splitlines(keepends=True)
    lines[1] = "{not json}\n"
    store.path.write_text("".join(lines))

    result = store.read()
    assert [line for line, _ in result.errors] == [2]
    assert len(result.observations) == 2
    with pytest.raises(ArchiveError, match="line 2"):
        store.load_for_resume()


def test_iteration_gap_rejected(store):
    store.append(_observation(5))
    with pytest.raises(ArchiveError, match="line 4"):
        store.load_for_resume()


def test_validate_sequence_with_offset():
    validate_sequence([_observation(4), _observation(5)], start=4)
    with pytest.raises(ArchiveError):
        validate_sequence([_observation(4), _observation(5)])


def test_lock_is_exclusive(store):
    with store.lock():
        assert store.lock_path.exists()
        with pytest.raises(ArchiveLockedError) as exc_info:
            with ArchiveService(store.path).lock():
                pass
        assert exc_info.value.exit_code == 3
    assert not store.lock_path.exists()


def test_lock_released_on_error(store):
    with pytest.raises(RuntimeError):
        with store.lock():
            raise RuntimeError("interrupted")
    assert not store.lock_path.exists()


def _dead_process(pid, signal):
    raise ProcessLookupError(pid)


def test_lock_left_by_dead_process_is_taken_over(store, monkeypatch):
    store.lock_path.write_text("424242")
    monkeypatch.setattr("app.services.archive_service.os.kill", _dead_process)
    assert store.stale_lock_owner() == 424242
    with store.lock():
        assert store.lock_path.read_text() != "424242"
    assert not store.lock_path.exists()


@pytest.mark.parametrize("content", ["", "not-a-pid", "0"])
def test_unreadable_lock_is_not_taken_over(store, monkeypatch, content):
    store.lock_path.write_text(content)
    monkeypatch.setattr("app.services.archive_service.os.kill", _dead_process)
    assert store.stale_lock_owner() is None
    with pytest.raises(ArchiveLockedError):
        with store.lock():
            pass
    assert store.lock_path.read_text() == content


def test_lock_held_by_live_process_is_kept(store):
    with store.lock():
        assert store.stale_lock_owner() is None
        with pytest.raises(ArchiveLockedError):
            with ArchiveService(store.path).lock():
                pass


def test_manifest_round_trip(store):
    manifest = RunManifest(
        config_path="/tmp/mobo.toml",
        archive_path=str(store.path),
        created_at=datetime(2024, 5, 1, tzinfo=timezone.utc),
        engine_version="1.0.0",
    )
    store.write_manifest(manifest)
    assert store.read_manifest() == manifest


def test_missing_manifest(store):
    with pytest.raises(NotFoundError):
        store.read_manifest()
