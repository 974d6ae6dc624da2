import errno
import os
from collections import namedtuple

import pytest

from sataperf import presets, stress
from sataperf.profiles import profile_by_name
from sataperf.raid import MirrorConfig, MirrorKind, Volume, simulate_volume
from sataperf.stats import MiB
from sataperf.stress import (DirectIOUnsupported, InsufficientSpace, RealFile, SimVolume,
                             StressIOError, TargetError, prepare_target, run_stress)

SIZE = 64 * MiB


@pytest.fixture
def target(tmp_path):
    t = RealFile(tmp_path / "target.bin", SIZE)
    prepare_target(t)
    return t


def quick(name, seconds=1.5):
    return profile_by_name(name, duration=seconds, region_size=SIZE)


def test_sim_target_delegates_to_simulator():
    disk = presets.load_disk("wd-250gb")
    ctrl = presets.load_controller("3ware-8506")
    vol = Volume(disk, MirrorConfig(MirrorKind.SOFTWARE), ctrl)
    p = profile_by_name("rand-read-8k-d4", duration=10)
    assert run_stress(SimVolume(vol), p, 5) == simulate_volume(p, disk, vol.mirror, ctrl, 5)
    assert prepare_target(SimVolume(vol)).ready


def test_prepare_allocates_file(tmp_path):
    t = RealFile(tmp_path / "f.bin", 8 * MiB)
    ready = prepare_target(t)
    assert ready.ready and ready.size == 8 * MiB
    assert ready.allocated >= 8 * MiB
    assert ready.direct_io_supported in (True, False)
    assert prepare_target(t).size == 8 * MiB


def test_insufficient_space(tmp_path, monkeypatch):
    Usage = namedtuple("Usage", "total used free")
    monkeypatch.setattr(stress.shutil, "disk_usage", lambda p: Usage(10, 10, 1024))
    with pytest.raises(InsufficientSpace, match="insufficient space"):
        prepare_target(RealFile(tmp_path / "big.bin", 10 * MiB))


def test_direct_io_rejection_is_reported(tmp_path, monkeypatch):
    path = tmp_path / "f.bin"
    path.write_bytes(b"\0" * 4096)
    real_open = os.open

    def fake_open(p, flags, *args):
        if flags & getattr(os, "O_DIRECT", 0):
            raise OSError(errno.EINVAL, "Invalid argument")
        return real_open(p, flags, *args)

    if not getattr(os, "O_DIRECT", 0):
        pytest.skip("platform without O_DIRECT")
    monkeypatch.setattr(stress.os, "open", fake_open)
    assert stress.probe_direct_io(path) is False
    with pytest.raises(DirectIOUnsupported):
        stress.open_target(path, writable=False, direct=True)


@pytest.mark.parametrize("name", ["rand-read-8k-d4", "rand-write-8k-d1", "seq-read-64k-d4"])
def test_depth_held_and_identities(target, name):
    p = quick(name)
    seen = []
    stats = run_stress(target, p, seed=1, warmup=0.3,
                       hook=lambda n, now, phase: seen.append((n, phase)))
    steady = {n for n, phase in seen if phase == "steady"}
    assert steady == {p.queue_depth}
    assert all(n <= p.queue_depth for n, _ in seen)
    assert stats.ops_completed > 0
    assert stats.bytes_transferred == stats.ops_completed * p.block_size
    assert stats.mbps * MiB == pytest.approx(stats.iops * p.block_size, rel=1e-12)
    assert stats.littles_law_inflight == pytest.approx(p.queue_depth, rel=0.05)


def test_region_must_fit_file(target):
    p = profile_by_name("rand-read-8k-d1", duration=1, region_size=2 * SIZE)
    with pytest.raises(TargetError):
        run_stress(target, p, warmup=0.1)


def test_missing_file(tmp_path):
    with pytest.raises(TargetError, match="prepare"):
        run_stress(RealFile(tmp_path / "absent", SIZE), quick("rand-read-8k-d1"), warmup=0.1)


def test_io_error_carries_context(target, monkeypatch):
    def broken(fd, bufs, offset):
        raise OSError(errno.EIO, "Input/output error")

    monkeypatch.setattr(stress.os, "preadv", broken)
    with pytest.raises(StressIOError) as info:
        run_stress(target, quick("seq-read-64k-d4", 1.0), warmup=0.1)
    assert info.value.offset % 65536 == 0
    assert "offset" in str(info.value)


def test_warmup_must_be_shorter_than_run(target):
    with pytest.raises(ValueError):
        run_stress(target, quick("rand-read-8k-d1", 1.0), warmup=1.0)
