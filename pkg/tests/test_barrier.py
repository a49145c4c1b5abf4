"""Barrier semantics, collective abort, and gang restart."""

import threading
import time

import pytest

from cannonmul.barrier import (
    BarrierClient,
    BarrierCoordinator,
    WorkerContext,
    WorkerRuntime,
    barrier,
    run_gang,
)
from cannonmul.errors import GangFailure, ProtocolError
from cannonmul.transport import HostMap
from cannonmul.wire import REASON_FAILURE, REASON_PROTOCOL, REASON_TIMEOUT

HOSTS1 = HostMap(["127.0.0.1:1"])


def run_all(*fns, timeout=60.0):
    errors = [None] * len(fns)

    def wrap(idx, fn):
        try:
            fn()
        except BaseException as e:  # noqa: BLE001
            errors[idx] = e

    threads = [
        threading.Thread(target=wrap, args=(i, fn), daemon=True)
        for i, fn in enumerate(fns)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
    assert not any(t.is_alive() for t in threads), "barrier thread hung"
    for e in errors:
        if e is not None:
            raise e


def test_single_worker_released_immediately():
    runtime = WorkerRuntime(WorkerContext(0, 1, HOSTS1), None)
    out = barrier(runtime, 0)
    assert out.released
    assert out.release_ts is not None


def test_all_arrive_all_released():
    p = 4
    coord = BarrierCoordinator(p, timeout=10)
    outs = [None] * p
    try:
        coord.begin_attempt(0)

        def worker(r):
            client = BarrierClient(r, 0, coord.address, timeout=10)
            try:
                outs[r] = client.barrier(0)
            finally:
                client.close()

        run_all(*[lambda r=r: worker(r) for r in range(p)])
    finally:
        coord.close()
    assert all(o.released for o in outs)
    assert max(o.arrive_ts for o in outs) <= min(o.release_ts for o in outs)


def test_no_release_before_last_arrival():
    """Three workers arrive early; none may be released until the fourth shows."""
    p = 4
    coord = BarrierCoordinator(p, timeout=10)
    late_arrival_ts = [None]
    outs = [None] * p
    try:
        coord.begin_attempt(0)

        def early(r):
            client = BarrierClient(r, 0, coord.address, timeout=10)
            try:
                outs[r] = client.barrier(0)
            finally:
                client.close()

        def late():
            time.sleep(0.4)
            late_arrival_ts[0] = time.monotonic()
            early(p - 1)

        run_all(*[lambda r=r: early(r) for r in range(p - 1)], late)
    finally:
        coord.close()
    assert all(o.released for o in outs)
    for out in outs:
        assert out.release_ts >= late_arrival_ts[0]


def test_atomic_release_many_rounds():
    """max(arrival) <= min(release) holds round after round at p=9."""
    p, rounds = 9, 20
    coord = BarrierCoordinator(p, timeout=15)
    log = [[None] * p for _ in range(rounds)]
    try:
        coord.begin_attempt(0)

        def worker(r):
            client = BarrierClient(r, 0, coord.address, timeout=15)
            try:
                for seq in range(rounds):
                    log[seq][r] = client.barrier(seq)
            finally:
                client.close()

        run_all(*[lambda r=r: worker(r) for r in range(p)], timeout=90)
    finally:
        coord.close()
    for seq in range(rounds):
        outs = log[seq]
        assert all(o.released for o in outs)
        assert max(o.arrive_ts for o in outs) <= min(o.release_ts for o in outs)


def test_failure_report_aborts_everyone():
    p = 4
    coord = BarrierCoordinator(p, timeout=10)
    outs = {}
    try:
        coord.begin_attempt(0)

        def worker(r):
            client = BarrierClient(r, 0, coord.address, timeout=10)
            try:
                outs[r] = client.barrier(0)
            finally:
                client.close()

        def failer():
            client = BarrierClient(3, 0, coord.address, timeout=10)
            time.sleep(0.2)
            client.report_failure(REASON_FAILURE)
            client.close()

        run_all(*[lambda r=r: worker(r) for r in range(p - 1)], failer)
    finally:
        coord.close()
    for r in range(p - 1):
        assert outs[r].kind == "aborted"
        assert outs[r].failing_rank == 3
        assert outs[r].reason == REASON_FAILURE


def test_missing_worker_times_out_everyone():
    coord = BarrierCoordinator(2, timeout=0.5)
    try:
        coord.begin_attempt(0)
        client = BarrierClient(0, 0, coord.address, timeout=5)
        out = client.barrier(0)
        client.close()
    finally:
        coord.close()
    assert out.kind == "timed_out"
    assert out.reason == REASON_TIMEOUT


def test_client_double_arrival_rejected_locally():
    coord = BarrierCoordinator(1, timeout=5)
    try:
        coord.begin_attempt(0)
        client = BarrierClient(0, 0, coord.address, timeout=5)
        assert client.barrier(0).released
        with pytest.raises(ProtocolError):
            client.barrier(0)
        client.close()
    finally:
        coord.close()


def test_duplicate_rank_arrival_is_protocol_abort():
    """Two connections claiming the same rank at one epoch poison the gang."""
    coord = BarrierCoordinator(3, timeout=10)
    try:
        coord.begin_attempt(0)
        impostor = BarrierClient(1, 0, coord.address, timeout=10)
        victim = BarrierClient(0, 0, coord.address, timeout=10)
        outs = {}

        def v():
            outs["victim"] = victim.barrier(0)

        def i1():
            outs["impostor"] = impostor.barrier(0)

        def i2():
            time.sleep(0.2)
            dup = BarrierClient(1, 0, coord.address, timeout=10)
            outs["dup"] = dup.barrier(0)
            dup.close()

        run_all(v, i1, i2)
        assert outs["victim"].kind == "aborted"
        assert outs["victim"].reason == REASON_PROTOCOL
    finally:
        impostor.close()
        victim.close()
        coord.close()


def test_stale_attempt_arrivals_ignored():
    """A straggler from attempt 0 can neither release nor poison attempt 1."""
    coord = BarrierCoordinator(2, timeout=10)
    try:
        coord.begin_attempt(0)
        stale = BarrierClient(0, 0, coord.address, timeout=10)
        stale_out = {}

        def stale_worker():
            stale_out["out"] = stale.barrier(0, timeout=3)

        def fresh_pair():
            time.sleep(0.3)
            coord.begin_attempt(1)

            def w(r):
                client = BarrierClient(r, 1, coord.address, timeout=10)
                try:
                    assert client.barrier(0).released
                finally:
                    client.close()

            run_all(lambda: w(0), lambda: w(1))

        run_all(stale_worker, fresh_pair)
        # the stale client was disconnected by the attempt switch, not released
        assert stale_out["out"].kind in ("aborted", "timed_out")
    finally:
        stale.close()
        coord.close()


# -- run_gang -----------------------------------------------------------------


def _ok_stage(runtime, payload):
    runtime.barrier(0)
    return {"rank": runtime.rank, "attempt": runtime.ctx.attempt, "x": payload * 2}


def _flaky_stage(runtime, payload):
    if runtime.rank == 2 and runtime.ctx.attempt == 0:
        raise RuntimeError("planned failure")
    runtime.barrier(0)
    return runtime.ctx.attempt


def _doomed_stage(runtime, payload):
    if runtime.rank == 1:
        raise RuntimeError("always broken")
    runtime.barrier(0)
    return None


def _gang(stage, p, payloads, coord, **kw):
    hosts = HostMap([f"127.0.0.1:{40000 + r}" for r in range(p)])
    return run_gang(
        stage, p, payloads, host_map=hosts, coordinator=coord,
        mode="threads", barrier_timeout=10, **kw,
    )


def test_run_gang_success_first_attempt():
    coord = BarrierCoordinator(4, timeout=10)
    try:
        gang = _gang(_ok_stage, 4, [10, 20, 30, 40], coord)
    finally:
        coord.close()
    assert gang.attempt == 0
    assert gang.results()[2]["x"] == 60
    assert all(o.status == "ok" for o in gang.outcomes.values())


def test_run_gang_restarts_after_single_failure():
    coord = BarrierCoordinator(4, timeout=10)
    try:
        gang = _gang(_flaky_stage, 4, [0] * 4, coord)
    finally:
        coord.close()
    assert gang.attempt == 1
    # all-or-nothing: every worker reran and reports the same attempt
    assert set(gang.results().values()) == {1}
    assert {o.attempt for o in gang.outcomes.values()} == {1}


def test_run_gang_exhausts_restarts():
    coord = BarrierCoordinator(4, timeout=5)
    try:
        with pytest.raises(GangFailure) as exc:
            _gang(_doomed_stage, 4, [0] * 4, coord, max_restarts=2)
    finally:
        coord.close()
    assert exc.value.attempts == 3
    assert "always broken" in str(exc.value)


def test_run_gang_single_worker_needs_no_coordinator():
    gang = run_gang(_ok_stage, 1, [5], host_map=HOSTS1, coordinator=None, mode="threads")
    assert gang.results()[0]["x"] == 10
