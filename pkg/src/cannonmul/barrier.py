"""Gang scheduling: simultaneous stage start, barriers, collective abort/restart.

A lightweight coordinator (owned by the driver) serves ARRIVE/RELEASE/ABORT
control frames over the same wire format the data plane uses.  Workers block
in ``barrier`` until every partition has arrived; any failure report, protocol
violation, or timeout turns into an ABORT broadcast so every worker observes
the same outcome for the epoch.  ``run_gang`` cancels and relaunches all
workers from scratch after an abort, up to ``max_restarts`` times.

Every control frame carries (attempt << 8 | seq) in its epoch field; frames
from a previous attempt are ignored, so a straggler from attempt k can never
release or abort attempt k+1.
"""

from __future__ import annotations

import logging
import queue
import selectors
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import CannonError, GangAborted, GangFailure, ProtocolError, TransportError
from .memtrack import MemoryMeter, TransferCounters, rss_peak_kb
from .transport import HostMap, _configure
from .wire import (
    CTRL_ABORT,
    CTRL_ARRIVE,
    CTRL_RELEASE,
    HEADER_LEN,
    PLANE_CONTROL,
    RANK_NONE,
    REASON_DISCONNECT,
    REASON_FAILURE,
    REASON_PROTOCOL,
    REASON_TIMEOUT,
    REASON_TRANSPORT,
    REASON_NAMES,
    control_tag,
    decode_header,
    encode_header,
    tag_attempt,
    tag_kind,
    tag_plane,
    tag_reason,
    tag_seq,
)

log = logging.getLogger(__name__)

DEFAULT_BARRIER_TIMEOUT = 60.0
DEFAULT_MAX_RESTARTS = 3


@dataclass(frozen=True)
class WorkerContext:
    """Per-worker runtime identity for one gang attempt."""

    partition_id: int
    num_partitions: int
    host_map: HostMap
    attempt: int = 0
    coordinator: tuple[str, int] | None = None

    def __post_init__(self):
        if not 0 <= self.partition_id < self.num_partitions:
            raise CannonError(
                f"partition_id {self.partition_id} out of range for "
                f"{self.num_partitions} partitions"
            )


@dataclass(frozen=True)
class BarrierOutcome:
    kind: str  # 'released' | 'aborted' | 'timed_out'
    failing_rank: int | None = None
    reason: int | None = None
    arrive_ts: float = 0.0
    release_ts: float | None = None

    @property
    def released(self) -> bool:
        return self.kind == "released"

    @property
    def reason_name(self) -> str:
        return REASON_NAMES.get(self.reason, str(self.reason))


class _Conn:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.inbuf = bytearray()
        self.outbuf = bytearray()
        self.rank: int | None = None
        self.closed = False


class BarrierCoordinator:
    """Arrive/release server; one per driver, shared by all attempts of a run."""

    def __init__(
        self,
        num_workers: int,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        timeout: float = DEFAULT_BARRIER_TIMEOUT,
    ):
        self.num_workers = num_workers
        self.timeout = timeout
        self._lock = threading.Lock()
        self._conns: list[_Conn] = []
        self._epochs: dict[int, dict] = {}
        self._attempt = 0
        self._abort: tuple[int, int] | None = None  # (failing_rank, reason)
        self._stopping = False
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(2 * num_workers + 8)
        self._listener.setblocking(False)
        self.address: tuple[str, int] = self._listener.getsockname()[:2]
        self._thread = threading.Thread(target=self._serve, daemon=True, name="barrier-coord")
        self._thread.start()

    # -- driver-side control -------------------------------------------------

    def begin_attempt(self, attempt: int):
        """Reset barrier state for a fresh gang attempt; stale conns are dropped."""
        with self._lock:
            self._attempt = attempt
            self._epochs.clear()
            self._abort = None
            for conn in self._conns:
                self._close_conn(conn)
            self._conns = [c for c in self._conns if not c.closed]

    def abort_attempt(self, failing_rank: int | None, reason: int):
        with self._lock:
            self._trigger_abort(failing_rank if failing_rank is not None else RANK_NONE, reason)

    def close(self):
        self._stopping = True
        self._thread.join(timeout=5.0)
        with self._lock:
            for conn in self._conns:
                self._close_conn(conn)
            self._listener.close()

    # -- server loop ----------------------------------------------------------

    def _serve(self):
        sel = selectors.DefaultSelector()
        sel.register(self._listener, selectors.EVENT_READ)
        registered: dict[_Conn, int] = {}
        while not self._stopping:
            with self._lock:
                self._conns = [c for c in self._conns if not c.closed]
                # drop closed conns first: their FDs may already be reused
                for conn in [c for c in registered if c.closed]:
                    try:
                        sel.unregister(conn.sock)
                    except (KeyError, ValueError):
                        pass
                    registered.pop(conn)
                for conn in self._conns:
                    want = selectors.EVENT_READ | (
                        selectors.EVENT_WRITE if conn.outbuf else 0
                    )
                    if registered.get(conn) != want:
                        if conn in registered:
                            sel.modify(conn.sock, want, data=conn)
                        else:
                            sel.register(conn.sock, want, data=conn)
                        registered[conn] = want
                next_deadline = min(
                    (st["deadline"] for st in self._epochs.values() if not st["released"]),
                    default=None,
                )
            timeout = 0.2
            if next_deadline is not None:
                timeout = min(timeout, max(0.0, next_deadline - time.monotonic()))
            events = sel.select(timeout)
            with self._lock:
                for key, mask in events:
                    if key.fileobj is self._listener:
                        self._accept_all()
                        continue
                    conn = key.data
                    if conn.closed:
                        continue
                    if mask & selectors.EVENT_READ:
                        self._read_conn(conn)
                    if mask & selectors.EVENT_WRITE:
                        self._flush_conn(conn)
                self._check_timeouts()
        sel.close()

    def _accept_all(self):
        while True:
            try:
                sock, _ = self._listener.accept()
            except (BlockingIOError, OSError):
                return
            _configure(sock)
            sock.setblocking(False)
            self._conns.append(_Conn(sock))

    def _read_conn(self, conn: _Conn):
        try:
            data = conn.sock.recv(4096)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            self._on_disconnect(conn)
            return
        if not data:
            self._on_disconnect(conn)
            return
        conn.inbuf += data
        while len(conn.inbuf) >= HEADER_LEN:
            frame = bytes(conn.inbuf[:HEADER_LEN])
            del conn.inbuf[:HEADER_LEN]
            try:
                header = decode_header(frame)
            except ProtocolError:
                self._close_conn(conn)
                return
            if header.payload_length != 0 or tag_plane(header.tag) != PLANE_CONTROL:
                self._close_conn(conn)
                return
            self._handle(conn, header)

    def _handle(self, conn: _Conn, header):
        attempt = tag_attempt(header.tag)
        if attempt != self._attempt:
            log.debug("coordinator: ignoring stale frame from attempt %d", attempt)
            return
        kind = tag_kind(header.tag)
        if kind == CTRL_ARRIVE:
            self._on_arrive(conn, header)
        elif kind == CTRL_ABORT:
            rank = header.source_rank
            self._trigger_abort(rank, tag_reason(header.tag))
        # RELEASE/HELLO from a worker are nonsensical; ignore

    def _on_arrive(self, conn: _Conn, header):
        conn.rank = header.source_rank
        if self._abort is not None:
            self._send_abort(conn)
            return
        seq = tag_seq(header.tag)
        epoch = (self._attempt << 8) | seq
        st = self._epochs.setdefault(
            epoch,
            {"arrived": {}, "released": False, "deadline": time.monotonic() + self.timeout},
        )
        if st["released"] or header.source_rank in st["arrived"]:
            log.error(
                "coordinator: double arrival by rank %d at epoch %d",
                header.source_rank, epoch,
            )
            self._trigger_abort(header.source_rank, REASON_PROTOCOL)
            return
        st["arrived"][header.source_rank] = conn
        if len(st["arrived"]) == self.num_workers:
            st["released"] = True
            release = encode_header(
                control_tag(self._attempt, seq, CTRL_RELEASE), RANK_NONE, 0
            )
            for c in st["arrived"].values():
                self._enqueue(c, release)

    def _check_timeouts(self):
        if self._abort is not None:
            return
        now = time.monotonic()
        for epoch, st in self._epochs.items():
            if not st["released"] and now >= st["deadline"]:
                log.error(
                    "coordinator: barrier epoch %d timed out with %d/%d arrivals",
                    epoch, len(st["arrived"]), self.num_workers,
                )
                self._trigger_abort(RANK_NONE, REASON_TIMEOUT)
                return

    def _trigger_abort(self, failing_rank: int, reason: int):
        if self._abort is not None:
            return
        self._abort = (failing_rank, reason)
        frame = encode_header(
            control_tag(self._attempt, 0, CTRL_ABORT, reason), failing_rank, 0
        )
        for conn in self._conns:
            if not conn.closed:
                self._enqueue(conn, frame)

    def _send_abort(self, conn: _Conn):
        failing_rank, reason = self._abort
        self._enqueue(
            conn,
            encode_header(control_tag(self._attempt, 0, CTRL_ABORT, reason), failing_rank, 0),
        )

    def _on_disconnect(self, conn: _Conn):
        self._close_conn(conn)
        if self._abort is not None:
            return
        # a worker vanishing while any barrier of this attempt is pending is a failure
        if conn.rank is not None and any(
            not st["released"] and conn.rank in st["arrived"] for st in self._epochs.values()
        ):
            self._trigger_abort(conn.rank, REASON_DISCONNECT)

    def _enqueue(self, conn: _Conn, frame: bytes):
        conn.outbuf += frame
        self._flush_conn(conn)

    def _flush_conn(self, conn: _Conn):
        while conn.outbuf:
            try:
                sent = conn.sock.send(conn.outbuf)
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                self._close_conn(conn)
                return
            del conn.outbuf[:sent]

    def _close_conn(self, conn: _Conn):
        if not conn.closed:
            conn.closed = True
            try:
                conn.sock.close()
            except OSError:
                pass


class BarrierClient:
    """Worker-side connection to the coordinator."""

    def __init__(
        self,
        rank: int,
        attempt: int,
        coordinator: tuple[str, int],
        *,
        timeout: float = DEFAULT_BARRIER_TIMEOUT,
        connect_timeout: float = 10.0,
    ):
        self.rank = rank
        self.attempt = attempt
        self.timeout = timeout
        self.sock = socket.create_connection(coordinator, timeout=connect_timeout)
        _configure(self.sock)
        self.sock.setblocking(False)
        self._inbuf = bytearray()
        self._seen: set[int] = set()

    def fileno(self) -> int:
        return self.sock.fileno()

    def _send(self, frame: bytes):
        view = memoryview(frame)
        deadline = time.monotonic() + self.timeout
        sel = selectors.DefaultSelector()
        sel.register(self.sock, selectors.EVENT_WRITE)
        try:
            while view:
                if time.monotonic() > deadline:
                    raise TransportError("coordinator send timed out")
                sel.select(0.2)
                try:
                    sent = self.sock.send(view)
                except (BlockingIOError, InterruptedError):
                    continue
                view = view[sent:]
        finally:
            sel.close()

    def _recv_frame(self, deadline: float):
        """One decoded control frame, or None on deadline expiry."""
        sel = selectors.DefaultSelector()
        sel.register(self.sock, selectors.EVENT_READ)
        try:
            while len(self._inbuf) < HEADER_LEN:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                if not sel.select(min(remaining, 0.2)):
                    continue
                try:
                    data = self.sock.recv(4096)
                except (BlockingIOError, InterruptedError):
                    continue
                if not data:
                    raise TransportError("coordinator closed the connection")
                self._inbuf += data
        finally:
            sel.close()
        frame = bytes(self._inbuf[:HEADER_LEN])
        del self._inbuf[:HEADER_LEN]
        return decode_header(frame)

    def _classify(self, header) -> BarrierOutcome | None:
        """Map a frame to an outcome; None for stale/uninteresting frames."""
        if tag_plane(header.tag) != PLANE_CONTROL:
            return None
        if tag_attempt(header.tag) != self.attempt:
            log.debug(
                "rank %d: ignoring stale frame from attempt %d",
                self.rank, tag_attempt(header.tag),
            )
            return None
        kind = tag_kind(header.tag)
        if kind == CTRL_ABORT:
            reason = tag_reason(header.tag)
            failing = None if header.source_rank == RANK_NONE else header.source_rank
            variant = "timed_out" if reason == REASON_TIMEOUT else "aborted"
            return BarrierOutcome(kind=variant, failing_rank=failing, reason=reason)
        if kind == CTRL_RELEASE:
            return BarrierOutcome(kind="released", reason=tag_seq(header.tag))
        return None

    def barrier(self, seq: int, *, timeout: float | None = None) -> BarrierOutcome:
        """Arrive at barrier ``seq`` and block until the gang's shared outcome."""
        if seq in self._seen:
            raise ProtocolError(f"rank {self.rank}: double arrival at barrier seq {seq}")
        self._seen.add(seq)
        arrive_ts = time.monotonic()
        deadline = arrive_ts + (timeout if timeout is not None else self.timeout)
        self._send(
            encode_header(control_tag(self.attempt, seq, CTRL_ARRIVE), self.rank, 0)
        )
        while True:
            try:
                header = self._recv_frame(deadline)
            except TransportError:
                return BarrierOutcome(
                    kind="aborted", reason=REASON_DISCONNECT, arrive_ts=arrive_ts
                )
            if header is None:
                return BarrierOutcome(
                    kind="timed_out", reason=REASON_TIMEOUT, arrive_ts=arrive_ts
                )
            out = self._classify(header)
            if out is None:
                continue
            if out.kind == "released":
                if out.reason != seq:  # release for some other barrier: protocol bug
                    raise ProtocolError(
                        f"rank {self.rank}: release for seq {out.reason}, expected {seq}"
                    )
                return BarrierOutcome(
                    kind="released", arrive_ts=arrive_ts, release_ts=time.monotonic()
                )
            return BarrierOutcome(
                kind=out.kind,
                failing_rank=out.failing_rank,
                reason=out.reason,
                arrive_ts=arrive_ts,
            )

    def report_failure(self, reason: int):
        """Best-effort ABORT notification to the coordinator."""
        try:
            self._send(
                encode_header(
                    control_tag(self.attempt, 0, CTRL_ABORT, reason), self.rank, 0
                )
            )
        except Exception:
            pass

    def on_readable(self):
        """Abort-watch hook for transport progress loops: raises on ABORT.

        Frames already sitting in the input buffer are processed even when
        the socket has nothing new: a release and an abort sent back to back
        can land in one ``barrier`` read, leaving the abort buffered.
        """
        try:
            data = self.sock.recv(4096)
        except (BlockingIOError, InterruptedError):
            pass
        except OSError as e:
            raise GangAborted(reason=REASON_DISCONNECT, detail=str(e))
        else:
            if not data:
                raise GangAborted(
                    reason=REASON_DISCONNECT, detail="coordinator connection lost"
                )
            self._inbuf += data
        while len(self._inbuf) >= HEADER_LEN:
            frame = bytes(self._inbuf[:HEADER_LEN])
            del self._inbuf[:HEADER_LEN]
            out = self._classify(decode_header(frame))
            if out is not None and out.kind in ("aborted", "timed_out"):
                raise GangAborted(
                    failing_rank=out.failing_rank,
                    reason=out.reason,
                    detail="abort received mid-transfer",
                )

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def _reason_for(exc: BaseException) -> int:
    if isinstance(exc, ProtocolError):
        return REASON_PROTOCOL
    if isinstance(exc, TransportError):
        return REASON_TRANSPORT
    return REASON_FAILURE


class WorkerRuntime:
    """What a stage function gets handed: identity, barrier access, meters."""

    def __init__(
        self,
        ctx: WorkerContext,
        client: BarrierClient | None,
        *,
        meter: MemoryMeter | None = None,
        counters: TransferCounters | None = None,
        mesh_timeout: float = 30.0,
        transfer_timeout: float = 60.0,
        barrier_timeout: float = DEFAULT_BARRIER_TIMEOUT,
    ):
        self.ctx = ctx
        self.client = client
        self.meter = meter if meter is not None else MemoryMeter()
        self.counters = counters if counters is not None else TransferCounters()
        self.mesh_timeout = mesh_timeout
        self.transfer_timeout = transfer_timeout
        self.barrier_timeout = barrier_timeout
        self.timings: dict[str, float] = {}
        self.barrier_log: list[BarrierOutcome] = []

    @property
    def rank(self) -> int:
        return self.ctx.partition_id

    def barrier(self, seq: int, *, raise_on_abort: bool = True) -> BarrierOutcome:
        if self.ctx.num_partitions == 1:
            now = time.monotonic()
            out = BarrierOutcome(kind="released", arrive_ts=now, release_ts=now)
        else:
            out = self.client.barrier(seq, timeout=self.barrier_timeout)
        self.barrier_log.append(out)
        if raise_on_abort and not out.released:
            raise GangAborted(
                failing_rank=out.failing_rank,
                reason=out.reason,
                detail=f"barrier seq {seq} -> {out.kind}",
            )
        return out

    def abort_watch(self):
        return self.client  # BarrierClient implements fileno()/on_readable()


def barrier(runtime: WorkerRuntime, epoch: int) -> BarrierOutcome:
    """Module-level convenience wrapper over WorkerRuntime.barrier."""
    return runtime.barrier(epoch, raise_on_abort=False)


@dataclass
class WorkerOutcome:
    rank: int
    attempt: int
    status: str  # 'ok' | 'aborted' | 'failed'
    result: Any = None
    error: str = ""
    memory: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    rss_kb: int | None = None


@dataclass
class GangRun:
    """Successful gang execution: per-rank results plus bookkeeping."""

    attempt: int  # final attempt index (0 = no restarts)
    outcomes: dict[int, WorkerOutcome]

    def results(self) -> dict[int, Any]:
        return {r: o.result for r, o in self.outcomes.items()}


def _worker_main(stage, ctx: WorkerContext, payload, timeouts, out_q):
    mesh_timeout, transfer_timeout, barrier_timeout = timeouts
    meter = MemoryMeter()
    counters = TransferCounters()
    client = None
    outcome = WorkerOutcome(rank=ctx.partition_id, attempt=ctx.attempt, status="ok")
    runtime = None
    try:
        if ctx.num_partitions > 1:
            if ctx.coordinator is None:
                raise CannonError("multi-worker gang requires a coordinator address")
            client = BarrierClient(
                ctx.partition_id, ctx.attempt, ctx.coordinator, timeout=barrier_timeout
            )
        runtime = WorkerRuntime(
            ctx,
            client,
            meter=meter,
            counters=counters,
            mesh_timeout=mesh_timeout,
            transfer_timeout=transfer_timeout,
            barrier_timeout=barrier_timeout,
        )
        outcome.result = stage(runtime, payload)
    except GangAborted as e:
        outcome.status = "aborted"
        outcome.error = str(e)
    except BaseException as e:
        outcome.status = "failed"
        outcome.error = f"{type(e).__name__}: {e}"
        if client is not None:
            client.report_failure(_reason_for(e))
    finally:
        if client is not None:
            client.close()
    outcome.memory = meter.snapshot()
    outcome.counters = counters.snapshot()
    outcome.timings = dict(runtime.timings) if runtime is not None else {}
    outcome.rss_kb = rss_peak_kb()
    out_q.put(outcome)


_mp_context = None


def processes_context():
    """Multiprocessing context for process-mode workers.

    forkserver (preloaded with the heavy imports) keeps per-worker startup in
    the tens of milliseconds; spawn is the fallback where it is unavailable.
    """
    global _mp_context
    if _mp_context is None:
        import multiprocessing as mp

        try:
            ctx = mp.get_context("forkserver")
            ctx.set_forkserver_preload(["cannonmul.driver"])
        except ValueError:  # pragma: no cover - non-Linux fallback
            ctx = mp.get_context("spawn")
        _mp_context = ctx
    return _mp_context


def _launch_threads(stage, ctxs, payloads, timeouts, join_timeout) -> list[WorkerOutcome]:
    out_q: queue.Queue = queue.Queue()
    threads = [
        threading.Thread(
            target=_worker_main,
            args=(stage, ctx, payloads[ctx.partition_id], timeouts, out_q),
            daemon=True,
            name=f"worker-{ctx.partition_id}",
        )
        for ctx in ctxs
    ]
    for t in threads:
        t.start()
    deadline = time.monotonic() + join_timeout
    for t in threads:
        t.join(timeout=max(0.0, deadline - time.monotonic()))
    stuck = [t.name for t in threads if t.is_alive()]
    if stuck:
        raise GangFailure(0, f"worker thread(s) did not terminate: {stuck}")
    outcomes = []
    while not out_q.empty():
        outcomes.append(out_q.get_nowait())
    return outcomes


def _launch_processes(stage, ctxs, payloads, timeouts, join_timeout) -> list[WorkerOutcome]:
    ctx_mp = processes_context()
    out_q = ctx_mp.Queue()
    procs = [
        ctx_mp.Process(
            target=_worker_main,
            args=(stage, ctx, payloads[ctx.partition_id], timeouts, out_q),
            daemon=True,
            name=f"worker-{ctx.partition_id}",
        )
        for ctx in ctxs
    ]
    for p in procs:
        p.start()
    outcomes: list[WorkerOutcome] = []
    deadline = time.monotonic() + join_timeout
    # drain results first: queue feeder threads must not block process exit
    for _ in procs:
        try:
            outcomes.append(out_q.get(timeout=max(0.1, deadline - time.monotonic())))
        except queue.Empty:
            break
    for p in procs:
        p.join(timeout=max(0.0, deadline - time.monotonic()))
        if p.is_alive():
            log.error("terminating stuck worker process %s", p.name)
            p.terminate()
            p.join(timeout=5.0)
    by_rank = {o.rank: o for o in outcomes}
    for ctx in ctxs:
        r = ctx.partition_id
        if r not in by_rank:
            by_rank[r] = WorkerOutcome(
                rank=r, attempt=ctx.attempt, status="failed",
                error="worker process produced no result (crash or kill)",
            )
    out_q.close()
    return list(by_rank.values())


def run_gang(
    stage: Callable[[WorkerRuntime, Any], Any],
    num_partitions: int,
    payloads: dict[int, Any] | list,
    *,
    host_map: HostMap,
    coordinator: BarrierCoordinator | None = None,
    mode: str = "threads",
    max_restarts: int = DEFAULT_MAX_RESTARTS,
    mesh_timeout: float = 30.0,
    transfer_timeout: float = 60.0,
    barrier_timeout: float = DEFAULT_BARRIER_TIMEOUT,
) -> GangRun:
    """Run ``stage`` on every partition; restart the whole gang on any failure.

    The stage must be restartable from its inputs: attempts are independent
    and every worker's attempt counter advances in lockstep.
    """
    if mode not in ("threads", "processes"):
        raise CannonError(f"unknown launch mode {mode!r}")
    if num_partitions > 1 and coordinator is None:
        raise CannonError("multi-worker gangs need a BarrierCoordinator")
    launcher = _launch_threads if mode == "threads" else _launch_processes
    timeouts = (mesh_timeout, transfer_timeout, barrier_timeout)
    join_timeout = mesh_timeout + 2 * barrier_timeout + 4 * transfer_timeout + 30.0
    last_error = "no attempts made"
    for attempt in range(max_restarts + 1):
        if coordinator is not None:
            coordinator.begin_attempt(attempt)
        ctxs = [
            WorkerContext(
                partition_id=r,
                num_partitions=num_partitions,
                host_map=host_map,
                attempt=attempt,
                coordinator=coordinator.address if coordinator is not None else None,
            )
            for r in range(num_partitions)
        ]
        outcomes = launcher(stage, ctxs, payloads, timeouts, join_timeout)
        by_rank = {o.rank: o for o in outcomes}
        if len(by_rank) == num_partitions and all(
            o.status == "ok" for o in by_rank.values()
        ):
            return GangRun(attempt=attempt, outcomes=by_rank)
        failed = [o for o in by_rank.values() if o.status == "failed"]
        cause = failed[0] if failed else next(
            (o for o in by_rank.values() if o.status != "ok"), None
        )
        last_error = (
            f"rank {cause.rank}: {cause.error}" if cause is not None else "missing outcomes"
        )
        log.warning("gang attempt %d failed (%s); restarting", attempt, last_error)
    raise GangFailure(max_restarts + 1, last_error)
