"""Asynchronous point-to-point messaging over stream sockets.

Each pair of neighboring workers shares exactly one TCP connection (the lower
rank dials, the higher rank accepts).  A channel owns two fixed 8 MiB buffers,
allocated once at setup and never resized; payloads larger than a buffer are
streamed through it in chunks behind a single header.  Copy discipline: one
copy tile -> send buffer per chunk on the way out, one copy receive buffer ->
tile per chunk on the way in.

``sendrecv_replace`` drives its send and its receive from one selector loop,
so both directions progress concurrently: two workers can swap payloads far
larger than the buffers without deadlocking.  When the destination of the
receive is the same memory being sent (replace mode), a received chunk is only
copied out once the same byte range has been staged into the send buffer,
which keeps the tile consistent without a shadow copy.

Transport failures are fatal to the run; recovery is the gang layer's job.
"""

from __future__ import annotations

import selectors
import socket
import threading
import time

from .errors import ContractViolation, ProtocolError, TransportError
from .memtrack import TransferCounters
from .wire import (
    CTRL_HELLO,
    HEADER_LEN,
    PLANE_CONTROL,
    control_tag,
    decode_header,
    encode_header,
    tag_attempt,
    tag_kind,
    tag_plane,
)

BUFFER_CAP = 8 * 2**20  # fixed per-direction channel buffer, 8 MiB

DEFAULT_CONNECT_TIMEOUT = 30.0
DEFAULT_TRANSFER_TIMEOUT = 60.0
_DIAL_RETRY_S = 0.05


class HostMap:
    """Maps each rank 0..p-1 to a "host:port" address."""

    def __init__(self, addresses: list[str]):
        self.addresses = list(addresses)
        for rank, addr in enumerate(self.addresses):
            self._split(addr, rank)

    def __len__(self) -> int:
        return len(self.addresses)

    @staticmethod
    def _split(addr: str, rank: int) -> tuple[str, int]:
        host, sep, port = addr.rpartition(":")
        if not sep or not host:
            raise ContractViolation(f"rank {rank}: address {addr!r} is not host:port")
        try:
            return host, int(port)
        except ValueError:
            raise ContractViolation(
                f"rank {rank}: port in address {addr!r} is not an integer"
            ) from None

    def address_of(self, rank: int) -> tuple[str, int]:
        return self._split(self.addresses[rank], rank)

    def format(self) -> str:
        return "".join(f"{r} {a}\n" for r, a in enumerate(self.addresses))

    @classmethod
    def parse(cls, text: str) -> "HostMap":
        """Parse the host map file format: one `<rank> <host>:<port>` per line."""
        entries: dict[int, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ContractViolation(
                    f"host map line {lineno}: expected '<rank> <host>:<port>', got {raw!r}"
                )
            try:
                rank = int(parts[0])
            except ValueError:
                raise ContractViolation(
                    f"host map line {lineno}: rank {parts[0]!r} is not an integer"
                ) from None
            if rank in entries:
                raise ContractViolation(f"host map line {lineno}: duplicate rank {rank}")
            entries[rank] = parts[1]
        p = len(entries)
        missing = [r for r in range(p) if r not in entries]
        if missing:
            raise ContractViolation(
                f"host map must cover ranks 0..{p - 1} exactly once; missing {missing}"
            )
        return cls([entries[r] for r in range(p)])


def _configure(sock: socket.socket):
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class Endpoint:
    """One worker's listener plus its set of peer channels."""

    def __init__(
        self,
        rank: int,
        bind_address: tuple[str, int],
        *,
        meter=None,
        counters: TransferCounters | None = None,
        connect_timeout: float = DEFAULT_CONNECT_TIMEOUT,
        transfer_timeout: float = DEFAULT_TRANSFER_TIMEOUT,
    ):
        self.rank = rank
        self.meter = meter
        self.counters = counters if counters is not None else TransferCounters()
        self.connect_timeout = connect_timeout
        self.transfer_timeout = transfer_timeout
        self.channels: dict[int, PeerChannel] = {}
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._listener.bind(bind_address)
        except OSError as e:
            self._listener.close()
            raise TransportError(
                f"rank {rank}: cannot bind {bind_address[0]}:{bind_address[1]}: {e}"
            ) from e
        self._listener.listen(64)

    @property
    def bound_address(self) -> tuple[str, int]:
        host, port = self._listener.getsockname()[:2]
        return host, port

    def close(self):
        for ch in list(self.channels.values()):
            ch.close()
        self.channels.clear()
        self._listener.close()

    # -- mesh establishment -------------------------------------------------

    def establish_mesh(
        self,
        hosts: HostMap,
        neighbors: set[int],
        attempt: int,
        timeout: float | None = None,
        watch=None,
    ) -> dict[int, "PeerChannel"]:
        """Connect one channel per neighbor; lower rank dials, higher accepts.

        ``watch`` (same contract as in ``progress``) is polled while dialing
        and accepting, so a gang abort interrupts mesh setup immediately
        instead of letting the survivors wait out the connect timeout.
        """
        neighbors = set(neighbors)
        if self.rank in neighbors:
            raise ContractViolation("a worker cannot be its own neighbor")
        for r in neighbors:
            if not 0 <= r < len(hosts):
                raise ContractViolation(f"neighbor rank {r} missing from host map")
        deadline = time.monotonic() + (timeout if timeout is not None else self.connect_timeout)
        to_dial = sorted(r for r in neighbors if r > self.rank)
        to_accept = {r for r in neighbors if r < self.rank}

        accepted: dict[int, socket.socket] = {}
        accept_err: list[Exception] = []
        stop = threading.Event()
        acceptor = threading.Thread(
            target=self._accept_loop,
            args=(to_accept, attempt, deadline, accepted, accept_err, stop),
            daemon=True,
        )
        if to_accept:
            acceptor.start()

        hello = control_tag(attempt, 0, CTRL_HELLO)
        try:
            for r in to_dial:
                sock = self._dial(hosts.address_of(r), r, deadline, watch)
                sock.sendall(encode_header(hello, self.rank, 0))
                self.channels[r] = PeerChannel(self, r, sock)
            while acceptor.is_alive():
                acceptor.join(0.05)
                if watch is not None:
                    watch.on_readable()
        except BaseException:
            stop.set()
            raise
        finally:
            if to_accept:
                acceptor.join()
        if accept_err:
            raise accept_err[0]
        missing = to_accept - set(accepted)
        if missing:
            for s in accepted.values():
                s.close()
            raise TransportError(
                f"rank {self.rank}: mesh setup timed out waiting for ranks {sorted(missing)}"
            )
        for r, sock in accepted.items():
            self.channels[r] = PeerChannel(self, r, sock)
        return dict(self.channels)

    def _dial(
        self, address: tuple[str, int], remote_rank: int, deadline: float, watch=None
    ) -> socket.socket:
        last = None
        while True:
            if watch is not None:
                watch.on_readable()
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError(
                    f"rank {self.rank}: connect to rank {remote_rank} at "
                    f"{address[0]}:{address[1]} timed out ({last})"
                )
            try:
                sock = socket.create_connection(address, timeout=min(1.0, remaining))
                _configure(sock)
                return sock
            except OSError as e:
                last = e
                time.sleep(_DIAL_RETRY_S)

    def _accept_loop(self, expected, attempt, deadline, out, err, stop):
        pending = set(expected)
        self._listener.settimeout(0.1)
        try:
            while pending and not stop.is_set():
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return
                try:
                    conn, _ = self._listener.accept()
                except socket.timeout:
                    continue
                _configure(conn)
                conn.settimeout(max(0.1, deadline - time.monotonic()))
                try:
                    header = decode_header(_read_exact(conn, HEADER_LEN))
                except (TransportError, ProtocolError):
                    conn.close()
                    continue
                if (
                    tag_plane(header.tag) != PLANE_CONTROL
                    or tag_kind(header.tag) != CTRL_HELLO
                    or tag_attempt(header.tag) != attempt
                    or header.source_rank not in pending
                ):
                    # stale attempt or unexpected peer: drop the connection
                    conn.close()
                    continue
                pending.discard(header.source_rank)
                out[header.source_rank] = conn
        except Exception as e:  # surfaced to the caller after join
            err.append(e)
        finally:
            self._listener.settimeout(None)


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError("peer disconnected during handshake")
        buf += chunk
    return bytes(buf)


class PeerChannel:
    """Bidirectional connection to one neighbor with fixed preallocated buffers."""

    def __init__(self, endpoint: Endpoint, remote_rank: int, sock: socket.socket):
        self.endpoint = endpoint
        self.local_rank = endpoint.rank
        self.remote_rank = remote_rank
        self.sock = sock
        sock.setblocking(False)
        self.send_buf = memoryview(bytearray(BUFFER_CAP))
        self.recv_buf = memoryview(bytearray(BUFFER_CAP))
        if endpoint.meter is not None:
            endpoint.meter.add_buffer(2 * BUFFER_CAP)
        self.send_op: _SendOp | None = None
        self.recv_op: _RecvOp | None = None
        self.closed = False

    def begin_send(self, tag: int, payload: memoryview | None) -> "_SendOp":
        if self.send_op is not None and not self.send_op.done:
            raise ContractViolation(
                f"channel {self.local_rank}->{self.remote_rank} already has an in-flight send"
            )
        self.send_op = _SendOp(self, tag, payload)
        return self.send_op

    def begin_recv(
        self, tag: int, dest: memoryview | None, guard=None
    ) -> "_RecvOp":
        if self.recv_op is not None and not self.recv_op.done:
            raise ContractViolation(
                f"channel {self.local_rank}<-{self.remote_rank} already has an in-flight receive"
            )
        self.recv_op = _RecvOp(self, tag, self.remote_rank, dest, guard)
        return self.recv_op

    def pending_ops(self) -> list:
        return [op for op in (self.send_op, self.recv_op) if op is not None and not op.done]

    def close(self):
        if not self.closed:
            self.closed = True
            if self.endpoint.meter is not None:
                self.endpoint.meter.release_buffer(2 * BUFFER_CAP)
            try:
                self.sock.close()
            finally:
                self.endpoint.channels.pop(self.remote_rank, None)
                # drop the op<->channel reference cycle so the big buffers
                # free by refcount now, not at some future cyclic collection
                self.send_op = None
                self.recv_op = None
                self.send_buf = None
                self.recv_buf = None


class _SendOp:
    """Header write, then payload staged through the fixed buffer in chunks.

    ``staged`` counts payload bytes copied into the send buffer so far; once a
    byte range is staged, the source memory may be overwritten.
    """

    def __init__(self, ch: PeerChannel, tag: int, payload: memoryview | None):
        self.ch = ch
        self.tag = tag
        self.payload = payload
        self.total = 0 if payload is None else len(payload)
        self.staged = 0
        self.cur: memoryview | None = memoryview(
            encode_header(tag, ch.local_rank, self.total)
        )
        self.cur_ofs = 0
        self.done = False

    def _stage_next(self):
        n = min(BUFFER_CAP, self.total - self.staged)
        self.ch.send_buf[:n] = self.payload[self.staged:self.staged + n]
        self.staged += n
        self.cur = self.ch.send_buf[:n]
        self.cur_ofs = 0

    def on_writable(self):
        while not self.done:
            if self.cur is not None and self.cur_ofs < len(self.cur):
                try:
                    sent = self.ch.sock.send(self.cur[self.cur_ofs:])
                except (BlockingIOError, InterruptedError):
                    return
                except OSError as e:
                    raise TransportError(
                        f"send to rank {self.ch.remote_rank} failed: {e}"
                    ) from e
                self.cur_ofs += sent
            elif self.staged < self.total:
                self._stage_next()
            else:
                self.done = True
                self._account()

    def _account(self):
        counters = self.ch.endpoint.counters
        plane = tag_plane(self.tag)
        if plane == PLANE_CONTROL:
            counters.control_frames += 1
        else:
            counters.record_data_send(plane, self.total)


class _RecvOp:
    """Header read and validation, then chunked copy-out to the destination.

    ``guard``, when set, returns the number of destination-prefix bytes that
    may currently be overwritten (replace mode links it to the paired send's
    ``staged``).  A buffered chunk waits until the guard covers it.
    """

    def __init__(
        self,
        ch: PeerChannel,
        expected_tag: int,
        expected_source: int,
        dest: memoryview | None,
        guard=None,
    ):
        self.ch = ch
        self.expected_tag = expected_tag
        self.expected_source = expected_source
        self.dest = dest
        self.guard = guard
        self.header_buf = bytearray()
        self.header = None
        self.total = 0
        self.copied = 0  # bytes delivered to dest
        self.fill = 0  # bytes of the current chunk sitting in recv_buf
        self.chunk_len = 0
        self.done = False

    def _begin_payload(self):
        from .wire import check_expected

        header = decode_header(self.header_buf)
        check_expected(header, self.expected_tag, self.expected_source)
        expected_len = 0 if self.dest is None else len(self.dest)
        if header.payload_length != expected_len:
            raise ProtocolError(
                f"payload size disagreement from rank {header.source_rank}: "
                f"got {header.payload_length}, expected {expected_len}"
            )
        self.header = header
        self.total = header.payload_length
        self.chunk_len = min(BUFFER_CAP, self.total)
        if self.total == 0:
            self.done = True
            self._account()

    def _chunk_ready(self) -> bool:
        return self.header is not None and self.fill == self.chunk_len and not self.done

    def try_flush(self):
        """Copy a fully buffered chunk out to dest if the guard allows it."""
        if not self._chunk_ready():
            return
        end = self.copied + self.chunk_len
        if self.guard is not None and self.guard() < end:
            return
        self.dest[self.copied:end] = self.ch.recv_buf[:self.chunk_len]
        self.copied = end
        self.fill = 0
        self.ch.endpoint.counters.bytes_received += self.chunk_len
        if self.copied == self.total:
            self.done = True
            self._account()
        else:
            self.chunk_len = min(BUFFER_CAP, self.total - self.copied)

    def _account(self):
        if tag_plane(self.expected_tag) == PLANE_CONTROL:
            self.ch.endpoint.counters.control_frames += 1

    def wants_read(self) -> bool:
        # a buffered chunk blocked on the guard pauses socket reads
        return not self.done and not self._chunk_ready()

    def on_readable(self):
        while not self.done and self.wants_read():
            if self.header is None:
                try:
                    chunk = self.ch.sock.recv(HEADER_LEN - len(self.header_buf))
                except (BlockingIOError, InterruptedError):
                    return
                except OSError as e:
                    raise TransportError(
                        f"receive from rank {self.ch.remote_rank} failed: {e}"
                    ) from e
                if not chunk:
                    raise TransportError(
                        f"rank {self.ch.remote_rank} disconnected mid-transfer"
                    )
                self.header_buf += chunk
                if len(self.header_buf) == HEADER_LEN:
                    self._begin_payload()
            else:
                want = self.ch.recv_buf[self.fill:self.chunk_len]
                try:
                    got = self.ch.sock.recv_into(want)
                except (BlockingIOError, InterruptedError):
                    return
                except OSError as e:
                    raise TransportError(
                        f"receive from rank {self.ch.remote_rank} failed: {e}"
                    ) from e
                if not got:
                    raise TransportError(
                        f"rank {self.ch.remote_rank} disconnected mid-transfer"
                    )
                self.fill += got
                self.try_flush()


def progress(ops: list, *, timeout: float, watch=None):
    """Drive a set of in-flight ops to completion on one selector loop.

    ``watch``, when given, is an object with fileno() and on_readable(); it is
    polled alongside the transfer sockets so a collective abort can interrupt
    a blocked transfer (on_readable raises in that case).
    """
    deadline = time.monotonic() + timeout
    sel = selectors.DefaultSelector()
    registered: dict[int, int] = {}
    try:
        while True:
            if watch is not None:
                # also catches an abort frame the watch buffered earlier,
                # which would never make its socket selectable again
                watch.on_readable()
            for op in ops:
                if isinstance(op, _RecvOp):
                    op.try_flush()
            pending = [op for op in ops if not op.done]
            if not pending:
                return
            masks: dict[socket.socket, int] = {}
            for op in pending:
                if isinstance(op, _SendOp):
                    masks[op.ch.sock] = masks.get(op.ch.sock, 0) | selectors.EVENT_WRITE
                elif op.wants_read():
                    masks[op.ch.sock] = masks.get(op.ch.sock, 0) | selectors.EVENT_READ
            if watch is not None and watch.fileno() not in registered:
                sel.register(watch, selectors.EVENT_READ)
                registered[watch.fileno()] = selectors.EVENT_READ
            watch_fd = watch.fileno() if watch is not None else None
            for sock, mask in masks.items():
                if registered.get(sock.fileno()) != mask:
                    if sock.fileno() in registered:
                        sel.modify(sock, mask)
                    else:
                        sel.register(sock, mask)
                    registered[sock.fileno()] = mask
            live = {s.fileno() for s in masks}
            for fd in list(registered):
                if fd not in live and fd != watch_fd:
                    for key in list(sel.get_map().values()):
                        if key.fd == fd:
                            sel.unregister(key.fileobj)
                    registered.pop(fd)
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError(
                    f"transfer timed out with {len(pending)} op(s) outstanding"
                )
            for key, events in sel.select(min(remaining, 1.0)):
                if watch is not None and key.fileobj is watch:
                    watch.on_readable()
                    continue
                for op in pending:
                    if op.ch.sock is not key.fileobj:
                        continue
                    if events & selectors.EVENT_WRITE and isinstance(op, _SendOp):
                        op.on_writable()
                    if events & selectors.EVENT_READ and isinstance(op, _RecvOp):
                        op.on_readable()
    finally:
        sel.close()


def exchange(
    ch_dest: PeerChannel,
    ch_source: PeerChannel,
    send_view: memoryview,
    recv_view: memoryview,
    tag: int,
    *,
    replace: bool = False,
    timeout: float | None = None,
    watch=None,
):
    """Send ``send_view`` to ch_dest's peer while receiving into ``recv_view``
    from ch_source's peer, both directions progressing concurrently."""
    timeout = timeout if timeout is not None else ch_dest.endpoint.transfer_timeout
    sop = ch_dest.begin_send(tag, send_view)
    guard = (lambda: sop.staged) if replace else None
    rop = ch_source.begin_recv(tag, recv_view, guard=guard)
    progress([sop, rop], timeout=timeout, watch=watch)


def sendrecv_replace(
    ch_dest: PeerChannel,
    ch_source: PeerChannel,
    tile,
    tag: int,
    *,
    timeout: float | None = None,
    watch=None,
):
    """Combined send/receive that replaces the tile's contents in place."""
    view = tile.bytes_view()
    exchange(ch_dest, ch_source, view, view, tag, replace=True, timeout=timeout, watch=watch)


def barrier_probe_send(ch: PeerChannel, control_tag_value: int, *, timeout: float | None = None):
    """Send a zero-payload control frame on a peer channel."""
    timeout = timeout if timeout is not None else ch.endpoint.transfer_timeout
    op = ch.begin_send(control_tag_value, None)
    progress([op], timeout=timeout)


def recv_control(ch: PeerChannel, control_tag_value: int, *, timeout: float | None = None):
    """Receive one zero-payload control frame with the given tag."""
    timeout = timeout if timeout is not None else ch.endpoint.transfer_timeout
    op = ch.begin_recv(control_tag_value, None)
    progress([op], timeout=timeout)
    return op.header


def drain(ch: PeerChannel, *, timeout: float | None = None):
    """Complete any outstanding transfers on the channel (before close)."""
    timeout = timeout if timeout is not None else ch.endpoint.transfer_timeout
    ops = ch.pending_ops()
    if ops:
        progress(ops, timeout=timeout)
