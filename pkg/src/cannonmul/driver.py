"""Run orchestration: matrix generation, scatter, gang launch, gather, reports.

The driver is plain single-threaded control logic.  It cuts the global
matrices into blocks, hands each worker its pair, runs the gang (threads on
loopback ports for fast tests, separate processes for honest memory
isolation), reassembles C, and folds everything into a RunReport.

Two implementations share this plumbing:

* ``run_distributed`` — Cannon's algorithm (constant per-worker tile memory);
* ``run_baseline_allgather`` — a naive multiply in which every worker gathers
  the whole A-block row and B-block column it needs up front, so per-worker
  memory grows with the grid side.  It exists as the memory-footprint foil.

Only the barrier-to-barrier dot-product interval is timed; generation,
scatter, mesh setup, and gather never land in ``dot_ms``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .barrier import (
    BarrierCoordinator,
    GangRun,
    WorkerRuntime,
    run_gang,
)
from .cannon import SEQ_END, SEQ_GATE, SEQ_START, dot_product
from .errors import ConfigError, ContractViolation, GridIncompatibility
from .tile import (
    DenseTile,
    ElementType,
    assemble_from_blocks,
    local_dot_accumulate,
    split_into_blocks,
)
from .topology import TorusTopology, grid_side
from .transport import Endpoint, HostMap, exchange
from .wire import PLANE_A, PLANE_B, data_tag

DEFAULT_PORT_BASE = 23000
CSV_COLUMNS = [
    "impl", "n", "q", "p", "dtype", "rep",
    "dot_ms", "peak_worker_bytes", "checksum", "attempts",
]
# stripped before report-determinism comparisons (everything else is seeded)
VOLATILE_KEYS = frozenset({"dot_ms", "dot_s", "mesh_s", "cpu_s", "rss_kb"})

_INT_LOW, _INT_HIGH = 0, 2**16  # int32 fill range; products wrap mod 2**32

# test seam: artificial pause inside scatter, to prove dot timings exclude it
_scatter_delay_s = 0.0

_port_lock = threading.Lock()
_port_cursor = itertools.count()


def default_host_map(p: int) -> HostMap:
    """Loopback addresses for p workers, in blocks above CANNON_PORT_BASE.

    Blocks are salted by PID so overlapping runs from different driver
    processes land on different ports.  The default range sits below the
    kernel's ephemeral floor (32768 on Linux): coordinator listeners and
    connection source ports are ephemeral, and a listener cannot bind a
    port an established connection happens to occupy.
    """
    base = int(os.environ.get("CANNON_PORT_BASE", str(DEFAULT_PORT_BASE)))
    with _port_lock:
        block = (os.getpid() % 151) + next(_port_cursor)
    return HostMap([f"127.0.0.1:{base + (block % 140) * 64 + r}" for r in range(p)])


def generate_matrix(n: int, dtype: ElementType, seed: int) -> DenseTile:
    """Seeded random square matrix: floats uniform in [0,1), int32 in [0, 2^16)."""
    if n < 1:
        raise ContractViolation(f"matrix order must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if dtype is ElementType.INT32:
        arr = rng.integers(_INT_LOW, _INT_HIGH, size=(n, n), dtype=np.int32)
    else:
        arr = rng.random(size=(n, n), dtype=dtype.np_dtype)
    return DenseTile(np.ascontiguousarray(arr))


def reduce_avg(result_blocks: dict[int, np.ndarray]) -> float:
    """Single-value reducer: arithmetic mean over all elements of C.

    Computed as (sum of per-block sums) / n^2, blocks in rank order, so the
    value is deterministic for a fixed block layout.  Doubles as the run
    checksum.
    """
    if not result_blocks:
        raise ContractViolation("no result blocks to reduce")
    total = 0.0
    count = 0
    for rank in sorted(result_blocks):
        block = result_blocks[rank]
        if block is None:
            raise ContractViolation(f"missing result block for rank {rank}")
        total += float(np.sum(block, dtype=np.float64))
        count += block.size
    return total / count


@dataclass
class RunConfig:
    n: int
    q: int
    dtype: ElementType = ElementType.FLOAT64
    seed: int = 0
    reps: int = 10
    mode: str = "threads"  # 'threads' | 'processes'
    hosts: HostMap | None = None  # None -> fresh loopback ports per run
    unskew: bool = False
    max_restarts: int = 3
    mesh_timeout: float = 30.0
    transfer_timeout: float = 60.0
    barrier_timeout: float = 60.0
    # test hooks
    inject: dict | None = None  # {'rank': r, 'attempts': [..]} -> worker raises
    corrupt: bool = False  # rank 0 perturbs its C block (exercise verify path)

    def __post_init__(self):
        if isinstance(self.dtype, str):  # accept the CLI spellings f64/f32/i32
            self.dtype = ElementType.parse(self.dtype)

    @property
    def p(self) -> int:
        return self.q * self.q


def validate_config(cfg: RunConfig):
    """Reject impossible configurations before any socket is opened."""
    if cfg.q < 1:
        raise ConfigError(f"grid side q must be >= 1, got {cfg.q}")
    if cfg.n < 1:
        raise ConfigError(f"matrix order n must be >= 1, got {cfg.n}")
    if cfg.n % cfg.q != 0:
        raise ConfigError(str(GridIncompatibility(cfg.n, cfg.q)))
    if cfg.reps < 1:
        raise ConfigError(f"repetition count must be >= 1, got {cfg.reps}")
    if cfg.mode not in ("threads", "processes"):
        raise ConfigError(f"unknown launch mode {cfg.mode!r}")
    if cfg.hosts is not None and len(cfg.hosts) != cfg.p:
        raise ConfigError(
            f"host map lists {len(cfg.hosts)} workers but grid {cfg.q}x{cfg.q} needs {cfg.p}"
        )


@dataclass
class RepResult:
    rep: int
    dot_ms: float
    checksum: float
    attempts: int
    workers: list[dict] = field(default_factory=list)


@dataclass
class RunReport:
    impl: str
    n: int
    q: int
    p: int
    dtype: str
    seed: int
    mode: str
    reps: list[RepResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "impl": self.impl,
            "n": self.n,
            "q": self.q,
            "p": self.p,
            "dtype": self.dtype,
            "seed": self.seed,
            "mode": self.mode,
            "reps": [
                {
                    "rep": r.rep,
                    "dot_ms": r.dot_ms,
                    "checksum": r.checksum,
                    "attempts": r.attempts,
                    "workers": [dict(w) for w in r.workers],
                }
                for r in self.reps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def stable_dict(self) -> dict:
        """to_dict with volatile (timing / OS-sampled) keys removed."""

        def strip(obj):
            if isinstance(obj, dict):
                return {k: strip(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
            if isinstance(obj, list):
                return [strip(v) for v in obj]
            return obj

        return strip(self.to_dict())

    def csv_rows(self) -> list[dict]:
        rows = []
        for r in self.reps:
            peak = max((w.get("peak_total_bytes", 0) for w in r.workers), default=0)
            rows.append(
                {
                    "impl": self.impl,
                    "n": self.n,
                    "q": self.q,
                    "p": self.p,
                    "dtype": self.dtype,
                    "rep": r.rep,
                    "dot_ms": f"{r.dot_ms:.3f}",
                    "peak_worker_bytes": peak,
                    "checksum": repr(r.checksum),
                    "attempts": r.attempts,
                }
            )
        return rows


def reports_to_csv(reports: list[RunReport]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for report in reports:
        for row in report.csv_rows():
            writer.writerow(row)
    return out.getvalue()


# --------------------------------------------------------------------------
# worker stage procedures (top-level so processes mode can pickle them)
# --------------------------------------------------------------------------


def _maybe_inject_failure(runtime: WorkerRuntime, payload: dict):
    inject = payload.get("inject")
    if inject and runtime.rank == inject["rank"] and runtime.ctx.attempt in inject["attempts"]:
        raise RuntimeError(
            f"injected failure at rank {runtime.rank}, attempt {runtime.ctx.attempt}"
        )


def _warm_kernel(dtype_code: str):
    """JIT the multiply kernel outside the timed window."""
    et = ElementType.parse(dtype_code)
    z = DenseTile.zeros(2, 2, et)
    local_dot_accumulate(z.same_shape_zeros(), z, z)


def _record_cpu(runtime: WorkerRuntime, t0: float):
    runtime.timings["cpu_s"] = time.thread_time() - t0


def cannon_stage(runtime: WorkerRuntime, payload: dict) -> dict:
    """One worker's share of a Cannon run: copies inputs, runs dot_product."""
    cpu0 = time.thread_time()
    _warm_kernel(payload["dtype"])
    _maybe_inject_failure(runtime, payload)
    a = DenseTile(np.array(payload["a"], copy=True))
    b = DenseTile(np.array(payload["b"], copy=True))
    c = dot_product(
        runtime.rank,
        runtime.ctx.num_partitions,
        runtime.ctx.host_map,
        a,
        b,
        runtime=runtime,
        unskew_inputs=payload.get("unskew", False),
    )
    if payload.get("corrupt") and runtime.rank == 0:
        c.array.flat[0] += 1
    out = {"c": c.array}
    if payload.get("unskew"):
        out["a"] = a.array
        out["b"] = b.array
    _record_cpu(runtime, cpu0)
    return out


def baseline_stage(runtime: WorkerRuntime, payload: dict) -> dict:
    """Naive distributed multiply: gather my whole A-row and B-column, then sum.

    Worker (i, j) ends up holding q A-blocks and q B-blocks at once — the
    O(n^2/sqrt(p)) footprint that Cannon's rotation avoids.
    """
    cpu0 = time.thread_time()
    _warm_kernel(payload["dtype"])
    _maybe_inject_failure(runtime, payload)
    p = runtime.ctx.num_partitions
    q = grid_side(p)
    a = DenseTile(np.array(payload["a"], copy=True))
    b = DenseTile(np.array(payload["b"], copy=True))
    meter = runtime.meter
    c = a.same_shape_zeros()
    meter.add_tile(a.nbytes)
    meter.add_tile(b.nbytes)
    meter.add_tile(c.nbytes)
    held = [a.nbytes, b.nbytes, c.nbytes]  # released together at the end

    if p == 1:
        runtime.barrier(SEQ_GATE)
        start = runtime.barrier(SEQ_START)
        local_dot_accumulate(c, a, b)
        end = runtime.barrier(SEQ_END)
        runtime.timings["dot_s"] = end.release_ts - start.release_ts
        for nb in held:
            meter.release_tile(nb)
        _record_cpu(runtime, cpu0)
        return {"c": c.array}

    topo = TorusTopology(q)
    i, j = topo.coords_of(runtime.rank)
    attempt = runtime.ctx.attempt
    neighbors = {topo.rank_of(i, j + d) for d in range(1, q)}
    neighbors |= {topo.rank_of(i + d, j) for d in range(1, q)}
    runtime.barrier(SEQ_GATE)
    endpoint = Endpoint(
        runtime.rank,
        runtime.ctx.host_map.address_of(runtime.rank),
        meter=meter,
        counters=runtime.counters,
        connect_timeout=runtime.mesh_timeout,
        transfer_timeout=runtime.transfer_timeout,
    )
    watch = runtime.abort_watch()
    try:
        endpoint.establish_mesh(runtime.ctx.host_map, neighbors, attempt, watch=watch)
        start = runtime.barrier(SEQ_START)

        a_row: list[np.ndarray | None] = [None] * q
        b_col: list[np.ndarray | None] = [None] * q
        a_row[j] = a.array
        b_col[i] = b.array
        for d in range(1, q):
            # A: my original block goes d places left, block from d places
            # right arrives — after q-1 rounds every row peer's block is here.
            incoming_a = np.empty_like(a.array)
            meter.add_tile(incoming_a.nbytes)
            held.append(incoming_a.nbytes)
            exchange(
                endpoint.channels[topo.rank_of(i, j - d)],
                endpoint.channels[topo.rank_of(i, j + d)],
                a.bytes_view(),
                memoryview(incoming_a).cast("B"),
                data_tag(attempt, d, PLANE_A),
                watch=watch,
            )
            a_row[(j + d) % q] = incoming_a

            incoming_b = np.empty_like(b.array)
            meter.add_tile(incoming_b.nbytes)
            held.append(incoming_b.nbytes)
            exchange(
                endpoint.channels[topo.rank_of(i - d, j)],
                endpoint.channels[topo.rank_of(i + d, j)],
                b.bytes_view(),
                memoryview(incoming_b).cast("B"),
                data_tag(attempt, d, PLANE_B),
                watch=watch,
            )
            b_col[(i + d) % q] = incoming_b

        for k in range(q):
            local_dot_accumulate(c, DenseTile(a_row[k]), DenseTile(b_col[k]))

        end = runtime.barrier(SEQ_END)
        runtime.timings["dot_s"] = end.release_ts - start.release_ts
    finally:
        endpoint.close()
        for nb in held:
            meter.release_tile(nb)
    _record_cpu(runtime, cpu0)
    return {"c": c.array}


# --------------------------------------------------------------------------
# run orchestration
# --------------------------------------------------------------------------


def _scatter(cfg: RunConfig) -> tuple[list[dict], DenseTile, DenseTile]:
    """Generate the global matrices and cut per-worker payloads."""
    a = generate_matrix(cfg.n, cfg.dtype, cfg.seed)
    b = generate_matrix(cfg.n, cfg.dtype, cfg.seed + 1)
    if _scatter_delay_s > 0.0:
        time.sleep(_scatter_delay_s)
    a_blocks = split_into_blocks(a, cfg.q)
    b_blocks = split_into_blocks(b, cfg.q)
    payloads = []
    for i in range(cfg.q):
        for j in range(cfg.q):
            payloads.append(
                {
                    "a": a_blocks[i][j].array,
                    "b": b_blocks[i][j].array,
                    "dtype": cfg.dtype.value,
                    "unskew": cfg.unskew,
                    "inject": cfg.inject,
                    "corrupt": cfg.corrupt,
                }
            )
    return payloads, a, b


def _gather_c(gang: GangRun, q: int) -> DenseTile:
    results = gang.results()
    blocks = [
        [DenseTile(results[i * q + j]["c"]) for j in range(q)] for i in range(q)
    ]
    return assemble_from_blocks(blocks)


def _worker_rows(gang: GangRun) -> list[dict]:
    rows = []
    for rank in sorted(gang.outcomes):
        o = gang.outcomes[rank]
        row = {"rank": rank}
        row.update(o.memory)
        row.update(o.counters)
        row.update({k: v for k, v in o.timings.items()})
        row["rss_kb"] = o.rss_kb
        rows.append(row)
    return rows


def _run(cfg: RunConfig, stage, impl: str) -> RunReport:
    validate_config(cfg)
    hosts = cfg.hosts if cfg.hosts is not None else default_host_map(cfg.p)
    payloads, _, _ = _scatter(cfg)
    report = RunReport(
        impl=impl, n=cfg.n, q=cfg.q, p=cfg.p,
        dtype=cfg.dtype.value, seed=cfg.seed, mode=cfg.mode,
    )
    coordinator = (
        BarrierCoordinator(cfg.p, timeout=cfg.barrier_timeout) if cfg.p > 1 else None
    )
    try:
        for rep in range(cfg.reps):
            gang = run_gang(
                stage,
                cfg.p,
                payloads,
                host_map=hosts,
                coordinator=coordinator,
                mode=cfg.mode,
                max_restarts=cfg.max_restarts,
                mesh_timeout=cfg.mesh_timeout,
                transfer_timeout=cfg.transfer_timeout,
                barrier_timeout=cfg.barrier_timeout,
            )
            blocks = {r: res["c"] for r, res in gang.results().items()}
            dot_s = max(o.timings.get("dot_s", 0.0) for o in gang.outcomes.values())
            report.reps.append(
                RepResult(
                    rep=rep,
                    dot_ms=dot_s * 1e3,
                    checksum=reduce_avg(blocks),
                    attempts=gang.attempt,
                    workers=_worker_rows(gang),
                )
            )
    finally:
        if coordinator is not None:
            coordinator.close()
    return report


def run_distributed(cfg: RunConfig) -> RunReport:
    """Cannon's algorithm over the full gang; see module docstring."""
    return _run(cfg, cannon_stage, "cannon")


def run_baseline_allgather(cfg: RunConfig) -> RunReport:
    """Row/column all-gather multiply — the memory-hungry comparison point."""
    return _run(cfg, baseline_stage, "baseline")


def gathered_product(cfg: RunConfig) -> DenseTile:
    """Single-rep Cannon run returning the assembled C (verification helper)."""
    one = RunConfig(**{**cfg.__dict__, "reps": 1})
    validate_config(one)
    hosts = one.hosts if one.hosts is not None else default_host_map(one.p)
    payloads, _, _ = _scatter(one)
    coordinator = (
        BarrierCoordinator(one.p, timeout=one.barrier_timeout) if one.p > 1 else None
    )
    try:
        gang = run_gang(
            cannon_stage,
            one.p,
            payloads,
            host_map=hosts,
            coordinator=coordinator,
            mode=one.mode,
            max_restarts=one.max_restarts,
            mesh_timeout=one.mesh_timeout,
            transfer_timeout=one.transfer_timeout,
            barrier_timeout=one.barrier_timeout,
        )
    finally:
        if coordinator is not None:
            coordinator.close()
    return _gather_c(gang, one.q)
