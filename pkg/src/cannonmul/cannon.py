"""Per-worker Cannon's algorithm: skew, multiply-accumulate-shift loop, entry point.

Worker (i, j) on the q×q torus first rotates its A-block left by i and its
B-block up by j (the skew), so it then holds A(i, i+j) and B(i+j, j).  Each of
the q rounds multiplies the current pair into the local C-block and rotates
A left / B up by one — after the final round the rotation is skipped, since it
only restores the inputs and never changes C.  Callers that need A and B back
in their original layout pass ``unskew_inputs=True``.

Every transfer tag binds (attempt, step, plane): skew is step 0, the rotation
after round k is step k+1, and the optional unskew is step q.  A slow worker's
round-k frame can therefore never be consumed as round k+1 data.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .barrier import WorkerContext, WorkerRuntime
from .errors import ContractViolation
from .tile import DenseTile, ElementType, local_dot_accumulate
from .topology import ShiftDim, TorusTopology, grid_side
from .transport import Endpoint, HostMap, progress, sendrecv_replace
from .wire import PLANE_A, PLANE_B, data_tag

SKEW_STEP = 0
# rotation after round k uses step k+1; the optional unskew uses step q

# barrier sequence numbers inside one dot_product call: the gate fences the
# gang before any socket work (so an early failure aborts everyone at once
# instead of stalling peers until the mesh timeout); only start->end is timed
SEQ_GATE, SEQ_START, SEQ_END = 0, 1, 2


@dataclass(frozen=True)
class CannonPlan:
    """Static per-worker schedule: grid placement, tile geometry, neighbors."""

    q: int
    rank: int
    tile_n: int
    dtype: ElementType

    def __post_init__(self):
        if self.q < 1:
            raise ContractViolation(f"grid side must be >= 1, got {self.q}")
        if not 0 <= self.rank < self.q * self.q:
            raise ContractViolation(
                f"rank {self.rank} out of range for a {self.q}x{self.q} grid"
            )
        if self.tile_n < 1:
            raise ContractViolation(f"tile side must be >= 1, got {self.tile_n}")

    @property
    def topology(self) -> TorusTopology:
        return TorusTopology(self.q)

    @property
    def coords(self) -> tuple[int, int]:
        return self.topology.coords_of(self.rank)

    def neighbor_ranks(self) -> set[int]:
        """Every rank this worker exchanges tiles with (skew, steps, unskew)."""
        topo = self.topology
        i, j = self.coords
        peers: set[int] = set()
        for dim, displacement in (
            (ShiftDim.COL, 1),  # A rotates left by 1 each round
            (ShiftDim.ROW, 1),  # B rotates up by 1 each round
            (ShiftDim.COL, i),  # A skew/unskew magnitude
            (ShiftDim.ROW, j),  # B skew/unskew magnitude
        ):
            source, dest = topo.shift_partners(self.rank, dim, displacement)
            peers.add(source)
            peers.add(dest)
        peers.discard(self.rank)  # displacement ≡ 0 entries
        return peers


def _check_pair(plan: CannonPlan, a: DenseTile, b: DenseTile):
    for name, t in (("a", a), ("b", b)):
        if t.rows != plan.tile_n or t.cols != plan.tile_n:
            raise ContractViolation(
                f"tile {name} is {t.rows}x{t.cols}, plan expects "
                f"{plan.tile_n}x{plan.tile_n}"
            )
    if a.dtype is not b.dtype:
        raise ContractViolation(
            f"mixed element types: a is {a.dtype.value}, b is {b.dtype.value}"
        )
    if a.dtype is not plan.dtype:
        raise ContractViolation(
            f"tiles are {a.dtype.value}, plan expects {plan.dtype.value}"
        )


def _rotate(
    plan: CannonPlan,
    endpoint: Endpoint,
    tile: DenseTile,
    dim: ShiftDim,
    displacement: int,
    tag: int,
    *,
    timeout: float | None,
    watch,
):
    source, dest = plan.topology.shift_partners(plan.rank, dim, displacement)
    if source == plan.rank:  # displacement ≡ 0 mod q: nothing moves
        return
    sendrecv_replace(
        endpoint.channels[dest],
        endpoint.channels[source],
        tile,
        tag,
        timeout=timeout,
        watch=watch,
    )


def skew(
    plan: CannonPlan,
    endpoint: Endpoint,
    a: DenseTile,
    b: DenseTile,
    *,
    attempt: int = 0,
    timeout: float | None = None,
    watch=None,
):
    """Initial alignment: rotate A left by row index, B up by column index."""
    _check_pair(plan, a, b)
    i, j = plan.coords
    _rotate(plan, endpoint, a, ShiftDim.COL, i,
            data_tag(attempt, SKEW_STEP, PLANE_A), timeout=timeout, watch=watch)
    _rotate(plan, endpoint, b, ShiftDim.ROW, j,
            data_tag(attempt, SKEW_STEP, PLANE_B), timeout=timeout, watch=watch)


def unskew(
    plan: CannonPlan,
    endpoint: Endpoint,
    a: DenseTile,
    b: DenseTile,
    *,
    attempt: int = 0,
    timeout: float | None = None,
    watch=None,
):
    """Exact inverse of ``skew``; valid only straight after it.

    After the multiply loop the blocks are *not* at the skewed alignment
    (the final rotation is skipped) — use ``restore_inputs`` there.
    """
    _check_pair(plan, a, b)
    i, j = plan.coords
    _rotate(plan, endpoint, a, ShiftDim.COL, -i,
            data_tag(attempt, plan.q, PLANE_A), timeout=timeout, watch=watch)
    _rotate(plan, endpoint, b, ShiftDim.ROW, -j,
            data_tag(attempt, plan.q, PLANE_B), timeout=timeout, watch=watch)


def restore_inputs(
    plan: CannonPlan,
    endpoint: Endpoint,
    a: DenseTile,
    b: DenseTile,
    *,
    attempt: int = 0,
    timeout: float | None = None,
    watch=None,
):
    """Return A and B to their pre-skew owners after the full round loop.

    The loop leaves each block one unit rotation short of the skewed
    alignment (skew by i plus q-1 unit shifts), so the single homeward
    displacement is 1-i for A and 1-j for B rather than -i/-j.
    """
    _check_pair(plan, a, b)
    i, j = plan.coords
    _rotate(plan, endpoint, a, ShiftDim.COL, 1 - i,
            data_tag(attempt, plan.q, PLANE_A), timeout=timeout, watch=watch)
    _rotate(plan, endpoint, b, ShiftDim.ROW, 1 - j,
            data_tag(attempt, plan.q, PLANE_B), timeout=timeout, watch=watch)


def _shift_unit_both(
    plan: CannonPlan,
    endpoint: Endpoint,
    a: DenseTile,
    b: DenseTile,
    step: int,
    *,
    attempt: int,
    timeout: float | None,
    watch,
):
    """Rotate A left by one and B up by one, both planes in one progress loop."""
    topo = plan.topology
    a_source, a_dest = topo.shift_partners(plan.rank, ShiftDim.COL, 1)
    b_source, b_dest = topo.shift_partners(plan.rank, ShiftDim.ROW, 1)
    a_tag = data_tag(attempt, step, PLANE_A)
    b_tag = data_tag(attempt, step, PLANE_B)
    a_view = a.bytes_view()
    b_view = b.bytes_view()
    send_a = endpoint.channels[a_dest].begin_send(a_tag, a_view)
    recv_a = endpoint.channels[a_source].begin_recv(
        a_tag, a_view, guard=lambda: send_a.staged
    )
    send_b = endpoint.channels[b_dest].begin_send(b_tag, b_view)
    recv_b = endpoint.channels[b_source].begin_recv(
        b_tag, b_view, guard=lambda: send_b.staged
    )
    resolved = timeout if timeout is not None else endpoint.transfer_timeout
    progress([send_a, recv_a, send_b, recv_b], timeout=resolved, watch=watch)


def cannon_step(
    plan: CannonPlan,
    endpoint: Endpoint | None,
    c: DenseTile,
    a: DenseTile,
    b: DenseTile,
    k: int,
    *,
    attempt: int = 0,
    timeout: float | None = None,
    watch=None,
):
    """Round k: accumulate the local product, then rotate (skipped after the last)."""
    if not 0 <= k < plan.q:
        raise ContractViolation(f"step index {k} out of range for q={plan.q}")
    _check_pair(plan, a, b)
    local_dot_accumulate(c, a, b)
    if k == plan.q - 1:
        return  # final rotation only restores inputs; see unskew
    _shift_unit_both(
        plan, endpoint, a, b, k + 1, attempt=attempt, timeout=timeout, watch=watch
    )


def dot_product(
    partition_id: int,
    num_partitions: int,
    host_map: HostMap,
    matrix_a: DenseTile,
    matrix_b: DenseTile,
    *,
    runtime: WorkerRuntime | None = None,
    unskew_inputs: bool = False,
) -> DenseTile:
    """This worker's block of C = A·B; all workers must call collectively.

    ``matrix_a`` and ``matrix_b`` are rotated in place (pass copies, or use
    ``unskew_inputs=True``, if the originals are still needed).  Only the
    span between the enclosing barriers lands in ``runtime.timings['dot_s']``;
    mesh establishment and teardown are excluded.
    """
    q = grid_side(num_partitions)
    if not isinstance(matrix_a, DenseTile):
        matrix_a = DenseTile.from_array(matrix_a)
    if not isinstance(matrix_b, DenseTile):
        matrix_b = DenseTile.from_array(matrix_b)
    if matrix_a.rows != matrix_a.cols:
        raise ContractViolation(f"block a must be square, got {matrix_a.array.shape}")
    if matrix_a.array.shape != matrix_b.array.shape:
        raise ContractViolation(
            f"block shapes differ: {matrix_a.array.shape} vs {matrix_b.array.shape}"
        )
    plan = CannonPlan(
        q=q, rank=partition_id, tile_n=matrix_a.rows, dtype=matrix_a.dtype
    )
    if runtime is None:
        if num_partitions > 1:
            raise ContractViolation(
                "multi-worker dot_product needs a gang runtime (see driver.run_distributed)"
            )
        runtime = WorkerRuntime(
            WorkerContext(partition_id, num_partitions, host_map), None
        )
    meter = runtime.meter
    c = matrix_a.same_shape_zeros()
    meter.add_tile(matrix_a.nbytes)
    meter.add_tile(matrix_b.nbytes)
    meter.add_tile(c.nbytes)

    if num_partitions == 1:
        runtime.barrier(SEQ_GATE)
        start = runtime.barrier(SEQ_START)
        cannon_step(plan, None, c, matrix_a, matrix_b, 0)
        end = runtime.barrier(SEQ_END)
        runtime.timings["dot_s"] = end.release_ts - start.release_ts
        meter.release_tile(matrix_a.nbytes)
        meter.release_tile(matrix_b.nbytes)
        meter.release_tile(c.nbytes)
        return c

    runtime.barrier(SEQ_GATE)
    endpoint = Endpoint(
        partition_id,
        host_map.address_of(partition_id),
        meter=meter,
        counters=runtime.counters,
        connect_timeout=runtime.mesh_timeout,
        transfer_timeout=runtime.transfer_timeout,
    )
    watch = runtime.abort_watch()
    try:
        t_mesh = time.monotonic()
        endpoint.establish_mesh(
            host_map, plan.neighbor_ranks(), runtime.ctx.attempt, watch=watch
        )
        runtime.timings["mesh_s"] = time.monotonic() - t_mesh

        start = runtime.barrier(SEQ_START)
        skew(plan, endpoint, matrix_a, matrix_b,
             attempt=runtime.ctx.attempt, watch=watch)
        for k in range(q):
            cannon_step(plan, endpoint, c, matrix_a, matrix_b, k,
                        attempt=runtime.ctx.attempt, watch=watch)
        if unskew_inputs:
            restore_inputs(plan, endpoint, matrix_a, matrix_b,
                           attempt=runtime.ctx.attempt, watch=watch)
        end = runtime.barrier(SEQ_END)
        runtime.timings["dot_s"] = end.release_ts - start.release_ts
    finally:
        endpoint.close()
        meter.release_tile(matrix_a.nbytes)
        meter.release_tile(matrix_b.nbytes)
        meter.release_tile(c.nbytes)
    return c
