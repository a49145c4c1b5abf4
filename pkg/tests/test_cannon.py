"""Cannon plan geometry, skew placement, and end-to-end product correctness."""

import threading

import numpy as np
import pytest

from cannonmul.cannon import CannonPlan, cannon_step, dot_product, skew
from cannonmul.driver import (
    RunConfig,
    default_host_map,
    gathered_product,
    generate_matrix,
    run_distributed,
)
from cannonmul.errors import ContractViolation
from cannonmul.memtrack import MemoryMeter
from cannonmul.tile import DenseTile, ElementType, oracle_multiply, split_into_blocks
from cannonmul.transport import Endpoint, HostMap

F64 = ElementType.FLOAT64
F32 = ElementType.FLOAT32
I32 = ElementType.INT32


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
    assert not any(t.is_alive() for t in threads), "worker thread hung"
    for e in errors:
        if e is not None:
            raise e


# -- plan geometry -------------------------------------------------------------


def test_plan_rejects_bad_parameters():
    with pytest.raises(ContractViolation):
        CannonPlan(q=0, rank=0, tile_n=4, dtype=F64)
    with pytest.raises(ContractViolation):
        CannonPlan(q=2, rank=4, tile_n=4, dtype=F64)
    with pytest.raises(ContractViolation):
        CannonPlan(q=2, rank=0, tile_n=0, dtype=F64)


def test_neighbors_single_worker_is_empty():
    assert CannonPlan(q=1, rank=0, tile_n=4, dtype=F64).neighbor_ranks() == set()


@pytest.mark.parametrize(
    "q,rank,expected",
    [
        # hand-derived on the row-major torus: rank = i*q + j
        (2, 0, {1, 2}),
        (2, 3, {1, 2}),
        (3, 4, {1, 3, 5, 7}),  # center of 3x3: four unit neighbors only
        (3, 0, {1, 2, 3, 6}),
        (4, 5, {1, 4, 6, 9}),
        # (2,3): unit partners 8/10 and 7/15, skew-by-2 along the row is
        # the same rank both ways (half ring), skew-by-3 folds onto 7/15
        (4, 11, {7, 8, 9, 10, 15}),
    ],
)
def test_neighbor_ranks_hand_checked(q, rank, expected):
    plan = CannonPlan(q=q, rank=rank, tile_n=4, dtype=F64)
    assert plan.neighbor_ranks() == expected


def test_neighbors_stay_on_own_row_and_column():
    for q in (2, 3, 4, 5):
        for rank in range(q * q):
            plan = CannonPlan(q=q, rank=rank, tile_n=2, dtype=F64)
            i, j = plan.coords
            for peer in plan.neighbor_ranks():
                pi, pj = plan.topology.coords_of(peer)
                assert pi == i or pj == j


def test_cannon_step_rejects_mixed_dtypes():
    plan = CannonPlan(q=1, rank=0, tile_n=2, dtype=F64)
    c = DenseTile.zeros(2, 2, F64)
    a = DenseTile.zeros(2, 2, F64)
    b = DenseTile.zeros(2, 2, F32)
    with pytest.raises(ContractViolation, match="mixed element types"):
        cannon_step(plan, None, c, a, b, 0)


def test_cannon_step_rejects_wrong_plan_dtype():
    plan = CannonPlan(q=1, rank=0, tile_n=2, dtype=F64)
    t = DenseTile.zeros(2, 2, F32)
    with pytest.raises(ContractViolation, match="plan expects"):
        cannon_step(plan, None, t.same_shape_zeros(), t, t, 0)


def test_cannon_step_rejects_out_of_range_round():
    plan = CannonPlan(q=2, rank=0, tile_n=2, dtype=F64)
    t = DenseTile.zeros(2, 2, F64)
    with pytest.raises(ContractViolation, match="step index"):
        cannon_step(plan, None, t.same_shape_zeros(), t, t, 2)


# -- skew placement ------------------------------------------------------------


def test_skew_moves_blocks_where_the_schedule_needs_them():
    """After skew, worker (i,j) holds A(i, i+j) and B(i+j, j) — checked by label."""
    q = 3
    p = q * q
    endpoints = [Endpoint(r, ("127.0.0.1", 0), meter=MemoryMeter()) for r in range(p)]
    hosts = HostMap([f"127.0.0.1:{e.bound_address[1]}" for e in endpoints])
    tiles = {}
    for r in range(p):
        # label every element with the owner's rank so provenance survives moves
        tiles[r] = (
            DenseTile(np.full((2, 2), float(r))),
            DenseTile(np.full((2, 2), float(100 + r))),
        )

    def worker(r):
        plan = CannonPlan(q=q, rank=r, tile_n=2, dtype=F64)
        endpoints[r].establish_mesh(hosts, plan.neighbor_ranks(), 0, timeout=20)
        a, b = tiles[r]
        skew(plan, endpoints[r], a, b, timeout=20)

    try:
        run_all(*[lambda r=r: worker(r) for r in range(p)])
        for r in range(p):
            i, j = divmod(r, q)
            a, b = tiles[r]
            want_a = i * q + (i + j) % q          # block A(i, (i+j) mod q)
            want_b = 100 + ((i + j) % q) * q + j  # block B((i+j) mod q, j)
            assert a.array.flat[0] == want_a, f"rank {r} A-block misplaced"
            assert b.array.flat[0] == want_b, f"rank {r} B-block misplaced"
    finally:
        for e in endpoints:
            e.close()


def test_unskew_is_the_exact_inverse_of_skew():
    from cannonmul.cannon import unskew

    q = 3
    p = q * q
    endpoints = [Endpoint(r, ("127.0.0.1", 0), meter=MemoryMeter()) for r in range(p)]
    hosts = HostMap([f"127.0.0.1:{e.bound_address[1]}" for e in endpoints])
    tiles = {
        r: (DenseTile(np.full((2, 2), float(r))), DenseTile(np.full((2, 2), float(100 + r))))
        for r in range(p)
    }

    def worker(r):
        plan = CannonPlan(q=q, rank=r, tile_n=2, dtype=F64)
        endpoints[r].establish_mesh(hosts, plan.neighbor_ranks(), 0, timeout=20)
        a, b = tiles[r]
        skew(plan, endpoints[r], a, b, timeout=20)
        unskew(plan, endpoints[r], a, b, timeout=20)

    try:
        run_all(*[lambda r=r: worker(r) for r in range(p)])
        for r in range(p):
            a, b = tiles[r]
            assert a.array.flat[0] == r
            assert b.array.flat[0] == 100 + r
    finally:
        for e in endpoints:
            e.close()


# -- single worker -------------------------------------------------------------


def test_single_worker_dot_product_equals_oracle():
    a = generate_matrix(8, F64, seed=3)
    b = generate_matrix(8, F64, seed=4)
    c = dot_product(0, 1, HostMap(["127.0.0.1:1"]), a.copy(), b.copy())
    np.testing.assert_array_equal(c.array, oracle_multiply(a, b).array)


def test_multi_worker_requires_runtime():
    a = DenseTile.zeros(4, 4, F64)
    with pytest.raises(ContractViolation, match="gang runtime"):
        dot_product(0, 4, default_host_map(4), a, a.copy())


def test_dot_product_rejects_nonsquare_and_mismatched_blocks():
    hosts = HostMap(["127.0.0.1:1"])
    rect = DenseTile(np.zeros((2, 3)))
    with pytest.raises(ContractViolation, match="square"):
        dot_product(0, 1, hosts, rect, rect)
    with pytest.raises(ContractViolation, match="shapes differ"):
        dot_product(0, 1, hosts, DenseTile.zeros(2, 2, F64), DenseTile.zeros(3, 3, F64))


# -- full pipeline vs oracle ---------------------------------------------------


def _oracle(n, dtype, seed=0):
    a = generate_matrix(n, dtype, seed)
    b = generate_matrix(n, dtype, seed + 1)
    return oracle_multiply(a, b)


def test_two_by_two_hand_example():
    # A = [[1,2],[3,4]], B = [[5,6],[7,8]] on a 2x2 grid of 1x1 tiles
    from cannonmul.barrier import BarrierCoordinator, run_gang
    from cannonmul.driver import _gather_c, cannon_stage

    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    payloads = [
        {"a": a[i : i + 1, j : j + 1], "b": b[i : i + 1, j : j + 1], "dtype": "f64"}
        for i in range(2)
        for j in range(2)
    ]
    coord = BarrierCoordinator(4, timeout=20)
    try:
        gang = run_gang(
            cannon_stage, 4, payloads,
            host_map=default_host_map(4), coordinator=coord, mode="threads",
        )
    finally:
        coord.close()
    np.testing.assert_array_equal(
        _gather_c(gang, 2).array, np.array([[19.0, 22.0], [43.0, 50.0]])
    )


@pytest.mark.parametrize("n,q", [(6, 2), (12, 2), (12, 3), (9, 3)])
def test_distributed_product_matches_oracle_f64(n, q):
    got = gathered_product(RunConfig(n=n, q=q, dtype=F64, seed=7))
    want = _oracle(n, F64, seed=7)
    err = np.abs(got.array - want.array)
    bound = 1e-12 * n * np.maximum(np.abs(want.array), 1.0)
    assert (err <= bound).all()


def test_distributed_product_exact_int32():
    got = gathered_product(RunConfig(n=8, q=2, dtype=I32, seed=5))
    np.testing.assert_array_equal(got.array, _oracle(8, I32, seed=5).array)
    assert got.array.dtype == np.int32


def test_distributed_product_float32_within_tolerance():
    n = 16
    got = gathered_product(RunConfig(n=n, q=2, dtype=F32, seed=9))
    want = _oracle(n, F32, seed=9)
    rel = np.abs(got.array - want.array) / np.maximum(np.abs(want.array), 1e-30)
    assert rel.max() <= 1.2e-7 * n


def test_grid_choice_does_not_change_the_answer():
    n = 12
    results = {
        q: gathered_product(RunConfig(n=n, q=q, dtype=I32, seed=2)).array
        for q in (1, 2, 3)
    }
    np.testing.assert_array_equal(results[1], results[2])
    np.testing.assert_array_equal(results[1], results[3])


def test_same_config_is_deterministic():
    cfg = RunConfig(n=8, q=2, dtype=F64, seed=11)
    first = gathered_product(cfg).array
    second = gathered_product(cfg).array
    np.testing.assert_array_equal(first, second)


def test_unskew_restores_input_blocks():
    n, q = 9, 3
    from cannonmul.barrier import BarrierCoordinator, run_gang
    from cannonmul.driver import _scatter, cannon_stage

    cfg = RunConfig(n=n, q=q, dtype=F64, seed=1, unskew=True)
    payloads, a, b = _scatter(cfg)
    a_blocks = split_into_blocks(a, q)
    b_blocks = split_into_blocks(b, q)
    coord = BarrierCoordinator(cfg.p, timeout=20)
    try:
        gang = run_gang(
            cannon_stage, cfg.p, payloads,
            host_map=default_host_map(cfg.p), coordinator=coord, mode="threads",
        )
    finally:
        coord.close()
    for r, res in gang.results().items():
        i, j = divmod(r, q)
        np.testing.assert_array_equal(res["a"], a_blocks[i][j].array)
        np.testing.assert_array_equal(res["b"], b_blocks[i][j].array)


# -- transfer accounting -------------------------------------------------------


def test_transfer_counters_match_the_schedule():
    """Each plane moves q-1 unit rotations plus one skew when the offset is nonzero."""
    n, q = 6, 3
    report = run_distributed(RunConfig(n=n, q=q, dtype=F64, seed=0, reps=1))
    tile_bytes = (n // q) * (n // q) * 8
    for row in report.reps[0].workers:
        i, j = divmod(row["rank"], q)
        want_a = (q - 1) + (1 if i else 0)
        want_b = (q - 1) + (1 if j else 0)
        assert row["ops_a"] == want_a, f"rank {row['rank']}"
        assert row["ops_b"] == want_b, f"rank {row['rank']}"
        assert row["bytes_a"] == want_a * tile_bytes
        assert row["bytes_b"] == want_b * tile_bytes
        assert row["bytes_received"] == (want_a + want_b) * tile_bytes


def test_cannon_memory_is_three_tiles_regardless_of_grid():
    for n, q in ((8, 2), (12, 3)):
        report = run_distributed(RunConfig(n=n, q=q, dtype=F64, seed=0, reps=1))
        tile_bytes = (n // q) * (n // q) * 8
        for row in report.reps[0].workers:
            assert row["peak_tile_bytes"] == 3 * tile_bytes
