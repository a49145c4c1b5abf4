"""Watch the block alignment schedule move data around a 3x3 torus.

Every worker's A and B blocks are labeled with their home rank, so after each
phase we can print exactly which block ended up where.  The initial alignment
rotates row i of the A-plane left by i and column j of the B-plane up by j;
each round after that is a single left/up rotation.

Run as: python3 demos/02_shift_schedule.py
"""

import threading

import numpy as np

from cannonmul.cannon import CannonPlan, cannon_step, skew
from cannonmul.tile import DenseTile, ElementType
from cannonmul.transport import Endpoint, HostMap

q = 3
p = q * q

endpoints = [Endpoint(r, ("127.0.0.1", 0)) for r in range(p)]
hosts = HostMap([f"127.0.0.1:{e.bound_address[1]}" for e in endpoints])
plans = [CannonPlan(q=q, rank=r, tile_n=1, dtype=ElementType.FLOAT64) for r in range(p)]

# 1x1 tiles whose single element names the block: A-blocks 0..8, B-blocks 100..108
tiles = {
    r: (DenseTile(np.full((1, 1), float(r))), DenseTile(np.full((1, 1), 100.0 + r)))
    for r in range(p)
}
sums = {r: tiles[r][0].same_shape_zeros() for r in range(p)}


def show(phase):
    print(phase)
    for i in range(q):
        row = []
        for j in range(q):
            a, b = tiles[i * q + j]
            row.append(f"A{int(a.array.flat[0])}*B{int(b.array.flat[0]) - 100}")
        print("   " + "  ".join(row))


def on_every_worker(fn):
    threads = [threading.Thread(target=fn, args=(r,)) for r in range(p)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


on_every_worker(lambda r: endpoints[r].establish_mesh(hosts, plans[r].neighbor_ranks(), 0, timeout=20))

try:
    show("owned blocks (worker (i,j) holds A(i,j) and B(i,j)):")
    on_every_worker(lambda r: skew(plans[r], endpoints[r], *tiles[r], timeout=20))
    show("after the initial alignment (worker (i,j) holds A(i,i+j) and B(i+j,j)):")
    for k in range(q):
        on_every_worker(
            lambda r, k=k: cannon_step(
                plans[r], endpoints[r], sums[r], *tiles[r], k, timeout=20
            )
        )
        label = f"round {k}: multiplied, then rotated A left / B up" if k < q - 1 \
            else f"round {k}: multiplied (last round skips the rotation)"
        show(label + ":")
finally:
    for e in endpoints:
        e.close()

print("each worker multiplied one (A, B) pair per round; 3 rounds covered all")
print("the k-terms of its dot product without ever holding more than 3 tiles.")
