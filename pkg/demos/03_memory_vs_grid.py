"""Fixed tile, growing grid: per-worker memory of the two implementations.

Every run below keeps the per-worker tile at 64x64 float64 and grows the grid,
so total work per worker is constant.  The rotation-based engine holds three
tiles no matter the grid; the all-gather baseline must buffer a whole row and
column of blocks, so its peak grows with the grid side.

Run as: python3 demos/03_memory_vs_grid.py
"""

from cannonmul import ElementType, RunConfig
from cannonmul.analysis import fit_and_compare
from cannonmul.driver import run_baseline_allgather, run_distributed

tile = 64
reports = []
for q in (1, 2, 3):
    cfg = RunConfig(n=tile * q, q=q, dtype=ElementType.FLOAT64, seed=1, reps=1,
                    mode="threads")
    reports.append(run_distributed(cfg))
    reports.append(run_baseline_allgather(cfg))

table = fit_and_compare(reports)
print(f"{'impl':<10}{'q':>3}{'p':>4}{'n':>6}{'peak tile bytes':>18}")
for row in table.rows:
    print(f"{row['impl']:<10}{row['q']:>3}{row['p']:>4}{row['n']:>6}"
          f"{row['peak_tile_bytes']:>18,}")

tile_bytes = tile * tile * 8
for impl, s in table.summary.items():
    peaks = [b / tile_bytes for b in s["peak_tile_bytes"]]
    print(f"\n{impl}: peak = {', '.join(f'{x:.0f}' for x in peaks)} tiles "
          f"across q = {s['grid_sides']}")
    print(f"  spread {s['spread_fraction']:.1%}, "
          f"slope {s['slope_bytes_per_q']:,.0f} bytes per grid step, "
          f"{'flat' if s['flat_within_limit'] else 'growing'}")
