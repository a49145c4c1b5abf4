"""Scalability model as executable formulas, plus model-vs-measurement tables.

The model quantities are unit-free (asymptotic constants taken as 1): W = n²
work units, T₁ = n³ flop units, D = n²/√p element units, n_min = ⌈c·√p⌉, and
per-processor memory c² at the iso-efficient scaling point.  Only ratios and
trends are ever compared against measured runs — never absolute values.

``fit_and_compare`` turns a pile of RunReports into the per-worker memory
table: Cannon's footprint should sit flat as the grid grows at fixed tile
size, while the all-gather baseline's should climb.  Judgments are made on
instrumented tile bytes; fixed-size channel buffers are reported alongside
but excluded, since their count is a property of the mesh, not of the data
the algorithm holds live.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from fractions import Fraction

from .errors import AnalysisError
from .topology import grid_side

FLATNESS_LIMIT = 0.10  # max allowed relative spread of Cannon per-worker memory


def problem_size(n: int) -> int:
    """W(n) = n² work units (elements of the output)."""
    if n < 1:
        raise AnalysisError(f"matrix order must be >= 1, got {n}")
    return n * n


def sequential_time_units(n: int) -> int:
    """T₁(n) = n³ multiply-add units on one processor."""
    if n < 1:
        raise AnalysisError(f"matrix order must be >= 1, got {n}")
    return n * n * n


def communication_volume(n: int, p: int) -> Fraction:
    """D(n, p) = n²/√p element units moved per processor; exact rational."""
    if n < 1:
        raise AnalysisError(f"matrix order must be >= 1, got {n}")
    q = grid_side(p)  # rejects non-square p
    return Fraction(n * n, q)


def min_scaling_order(p: int, c) -> int:
    """Smallest integer matrix order n with n >= c·√p (ceiling rule)."""
    if p < 1:
        raise AnalysisError(f"processor count must be >= 1, got {p}")
    root = math.isqrt(p)
    if root * root == p and isinstance(c, int):
        return c * root  # exact integer path
    return math.ceil(c * math.sqrt(p))


def memory_per_processor_at_isoefficiency(c):
    """Per-processor memory factor c² at the scaling limit — no p anywhere."""
    return c * c


@dataclass(frozen=True)
class ScalingModel:
    """Bundle of the model formulas evaluated at one (n, p, c) point."""

    n: int
    p: int
    c: float = 1.0

    def problem_size(self) -> int:
        return problem_size(self.n)

    def sequential_time_units(self) -> int:
        return sequential_time_units(self.n)

    def communication_volume(self) -> Fraction:
        return communication_volume(self.n, self.p)

    def min_scaling_order(self) -> int:
        return min_scaling_order(self.p, self.c)

    def memory_per_processor(self):
        return memory_per_processor_at_isoefficiency(self.c)


# --------------------------------------------------------------------------
# measured-report comparison
# --------------------------------------------------------------------------

_TABLE_COLUMNS = [
    "impl", "q", "p", "n", "tile_n", "peak_tile_bytes", "peak_total_bytes",
]


@dataclass
class ComparisonTable:
    rows: list[dict]
    summary: dict

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=_TABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        return out.getvalue()

    def to_json_series(self) -> dict:
        """Plot-ready: one x/y series per implementation."""
        series: dict[str, dict] = {}
        for row in sorted(self.rows, key=lambda r: (r["impl"], r["q"])):
            s = series.setdefault(
                row["impl"], {"q": [], "peak_tile_bytes": [], "peak_total_bytes": []}
            )
            s["q"].append(row["q"])
            s["peak_tile_bytes"].append(row["peak_tile_bytes"])
            s["peak_total_bytes"].append(row["peak_total_bytes"])
        return {"series": series, "summary": self.summary}


def _slope(xs: list[float], ys: list[float]) -> float:
    """Least-squares slope of y over x."""
    mx = sum(xs) / len(xs)
    my = sum(ys) / len(ys)
    den = sum((x - mx) ** 2 for x in xs)
    if den == 0:
        raise AnalysisError("cannot fit a slope to a single grid size")
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / den


def fit_and_compare(reports: list) -> ComparisonTable:
    """Per-worker peak memory vs grid side, by implementation.

    Requires every report of an implementation to share one per-worker tile
    size, with at least two distinct grid sides; the interesting comparison
    holds total work per worker constant while the gang grows.
    """
    if not reports:
        raise AnalysisError("no reports to analyze")
    by_impl: dict[str, dict[int, list]] = {}
    tile_sizes: dict[str, set[int]] = {}
    for report in reports:
        tile_n = report.n // report.q
        tile_sizes.setdefault(report.impl, set()).add(tile_n)
        by_impl.setdefault(report.impl, {}).setdefault(report.q, []).append(report)
    for impl, sizes in tile_sizes.items():
        if len(sizes) != 1:
            raise AnalysisError(
                f"{impl} reports mix per-worker tile sizes {sorted(sizes)}; "
                f"fix the tile size and vary only the grid"
            )
    rows = []
    summary: dict[str, dict] = {}
    for impl, by_q in sorted(by_impl.items()):
        if len(by_q) < 2:
            raise AnalysisError(
                f"{impl} reports cover {len(by_q)} grid size(s); need at least 2"
            )
        points: list[tuple[int, float, float]] = []
        for q, group in sorted(by_q.items()):
            tile_peaks = []
            total_peaks = []
            for report in group:
                for rep in report.reps:
                    tile_peaks.append(
                        max(w.get("peak_tile_bytes", 0) for w in rep.workers)
                    )
                    total_peaks.append(
                        max(w.get("peak_total_bytes", 0) for w in rep.workers)
                    )
            tile_peak = statistics.median(tile_peaks)
            total_peak = statistics.median(total_peaks)
            points.append((q, tile_peak, total_peak))
            rows.append(
                {
                    "impl": impl,
                    "q": q,
                    "p": q * q,
                    "n": group[0].n,
                    "tile_n": group[0].n // q,
                    "peak_tile_bytes": int(tile_peak),
                    "peak_total_bytes": int(total_peak),
                }
            )
        qs = [float(q) for q, _, _ in points]
        tiles = [t for _, t, _ in points]
        lo, hi = min(tiles), max(tiles)
        spread = (hi - lo) / lo if lo > 0 else float("inf")
        summary[impl] = {
            "grid_sides": [int(q) for q in qs],
            "peak_tile_bytes": [int(t) for t in tiles],
            "spread_fraction": spread,
            "flat_within_limit": spread < FLATNESS_LIMIT,
            "slope_bytes_per_q": _slope(qs, tiles),
            "monotonic_growth": all(b > a for a, b in zip(tiles, tiles[1:])),
        }
    return ComparisonTable(rows=rows, summary=summary)
