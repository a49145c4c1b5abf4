"""Square periodic process grid: rank/coordinate arithmetic and shift partners.

Ranks are numbered row-major: rank = row * q + col.  Both dimensions wrap
(torus).  Positive displacement means data moves toward the lower index
(left for column shifts, up for row shifts), so the *destination* of my data
sits at coordinate minus displacement and the *source* of my replacement data
at coordinate plus displacement.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ContractViolation


class ShiftDim(enum.Enum):
    """Which coordinate a circular shift moves."""

    ROW = "row"  # data moves up/down a column (B-plane)
    COL = "col"  # data moves left/right a row (A-plane)


def grid_side(num_partitions: int) -> int:
    """Grid side q for a perfect-square partition count, else ContractViolation."""
    if num_partitions < 1:
        raise ContractViolation(f"partition count must be >= 1, got {num_partitions}")
    q = math.isqrt(num_partitions)
    if q * q != num_partitions:
        raise ContractViolation(
            f"partition count {num_partitions} is not a perfect square"
        )
    return q


@dataclass(frozen=True)
class TorusTopology:
    """q x q process grid with periodic boundaries."""

    q: int

    def __post_init__(self):
        if self.q < 1:
            raise ContractViolation(f"grid side must be >= 1, got {self.q}")

    @property
    def num_ranks(self) -> int:
        return self.q * self.q

    def _check_rank(self, rank: int):
        if not 0 <= rank < self.num_ranks:
            raise ContractViolation(
                f"rank {rank} out of range for a {self.q}x{self.q} grid"
            )

    def coords_of(self, rank: int) -> tuple[int, int]:
        self._check_rank(rank)
        return divmod(rank, self.q)

    def rank_of(self, row: int, col: int) -> int:
        return (row % self.q) * self.q + (col % self.q)

    def shift_partners(
        self, rank: int, dim: ShiftDim, displacement: int
    ) -> tuple[int, int]:
        """(source_rank, dest_rank) for a circular shift of my data.

        For a COL shift by d > 0 data moves left: my data goes to column
        (col - d) mod q and my replacement arrives from column (col + d) mod q.
        ROW shifts act on the row coordinate the same way (data moves up).
        Any displacement magnitude/sign is reduced mod q.
        """
        row, col = self.coords_of(rank)
        d = displacement % self.q
        if dim is ShiftDim.COL:
            source = self.rank_of(row, col + d)
            dest = self.rank_of(row, col - d)
        else:
            source = self.rank_of(row + d, col)
            dest = self.rank_of(row - d, col)
        return source, dest
