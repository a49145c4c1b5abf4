"""Per-worker byte accounting for tiles and transport buffers.

Counters are explicit (the worker registers what it allocates) so the numbers
mean the same thing in threads mode and processes mode.  Peak RSS from the OS
is recorded separately where available; it includes the interpreter and is
only a secondary column in reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class MemoryMeter:
    tile_bytes: int = 0
    buffer_bytes: int = 0
    tile_peak: int = 0
    buffer_peak: int = 0
    total_peak: int = 0

    def _bump(self):
        self.tile_peak = max(self.tile_peak, self.tile_bytes)
        self.buffer_peak = max(self.buffer_peak, self.buffer_bytes)
        self.total_peak = max(self.total_peak, self.tile_bytes + self.buffer_bytes)

    def add_tile(self, nbytes: int):
        self.tile_bytes += nbytes
        self._bump()

    def release_tile(self, nbytes: int):
        self.tile_bytes -= nbytes

    def add_buffer(self, nbytes: int):
        self.buffer_bytes += nbytes
        self._bump()

    def release_buffer(self, nbytes: int):
        self.buffer_bytes -= nbytes

    def snapshot(self) -> dict:
        return {
            "peak_tile_bytes": self.tile_peak,
            "peak_buffer_bytes": self.buffer_peak,
            "peak_total_bytes": self.total_peak,
        }


@dataclass
class TransferCounters:
    """Per-worker transport instrumentation, split by data plane.

    Byte counts cover payload only (headers excluded) so element volumes are
    exactly bytes / itemsize.
    """

    ops_a: int = 0
    ops_b: int = 0
    bytes_a: int = 0
    bytes_b: int = 0
    bytes_received: int = 0
    control_frames: int = 0

    def record_data_send(self, plane: int, nbytes: int):
        if plane == 0:
            self.ops_a += 1
            self.bytes_a += nbytes
        else:
            self.ops_b += 1
            self.bytes_b += nbytes

    def snapshot(self) -> dict:
        return {
            "ops_a": self.ops_a,
            "ops_b": self.ops_b,
            "bytes_a": self.bytes_a,
            "bytes_b": self.bytes_b,
            "bytes_received": self.bytes_received,
            "control_frames": self.control_frames,
        }


def rss_peak_kb() -> int | None:
    """OS-reported peak resident set of this process, in KiB, if available."""
    try:
        import resource

        return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)
    except Exception:
        return None
