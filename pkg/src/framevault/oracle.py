"""Reference runtime for differential checking.

Keeps the registration bookkeeping and identity/index verification of the
real runtime but replaces the window save/restore machinery wholesale: a
whole-memory snapshot is taken when a window opens, and the protected
regions (minus carve-outs) are written back from it when the window
closes. A correct runtime must leave memory byte-identical to this one.
"""

from __future__ import annotations

from .memory import ProcessMemory, bytes_from_dump
from .runtime import VaultState, window_regions


def subtract_intervals(intervals: list[tuple[int, int]],
                       holes: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Remove hole intervals from (addr, length) intervals."""
    out = []
    for addr, length in intervals:
        pieces = [(addr, addr + length)]
        for h_addr, h_len in holes:
            h_lo, h_hi = h_addr, h_addr + h_len
            next_pieces = []
            for lo, hi in pieces:
                if h_hi <= lo or hi <= h_lo:
                    next_pieces.append((lo, hi))
                    continue
                if lo < h_lo:
                    next_pieces.append((lo, h_lo))
                if h_hi < hi:
                    next_pieces.append((h_hi, hi))
            pieces = next_pieces
        out.extend((lo, hi - lo) for lo, hi in pieces if hi > lo)
    return out


class OracleVault(VaultState):
    """Drop-in replacement for VaultState with snapshot-based windows."""

    def __init__(self, identity):
        super().__init__(identity)
        self._window_dumps: list[dict[int, bytes]] = []

    def _open_window(self, memory: ProcessMemory, start: int, end: int) -> None:
        regions = window_regions(self.register_list, start, end)
        self._window_dumps.append(memory.dump_pages())
        frames = [(top, base - top) for top, base in regions.frames]
        for addr, length in subtract_intervals(frames, list(regions.exceptions)):
            memory.clear_region(addr, length)
        for base, length, read_only in regions.objects:
            if not read_only:
                memory.clear_region(base, length)

    def _close_window(self, memory: ProcessMemory, start: int, end: int) -> None:
        dump = self._window_dumps.pop()
        regions = window_regions(self.register_list, start, end)
        to_restore = [(top, base - top) for top, base in regions.frames]
        to_restore += [(base, length) for base, length, _ in regions.objects]
        for addr, length in subtract_intervals(to_restore, list(regions.exceptions)):
            memory.write_bytes(addr, bytes_from_dump(dump, addr, length))
