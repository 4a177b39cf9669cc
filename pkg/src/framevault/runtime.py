"""Protection runtime: registration lists, protection windows, the save
buffer, and the six runtime calls.

Every call takes the explicit program-counter value of its caller and
verifies the caller's identity against the identity table before touching
any state, so a caller cannot act on another function's registrations.
Verification failures are logged as exceptions and the offending call
becomes a no-op; process memory is never mutated by a failed call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .identity import IdentityTable
from .memory import ProcessMemory, in_heap, in_stack


class ExceptionKind(str, enum.Enum):
    IDENTITY_MISMATCH = "IdentityMismatch"
    INDEX_MISMATCH = "IndexMismatch"
    REGION_OUT_OF_FRAME = "RegionOutOfFrame"
    UNKNOWN_CALLER = "UnknownCaller"


@dataclass(frozen=True)
class VaultException:
    """Logged record of a rejected runtime call."""

    kind: ExceptionKind
    syscall: str
    caller_pc: int
    detail: str


@dataclass
class StackEntry:
    """Frame registration. With all=True the whole frame is saved and
    cleared around untrusted calls; with all=False only separately
    registered objects are."""

    owner: int
    frame_base: int
    frame_top: int
    all: bool
    save_record: int | None = None

    @property
    def frame_size(self) -> int:
        return self.frame_base - self.frame_top


@dataclass
class MemoryEntry:
    """Object registration (on-frame variable or heap object). Read-only
    objects are saved but stay visible during the protection window."""

    owner: int
    base: int
    length: int
    read_only: bool
    save_record: int | None = None


@dataclass
class MemoryExceptionEntry:
    """Carve-out inside a fully protected frame: the region is copied back
    right after the frame is cleared so the callee can use it."""

    owner: int
    base: int
    length: int
    read_only: bool
    save_record: int | None = None


RegisterEntry = StackEntry | MemoryEntry | MemoryExceptionEntry


@dataclass(frozen=True)
class ProtectEntry:
    caller: int
    register_index: int  # first free RegisterList slot when the window opened


@dataclass
class SaveRecord:
    source: int
    length: int
    data: bytes | None
    consumed: bool = False


class SaveBuffer:
    """Append-only store of saved byte images. Each record is read back
    exactly once; its storage is released on that read."""

    def __init__(self) -> None:
        self.records: list[SaveRecord] = []
        self.bytes_produced = 0
        self.bytes_released = 0

    def append(self, source: int, data: bytes) -> int:
        self.records.append(SaveRecord(source=source, length=len(data), data=data))
        self.bytes_produced += len(data)
        return len(self.records) - 1

    def consume(self, record_id: int) -> bytes:
        rec = self.records[record_id]
        if rec.consumed or rec.data is None:
            raise RuntimeError(f"save record {record_id} consumed twice")
        data = rec.data
        rec.data = None
        rec.consumed = True
        self.bytes_released += len(data)
        return data

    def all_consumed(self) -> bool:
        return all(r.consumed for r in self.records)


@dataclass
class SyscallStats:
    """Invocation counts (rejected calls included) and cumulative byte
    traffic: bytes_copied counts bytes written into the save buffer,
    bytes_cleared counts bytes overwritten with zeros."""

    register_stack: int = 0
    unregister_stack: int = 0
    register_memory: int = 0
    register_memory_exception: int = 0
    start_protect: int = 0
    stop_protect: int = 0
    bytes_copied: int = 0
    bytes_cleared: int = 0

    @property
    def total(self) -> int:
        return (self.register_stack + self.unregister_stack + self.register_memory
                + self.register_memory_exception + self.start_protect + self.stop_protect)

    def as_dict(self) -> dict[str, int]:
        return {
            "register_stack": self.register_stack,
            "unregister_stack": self.unregister_stack,
            "register_memory": self.register_memory,
            "register_memory_exception": self.register_memory_exception,
            "start_protect": self.start_protect,
            "stop_protect": self.stop_protect,
            "total": self.total,
            "bytes_copied": self.bytes_copied,
            "bytes_cleared": self.bytes_cleared,
        }


@dataclass(frozen=True)
class WindowRegions:
    """Regions a protection window acts on, derived from one RegisterList
    slice: frames = (top, base) of all=True stack entries, objects =
    (base, length, read_only) of memory entries, exceptions = (base,
    length) of carve-outs."""

    frames: tuple[tuple[int, int], ...]
    objects: tuple[tuple[int, int, bool], ...]
    exceptions: tuple[tuple[int, int], ...]


def window_regions(entries: list[RegisterEntry], start: int, end: int) -> WindowRegions:
    frames = []
    objects = []
    exceptions = []
    for entry in entries[start:end + 1]:
        if isinstance(entry, StackEntry):
            if entry.all:
                frames.append((entry.frame_top, entry.frame_base))
        elif isinstance(entry, MemoryEntry):
            objects.append((entry.base, entry.length, entry.read_only))
        else:
            exceptions.append((entry.base, entry.length))
    return WindowRegions(tuple(frames), tuple(objects), tuple(exceptions))


class VaultState:
    """The four kernel-side structures plus exception and statistics logs."""

    def __init__(self, identity: IdentityTable):
        self.identity = identity
        self.register_list: list[RegisterEntry] = []
        self.protect_list: list[ProtectEntry] = []
        self.save_buffer = SaveBuffer()
        self.exception_log: list[VaultException] = []
        self.diagnostics: list[str] = []
        self.stats = SyscallStats()

    # ------------------------------------------------------------------
    # helpers

    def _flag(self, kind: ExceptionKind, syscall: str, caller_pc: int, detail: str) -> None:
        self.exception_log.append(VaultException(kind, syscall, caller_pc, detail))

    def _resolve(self, syscall: str, caller_pc: int) -> int | None:
        fid = self.identity.resolve(caller_pc)
        if fid is None:
            self._flag(ExceptionKind.UNKNOWN_CALLER, syscall, caller_pc,
                       f"pc {caller_pc:#x} not inside any function span")
        return fid

    def _last_stack_index(self) -> int | None:
        for i in range(len(self.register_list) - 1, -1, -1):
            if isinstance(self.register_list[i], StackEntry):
                return i
        return None

    def _last_stack_entry(self) -> StackEntry | None:
        i = self._last_stack_index()
        return self.register_list[i] if i is not None else None  # type: ignore[return-value]

    def _watermark(self) -> int:
        return self.protect_list[-1].register_index if self.protect_list else 0

    def stats_snapshot(self) -> SyscallStats:
        return replace(self.stats)

    # ------------------------------------------------------------------
    # registration calls

    def register_stack(self, caller_pc: int, all: bool,
                       frame_base: int, frame_top: int) -> None:
        """Record the caller's own frame; all selects whole-frame protection."""
        self.stats.register_stack += 1
        fid = self._resolve("register_stack", caller_pc)
        if fid is None:
            return
        if not (frame_top < frame_base and in_stack(frame_top, frame_base - frame_top)):
            raise ValueError(f"invalid frame bounds [{frame_top:#x}, {frame_base:#x})")
        self.register_list.append(StackEntry(owner=fid, frame_base=frame_base,
                                             frame_top=frame_top, all=all))

    def _register_object(self, syscall: str, caller_pc: int, base: int,
                         length: int, read_only: bool) -> None:
        fid = self._resolve(syscall, caller_pc)
        if fid is None:
            return
        last = self._last_stack_entry()
        if last is None:
            self._flag(ExceptionKind.IDENTITY_MISMATCH, syscall, caller_pc,
                       "no frame registration to attach to")
            return
        if last.owner != fid:
            self._flag(ExceptionKind.IDENTITY_MISMATCH, syscall, caller_pc,
                       f"caller {self.identity.name_of(fid)} does not own the "
                       f"latest frame registration ({self.identity.name_of(last.owner)})")
            return
        if length < 0:
            raise ValueError("negative region length")
        if syscall == "register_memory_exception":
            if not (last.frame_top <= base and base + length <= last.frame_base):
                self._flag(ExceptionKind.REGION_OUT_OF_FRAME, syscall, caller_pc,
                           f"region {base:#x}+{length} lies outside the caller frame")
                return
            self.register_list.append(MemoryExceptionEntry(owner=fid, base=base,
                                                           length=length, read_only=read_only))
        else:
            if not (in_stack(base, length) or in_heap(base, length)):
                raise ValueError(f"region {base:#x}+{length} outside stack and heap")
            self.register_list.append(MemoryEntry(owner=fid, base=base,
                                                  length=length, read_only=read_only))

    def register_memory(self, caller_pc: int, base: int, length: int,
                        read_only: bool) -> None:
        """Record a memory object (frame variable or heap block) for
        save/clear/restore handling around untrusted calls."""
        self.stats.register_memory += 1
        self._register_object("register_memory", caller_pc, base, length, read_only)

    def register_memory_exception(self, caller_pc: int, base: int, length: int,
                                  read_only: bool) -> None:
        """Record a carve-out that stays usable inside a fully protected
        frame. The region must lie within the caller's registered frame."""
        self.stats.register_memory_exception += 1
        self._register_object("register_memory_exception", caller_pc, base, length, read_only)

    def unregister_stack(self, memory: ProcessMemory, caller_pc: int) -> None:
        """Drop the latest frame registration and everything after it,
        then scrub the frame so no stale data survives the return."""
        self.stats.unregister_stack += 1
        fid = self._resolve("unregister_stack", caller_pc)
        if fid is None:
            return
        idx = self._last_stack_index()
        if idx is None:
            self._flag(ExceptionKind.IDENTITY_MISMATCH, "unregister_stack", caller_pc,
                       "no frame registration to remove")
            return
        last = self.register_list[idx]
        assert isinstance(last, StackEntry)
        if last.owner != fid:
            self._flag(ExceptionKind.IDENTITY_MISMATCH, "unregister_stack", caller_pc,
                       f"caller {self.identity.name_of(fid)} does not own the "
                       f"latest frame registration ({self.identity.name_of(last.owner)})")
            return
        del self.register_list[idx:]
        memory.clear_region(last.frame_top, last.frame_size)
        self.stats.bytes_cleared += last.frame_size

    # ------------------------------------------------------------------
    # protection windows

    def start_protect(self, memory: ProcessMemory, caller_pc: int) -> None:
        """Open a protection window covering every registration made since
        the enclosing window opened (or since the beginning)."""
        self.stats.start_protect += 1
        fid = self._resolve("start_protect", caller_pc)
        if fid is None:
            return
        self._open_window(memory, self._watermark(), len(self.register_list) - 1)
        self.protect_list.append(ProtectEntry(caller=fid, register_index=len(self.register_list)))
        if len(self.protect_list) >= 2 and (self.protect_list[-1].register_index
                                            < self.protect_list[-2].register_index):
            self.diagnostics.append("protection windows opened out of registration order")

    def _open_window(self, memory: ProcessMemory, start: int, end: int) -> None:
        """Save everything in [start, end], then clear what must be hidden
        and copy carve-outs back into the cleared frames.

        Carve-outs are saved too: the frame clear wipes them, and their
        saved image is what gets copied back.
        """
        for entry in self.register_list[start:end + 1]:
            if isinstance(entry, StackEntry):
                if entry.all:
                    data = memory.read_bytes(entry.frame_top, entry.frame_size)
                    entry.save_record = self.save_buffer.append(entry.frame_top, data)
                    self.stats.bytes_copied += entry.frame_size
            else:
                data = memory.read_bytes(entry.base, entry.length)
                entry.save_record = self.save_buffer.append(entry.base, data)
                self.stats.bytes_copied += entry.length

        # Clear pass. Registration order puts each frame before its
        # objects, so carve-out copy-back lands after its frame's clear.
        for entry in self.register_list[start:end + 1]:
            if isinstance(entry, StackEntry):
                if entry.all:
                    memory.clear_region(entry.frame_top, entry.frame_size)
                    self.stats.bytes_cleared += entry.frame_size
            elif isinstance(entry, MemoryEntry):
                if not entry.read_only:
                    memory.clear_region(entry.base, entry.length)
                    self.stats.bytes_cleared += entry.length
            else:
                if entry.save_record is not None:
                    memory.write_bytes(entry.base, self.save_buffer.consume(entry.save_record))
                    entry.save_record = None

    def stop_protect(self, memory: ProcessMemory, caller_pc: int) -> None:
        """Close the innermost protection window and restore saved data.

        The caller must be the function that opened the window, and the
        RegisterList must not have grown since; otherwise the window stays
        open and nothing is restored.
        """
        self.stats.stop_protect += 1
        fid = self._resolve("stop_protect", caller_pc)
        if fid is None:
            return
        if not self.protect_list:
            self._flag(ExceptionKind.IDENTITY_MISMATCH, "stop_protect", caller_pc,
                       "no protection window is open")
            return
        top = self.protect_list[-1]
        if top.caller != fid:
            self._flag(ExceptionKind.IDENTITY_MISMATCH, "stop_protect", caller_pc,
                       f"window opened by {self.identity.name_of(top.caller)}, "
                       f"closed by {self.identity.name_of(fid)}")
            return
        if len(self.register_list) != top.register_index:
            self._flag(ExceptionKind.INDEX_MISMATCH, "stop_protect", caller_pc,
                       f"RegisterList grew from {top.register_index} to "
                       f"{len(self.register_list)} inside the window")
            return

        self.protect_list.pop()
        self._close_window(memory, self._watermark(), len(self.register_list) - 1)

    def _close_window(self, memory: ProcessMemory, start: int, end: int) -> None:
        # Restore pass. Frame images are assembled in a scratch buffer and
        # flushed when the next frame begins (and once more at the end),
        # so object restores and carve-out refreshes can patch the image
        # before it lands in memory.
        frame_image: bytearray | None = None
        frame_top = frame_base = 0

        def flush() -> None:
            if frame_image is not None:
                memory.write_bytes(frame_top, bytes(frame_image))

        def on_frame(base: int, length: int) -> bool:
            return (frame_image is not None and frame_top <= base
                    and base + length <= frame_base)

        for entry in self.register_list[start:end + 1]:
            if isinstance(entry, StackEntry):
                flush()
                frame_top, frame_base = entry.frame_top, entry.frame_base
                if entry.all:
                    if entry.save_record is None:
                        self.diagnostics.append("frame registered all=True has no saved image")
                        frame_image = bytearray(memory.read_bytes(frame_top, entry.frame_size))
                    else:
                        frame_image = bytearray(self.save_buffer.consume(entry.save_record))
                        entry.save_record = None
                else:
                    frame_image = bytearray(memory.read_bytes(frame_top, entry.frame_size))
            elif isinstance(entry, MemoryEntry):
                if entry.save_record is None:
                    self.diagnostics.append("memory object has no saved image")
                    continue
                data = self.save_buffer.consume(entry.save_record)
                entry.save_record = None
                if on_frame(entry.base, entry.length):
                    off = entry.base - frame_top
                    frame_image[off:off + entry.length] = data
                else:
                    memory.write_bytes(entry.base, data)
            else:
                # Carve-out: keep whatever the callee left there.
                if on_frame(entry.base, entry.length):
                    off = entry.base - frame_top
                    frame_image[off:off + entry.length] = memory.read_bytes(entry.base, entry.length)
                elif frame_image is None:
                    self.diagnostics.append("carve-out with no enclosing frame in window")
        flush()
