"""Protection runtime: save/clear/restore byte-exactness, watermark
accounting, detection of forged and spoofed calls.

Expected byte images here are computed by hand from the declared layouts,
never read back from the implementation.
"""

from __future__ import annotations

import pytest

from framevault.identity import load_image_map
from framevault.memory import ProcessMemory, STACK_BASE
from framevault.oracle import OracleVault
from framevault.runtime import ExceptionKind, SaveBuffer, VaultState

MAP = """\
victim    0x401000 0x401100
intruder  0x401100 0x401200
outerfn   0x401200 0x401300
"""
VPC, IPC, OPC = 0x401010, 0x401110, 0x401210
BAD_PC = 0x700000  # inside text, outside every span

FRAME_PATTERN = bytes(range(0x10, 0x40))   # 48 variable bytes, all non-zero
HEAP_PATTERN = bytes(range(0x80, 0xA0))    # 32 bytes, all non-zero
CARVE_NEW = b"\xca\xfe\xba\xbe"


def make_state(vault_cls=VaultState):
    table = load_image_map(MAP)
    return ProcessMemory(), vault_cls(table)


def open_standard_window(memory, vault):
    """frame(64) + heap object(32) + carve-out(4) registered and opened.

    The frame: 48 pattern bytes, then a 16-byte zero metadata pad.
    The carve-out is frame bytes [8:12].
    """
    frame = memory.push_frame(owner=0, size=64)
    memory.write_bytes(frame.top, FRAME_PATTERN)
    obj = memory.heap_alloc(32)
    memory.write_bytes(obj.base, HEAP_PATTERN)
    vault.register_stack(VPC, all=True, frame_base=frame.base, frame_top=frame.top)
    vault.register_memory(VPC, obj.base, 32, False)
    vault.register_memory_exception(VPC, frame.top + 8, 4, False)
    vault.start_protect(memory, VPC)
    return frame, obj


class TestWindowByteExact:
    def test_open_saves_then_hides(self):
        memory, vault = make_state()
        frame, obj = open_standard_window(memory, vault)
        # Saved: 64-byte frame + 32-byte object + 4-byte carve-out = 100.
        assert vault.save_buffer.bytes_produced == 100
        # The carve-out record is read back during the open itself.
        assert vault.save_buffer.bytes_released == 4
        # Cleared: the frame and the writable object, 64 + 32 = 96.
        assert vault.stats.bytes_cleared == 96
        hidden = memory.read_bytes(frame.top, 64)
        assert hidden == bytes(8) + FRAME_PATTERN[8:12] + bytes(52)
        assert memory.read_bytes(obj.base, 32) == bytes(32)

    def test_close_restores_everything_but_the_carve_out(self):
        memory, vault = make_state()
        frame, obj = open_standard_window(memory, vault)
        # The untrusted callee writes the carve-out and scribbles elsewhere.
        memory.write_bytes(frame.top + 8, CARVE_NEW)
        memory.write_bytes(frame.top + 20, b"\xee" * 8)
        memory.write_bytes(obj.base, b"\xdd" * 32)
        vault.stop_protect(memory, VPC)
        assert vault.exception_log == []
        expected_frame = (FRAME_PATTERN[:8] + CARVE_NEW + FRAME_PATTERN[12:]
                          + bytes(16))
        assert memory.read_bytes(frame.top, 64) == expected_frame
        assert memory.read_bytes(obj.base, 32) == HEAP_PATTERN
        assert vault.save_buffer.all_consumed()
        assert vault.save_buffer.bytes_released == 100
        assert vault.protect_list == [] and len(vault.register_list) == 3

    def test_read_only_object_stays_visible_and_comes_back(self):
        memory, vault = make_state()
        frame = memory.push_frame(0, 32)
        obj = memory.heap_alloc(16)
        memory.write_bytes(obj.base, bytes(range(0x41, 0x51)))
        vault.register_stack(VPC, all=True, frame_base=frame.base, frame_top=frame.top)
        vault.register_memory(VPC, obj.base, 16, True)
        vault.start_protect(memory, VPC)
        assert memory.read_bytes(obj.base, 16) == bytes(range(0x41, 0x51))
        memory.write_bytes(obj.base, b"\x00" * 16)  # callee vandalism
        vault.stop_protect(memory, VPC)
        assert memory.read_bytes(obj.base, 16) == bytes(range(0x41, 0x51))

    def test_empty_window_is_legal(self):
        memory, vault = make_state()
        vault.start_protect(memory, VPC)
        assert vault.save_buffer.bytes_produced == 0
        vault.stop_protect(memory, VPC)
        assert vault.exception_log == []

    def test_all_false_frame_is_not_hidden(self):
        memory, vault = make_state()
        frame = memory.push_frame(0, 32)
        memory.write_bytes(frame.top, b"\x11" * 16)
        vault.register_stack(VPC, all=False, frame_base=frame.base, frame_top=frame.top)
        vault.start_protect(memory, VPC)
        assert memory.read_bytes(frame.top, 16) == b"\x11" * 16
        assert vault.save_buffer.bytes_produced == 0
        vault.stop_protect(memory, VPC)
        assert vault.exception_log == []


class TestNesting:
    def test_inner_window_saves_exactly_the_new_registrations(self):
        memory, vault = make_state()
        f1 = memory.push_frame(2, 64)
        o1 = memory.heap_alloc(32)
        vault.register_stack(OPC, all=True, frame_base=f1.base, frame_top=f1.top)
        vault.register_memory(OPC, o1.base, 32, False)
        vault.start_protect(memory, OPC)
        produced_outer = vault.save_buffer.bytes_produced
        assert produced_outer == 64 + 32

        f2 = memory.push_frame(0, 48)
        o2 = memory.heap_alloc(16)
        vault.register_stack(VPC, all=True, frame_base=f2.base, frame_top=f2.top)
        vault.register_memory(VPC, o2.base, 16, False)
        vault.start_protect(memory, VPC)
        # Growth is the inner footprint alone: 48 + 16 = 64 bytes.
        assert vault.save_buffer.bytes_produced - produced_outer == 48 + 16

        vault.stop_protect(memory, VPC)
        assert vault.save_buffer.bytes_released == 48 + 16
        vault.unregister_stack(memory, VPC)  # inner epilogue, before returning
        vault.stop_protect(memory, OPC)
        assert vault.exception_log == []
        assert vault.save_buffer.all_consumed()
        assert vault.save_buffer.bytes_released == vault.save_buffer.bytes_produced

    def test_windows_close_in_lifo_order_only(self):
        memory, vault = make_state()
        f1 = memory.push_frame(2, 64)
        vault.register_stack(OPC, all=True, frame_base=f1.base, frame_top=f1.top)
        vault.start_protect(memory, OPC)
        f2 = memory.push_frame(0, 48)
        vault.register_stack(VPC, all=True, frame_base=f2.base, frame_top=f2.top)
        vault.start_protect(memory, VPC)
        vault.stop_protect(memory, OPC)  # outer tries to close first
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.IDENTITY_MISMATCH]
        assert len(vault.protect_list) == 2


class TestDetection:
    def test_stop_from_wrong_function_is_rejected_without_restore(self):
        memory, vault = make_state()
        frame, obj = open_standard_window(memory, vault)
        before = memory.content_signature()
        vault.stop_protect(memory, IPC)
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.IDENTITY_MISMATCH]
        assert len(vault.protect_list) == 1
        assert memory.content_signature() == before
        vault.stop_protect(memory, VPC)  # the owner still can
        assert len(vault.protect_list) == 0
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.IDENTITY_MISMATCH]

    def test_forged_growth_is_rejected_without_restore(self):
        memory, vault = make_state()
        frame, obj = open_standard_window(memory, vault)
        other = memory.push_frame(1, 32)
        # Registering your own frame is always legal; the damage shows at
        # the window close, where the recorded watermark no longer matches.
        vault.register_stack(IPC, all=True, frame_base=other.base, frame_top=other.top)
        before = memory.content_signature()
        vault.stop_protect(memory, VPC)
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.INDEX_MISMATCH]
        assert len(vault.protect_list) == 1
        assert memory.content_signature() == before
        # Once the forged entry is removed the owner can close normally.
        vault.unregister_stack(memory, IPC)
        vault.stop_protect(memory, VPC)
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.INDEX_MISMATCH]
        assert vault.protect_list == []

    def test_spoofed_register_memory_is_rejected(self):
        memory, vault = make_state()
        frame = memory.push_frame(0, 32)
        obj = memory.heap_alloc(16)
        vault.register_stack(VPC, all=True, frame_base=frame.base, frame_top=frame.top)
        before = memory.content_signature()
        vault.register_memory(IPC, obj.base, 16, False)
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.IDENTITY_MISMATCH]
        assert len(vault.register_list) == 1
        assert memory.content_signature() == before

    def test_register_memory_with_no_frame_registered(self):
        memory, vault = make_state()
        obj = memory.heap_alloc(16)
        vault.register_memory(VPC, obj.base, 16, False)
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.IDENTITY_MISMATCH]

    def test_exception_region_must_lie_within_the_frame(self):
        memory, vault = make_state()
        frame = memory.push_frame(0, 32)
        vault.register_stack(VPC, all=True, frame_base=frame.base, frame_top=frame.top)
        vault.register_memory_exception(VPC, frame.top - 8, 4, False)
        vault.register_memory_exception(VPC, frame.base - 2, 4, False)
        assert [e.kind for e in vault.exception_log] == [
            ExceptionKind.REGION_OUT_OF_FRAME, ExceptionKind.REGION_OUT_OF_FRAME]
        assert len(vault.register_list) == 1

    def test_stop_with_no_open_window(self):
        memory, vault = make_state()
        vault.stop_protect(memory, VPC)
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.IDENTITY_MISMATCH]

    def test_unresolvable_pc_is_flagged_per_call(self):
        memory, vault = make_state()
        frame = memory.push_frame(0, 32)
        vault.register_stack(BAD_PC, all=True, frame_base=frame.base, frame_top=frame.top)
        vault.start_protect(memory, BAD_PC)
        vault.stop_protect(memory, BAD_PC)
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.UNKNOWN_CALLER] * 3
        assert vault.register_list == [] and vault.protect_list == []

    def test_every_invocation_is_counted_even_when_rejected(self):
        memory, vault = make_state()
        obj = memory.heap_alloc(16)
        vault.register_memory(IPC, obj.base, 16, False)  # rejected
        vault.stop_protect(memory, VPC)                  # rejected
        assert vault.stats.register_memory == 1
        assert vault.stats.stop_protect == 1
        assert vault.stats.total == 2


class TestUnregister:
    def test_unregister_scrubs_the_frame_and_truncates(self):
        memory, vault = make_state()
        frame = memory.push_frame(0, 64)
        memory.write_bytes(frame.top, FRAME_PATTERN)
        obj = memory.heap_alloc(16)
        vault.register_stack(VPC, all=True, frame_base=frame.base, frame_top=frame.top)
        vault.register_memory(VPC, obj.base, 16, False)
        vault.unregister_stack(memory, VPC)
        assert vault.register_list == []
        assert memory.read_bytes(frame.top, 64) == bytes(64)

    def test_unregister_by_wrong_owner_changes_nothing(self):
        memory, vault = make_state()
        frame = memory.push_frame(0, 64)
        memory.write_bytes(frame.top, FRAME_PATTERN)
        vault.register_stack(VPC, all=True, frame_base=frame.base, frame_top=frame.top)
        vault.unregister_stack(memory, IPC)
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.IDENTITY_MISMATCH]
        assert len(vault.register_list) == 1
        assert memory.read_bytes(frame.top, 48) == FRAME_PATTERN

    def test_unregister_with_nothing_registered(self):
        memory, vault = make_state()
        vault.unregister_stack(memory, VPC)
        assert [e.kind for e in vault.exception_log] == [ExceptionKind.IDENTITY_MISMATCH]


class TestSaveBuffer:
    def test_records_are_read_exactly_once(self):
        buf = SaveBuffer()
        rid = buf.append(0x1000, b"\x01\x02\x03")
        assert buf.consume(rid) == b"\x01\x02\x03"
        with pytest.raises(RuntimeError):
            buf.consume(rid)

    def test_byte_accounting(self):
        buf = SaveBuffer()
        a = buf.append(0x1000, b"\x01" * 10)
        b = buf.append(0x2000, b"\x02" * 6)
        assert buf.bytes_produced == 16 and buf.bytes_released == 0
        assert not buf.all_consumed()
        buf.consume(a)
        buf.consume(b)
        assert buf.bytes_released == 16 and buf.all_consumed()


class TestDiagnostics:
    def test_out_of_registration_order_windows_are_noted(self):
        memory, vault = make_state()
        frame = memory.push_frame(0, 32)
        vault.register_stack(VPC, all=True, frame_base=frame.base, frame_top=frame.top)
        vault.start_protect(memory, VPC)
        vault.unregister_stack(memory, VPC)  # empties the list mid-window
        vault.start_protect(memory, VPC)
        assert any("out of registration order" in d for d in vault.diagnostics)


class TestOracleEquivalence:
    def test_snapshot_oracle_produces_identical_final_memory(self):
        images = []
        logs = []
        for vault_cls in (VaultState, OracleVault):
            memory, vault = make_state(vault_cls)
            frame, obj = open_standard_window(memory, vault)
            memory.write_bytes(frame.top + 8, CARVE_NEW)
            memory.write_bytes(frame.top + 20, b"\xee" * 8)
            memory.write_bytes(obj.base, b"\xdd" * 32)
            vault.stop_protect(memory, VPC)
            vault.unregister_stack(memory, VPC)
            images.append(memory.content_signature())
            logs.append([e.kind for e in vault.exception_log])
        assert images[0] == images[1]
        assert logs[0] == logs[1] == []
