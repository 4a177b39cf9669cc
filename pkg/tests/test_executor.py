"""Scenario execution: leak accounting, integrity checking, fault
isolation, and equivalence against the snapshot oracle."""

from __future__ import annotations

import dataclasses

import pytest

from framevault.executor import (
    Executor,
    IntegrityBreach,
    Leak,
    function_layout,
    image_map_for,
    run,
    run_native,
    secret_bytes_observed,
)
from framevault.identity import load_image_map
from framevault.instrument import instrument, parse_lists
from framevault.memory import HEAP_BASE, FRAME_METADATA_BYTES
from framevault.oracle import OracleVault
from framevault.program import (
    AbsoluteTarget,
    Assign,
    Call,
    FrameTarget,
    FunctionDesc,
    ProgramDesc,
    ReadProbe,
    Return,
    RuntimeCall,
    AddressRef,
    VarDesc,
    VarTarget,
)
from framevault.runtime import ExceptionKind, VaultException

from support import pwdgen_instrumented, pwdgen_table, PASSWD


def exception_kinds(report):
    return [v.kind for v in report.violations if isinstance(v, VaultException)]


def build_spoof_program(forged_lib_body):
    """Sensitive victim with a 16-byte secret calling an untrusted lib
    whose body is supplied by the test."""
    program = ProgramDesc(functions=(
        FunctionDesc(name="victim", locals=(VarDesc("secret", 16),),
                     body=(Assign("secret", bytes(range(0xA0, 0xB0))),
                           Call("lib"), Return())),
        FunctionDesc(name="lib", body=(ReadProbe(FrameTarget("victim", 0), 16),
                                       Return())),
        FunctionDesc(name="main", body=(Call("victim"), Return())),
    ))
    untrusted, sensitive = parse_lists("lib(0)\n", "victim\n")
    program = instrument(program, untrusted, sensitive)
    lib = program.function("lib")
    program = dataclasses.replace(program, functions=tuple(
        dataclasses.replace(fn, body=tuple(forged_lib_body) + fn.body)
        if fn.name == "lib" else fn
        for fn in program.functions))
    table = load_image_map(image_map_for(program))
    return program, table


class TestWalkthrough:
    def test_protected_run_shows_no_secret_bytes(self):
        report = run(pwdgen_instrumented(), pwdgen_table(), "main")
        assert report.clean
        assert report.faults == []
        assert secret_bytes_observed(report) == 0
        reads = [o for o in report.observations if o.kind == "read"]
        assert len(reads) == 1 and reads[0].length == 256 and reads[0].nonzero == 0

    def test_carve_out_write_lands_and_survives_the_close(self):
        report = run(pwdgen_instrumented(), pwdgen_table(), "main")
        # No IntegrityBreach means the carve-out byte comparison accepted
        # the callee's write; the write itself is visible as an observation.
        writes = [o for o in report.observations if o.kind == "write"]
        assert len(writes) == 1
        assert writes[0].preview == "1a000000"
        assert not any(isinstance(v, IntegrityBreach) for v in report.violations)

    def test_native_run_exposes_the_whole_password(self):
        report = run_native(pwdgen_instrumented(), pwdgen_table(), "main")
        assert secret_bytes_observed(report) == len(PASSWD) == 256
        assert report.mode == "native"
        assert report.stats.total == 0

    def test_stats_match_the_inserted_calls(self):
        report = run(pwdgen_instrumented(), pwdgen_table(), "main")
        s = report.stats
        assert (s.register_stack, s.register_memory, s.register_memory_exception,
                s.unregister_stack, s.start_protect, s.stop_protect) == (1, 1, 1, 1, 1, 1)
        assert s.total == 6

    def test_provenance_counts_cover_every_inserted_call(self):
        report = run(pwdgen_instrumented(), pwdgen_table(), "main")
        assert sum(report.provenance_counts.values()) == 6
        assert all("/" in key and not key.endswith("forged")
                   for key in report.provenance_counts)


class TestSpoofing:
    FORGED_REGISTER = RuntimeCall(call="register_memory",
                                  target=AddressRef(HEAP_BASE), length=16,
                                  read_only=False)

    def test_spoofed_register_memory_is_one_identity_mismatch(self):
        program, table = build_spoof_program([self.FORGED_REGISTER])
        report = run(program, table, "main")
        assert exception_kinds(report) == [ExceptionKind.IDENTITY_MISMATCH]
        assert not any(isinstance(v, (Leak, IntegrityBreach)) for v in report.violations)
        assert secret_bytes_observed(report) == 0

    def test_forged_calls_are_counted_under_forged(self):
        program, table = build_spoof_program([self.FORGED_REGISTER])
        report = run(program, table, "main")
        assert report.provenance_counts.get("register_memory/forged") == 1

    def test_strict_mode_halts_at_the_first_exception(self):
        program, table = build_spoof_program([self.FORGED_REGISTER])
        executor = Executor(program, table, strict=True)
        report = executor.run("main")
        assert report.halted
        # The probe behind the forged call never executes.
        assert report.observations == []

    def test_forged_stop_protect_cannot_close_the_window(self):
        forged_stop = RuntimeCall(call="stop_protect")
        program, table = build_spoof_program([forged_stop])
        report = run(program, table, "main")
        assert exception_kinds(report) == [ExceptionKind.IDENTITY_MISMATCH]
        # The window stayed up, so the probe that follows still reads zeros.
        assert secret_bytes_observed(report) == 0


class TestFaultIsolation:
    def test_probe_outside_mapped_memory_is_a_fault_not_a_crash(self):
        program = ProgramDesc(functions=(
            FunctionDesc(name="lib", body=(ReadProbe(AbsoluteTarget(0x50), 8),
                                           Return())),
            FunctionDesc(name="main", body=(Call("lib"), Return())),
        ))
        untrusted, sensitive = parse_lists("lib(0)\n", "")
        program = instrument(program, untrusted, sensitive)
        table = load_image_map(image_map_for(program))
        report = run(program, table, "main")
        assert len(report.faults) == 1 and "0x50" in report.faults[0]
        assert report.clean

    def test_unknown_callee_is_a_fault(self):
        program = ProgramDesc(functions=(
            FunctionDesc(name="main", body=(Call("ghost"), Return())),),
            instrumented=True)
        table = load_image_map(image_map_for(program))
        report = run(program, table, "main")
        assert any("ghost" in f for f in report.faults)

    def test_runaway_recursion_hits_the_depth_limit(self):
        program = ProgramDesc(functions=(
            FunctionDesc(name="main", body=(Call("main"), Return())),),
            instrumented=True)
        table = load_image_map(image_map_for(program))
        report = run(program, table, "main")
        assert any("depth" in f for f in report.faults)

    def test_missing_entry_is_rejected(self):
        program = ProgramDesc(functions=(
            FunctionDesc(name="main", body=(Return(),)),), instrumented=True)
        table = load_image_map(image_map_for(program))
        with pytest.raises(ValueError, match="not described"):
            run(program, table, "absent")

    def test_uncovered_image_map_is_rejected(self):
        program = ProgramDesc(functions=(
            FunctionDesc(name="main", body=(Return(),)),
            FunctionDesc(name="other", body=(Return(),))), instrumented=True)
        solo = ProgramDesc(functions=program.functions[:1], instrumented=True)
        table = load_image_map(image_map_for(solo))
        with pytest.raises(ValueError, match="other"):
            run(program, table, "main")


class TestRepeatedWindows:
    def test_ten_untrusted_calls_reuse_one_registration(self):
        program = ProgramDesc(functions=(
            FunctionDesc(name="victim", locals=(VarDesc("secret", 8),),
                         body=(Assign("secret", b"\xee" * 8),)
                              + tuple(Call("lib") for _ in range(10))
                              + (Return(),)),
            FunctionDesc(name="lib", body=(ReadProbe(FrameTarget("victim", 0), 8),
                                           Return())),
            FunctionDesc(name="main", body=(Call("victim"), Return())),
        ))
        untrusted, sensitive = parse_lists("lib(0)\n", "victim\n")
        program = instrument(program, untrusted, sensitive)
        table = load_image_map(image_map_for(program))
        report = run(program, table, "main")
        assert report.clean
        assert secret_bytes_observed(report) == 0
        s = report.stats
        assert (s.start_protect, s.stop_protect) == (10, 10)
        assert (s.register_stack, s.unregister_stack) == (1, 1)
        assert s.total == 22


class TestLeakDetection:
    def test_unprotected_secret_is_reported_per_window(self):
        # victim is sensitive but the caller of the lib is a plain trusted
        # function whose frame holds the secret: the window protects
        # nothing, the probe sees the bytes, and that is a native-style
        # exposure, not a Leak (nothing protected was revealed).
        program = ProgramDesc(functions=(
            FunctionDesc(name="holder", locals=(VarDesc("data", 4),),
                         body=(Assign("data", b"\x01\x02\x03\x04"),
                               Call("lib"), Return())),
            FunctionDesc(name="lib", body=(ReadProbe(VarTarget("holder", "data"), 4),
                                           Return())),
            FunctionDesc(name="main", body=(Call("holder"), Return())),
        ))
        untrusted, sensitive = parse_lists("lib(0)\n", "")
        program = instrument(program, untrusted, sensitive)
        table = load_image_map(image_map_for(program))
        report = run(program, table, "main")
        assert secret_bytes_observed(report) == 4
        assert not any(isinstance(v, Leak) for v in report.violations)


class TestOracleEquivalence:
    def test_oracle_agrees_on_the_walkthrough(self):
        real = run(pwdgen_instrumented(), pwdgen_table(), "main")
        shadow = Executor(pwdgen_instrumented(), pwdgen_table(),
                          vault_factory=OracleVault).run("main")
        assert real.final_digest == shadow.final_digest
        assert exception_kinds(real) == exception_kinds(shadow)

    def test_oracle_agrees_on_the_spoof_scenario(self):
        program, table = build_spoof_program([TestSpoofing.FORGED_REGISTER])
        real = run(program, table, "main")
        shadow = Executor(program, table, vault_factory=OracleVault).run("main")
        assert real.final_digest == shadow.final_digest
        assert exception_kinds(real) == exception_kinds(shadow)


class TestLayout:
    def test_params_then_locals_from_the_frame_top(self):
        fn = FunctionDesc(name="f",
                          params=(VarDesc("a", 4), VarDesc("b", 8)),
                          locals=(VarDesc("c", 2),))
        offsets, size = function_layout(fn)
        assert offsets == {"a": 0, "b": 4, "c": 12}
        assert size == 14 + FRAME_METADATA_BYTES

    def test_empty_function_is_just_the_metadata_pad(self):
        offsets, size = function_layout(FunctionDesc(name="f"))
        assert offsets == {} and size == FRAME_METADATA_BYTES

    def test_trivial_program_runs_clean(self):
        program = ProgramDesc(functions=(
            FunctionDesc(name="main", body=(Return(),)),), instrumented=True)
        table = load_image_map(image_map_for(program))
        report = run(program, table, "main")
        assert report.clean and report.stats.total == 0
        assert report.observations == [] and report.faults == []
