"""Shared builders for the test suite."""

from __future__ import annotations

import pathlib

from framevault.identity import IdentityTable, load_image_map
from framevault.instrument import Prototype, instrument
from framevault.program import (AddrOfArg, Annotation, AnnotationKind, Assign, Call,
                                DerefTarget, FunctionDesc, HeapAlloc, ProgramDesc,
                                ReadProbe, Return, VarDesc, VarTarget, WriteProbe)

DEMO_DIR = pathlib.Path(__file__).resolve().parent.parent / "demos" / "pwdgenerator"

PASSWD = bytes(33 + i % 94 for i in range(256))
HEAP_INIT = bytes(range(1, 65))


def pwdgen_program() -> ProgramDesc:
    """The password-generator scenario: a frame-protected function hands an
    untrusted library one carved-out int while hiding everything else."""
    pwdgen = FunctionDesc(
        name="pwdgenerator",
        locals=(
            VarDesc("passwd", 256),
            VarDesc("age", 4, annotation=Annotation(AnnotationKind.NOT_SENSITIVE)),
            VarDesc("id", 8, pointer=True, pointee_size=64,
                    annotation=Annotation(AnnotationKind.SENSITIVE_POINTER, 64)),
        ),
        body=(
            Assign("passwd", PASSWD),
            Assign("age", (25).to_bytes(4, "little")),
            HeapAlloc("id", 64, init=HEAP_INIT),
            Call("lib_func", (AddrOfArg("age"),)),
            Return(),
        ),
    )
    lib_func = FunctionDesc(
        name="lib_func",
        params=(VarDesc("p0", 8, pointer=True, pointee_size=4),),
        body=(
            ReadProbe(VarTarget("pwdgenerator", "passwd", 0), 256),
            WriteProbe(DerefTarget("p0", 0), (26).to_bytes(4, "little")),
            Return(),
        ),
    )
    main = FunctionDesc(name="main", body=(Call("pwdgenerator", ()), Return()))
    return ProgramDesc(functions=(lib_func, pwdgen, main))


def pwdgen_instrumented() -> ProgramDesc:
    return instrument(pwdgen_program(), frozenset({Prototype("lib_func", 1)}),
                      frozenset({"pwdgenerator"}))


PWDGEN_MAP = """\
main          0x401000 0x401100
pwdgenerator  0x401100 0x401200
lib_func      0x401200 0x401300
"""


def pwdgen_table() -> IdentityTable:
    return load_image_map(PWDGEN_MAP)
