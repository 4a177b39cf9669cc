"""End-to-end walkthrough on the password-generator scenario.

A function holds a 256-byte password, a small int whose address it hands
to an untrusted library, and a pointer to a 64-byte heap block. The
script instruments the program, shows every inserted runtime call, then
contrasts what the library observes natively against a protected run.

Run with:  python3 demos/protection_walkthrough.py
"""

from __future__ import annotations

import pathlib

from framevault import (
    instrument,
    load_image_map,
    parse,
    parse_lists,
    provenance_listing,
    render_diff,
    run,
    run_native,
)

HERE = pathlib.Path(__file__).resolve().parent / "pwdgenerator"


def main() -> None:
    program = parse((HERE / "program.json").read_text())
    untrusted, sensitive = parse_lists((HERE / "untrusted.list").read_text(),
                                       (HERE / "sensitive.list").read_text())
    table = load_image_map((HERE / "image.map").read_text())

    print("== inserted runtime calls ==")
    instrumented = instrument(program, untrusted, sensitive)
    for line in provenance_listing(instrumented):
        print(" ", line)

    print()
    print("== native run: nothing stands between the library and the frame ==")
    native = run_native(instrumented, table, "main")
    for obs in native.observations:
        print(f"  {obs.kind:5s} {obs.length:4d} bytes at {obs.address:#x}: "
              f"{obs.nonzero} non-zero ({obs.preview}...)")

    print()
    print("== protected run: the frame is saved, cleared, then restored ==")
    protected = run(instrumented, table, "main")
    for obs in protected.observations:
        print(f"  {obs.kind:5s} {obs.length:4d} bytes at {obs.address:#x}: "
              f"{obs.nonzero} non-zero")

    print()
    print(render_diff(native, protected))


if __name__ == "__main__":
    main()
