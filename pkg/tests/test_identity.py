"""Identity table: span parsing, pc resolution, synthesis."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from framevault.identity import (ImageMapError, load_image_map, synthesize_image_map)
from framevault.memory import TEXT_BASE

from support import PWDGEN_MAP, pwdgen_table


class TestResolve:
    def test_fids_follow_input_order(self):
        table = pwdgen_table()
        assert table.name_of(0) == "main"
        assert table.name_of(1) == "pwdgenerator"
        assert table.name_of(2) == "lib_func"

    def test_span_boundaries_low_inclusive_high_exclusive(self):
        table = pwdgen_table()
        assert table.resolve(0x401100) == 1
        assert table.resolve(0x4011FF) == 1
        assert table.resolve(0x401200) == 2  # the next span starts here
        assert table.resolve(0x4010FF) == 0

    def test_unmapped_pcs_resolve_to_none(self):
        table = pwdgen_table()
        assert table.resolve(0x400000) is None
        assert table.resolve(0x401300) is None  # one past the last span
        assert table.resolve(0) is None

    def test_by_name(self):
        table = pwdgen_table()
        span = table.by_name("lib_func")
        assert span is not None and (span.lo, span.hi) == (0x401200, 0x401300)
        assert table.by_name("ghost") is None


class TestParsing:
    def test_comments_and_blank_lines_ignored(self):
        table = load_image_map("# heading\n\n" + PWDGEN_MAP + "\n# tail\n")
        assert table.resolve(0x401050) == 0

    def test_malformed_line_rejected(self):
        with pytest.raises(ImageMapError):
            load_image_map("main 0x401000\n")
        with pytest.raises(ImageMapError):
            load_image_map("main 0x401000 zzz\n")

    def test_empty_and_inverted_spans_rejected(self):
        with pytest.raises(ImageMapError):
            load_image_map("main 0x401100 0x401100\n")
        with pytest.raises(ImageMapError):
            load_image_map("main 0x401200 0x401100\n")

    def test_duplicate_names_rejected(self):
        with pytest.raises(ImageMapError):
            load_image_map("a 0x401000 0x401100\na 0x401100 0x401200\n")

    def test_overlapping_spans_rejected(self):
        with pytest.raises(ImageMapError):
            load_image_map("a 0x401000 0x401100\nb 0x4010ff 0x401200\n")

    def test_spans_outside_text_rejected(self):
        with pytest.raises(ImageMapError):
            load_image_map("a 0x100 0x200\n")


class TestSynthesis:
    def test_round_trips_through_the_parser(self):
        text = synthesize_image_map([("alpha", 3), ("beta", 40), ("gamma", 1)])
        table = load_image_map(text)
        assert [table.name_of(i) for i in range(3)] == ["alpha", "beta", "gamma"]

    def test_spans_cover_requested_lengths(self):
        table = load_image_map(synthesize_image_map([("f", 1000)]))
        span = table.by_name("f")
        assert span.hi - span.lo >= 1000


@given(lengths=st.lists(st.integers(1, 500), min_size=1, max_size=12),
       probe=st.integers(0, 600))
def test_every_pc_in_a_span_resolves_to_it(lengths, probe):
    extents = [(f"f{i}", n) for i, n in enumerate(lengths)]
    table = load_image_map(synthesize_image_map(extents))
    for i, (_, n) in enumerate(extents):
        span = table.by_name(f"f{i}")
        pc = span.lo + (probe % (span.hi - span.lo))
        assert table.resolve(pc) == i
    assert table.resolve(TEXT_BASE) is None
