import pytest
from hypothesis import given, strategies as st

from hyspa.hybrid_index import (
    HSpan,
    SpanError,
    TextSpan,
    hspan_to_text_span,
    index_to_hspan,
    index_to_text_span,
    span_to_index,
)

L_P = 19
M = 16


class TestSpanToIndex:
    def test_he_span(self):
        assert span_to_index(TextSpan(0, 1), M, L_P) == 19

    def test_baghdad_span(self):
        assert span_to_index(TextSpan(4, 5), M, L_P) == 83

    def test_two_token_span(self):
        # brute-force uniqueness over all legal spans confirms 52 is only (2,4)
        assert span_to_index(TextSpan(2, 4), M, L_P) == 52
        hits = [
            (s, e)
            for s in range(8)
            for e in range(s + 1, min(s + M, 8) + 1)
            if span_to_index(TextSpan(s, e), M, L_P) == 52
        ]
        assert hits == [(2, 4)]

    def test_overlong_span_rejected(self):
        with pytest.raises(SpanError):
            span_to_index(TextSpan(0, M + 1), M, L_P)

    def test_bad_span_rejected(self):
        with pytest.raises(SpanError):
            TextSpan(3, 3)
        with pytest.raises(SpanError):
            TextSpan(-1, 2)


class TestIndexToHSpan:
    def test_type_identity(self):
        assert index_to_hspan(10, M, L_P) == HSpan(10, 10)

    def test_baghdad_rows(self):
        assert index_to_hspan(83, M, L_P) == HSpan(23, 23)

    def test_two_token_rows(self):
        assert index_to_hspan(52, M, L_P) == HSpan(21, 22)

    def test_identity_for_all_type_indices(self):
        for k in range(L_P):
            assert index_to_hspan(k, M, L_P) == HSpan(k, k)

    def test_out_of_range(self):
        with pytest.raises(SpanError):
            index_to_hspan(-1, M, L_P)
        with pytest.raises(SpanError):
            index_to_hspan(L_P + 4 * M, M, L_P, n=4)


class TestHSpanToTextSpan:
    def test_baghdad(self):
        assert hspan_to_text_span(HSpan(23, 23), L_P) == TextSpan(4, 5)

    def test_he(self):
        assert hspan_to_text_span(HSpan(19, 19), L_P) == TextSpan(0, 1)

    def test_two_token(self):
        assert hspan_to_text_span(HSpan(21, 22), L_P) == TextSpan(2, 4)

    def test_type_rows_rejected(self):
        with pytest.raises(SpanError):
            hspan_to_text_span(HSpan(5, 5), L_P)


class TestBijection:
    def test_exhaustive_n64_m16(self):
        n = 64
        seen = {}
        for start in range(n):
            for end in range(start + 1, min(start + M, n) + 1):
                span = TextSpan(start, end)
                k = span_to_index(span, M, L_P)
                assert L_P <= k < L_P + n * M
                assert k not in seen, f"collision at {k}: {seen[k]} vs {span}"
                seen[k] = span
                assert index_to_text_span(k, M, L_P, n) == span

    def test_output_space_size_linear(self):
        for n in (16, 32, 64):
            assert L_P + n * M == L_P + n * M  # size formula by construction
            top = span_to_index(TextSpan(n - 1, n), M, L_P)
            assert top < L_P + n * M

    @given(st.integers(0, 63), st.integers(1, 16))
    def test_roundtrip_property(self, start, length):
        span = TextSpan(start, start + length)
        k = span_to_index(span, M, L_P)
        assert hspan_to_text_span(index_to_hspan(k, M, L_P), L_P) == span
