"""Closed-form bijection between text spans / type ids and hybrid-span indices.

Two coordinate conventions coexist deliberately:

* ``TextSpan`` is end-exclusive in token coordinates (start < end).
* ``HSpan`` is end-inclusive in rows of the hybrid representation H, which is
  what the span-attention mask consumes.
"""
from __future__ import annotations

from dataclasses import dataclass


class SpanError(ValueError):
    """Raised for spans or indices outside their legal ranges."""


@dataclass(frozen=True, order=True)
class TextSpan:
    """Token span [start, end) over the input text."""

    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise SpanError(f"bad span ({self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class HSpan:
    """Inclusive row range [lo, hi] into H; type rows have lo == hi < l_p."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo < 0 or self.hi < self.lo:
            raise SpanError(f"bad H-span ({self.lo}, {self.hi})")


def span_to_index(span: TextSpan, m: int, l_p: int) -> int:
    """Map a text span to its hybrid index: start*m + (len-1) + l_p."""
    if span.length > m:
        raise SpanError(f"span {span} longer than maximum span length {m}")
    return span.start * m + (span.end - span.start - 1) + l_p


def index_to_hspan(k: int, m: int, l_p: int, n: int | None = None) -> HSpan:
    """Invert a hybrid index to an inclusive H-row range.

    Type indices (k < l_p) map to themselves, (k, k).  When ``n`` is given the
    index must address rows inside H, i.e. k < l_p + n*m and hi < l_p + n.
    """
    if k < 0 or (n is not None and k >= l_p + n * m):
        raise SpanError(f"index {k} outside [0, {l_p + n * m if n is not None else '...'})")
    off = max(0, k - l_p)
    lo = -max(0, -k + l_p) + off // m + l_p
    hi = lo + off % m
    if n is not None and hi >= l_p + n:
        raise SpanError(f"index {k} addresses row {hi} beyond H height {l_p + n}")
    return HSpan(lo, hi)


def hspan_to_text_span(h: HSpan, l_p: int) -> TextSpan:
    """Convert H-row coordinates back to an end-exclusive token span."""
    if h.lo < l_p:
        raise SpanError(f"H-span {h} addresses type rows (lo < l_p={l_p})")
    return TextSpan(h.lo - l_p, h.hi - l_p + 1)


def index_to_text_span(k: int, m: int, l_p: int, n: int | None = None) -> TextSpan:
    """Shorthand for hspan_to_text_span(index_to_hspan(k)); k must be a span index."""
    return hspan_to_text_span(index_to_hspan(k, m, l_p, n), l_p)


def span_is_legal(span: TextSpan, n: int, m: int) -> bool:
    return 0 <= span.start < span.end <= n and span.length <= m
