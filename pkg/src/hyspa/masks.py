"""Attention and output masks: span attention, alternating output, mixed attention.

All masks are dense float64 matrices/vectors over {0, NEG_INF}; adding one to
a score tensor removes the masked slots from the subsequent softmax.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .hybrid_index import HSpan
from .numerics import NEG_INF
from .type_vocab import ElementClass, TypeVocab


def span_attention_mask(hspans: Sequence[HSpan], l_h: int) -> np.ndarray:
    """Row i admits exactly the inclusive H-row window [lo_i, hi_i]."""
    out = np.full((len(hspans), l_h), NEG_INF)
    for i, h in enumerate(hspans):
        if h.hi >= l_h:
            raise ValueError(f"H-span {h} outside representation of height {l_h}")
        out[i, h.lo : h.hi + 1] = 0.0
    return out


def alternating_masks(
    prev: ElementClass,
    vocab: TypeVocab,
    n: int,
    strict: bool = False,
    prev_index: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Output masks (over the l_p type slots, over the n text positions).

    After a node element only edge slots open: the real edge types plus [SEP]
    ([SOS]/[EOS] stay closed so that sampled sequences remain storable).
    After an edge element the node slots open: node types plus all text
    positions; the [EOS] slot additionally opens after [SEP], the only point
    at which every traversal level is closed, so training targets (sequence
    plus [EOS]) are never masked.

    ``strict`` refines the edge branch and needs the concrete ``prev_index``:
    after the [TYPE] edge only node types open, after any other real edge only
    text spans open.
    """
    m_a = np.full(vocab.l_p, NEG_INF)
    m_a_prime = np.full(n, NEG_INF)
    if prev.is_node_element:
        m_a[list(vocab.real_edge_indices)] = 0.0
        m_a[vocab.sep_index] = 0.0
        return m_a, m_a_prime
    if prev is ElementClass.VIRTUAL_SEP:
        m_a[vocab.eos_index] = 0.0
    if strict and prev is ElementClass.REAL_EDGE:
        if prev_index is None:
            raise ValueError("strict mode needs prev_index for real edges")
        if prev_index == vocab.type_edge_index:
            m_a[vocab.l_e : vocab.l_p] = 0.0
        else:
            m_a_prime[:] = 0.0
        return m_a, m_a_prime
    m_a[vocab.l_e : vocab.l_p] = 0.0
    m_a_prime[:] = 0.0
    return m_a, m_a_prime


def mixed_attention_mask(n: int, t: int) -> np.ndarray:
    """The (n+t) x (n+t) mixed-attention mask over [source ; target] rows.

    Row r admits column j iff j < n (any source column) or j <= r (causal,
    self included).  Target row n+i therefore sees all sources plus targets
    up to i; source rows see source columns only, which is what lets their
    representations be computed once and cached during decoding.
    """
    if n < 1 or t < 1:
        raise ValueError("source and target lengths must be >= 1")
    size = n + t
    i = np.arange(size)[:, None]
    j = np.arange(size)[None, :]
    allowed = (j < n) | (j <= i)
    return np.where(allowed, 0.0, NEG_INF)
