"""Ordered type vocabulary and classification of hybrid-span indices.

The index space is laid out as real edge types, then the three virtual edge
types, then node types, then text spans.  ``l_e`` and ``l_p`` are the two
boundaries all other modules key off.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

SOS = "[SOS]"
EOS = "[EOS]"
SEP = "[SEP]"
TYPE_EDGE = "[TYPE]"
NULL_TYPE = "[NULL]"

VIRTUAL_EDGE_TYPES = (SOS, EOS, SEP)


class VocabError(ValueError):
    """Raised for malformed vocabulary definitions."""


class ElementClass(enum.Enum):
    """Class of one hybrid-span index: which block of the layout it names."""

    REAL_EDGE = "real_edge"
    VIRTUAL_SOS = "sos"
    VIRTUAL_EOS = "eos"
    VIRTUAL_SEP = "sep"
    NODE_TYPE = "node_type"
    TEXT_SPAN = "text_span"

    @property
    def is_node_element(self) -> bool:
        return self in (ElementClass.NODE_TYPE, ElementClass.TEXT_SPAN)

    @property
    def is_edge_element(self) -> bool:
        return not self.is_node_element

    @property
    def is_virtual(self) -> bool:
        return self in (
            ElementClass.VIRTUAL_SOS,
            ElementClass.VIRTUAL_EOS,
            ElementClass.VIRTUAL_SEP,
        )


_VIRTUAL_BY_OFFSET = (
    ElementClass.VIRTUAL_SOS,
    ElementClass.VIRTUAL_EOS,
    ElementClass.VIRTUAL_SEP,
)


@dataclass(frozen=True)
class TypeVocab:
    """Immutable ordered layout: edge types ++ virtual edge types ++ node types."""

    edge_types: tuple[str, ...]
    node_types: tuple[str, ...]
    virtual_edge_types: tuple[str, ...] = VIRTUAL_EDGE_TYPES
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        names = list(self.edge_types) + list(self.virtual_edge_types) + list(self.node_types)
        idx = {name: i for i, name in enumerate(names)}
        object.__setattr__(self, "_index", idx)

    @property
    def l_e(self) -> int:
        return len(self.edge_types) + len(self.virtual_edge_types)

    @property
    def l_p(self) -> int:
        return self.l_e + len(self.node_types)

    @property
    def names(self) -> tuple[str, ...]:
        return self.edge_types + self.virtual_edge_types + self.node_types

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise VocabError(f"unknown type name: {name!r}") from None

    def name(self, k: int) -> str:
        if not 0 <= k < self.l_p:
            raise VocabError(f"type index {k} outside [0, {self.l_p})")
        return self.names[k]

    @property
    def sos_index(self) -> int:
        return len(self.edge_types)

    @property
    def eos_index(self) -> int:
        return len(self.edge_types) + 1

    @property
    def sep_index(self) -> int:
        return len(self.edge_types) + 2

    @property
    def type_edge_index(self) -> int:
        return self.index(TYPE_EDGE)

    @property
    def null_type_index(self) -> int:
        return self.index(NULL_TYPE)

    @property
    def real_edge_indices(self) -> range:
        return range(len(self.edge_types))

    @property
    def node_type_indices(self) -> range:
        return range(self.l_e, self.l_p)

    def config_hash(self) -> str:
        import hashlib

        blob = json.dumps({"edge_types": self.edge_types, "node_types": self.node_types})
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_vocab(edge_names, node_names) -> TypeVocab:
    """Assemble a TypeVocab, inserting [SOS], [EOS], [SEP] between edges and nodes.

    ``edge_names`` must contain [TYPE]; ``node_names`` must contain [NULL].
    """
    edge_names = tuple(edge_names)
    node_names = tuple(node_names)
    if not edge_names or not node_names:
        raise VocabError("edge and node type lists must be non-empty")
    all_names = list(edge_names) + list(VIRTUAL_EDGE_TYPES) + list(node_names)
    seen = set()
    for name in all_names:
        if name in seen:
            raise VocabError(f"duplicate type name: {name!r}")
        seen.add(name)
    if TYPE_EDGE not in edge_names:
        raise VocabError(f"edge types must include {TYPE_EDGE}")
    if NULL_TYPE not in node_names:
        raise VocabError(f"node types must include {NULL_TYPE}")
    return TypeVocab(edge_types=edge_names, node_types=node_names)


def load_vocab(path) -> TypeVocab:
    """Read a vocab config file: {"edge_types": [...], "node_types": [...]}."""
    doc = json.loads(Path(path).read_text())
    return build_vocab(doc["edge_types"], doc["node_types"])


def save_vocab(vocab: TypeVocab, path) -> None:
    doc = {"edge_types": list(vocab.edge_types), "node_types": list(vocab.node_types)}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def classify(k: int, vocab: TypeVocab, n: int, m: int) -> ElementClass:
    """Classify index ``k`` within the output space [0, l_p + n*m)."""
    if not 0 <= k < vocab.l_p + n * m:
        raise VocabError(f"index {k} outside [0, {vocab.l_p + n * m})")
    n_edges = len(vocab.edge_types)
    if k < n_edges:
        return ElementClass.REAL_EDGE
    if k < vocab.l_e:
        return _VIRTUAL_BY_OFFSET[k - n_edges]
    if k < vocab.l_p:
        return ElementClass.NODE_TYPE
    return ElementClass.TEXT_SPAN


def segment_ids(vocab: TypeVocab, n: int) -> list[int]:
    """Meta-type id per row of H: 0 edge, 1 virtual edge, 2 node type, 3 text."""
    if n < 1:
        raise VocabError(f"n must be >= 1, got {n}")
    return (
        [0] * len(vocab.edge_types)
        + [1] * len(vocab.virtual_edge_types)
        + [2] * len(vocab.node_types)
        + [3] * n
    )
