"""Corpus ingestion, synthetic task generation, edge-frequency stats, and F1.

The JSONL corpus format, one record per line:

    {"tokens": [...], "entities": [{"start": s, "end": e, "type": name}],
     "relations": [{"head": i, "tail": j, "type": name}]}

``end`` is exclusive; relation head/tail index into the entities array.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .altseq_codec import Traversal
from .hybrid_index import TextSpan
from .info_graph import InfoGraph, Mention, RelationEdge, make_graph, validate_graph
from .type_vocab import TypeVocab, build_vocab

DEFAULT_EDGE_TYPES = (
    "[TYPE]", "PHYS", "PART-WHOLE", "PER-SOC", "ORG-AFF", "ART", "GEN-AFF", "OTHER-AFF",
)
DEFAULT_NODE_TYPES = ("PER", "ORG", "GPE", "LOC", "FAC", "VEH", "WEA", "[NULL]")


def default_vocab() -> TypeVocab:
    return build_vocab(DEFAULT_EDGE_TYPES, DEFAULT_NODE_TYPES)


class CorpusError(ValueError):
    pass


@dataclass
class Dataset:
    examples: list[tuple[tuple[str, ...], InfoGraph]]
    vocab: TypeVocab
    m: int
    edge_freq: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.examples)

    def tally_edge_freq(self) -> Counter:
        self.edge_freq = Counter(
            rel.edge_type for _, g in self.examples for rel in g.relations
        )
        return self.edge_freq

    def manifest(self) -> dict:
        n_rel = sum(len(g.relations) for _, g in self.examples)
        n_ent = sum(len(g.mentions) for _, g in self.examples)
        return {
            "examples": len(self.examples),
            "entities": n_ent,
            "relations": n_rel,
            "empty_graphs": sum(g.is_empty for _, g in self.examples),
            "vocab_hash": self.vocab.config_hash(),
            "max_span_length": self.m,
        }


def record_to_graph(record: dict, vocab: TypeVocab, m: int) -> tuple[tuple[str, ...], InfoGraph]:
    tokens = tuple(record["tokens"])
    mentions = [
        Mention(TextSpan(ent["start"], ent["end"]), vocab.index(ent["type"]))
        for ent in record.get("entities", [])
    ]
    relations = [
        RelationEdge(rel["head"], rel["tail"], vocab.index(rel["type"]))
        for rel in record.get("relations", [])
    ]
    return tokens, make_graph(mentions, relations, n=len(tokens), m=m)


def graph_to_record(tokens: Sequence[str], g: InfoGraph, vocab: TypeVocab) -> dict:
    return {
        "tokens": list(tokens),
        "entities": [
            {"start": mn.span.start, "end": mn.span.end, "type": vocab.name(mn.node_type)}
            for mn in g.mentions
        ],
        "relations": [
            {"head": r.head, "tail": r.tail, "type": vocab.name(r.edge_type)}
            for r in g.relations
        ],
    }


def load_jsonl(path, vocab: TypeVocab, m: int = 16) -> Dataset:
    """Parse and validate a JSONL corpus; malformed lines report their number."""
    examples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                tokens, graph = record_to_graph(record, vocab, m)
            except (KeyError, ValueError) as err:
                raise CorpusError(f"{path}:{lineno}: malformed record: {err}") from err
            problems = validate_graph(graph, len(tokens), m, vocab)
            if problems:
                raise CorpusError(f"{path}:{lineno}: invalid graph: {problems[0]}")
            examples.append((tokens, graph))
    ds = Dataset(examples, vocab, m)
    ds.tally_edge_freq()
    return ds


def save_jsonl(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        for tokens, graph in dataset.examples:
            fh.write(json.dumps(graph_to_record(tokens, graph, dataset.vocab)) + "\n")


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------

# slot fillers; a few multi-token surfaces keep the span head honest
ENTITY_POOL: dict[str, tuple[tuple[str, ...], ...]] = {
    "PER": (
        ("alice",), ("bob",), ("carol",), ("david",), ("erin",), ("frank",),
        ("grace",), ("henry",), ("irene",), ("jack",), ("karen",), ("louis",),
        ("mary", "ann"), ("nina",), ("oscar",), ("peter",), ("quinn",),
        ("rosa",), ("sam",), ("tina",), ("victor", "hugo"), ("wendy",),
    ),
    "ORG": (
        ("acme",), ("globex",), ("initech",), ("umbrella",), ("cyberdyne",),
        ("the", "red", "cross"), ("stark", "industries"), ("wayne", "enterprises"),
        ("tyrell",), ("aperture",), ("monarch",), ("vandelay",),
    ),
    "GPE": (
        ("paris",), ("london",), ("baghdad",), ("tokyo",), ("cairo",),
        ("new", "york"), ("san", "juan"), ("oslo",), ("lima",), ("quito",),
    ),
    "LOC": (
        ("the", "river"), ("the", "coast"), ("the", "valley"), ("the", "desert"),
        ("the", "mountains",), ("the", "harbor"),
    ),
    "FAC": (
        ("the", "airport"), ("the", "bridge"), ("the", "stadium"),
        ("fort", "knox"), ("the", "depot"), ("the", "refinery"),
    ),
    "VEH": (
        ("truck",), ("jeep",), ("tanker",), ("helicopter",), ("sedan",), ("ferry",),
    ),
    "WEA": (
        ("rifle",), ("cannon",), ("missile",), ("torpedo",), ("mortar",),
    ),
}


@dataclass(frozen=True)
class Template:
    """Slotted sentence pattern with deterministic relation rules.

    ``pattern`` mixes literal tokens and integer slot references; ``slots``
    names the entity type per slot; ``relations`` is (head_slot, tail_slot,
    relation name).
    """

    pattern: tuple[object, ...]
    slots: tuple[str, ...]
    relations: tuple[tuple[int, int, str], ...]


TEMPLATES: tuple[Template, ...] = (
    Template((0, "works", "for", 1, "."), ("PER", "ORG"), ((0, 1, "ORG-AFF"),)),
    Template((0, "was", "captured", "in", 1, "."), ("PER", "GPE"), ((1, 0, "PHYS"),)),
    Template(
        (0, "and", 1, "met", "at", 2, "."),
        ("PER", "PER", "FAC"),
        ((0, 1, "PER-SOC"), (0, 2, "PHYS"), (1, 2, "PHYS")),
    ),
    Template((0, "is", "part", "of", 1, "."), ("ORG", "ORG"), ((0, 1, "PART-WHOLE"),)),
    Template((0, "belongs", "to", 1, "."), ("WEA", "ORG"), ((1, 0, "ART"),)),
    Template(
        (0, "drove", "a", 1, "to", 2, "."),
        ("PER", "VEH", "LOC"),
        ((0, 1, "ART"), (0, 2, "PHYS")),
    ),
    Template((0, "is", "located", "in", 1, "."), ("FAC", "GPE"), ((0, 1, "PHYS"),)),
    Template((0, "is", "a", "citizen", "of", 1, "."), ("PER", "GPE"), ((0, 1, "GEN-AFF"),)),
    Template(
        (0, "opened", 1, "in", 2, "."),
        ("ORG", "FAC", "GPE"),
        ((0, 1, "ART"), (1, 2, "PHYS")),
    ),
    Template((0, "leads", 1, "."), ("PER", "ORG"), ((0, 1, "ORG-AFF"),)),
    Template((0, "carried", "a", 1, "."), ("VEH", "WEA"), ((0, 1, "OTHER-AFF"),)),
    Template(
        (0, "visited", 1, "with", 2, "."),
        ("PER", "GPE", "PER"),
        ((0, 1, "PHYS"), (2, 1, "PHYS"), (0, 2, "PER-SOC")),
    ),
    Template(
        (0, "bought", "a", 1, "from", 2, "."),
        ("ORG", "VEH", "ORG"),
        ((0, 1, "ART"), (2, 1, "OTHER-AFF")),
    ),
    Template((0, "sailed", "past", 1, "."), ("VEH", "LOC"), ((0, 1, "PHYS"),)),
    # empty-graph sentences
    Template(("it", "rained", "all", "day", "."), (), ()),
    Template(("nothing", "happened", "today", "."), (), ()),
    Template(("the", "meeting", "was", "quiet", "."), (), ()),
)


def synth_generate(
    size: int,
    seed: int,
    vocab: TypeVocab | None = None,
    m: int = 16,
    templates: Sequence[Template] = TEMPLATES,
    cls_token: str = "[CLS]",
) -> Dataset:
    """Reproducible synthetic corpus: same seed, same bytes.

    Every sentence starts with the reserved ``cls_token``; entity spans use
    verbatim token coordinates (so they never start at position 0).
    """
    vocab = vocab or default_vocab()
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(size):
        tpl = templates[int(rng.integers(len(templates)))]
        fillers: list[tuple[str, ...]] = []
        used: set[tuple[str, ...]] = set()
        for slot_type in tpl.slots:
            pool = ENTITY_POOL[slot_type]
            pick = pool[int(rng.integers(len(pool)))]
            while pick in used:  # no duplicate surfaces within one sentence
                pick = pool[int(rng.integers(len(pool)))]
            used.add(pick)
            fillers.append(pick)
        tokens: list[str] = [cls_token]
        spans: list[TextSpan] = []
        for piece in tpl.pattern:
            if isinstance(piece, int):
                start = len(tokens)
                tokens.extend(fillers[piece])
                spans.append(TextSpan(start, len(tokens)))
            else:
                tokens.append(piece)
        mentions = [Mention(spans[i], vocab.index(tpl.slots[i])) for i in range(len(tpl.slots))]
        relations = [
            RelationEdge(h, t, vocab.index(name)) for h, t, name in tpl.relations
        ]
        graph = make_graph(mentions, relations, n=len(tokens), m=m)
        examples.append((tuple(tokens), graph))
    ds = Dataset(examples, vocab, m)
    ds.tally_edge_freq()
    return ds


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

@dataclass
class PRF:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class F1Result:
    ner: PRF
    re: PRF


def eval_f1(pred: Sequence[InfoGraph], gold: Sequence[InfoGraph]) -> F1Result:
    """Micro-averaged F1; a mention counts when span+type match exactly, a
    relation when its type and both argument spans match exactly."""
    if len(pred) != len(gold):
        raise ValueError(f"prediction/gold length mismatch: {len(pred)} vs {len(gold)}")
    ner, re = PRF(), PRF()
    for p, g in zip(pred, gold):
        pm = {(mn.span.start, mn.span.end, mn.node_type) for mn in p.mentions}
        gm = {(mn.span.start, mn.span.end, mn.node_type) for mn in g.mentions}
        ner.tp += len(pm & gm)
        ner.fp += len(pm - gm)
        ner.fn += len(gm - pm)

        def rels(graph: InfoGraph) -> Counter:
            return Counter(
                (
                    graph.mentions[r.head].span.start,
                    graph.mentions[r.head].span.end,
                    graph.mentions[r.tail].span.start,
                    graph.mentions[r.tail].span.end,
                    r.edge_type,
                )
                for r in graph.relations
            )

        pr, gr = rels(p), rels(g)
        inter = sum((pr & gr).values())
        re.tp += inter
        re.fp += sum(pr.values()) - inter
        re.fn += sum(gr.values()) - inter
    return F1Result(ner=ner, re=re)


# ---------------------------------------------------------------------------
# sequence dumps (CLI-facing)
# ---------------------------------------------------------------------------

def write_sequence_dump(path, seqs, vocab: TypeVocab, m: int, traversal: Traversal) -> None:
    """Header line of metadata, then one line per sequence: n followed by items."""
    header = {"m": m, "traversal": traversal.value, "vocab_hash": vocab.config_hash()}
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for seq in seqs:
            fh.write(" ".join(str(x) for x in (seq.n, *seq.items)) + "\n")


def read_sequence_dump(path, vocab: TypeVocab):
    from .altseq_codec import AltSequence

    with open(path) as fh:
        header = json.loads(fh.readline())
        if header["vocab_hash"] != vocab.config_hash():
            raise CorpusError("sequence dump was written with a different vocab")
        m = header["m"]
        traversal = Traversal(header["traversal"])
        seqs = []
        for line in fh:
            if not line.strip():
                continue
            nums = [int(x) for x in line.split()]
            seqs.append(AltSequence(tuple(nums[1:]), traversal, vocab, nums[0], m))
    return seqs
