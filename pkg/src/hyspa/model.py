"""The toy extraction network: context encoder, hybrid-span encoding via
attention, N mixed-attention decoder blocks, and the hybrid span decoding head.

Two forward implementations coexist on purpose:

* a batched autodiff path (``sequence_loss`` / ``train_step``) used for
  training, built on :mod:`hyspa.numerics`;
* a row-wise numpy inference engine (``encode_context``, ``DecodeSession``,
  ``decoder_forward``, ``span_head``) in which every target row is produced by
  the same per-row kernels whether computed incrementally with caches or over
  the full sequence, making cached decoding bitwise-equal to recomputation.

The paper-style external embedders are replaced by one trainable lookup table
covering type names and text tokens; text rows additionally receive the
sinusoidal position encoding so duplicate surface tokens stay distinguishable.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nm
from .altseq_codec import AltSequence, Traversal
from .embeddings import (
    PositionAnnotation,
    Role,
    bfs_components,
    dfs_components,
    make_annotator,
    sinusoidal,
    tree_onehot,
    DFS_LEVEL_TABLE,
    TREE_BRANCH_CAP,
)
from .hybrid_index import index_to_hspan
from .masks import alternating_masks, mixed_attention_mask, span_attention_mask
from .numerics import NEG_INF, Tensor
from .type_vocab import ElementClass, TypeVocab, classify, segment_ids

UNK_TOKEN = "[UNK]"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_m: int = 64
    layers: int = 2
    heads: int = 8
    m: int = 16
    dropout: float = 0.1
    max_tokens: int = 2048

    def __post_init__(self):
        if self.d_m % self.heads != 0:
            raise ModelError(f"d_m={self.d_m} not divisible by heads={self.heads}")
        if self.layers < 0 or self.m < 1:
            raise ModelError("layers must be >= 0 and m >= 1")


@dataclass(frozen=True)
class TokenVocab:
    tokens: tuple[str, ...]

    @classmethod
    def build(cls, corpus: Iterable[Sequence[str]]) -> "TokenVocab":
        seen = sorted({tok for sent in corpus for tok in sent})
        return cls(tokens=(UNK_TOKEN, *[t for t in seen if t != UNK_TOKEN]))

    def __len__(self):
        return len(self.tokens)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        index = self._index()
        return np.array([index.get(t, 0) for t in tokens], dtype=np.intp)

    def _index(self) -> dict[str, int]:
        if not hasattr(self, "_cache"):
            object.__setattr__(self, "_cache", {t: i for i, t in enumerate(self.tokens)})
        return getattr(self, "_cache")


def init_params(cfg: ModelConfig, vocab: TypeVocab, token_vocab: TokenVocab, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d = cfg.d_m

    def p(*shape):
        return Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    params: dict[str, Tensor] = {
        "embed": p(vocab.l_p + len(token_vocab), d),
        "meta": p(4, d),
        "span_w1": p(d, d),
        "span_b1": zeros(d),
        "span_w2": p(d, d),
        "span_b2": zeros(d),
        "trav_pc": p(2, d),
        "trav_tree": p(3 * TREE_BRANCH_CAP, d),
        "dfs_level": p(DFS_LEVEL_TABLE, d),
        "srctgt": p(2, d),
        "head_w5": p(d, d),
        "head_b5": zeros(d),
        "head_w6": p(d, d),
        "head_b6": zeros(d),
    }
    for i in range(cfg.layers):
        params[f"L{i}.wq"] = p(d, d)
        params[f"L{i}.bq"] = zeros(d)
        params[f"L{i}.wk"] = p(d, d)
        params[f"L{i}.bk"] = zeros(d)
        params[f"L{i}.wv"] = p(d, d)
        params[f"L{i}.bv"] = zeros(d)
        params[f"L{i}.w3"] = p(d, 4 * d)
        params[f"L{i}.b3"] = zeros(4 * d)
        params[f"L{i}.w4"] = p(4 * d, d)
        params[f"L{i}.b4"] = zeros(d)
        params[f"L{i}.ln1_g"] = Tensor(np.ones(d), requires_grad=True)
        params[f"L{i}.ln1_b"] = zeros(d)
        params[f"L{i}.ln2_g"] = Tensor(np.ones(d), requires_grad=True)
        params[f"L{i}.ln2_b"] = zeros(d)
    return params


def _h_row_ids(vocab: TypeVocab, token_ids: np.ndarray) -> np.ndarray:
    return np.concatenate([np.arange(vocab.l_p, dtype=np.intp), vocab.l_p + token_ids])


def _position_rows(vocab: TypeVocab, n: int, d: int) -> np.ndarray:
    """Sinusoidal positions on text rows only; type rows get zeros."""
    out = np.zeros((vocab.l_p + n, d))
    for j in range(n):
        out[vocab.l_p + j] = sinusoidal(j, d)
    return out


# ---------------------------------------------------------------------------
# training path (autodiff)
# ---------------------------------------------------------------------------

def _traversal_matrix(
    items: Sequence[int],
    traversal: Traversal,
    vocab: TypeVocab,
    n: int,
    cfg: ModelConfig,
    params: dict[str, Tensor],
) -> Tensor:
    ann = make_annotator(traversal, vocab, n, cfg.m)
    annotations = [ann.push(k) for k in items]
    if traversal == Traversal.BFS:
        levels, roles, trees = bfs_components(annotations, cfg.d_m)
        return nm.add(
            nm.add(Tensor(levels), nm.matmul(Tensor(roles), params["trav_pc"])),
            nm.matmul(Tensor(trees), params["trav_tree"]),
        )
    level_ids, conns = dfs_components(annotations, cfg.d_m)
    return nm.add(nm.take_rows(params["dfs_level"], level_ids), Tensor(conns))


def sequence_logits(
    token_ids: np.ndarray,
    seq: AltSequence,
    cfg: ModelConfig,
    params: dict[str, Tensor],
    *,
    strict: bool = False,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Teacher-forced masked logits over all positions, plus the target ids.

    Row i of the result scores the element following decoder input i (inputs
    are [SOS] + items); targets are items + [EOS].
    """
    vocab, n, m = seq.vocab, seq.n, seq.m
    if len(seq.items) == 0:
        raise ModelError("zero-length target sequence")
    if n != len(token_ids):
        raise ModelError(f"sequence n={n} does not match {len(token_ids)} tokens")
    if n > cfg.max_tokens:
        raise ModelError(f"input length {n} exceeds max_tokens={cfg.max_tokens}")
    d = cfg.d_m
    l_p, l_h = vocab.l_p, vocab.l_p + n
    rng = rng or np.random.default_rng(0)

    # hybrid representation H: shared embedding + meta-type + text positions
    h0 = nm.take_rows(params["embed"], _h_row_ids(vocab, token_ids))
    meta = nm.take_rows(params["meta"], np.array(segment_ids(vocab, n), dtype=np.intp))
    H = nm.add(nm.add(h0, meta), Tensor(_position_rows(vocab, n, d)))

    # span encoding of decoder inputs ([SOS] + items) via masked attention
    inputs = [vocab.sos_index, *seq.items]
    hspans = [index_to_hspan(k, m, l_p, n) for k in inputs]
    m0 = span_attention_mask(hspans, l_h)
    cls_row = nm.slice_rows(H, l_p, l_p + 1)
    q = nm.add(nm.matmul(cls_row, params["span_w1"]), params["span_b1"])
    K = nm.add(nm.matmul(H, params["span_w2"]), params["span_b2"])
    att = nm.add(nm.scale(nm.matmul(q, nm.transpose(K, (1, 0))), 1.0 / math.sqrt(d)), Tensor(m0))
    Hy = nm.matmul(nm.softmax(att), H)

    trav = _traversal_matrix(seq.items, seq.traversal, vocab, n, cfg, params)
    trav_full = nm.concat_rows([Tensor(np.zeros((1, d))), trav])  # zero row for [SOS]
    Hy = nm.add(Hy, trav_full)

    # mixed-attention decoder over [source text rows ; target rows]
    L = len(inputs)
    h_text = nm.slice_rows(H, l_p, l_h)
    src = nm.add(h_text, nm.slice_rows(params["srctgt"], 0, 1))
    tgt = nm.add(Hy, nm.slice_rows(params["srctgt"], 1, 2))
    x = nm.concat_rows([src, tgt])
    mask = Tensor(mixed_attention_mask(n, L))
    heads, dh = cfg.heads, d // cfg.heads
    for i in range(cfg.layers):
        qkv = []
        for w, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv")):
            proj = nm.add(nm.matmul(x, params[f"L{i}.{w}"]), params[f"L{i}.{b}"])
            qkv.append(nm.transpose(nm.reshape(proj, (n + L, heads, dh)), (1, 0, 2)))
        qh, kh, vh = qkv
        scores = nm.scale(nm.matmul(qh, nm.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(d))
        attn = nm.matmul(nm.softmax(nm.add(scores, mask)), vh)
        attn = nm.reshape(nm.transpose(attn, (1, 0, 2)), (n + L, d))
        attn = nm.dropout(attn, cfg.dropout, rng, training)
        x1 = nm.layer_norm(nm.add(attn, x), params[f"L{i}.ln1_g"], params[f"L{i}.ln1_b"])
        inner = nm.relu(nm.add(nm.matmul(x1, params[f"L{i}.w3"]), params[f"L{i}.b3"]))
        ffn = nm.add(nm.matmul(inner, params[f"L{i}.w4"]), params[f"L{i}.b4"])
        ffn = nm.dropout(ffn, cfg.dropout, rng, training)
        x = nm.layer_norm(nm.add(ffn, x1), params[f"L{i}.ln2_g"], params[f"L{i}.ln2_b"])
    hy_n = nm.slice_rows(x, n, n + L)

    # hybrid span decoding head, batched over positions
    s_rep = nm.add(nm.matmul(hy_n, params["head_w5"]), params["head_b5"])
    e_rep = nm.add(nm.matmul(hy_n, params["head_w6"]), params["head_b6"])
    h_types = nm.slice_rows(H, 0, l_p)
    types_t = nm.transpose(h_types, (1, 0))
    text_t = nm.transpose(nm.slice_rows(H, l_p, l_h), (1, 0))
    m_a = np.empty((L, l_p))
    m_ap = np.empty((L, n))
    for pos, prev in enumerate(inputs):
        prev_cls = ElementClass.VIRTUAL_SOS if pos == 0 else classify(prev, vocab, n, m)
        m_a[pos], m_ap[pos] = alternating_masks(prev_cls, vocab, n, strict=strict, prev_index=prev)
    type_scores = nm.add(nm.add(nm.matmul(s_rep, types_t), nm.matmul(e_rep, types_t)), Tensor(m_a))
    ts_vec = nm.add(nm.matmul(s_rep, text_t), Tensor(m_ap))
    te_vec = nm.add(nm.matmul(e_rep, text_t), Tensor(m_ap))
    t_mat = nm.add(nm.unfold(te_vec, m), nm.reshape(ts_vec, (L, n, 1)))
    logits = nm.concat_cols([type_scores, nm.reshape(t_mat, (L, n * m))])

    targets = np.array([*seq.items, vocab.eos_index], dtype=np.intp)
    return logits, targets


def sequence_loss(
    token_ids: np.ndarray,
    seq: AltSequence,
    cfg: ModelConfig,
    params: dict[str, Tensor],
    *,
    label_smoothing: float = 0.1,
    strict: bool = False,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Teacher-forced mean per-position label-smoothed CE for one example."""
    logits, targets = sequence_logits(
        token_ids, seq, cfg, params, strict=strict, training=training, rng=rng
    )
    return nm.label_smoothed_ce(logits, targets, label_smoothing)


def train_step(
    batch: Sequence[tuple[np.ndarray, AltSequence]],
    cfg: ModelConfig,
    params: dict[str, Tensor],
    opt: nm.AdamW,
    *,
    label_smoothing: float = 0.1,
    clip: float = 0.25,
    strict: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """One optimizer step over a batch of (token_ids, target sequence) pairs."""
    if not batch:
        raise ModelError("empty batch")
    rng = rng or np.random.default_rng(0)
    opt.zero_grad()
    total = 0.0
    for token_ids, seq in batch:
        loss = sequence_loss(
            token_ids, seq, cfg, params,
            label_smoothing=label_smoothing, strict=strict, training=True, rng=rng,
        )
        if not np.isfinite(loss.data).all():
            raise FloatingPointError(
                f"non-finite loss at opt step {opt.step_count + 1} (n={seq.n}, T={len(seq.items)})"
            )
        total += loss.item()
        nm.scale(loss, 1.0 / len(batch)).backward()
    nm.clip_global_norm(params.values(), clip)
    opt.step()
    return total / len(batch)


def prepare_training_data(dataset, traversal: Traversal = Traversal.BFS):
    """Pre-encode a dataset once: (token_ids, canonical target sequence) pairs."""
    from .altseq_codec import encode
    from .info_graph import canonicalize

    token_vocab = TokenVocab.build([t for t, _ in dataset.examples])
    prepared = []
    for tokens, graph in dataset.examples:
        og = canonicalize(graph, dataset.edge_freq, dataset.vocab)
        seq = encode(og, dataset.vocab, dataset.m, traversal)
        prepared.append((token_vocab.ids(tokens), seq))
    return token_vocab, prepared


def fit(
    cfg: ModelConfig,
    params: dict[str, Tensor],
    prepared: Sequence[tuple[np.ndarray, AltSequence]],
    opt: "nm.AdamW",
    steps: int,
    batch_size: int = 16,
    *,
    label_smoothing: float = 0.1,
    clip: float = 0.25,
    strict: bool = False,
    seed: int = 0,
    log_every: int = 0,
    log=print,
    callback=None,
) -> list[tuple[int, float]]:
    """Run ``steps`` optimizer steps over random batches; returns (step, loss) history.

    ``callback(step)`` may return True to stop early (e.g. on a dev metric).
    """
    rng = np.random.default_rng(seed)
    drop_rng = np.random.default_rng(seed + 1)
    history = []
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(prepared), size=batch_size)
        batch = [prepared[i] for i in idx]
        loss = train_step(
            batch, cfg, params, opt,
            label_smoothing=label_smoothing, clip=clip, strict=strict, rng=drop_rng,
        )
        history.append((step, loss))
        if log_every and step % log_every == 0:
            log(f"step {step:>6d}  lr {opt.current_lr():.2e}  loss {loss:.4f}")
        if callback is not None and callback(step):
            break
    return history


# ---------------------------------------------------------------------------
# inference engine (row-wise deterministic numpy)
# ---------------------------------------------------------------------------

def _softmax_vec(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def _logsumexp(x: np.ndarray) -> float:
    mx = x.max()
    return float(mx + np.log(np.exp(x - mx).sum()))


def _ln_row(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    mu = x.mean()
    xc = x - mu
    var = (xc * xc).mean()
    return xc / np.sqrt(var + eps) * g + b


@dataclass
class ContextRep:
    """Encoded context: the hybrid representation plus per-layer source caches."""

    H: np.ndarray
    segment_ids: np.ndarray
    n: int
    span_scores: np.ndarray  # (l_h,) precomputed span-attention score vector
    src_k: list[np.ndarray]  # per layer (n, d_m)
    src_v: list[np.ndarray]
    l_p: int

    @property
    def h_types(self) -> np.ndarray:
        return self.H[: self.l_p]

    @property
    def h_text(self) -> np.ndarray:
        return self.H[self.l_p :]


def encode_context(
    tokens: Sequence[str],
    cfg: ModelConfig,
    params: dict[str, Tensor],
    vocab: TypeVocab,
    token_vocab: TokenVocab,
) -> ContextRep:
    """Build H (type rows ++ text rows) and the one-time decoder source caches.

    Computed once per input and shared by every decoding hypothesis; only
    per-target-row computation needs the row-wise kernels.
    """
    n = len(tokens)
    if n < 1:
        raise ModelError("empty token list")
    if n > cfg.max_tokens:
        raise ModelError(f"input length {n} exceeds max_tokens={cfg.max_tokens}")
    d = cfg.d_m
    np_params = {k: v.data for k, v in params.items()}
    token_ids = token_vocab.ids(tokens)
    seg = np.array(segment_ids(vocab, n), dtype=np.intp)
    H = np_params["embed"][_h_row_ids(vocab, token_ids)] + np_params["meta"][seg]
    H = H + _position_rows(vocab, n, d)

    q_cls = H[vocab.l_p] @ np_params["span_w1"] + np_params["span_b1"]
    K = H @ np_params["span_w2"] + np_params["span_b2"]
    span_scores = (K @ q_cls) / math.sqrt(d)

    src = H[vocab.l_p :] + np_params["srctgt"][0]
    src_k, src_v = [], []
    heads, dh = cfg.heads, d // cfg.heads
    x = src
    for i in range(cfg.layers):
        k = x @ np_params[f"L{i}.wk"] + np_params[f"L{i}.bk"]
        v = x @ np_params[f"L{i}.wv"] + np_params[f"L{i}.bv"]
        src_k.append(k)
        src_v.append(v)
        q = x @ np_params[f"L{i}.wq"] + np_params[f"L{i}.bq"]
        out = np.empty_like(x)
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            scores = (q[:, sl] @ k[:, sl].T) / math.sqrt(d)
            w = np.exp(scores - scores.max(axis=-1, keepdims=True))
            w /= w.sum(axis=-1, keepdims=True)
            out[:, sl] = w @ v[:, sl]
        x1 = np.stack([_ln_row(r, np_params[f"L{i}.ln1_g"], np_params[f"L{i}.ln1_b"]) for r in out + x])
        inner = np.maximum(x1 @ np_params[f"L{i}.w3"] + np_params[f"L{i}.b3"], 0.0)
        ffn = inner @ np_params[f"L{i}.w4"] + np_params[f"L{i}.b4"]
        x = np.stack([_ln_row(r, np_params[f"L{i}.ln2_g"], np_params[f"L{i}.ln2_b"]) for r in ffn + x1])
    return ContextRep(
        H=H, segment_ids=seg, n=n, span_scores=span_scores,
        src_k=src_k, src_v=src_v, l_p=vocab.l_p,
    )


def _span_row(ctx: ContextRep, k: int, m: int) -> np.ndarray:
    """Span-attention encoding of one hybrid index: softmax over its H window."""
    h = index_to_hspan(k, m, ctx.l_p, ctx.n)
    w = _softmax_vec(ctx.span_scores[h.lo : h.hi + 1])
    return w @ ctx.H[h.lo : h.hi + 1]


def _traversal_row(
    ann: PositionAnnotation,
    traversal: Traversal,
    d_m: int,
    np_params: dict[str, np.ndarray],
) -> np.ndarray:
    if traversal == Traversal.BFS:
        row = sinusoidal(ann.level, d_m)
        if ann.role is Role.PARENT:
            row = row + np_params["trav_pc"][0]
        elif ann.role is Role.CHILD:
            row = row + np_params["trav_pc"][1]
        return row + tree_onehot(ann.path) @ np_params["trav_tree"]
    return np_params["dfs_level"][ann.level % DFS_LEVEL_TABLE] + sinusoidal(ann.offset, d_m)


def encode_hybrid_spans(
    items: Sequence[int],
    ctx: ContextRep,
    cfg: ModelConfig,
    params: dict[str, Tensor],
    vocab: TypeVocab,
    traversal: Traversal = Traversal.BFS,
) -> np.ndarray:
    """Span-attention rows for a sequence prefix, traversal embedding added.

    Each element becomes a weighted sum of its H window (queries come from the
    repeated first-text-row [CLS] representation, folded into the per-context
    score vector); type elements reproduce their H row exactly before the
    traversal component is added.
    """
    np_params = {k: v.data for k, v in params.items()}
    annot = make_annotator(traversal, vocab, ctx.n, cfg.m)
    rows = np.empty((len(items), cfg.d_m))
    for i, k in enumerate(items):
        ann = annot.push(k)
        rows[i] = _span_row(ctx, k, cfg.m) + _traversal_row(ann, traversal, cfg.d_m, np_params)
    return rows


class DecodeSession:
    """Incremental decoder state for one hypothesis.

    ``append`` encodes one more input element, pushes it through the decoder
    blocks with cached keys/values, and leaves the final hidden row in
    ``last_hidden``.  ``fork`` clones the mutable caches for beam search.
    """

    def __init__(
        self,
        ctx: ContextRep,
        cfg: ModelConfig,
        params: dict[str, Tensor],
        vocab: TypeVocab,
        traversal: Traversal,
        max_len: int,
    ):
        self.ctx = ctx
        self.cfg = cfg
        self.vocab = vocab
        self.traversal = traversal
        self.max_len = max_len
        self.np_params = {k: v.data for k, v in params.items()}
        self.annotator = make_annotator(traversal, vocab, ctx.n, cfg.m)
        self.t = 0
        d = cfg.d_m
        self.tgt_k = [np.empty((max_len + 1, d)) for _ in range(cfg.layers)]
        self.tgt_v = [np.empty((max_len + 1, d)) for _ in range(cfg.layers)]
        self.last_hidden: np.ndarray | None = None
        self.append(None)  # [SOS] context row

    def fork(self) -> "DecodeSession":
        clone = object.__new__(DecodeSession)
        clone.ctx = self.ctx
        clone.cfg = self.cfg
        clone.vocab = self.vocab
        clone.traversal = self.traversal
        clone.max_len = self.max_len
        clone.np_params = self.np_params
        clone.annotator = self.annotator.copy()
        clone.t = self.t
        clone.tgt_k = [a.copy() for a in self.tgt_k]
        clone.tgt_v = [a.copy() for a in self.tgt_v]
        clone.last_hidden = None if self.last_hidden is None else self.last_hidden.copy()
        return clone

    def _trav_row(self, ann: PositionAnnotation) -> np.ndarray:
        return _traversal_row(ann, self.traversal, self.cfg.d_m, self.np_params)

    def append(self, k: int | None) -> None:
        """Feed the next input element (None = the [SOS] context row)."""
        if self.t > self.max_len:
            raise ModelError("decode session exceeded max_len")
        cfg, p, ctx = self.cfg, self.np_params, self.ctx
        d, heads = cfg.d_m, cfg.heads
        dh = d // heads
        if k is None:
            row = _span_row(ctx, self.vocab.sos_index, cfg.m)
        else:
            row = _span_row(ctx, k, cfg.m) + self._trav_row(self.annotator.push(k))
        x = row + p["srctgt"][1]
        t = self.t
        for i in range(cfg.layers):
            q = x @ p[f"L{i}.wq"] + p[f"L{i}.bq"]
            kk = x @ p[f"L{i}.wk"] + p[f"L{i}.bk"]
            vv = x @ p[f"L{i}.wv"] + p[f"L{i}.bv"]
            self.tgt_k[i][t] = kk
            self.tgt_v[i][t] = vv
            out = np.empty(d)
            for h in range(heads):
                sl = slice(h * dh, (h + 1) * dh)
                qs = q[sl]
                s_src = ctx.src_k[i][:, sl] @ qs
                s_tgt = self.tgt_k[i][: t + 1, sl] @ qs
                w = _softmax_vec(np.concatenate([s_src, s_tgt]) / math.sqrt(d))
                out[sl] = w[: ctx.n] @ ctx.src_v[i][:, sl] + w[ctx.n :] @ self.tgt_v[i][: t + 1, sl]
            x1 = _ln_row(out + x, p[f"L{i}.ln1_g"], p[f"L{i}.ln1_b"])
            inner = np.maximum(x1 @ p[f"L{i}.w3"] + p[f"L{i}.b3"], 0.0)
            ffn = inner @ p[f"L{i}.w4"] + p[f"L{i}.b4"]
            x = _ln_row(ffn + x1, p[f"L{i}.ln2_g"], p[f"L{i}.ln2_b"])
        self.last_hidden = x
        self.t = t + 1


def decoder_forward(
    ctx: ContextRep,
    elements: Sequence[int | None],
    cfg: ModelConfig,
    params: dict[str, Tensor],
    vocab: TypeVocab,
    traversal: Traversal = Traversal.BFS,
    cache: DecodeSession | None = None,
) -> np.ndarray:
    """Final-layer hidden rows for the given input elements.

    Without ``cache`` this is a full recomputation; with a session it extends
    the cached state.  Both produce bitwise-identical rows because they share
    the per-row kernels.
    """
    if cache is None:
        sos_stripped = list(elements)
        if sos_stripped and sos_stripped[0] is None:
            sos_stripped = sos_stripped[1:]
        cache = DecodeSession(ctx, cfg, params, vocab, traversal, max_len=len(sos_stripped) + 1)
        rows = [cache.last_hidden.copy()]
        for k in sos_stripped:
            cache.append(k)
            rows.append(cache.last_hidden.copy())
        return np.stack(rows)
    for k in elements:
        cache.append(k)
    return np.stack([cache.last_hidden])


def span_head(
    hidden: np.ndarray,
    ctx: ContextRep,
    prev_class: ElementClass,
    cfg: ModelConfig,
    params: dict[str, Tensor],
    *,
    prev_index: int | None = None,
    strict: bool = False,
    extra_mask: np.ndarray | None = None,
    vocab: TypeVocab,
) -> tuple[np.ndarray, np.ndarray]:
    """Scores and log-probabilities over the n*m + l_p output slots.

    Slot k < l_p is type k; slot l_p + j*m + d is the span (j, j+d+1).  Window
    cells running past the text and alternating-mask slots sit at NEG_INF and
    get probability exactly 0.
    """
    p = {k: v.data for k, v in params.items()}
    n, m = ctx.n, cfg.m
    s = hidden @ p["head_w5"] + p["head_b5"]
    e = hidden @ p["head_w6"] + p["head_b6"]
    m_a, m_ap = alternating_masks(prev_class, vocab, n, strict=strict, prev_index=prev_index)
    type_scores = ctx.h_types @ s + ctx.h_types @ e + m_a
    ts_vec = ctx.h_text @ s + m_ap
    te_vec = ctx.h_text @ e + m_ap
    t_mat = np.full((n, m), NEG_INF)
    for dlt in range(min(m, n)):
        t_mat[: n - dlt, dlt] = ts_vec[: n - dlt] + te_vec[dlt:]
    scores = np.concatenate([type_scores, t_mat.reshape(-1)])
    if extra_mask is not None:
        scores = scores + extra_mask
    logp = scores - _logsumexp(scores)
    return scores, logp


# ---------------------------------------------------------------------------
# bundle + persistence
# ---------------------------------------------------------------------------

@dataclass
class ExtractionModel:
    """Everything needed to decode: config, parameters, vocabularies, ordering stats."""

    cfg: ModelConfig
    params: dict[str, Tensor]
    vocab: TypeVocab
    token_vocab: TokenVocab
    edge_freq: dict[int, int] = field(default_factory=dict)
    traversal: Traversal = Traversal.BFS

    def open_session(
        self, tokens: Sequence[str], max_len: int, traversal: Traversal | None = None
    ) -> DecodeSession:
        ctx = encode_context(tokens, self.cfg, self.params, self.vocab, self.token_vocab)
        return DecodeSession(
            ctx, self.cfg, self.params, self.vocab, traversal or self.traversal, max_len
        )

    def save(self, path) -> None:
        meta = {
            "cfg": {
                "d_m": self.cfg.d_m, "layers": self.cfg.layers, "heads": self.cfg.heads,
                "m": self.cfg.m, "dropout": self.cfg.dropout, "max_tokens": self.cfg.max_tokens,
            },
            "edge_types": list(self.vocab.edge_types),
            "node_types": list(self.vocab.node_types),
            "tokens": list(self.token_vocab.tokens),
            "edge_freq": {str(k): v for k, v in self.edge_freq.items()},
            "traversal": self.traversal.value,
        }
        arrays = {f"param/{k}": v.data for k, v in self.params.items()}
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "ExtractionModel":
        from .type_vocab import build_vocab

        with np.load(path) as blob:
            meta = json.loads(bytes(blob["__meta__"]).decode())
            params = {
                k[len("param/") :]: Tensor(blob[k].copy(), requires_grad=True)
                for k in blob.files
                if k.startswith("param/")
            }
        cfg = ModelConfig(**meta["cfg"])
        vocab = build_vocab(meta["edge_types"], meta["node_types"])
        token_vocab = TokenVocab(tokens=tuple(meta["tokens"]))
        edge_freq = {int(k): v for k, v in meta["edge_freq"].items()}
        return cls(cfg, params, vocab, token_vocab, edge_freq, Traversal(meta["traversal"]))
