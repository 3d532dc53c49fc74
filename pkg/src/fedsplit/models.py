"""Model matrix: the full title/content network, its party-split halves, and
the single-view / no-interaction baselines, plus checkpoint serialization.

Parameter tensors carry canonical dotted names ("theta1.lstm_fwd.w_x", ...).
Those names seed per-tensor init streams and key checkpoint blocks, so both
parties and the centralized oracle materialize bit-identical parameters from
the same shared seed regardless of who creates which tensor first.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import FormatError, ShapeError
from .layers import (
    AttentionParams,
    ConvFilterBank,
    DenseParams,
    EmbeddingTable,
    LstmParams,
    attention_pool,
    bilstm_encode,
    concat,
    connection_conv,
    dense_logits,
    embed_sequence,
    init_attention,
    init_conv_bank,
    init_dense,
    init_embedding,
    init_lstm,
    length_masks,
    max_over_positions,
    relu,
)
from .rng import derive_seed
from .tensor import (
    Tape,
    Tensor,
    add,
    matmul,
    scale_rows,
    slice_cols,
    softmax_cross_entropy,
    softmax_rows,
)

EXTRACTOR_KINDS = ("san", "cnn", "rnn", "fasttext")
INPUT_MODES = ("both", "title_only", "content_only")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture selector plus every dimension that shapes a parameter."""

    extractor_kind: str = "san"
    use_connection_extractor: bool = True
    inputs: str = "both"
    embedding_dim: int = 100
    lstm_hidden: int = 64
    conn_filters: tuple[tuple[int, int], ...] = ((1, 64), (2, 64))
    cnn_heights: tuple[int, ...] = (3, 4, 5)
    cnn_filters: int = 64
    fasttext_dim: int = 100

    def __post_init__(self):
        if self.extractor_kind not in EXTRACTOR_KINDS:
            raise ShapeError(f"unknown extractor kind {self.extractor_kind!r}")
        if self.inputs not in INPUT_MODES:
            raise ShapeError(f"unknown input mode {self.inputs!r}")
        if self.use_connection_extractor and self.inputs != "both":
            raise ShapeError("the connection extractor needs both inputs")
        if self.use_connection_extractor and any(
            h not in (1, 2) for h, _ in self.conn_filters
        ):
            raise ShapeError("connection filter heights must be within {1, 2}")

    @property
    def extractor_width(self) -> int:
        if self.extractor_kind in ("san", "rnn"):
            return 2 * self.lstm_hidden
        if self.extractor_kind == "cnn":
            return len(self.cnn_heights) * self.cnn_filters
        return self.fasttext_dim

    @property
    def classifier_width(self) -> int:
        if self.use_connection_extractor:
            return sum(count for _, count in self.conn_filters)
        if self.inputs == "both":
            return 2 * self.extractor_width
        return self.extractor_width

    def canonical_text(self) -> str:
        d = asdict(self)
        d["conn_filters"] = {str(h): c for h, c in self.conn_filters}
        d["cnn_heights"] = list(self.cnn_heights)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_canonical_text(text: str) -> "ModelSpec":
        d = json.loads(text)
        d["conn_filters"] = tuple(sorted((int(h), c) for h, c in d["conn_filters"].items()))
        d["cnn_heights"] = tuple(d["cnn_heights"])
        return ModelSpec(**d)


@dataclass
class ExtractorParams:
    kind: str
    embedding: EmbeddingTable
    lstm_fwd: LstmParams | None = None
    lstm_bwd: LstmParams | None = None
    attn: AttentionParams | None = None
    cnn: ConvFilterBank | None = None
    ft: DenseParams | None = None


@dataclass
class ModelParams:
    """The four parameter groups; theta1/3/4 live on PartyA, theta2 on PartyB."""

    spec: ModelSpec
    title: ExtractorParams | None = None     # theta1
    content: ExtractorParams | None = None   # theta2
    conn: ConvFilterBank | None = None       # theta3
    clf: DenseParams | None = None           # theta4

    def _extractor_named(self, prefix: str, p: ExtractorParams) -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.embed", p.embedding.matrix)]
        if p.lstm_fwd is not None:
            for tag, lp in (("lstm_fwd", p.lstm_fwd), ("lstm_bwd", p.lstm_bwd)):
                out += [(f"{prefix}.{tag}.w_x", lp.w_x),
                        (f"{prefix}.{tag}.w_h", lp.w_h),
                        (f"{prefix}.{tag}.b", lp.b)]
        if p.attn is not None:
            out += [(f"{prefix}.attn.w_a", p.attn.w_a),
                    (f"{prefix}.attn.v_context", p.attn.v_context)]
        if p.cnn is not None:
            for h in p.cnn.heights:
                out += [(f"{prefix}.cnn.h{h}.w", p.cnn.weights[h]),
                        (f"{prefix}.cnn.h{h}.b", p.cnn.biases[h])]
        if p.ft is not None:
            out += [(f"{prefix}.ft.w", p.ft.w), (f"{prefix}.ft.b", p.ft.b)]
        return out

    def named_tensors(self, groups: tuple[str, ...] = ("theta1", "theta2", "theta3", "theta4"),
                      ) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        if "theta1" in groups and self.title is not None:
            out += self._extractor_named("theta1", self.title)
        if "theta2" in groups and self.content is not None:
            out += self._extractor_named("theta2", self.content)
        if "theta3" in groups and self.conn is not None:
            for h in self.conn.heights:
                out += [(f"theta3.conv.h{h}.w", self.conn.weights[h]),
                        (f"theta3.conv.h{h}.b", self.conn.biases[h])]
        if "theta4" in groups and self.clf is not None:
            out += [("theta4.w", self.clf.w), ("theta4.b", self.clf.b)]
        return sorted(out, key=lambda kv: kv[0])

    def trainable_named(self, groups=("theta1", "theta2", "theta3", "theta4")):
        return [(n, t) for n, t in self.named_tensors(groups) if t.requires_grad]

    def zero_grads(self, groups=("theta1", "theta2", "theta3", "theta4")) -> None:
        for _, t in self.trainable_named(groups):
            t.zero_grad()


def _init_extractor(spec: ModelSpec, prefix: str, vocab_size: int, seed: int,
                    trainable_embeddings: bool, dtype,
                    table: EmbeddingTable | None,
                    words: list[str] | None) -> ExtractorParams:
    if table is None:
        table = init_embedding(vocab_size, spec.embedding_dim, seed, words=words,
                               trainable=trainable_embeddings, dtype=dtype)
    p = ExtractorParams(kind=spec.extractor_kind, embedding=table)
    e, d = spec.embedding_dim, spec.lstm_hidden
    if spec.extractor_kind in ("san", "rnn"):
        p.lstm_fwd = init_lstm(e, d, seed, f"{prefix}.lstm_fwd", dtype)
        p.lstm_bwd = init_lstm(e, d, seed, f"{prefix}.lstm_bwd", dtype)
        if spec.extractor_kind == "san":
            p.attn = init_attention(2 * d, seed, f"{prefix}.attn", dtype)
    elif spec.extractor_kind == "cnn":
        p.cnn = init_conv_bank(e, {h: spec.cnn_filters for h in spec.cnn_heights},
                               seed, f"{prefix}.cnn", dtype)
    else:
        p.ft = init_dense(e, spec.fasttext_dim, seed, f"{prefix}.ft", dtype)
    return p


def init_model(spec: ModelSpec, seed: int, title_vocab: int = 0, content_vocab: int = 0,
               trainable_embeddings: bool = False, dtype=np.float32,
               title_table: EmbeddingTable | None = None,
               content_table: EmbeddingTable | None = None,
               title_words: list[str] | None = None,
               content_words: list[str] | None = None,
               groups: tuple[str, ...] = ("theta1", "theta2", "theta3", "theta4"),
               ) -> ModelParams:
    """Materialize the requested parameter groups.

    A party runtime passes only its own groups and never materializes the
    peer's thetas.  seed feeds per-tensor named substreams, so whichever
    subset a runner builds is bit-identical to the centralized trainer's.
    """
    base = derive_seed(seed, "init")
    params = ModelParams(spec=spec)
    if "theta1" in groups and spec.inputs in ("both", "title_only"):
        params.title = _init_extractor(spec, "theta1", title_vocab, base,
                                       trainable_embeddings, dtype, title_table,
                                       title_words)
    if "theta2" in groups and spec.inputs in ("both", "content_only"):
        params.content = _init_extractor(spec, "theta2", content_vocab, base,
                                         trainable_embeddings, dtype, content_table,
                                         content_words)
    if "theta3" in groups and spec.use_connection_extractor:
        params.conn = init_conv_bank(spec.extractor_width, dict(spec.conn_filters),
                                     base, "theta3.conv", dtype)
    if "theta4" in groups:
        params.clf = init_dense(spec.classifier_width, 2, base, "theta4", dtype)
    return params


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def extract_features(tape: Tape, p: ExtractorParams, token_ids: np.ndarray,
                     lengths: np.ndarray) -> Tensor:
    """Run one feature extractor; returns the pooled (B, width) vector."""
    xs = embed_sequence(tape, token_ids, p.embedding)
    dtype = xs[0].data.dtype
    if p.kind == "san":
        hs = bilstm_encode(tape, xs, lengths, p.lstm_fwd, p.lstm_bwd)
        return attention_pool(tape, hs, lengths, p.attn)
    if p.kind == "rnn":
        d = p.lstm_fwd.hidden
        hs = bilstm_encode(tape, xs, lengths, p.lstm_fwd, p.lstm_bwd)
        masks = length_masks(lengths, len(hs), dtype)
        last = (np.arange(len(hs))[None, :] == (np.asarray(lengths) - 1)[:, None])
        fwd_final = None
        for t, h in enumerate(hs):
            sel = Tensor(last[:, t:t + 1].astype(dtype))
            term = scale_rows(tape, slice_cols(tape, h, 0, d), sel)
            fwd_final = term if fwd_final is None else add(tape, fwd_final, term)
        bwd_final = slice_cols(tape, hs[0], d, 2 * d)
        del masks
        return concat(tape, [fwd_final, bwd_final], axis=1)
    if p.kind == "cnn":
        max_h = max(p.cnn.heights)
        if len(xs) < max_h:  # guarantee at least one window per height
            zero = Tensor(np.zeros_like(xs[0].data))
            xs = xs + [zero] * (max_h - len(xs))
        parts = []
        for h in p.cnn.heights:
            w, b = p.cnn.weights[h], p.cnn.biases[h]
            feats = []
            for start in range(len(xs) - h + 1):
                window = xs[start] if h == 1 else concat(tape, xs[start:start + h], axis=1)
                feats.append(relu(tape, add(tape, matmul(tape, window, w), b)))
            parts.append(max_over_positions(tape, feats))
        return concat(tape, parts, axis=1) if len(parts) > 1 else parts[0]
    # fasttext: masked mean of embeddings, then one dense layer
    masks = length_masks(lengths, len(xs), dtype)
    total = None
    for t, x in enumerate(xs):
        term = scale_rows(tape, x, Tensor(masks[:, t:t + 1].copy()))
        total = term if total is None else add(tape, total, term)
    inv_len = Tensor((1.0 / np.asarray(lengths, dtype=dtype))[:, None].astype(dtype))
    mean = scale_rows(tape, total, inv_len)
    return dense_logits(tape, mean, p.ft)


def forward_head(tape: Tape, params: ModelParams, v_title: Tensor,
                 v_content: Tensor) -> Tensor:
    """M3 (if present) then the classifier; returns logits."""
    if params.spec.use_connection_extractor:
        v_conn = connection_conv(tape, v_title, v_content, params.conn)
        return dense_logits(tape, v_conn, params.clf)
    joined = concat(tape, [v_title, v_content], axis=1)
    return dense_logits(tape, joined, params.clf)


def hhn_logits(tape: Tape, params: ModelParams, title_ids, title_lengths,
               content_ids, content_lengths) -> Tensor:
    """Single-tape composition M1 -> M2 -> M3 -> M4 (the centralized path)."""
    if np.asarray(title_ids).shape[0] != np.asarray(content_ids).shape[0]:
        raise ShapeError("title and content batches have different sizes")
    v_title = extract_features(tape, params.title, title_ids, title_lengths)
    v_content = extract_features(tape, params.content, content_ids, content_lengths)
    return forward_head(tape, params, v_title, v_content)


def hhn_forward(params: ModelParams, title_ids, title_lengths, content_ids,
                content_lengths) -> tuple[Tensor, Tape]:
    """Full forward to class probabilities; returns (probs, tape)."""
    tape = Tape()
    logits = hhn_logits(tape, params, title_ids, title_lengths,
                        content_ids, content_lengths)
    return softmax_rows(tape, logits), tape


def single_view_logits(tape: Tape, params: ModelParams, token_ids,
                       lengths) -> Tensor:
    if params.spec.inputs == "both":
        raise ShapeError("single_view_logits needs a title_only/content_only spec")
    p = params.title if params.spec.inputs == "title_only" else params.content
    return dense_logits(tape, extract_features(tape, p, token_ids, lengths), params.clf)


def party_b_forward(params: ModelParams, content_ids, content_lengths,
                    ) -> tuple[Tensor, Tape]:
    """M2 only; the tape is kept so a received gradient can be injected."""
    tape = Tape()
    v_content = extract_features(tape, params.content, content_ids, content_lengths)
    return v_content, tape


def party_a_forward(params: ModelParams, title_ids, title_lengths,
                    v_content: np.ndarray, labels: np.ndarray,
                    ) -> tuple[Tensor, Tensor, np.ndarray, Tape]:
    """M1 + M3 + M4 with the peer's activations as a gradient leaf.

    Runs forward and backward; parameter gradients are left in the theta
    tensors and the cut-layer gradient is returned for transmission.
    """
    v_content = np.asarray(v_content)
    width = params.spec.extractor_width
    if v_content.ndim != 2 or v_content.shape[1] != width:
        raise ShapeError(
            f"cut-layer activations must be (B, {width}), got {v_content.shape}")
    tape = Tape()
    v_title = extract_features(tape, params.title, title_ids, title_lengths)
    vc_leaf = Tensor(v_content, requires_grad=True)
    logits = forward_head(tape, params, v_title, vc_leaf)
    loss, probs = softmax_cross_entropy(tape, logits, labels)
    tape.backward(loss)
    return loss, probs, vc_leaf.grad, tape


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"FHHN"
OPTSTATE_MAGIC = b"FOPT"
CHECKPOINT_VERSION = 1


def _pack_tensors(named: list[tuple[str, np.ndarray]]) -> bytes:
    out = [struct.pack("<I", len(named))]
    for name, arr in named:
        nb = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype=np.float32)
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _unpack_tensors(r: _Reader) -> dict[str, np.ndarray]:
    (count,) = r.unpack("<I")
    out = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).copy()
        out[name] = data
    return out


def write_checkpoint(path, params: ModelParams, config_digest: str,
                     groups: tuple[str, ...]) -> None:
    """FHHN container: magic, version, canonical text, named f32 blocks."""
    header = json.dumps(
        {"spec": json.loads(params.spec.canonical_text()), "config_digest": config_digest},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    named = [(n, t.data) for n, t in params.named_tensors(groups)]
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(_pack_tensors(named))


def read_checkpoint(path) -> tuple[ModelSpec, str, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (version,) = r.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<I")
    header = json.loads(r.take(hlen).decode("utf-8"))
    spec = ModelSpec.from_canonical_text(
        json.dumps(header["spec"], sort_keys=True, separators=(",", ":")))
    return spec, header["config_digest"], _unpack_tensors(r)


def load_into(params: ModelParams, tensors: dict[str, np.ndarray],
              groups: tuple[str, ...]) -> None:
    for name, t in params.named_tensors(groups):
        if name not in tensors:
            raise FormatError(f"checkpoint missing tensor {name}")
        if tensors[name].shape != t.data.shape:
            raise FormatError(
                f"checkpoint tensor {name} has shape {tensors[name].shape}, "
                f"expected {t.data.shape}")
        t.data = tensors[name].astype(t.data.dtype)


def write_optimizer_state(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(OPTSTATE_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(_pack_tensors(sorted(tensors.items())))


def read_optimizer_state(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4) != OPTSTATE_MAGIC:
        raise FormatError(f"{path}: bad optimizer-state magic")
    (version,) = r.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported optimizer-state version {version}")
    (mlen,) = r.unpack("<I")
    meta = json.loads(r.take(mlen).decode("utf-8"))
    return meta, _unpack_tensors(r)


def spec_digest(spec: ModelSpec) -> str:
    return hashlib.sha256(spec.canonical_text().encode("utf-8")).hexdigest()
