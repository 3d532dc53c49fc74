"""Building blocks: embeddings, LSTM, BiLSTM, attention pooling, the two-row
convolution that extracts title/content interaction, and the dense classifier.

Sequences are handled as lists of per-position (B, dim) tensors; padded
positions are masked to exact zeros so pooled outputs do not depend on the
amount of trailing padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .rng import SplitMix64, derive_seed
from .tensor import (
    Tape,
    Tensor,
    add,
    concat,
    matmul,
    masked_softmax,
    maximum,
    mul,
    relu,
    scale_rows,
    sigmoid,
    slice_cols,
    tanh,
)

PAD_ID = 0
UNK_ID = 1


@dataclass
class EmbeddingTable:
    """Token embedding matrix; row 0 is the pad vector and is never updated."""

    matrix: Tensor

    @property
    def vocab_size(self) -> int:
        return self.matrix.data.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.data.shape[1]

    @property
    def trainable(self) -> bool:
        return self.matrix.requires_grad


@dataclass
class LstmParams:
    """Fused gate weights, order i|f|g|o along the last axis; d per direction."""

    w_x: Tensor  # in_dim x 4d
    w_h: Tensor  # d x 4d
    b: Tensor    # 4d

    @property
    def hidden(self) -> int:
        return self.w_h.data.shape[0]


@dataclass
class AttentionParams:
    w_a: Tensor      # 2d x 2d
    v_context: Tensor  # 2d x 1


@dataclass
class ConvFilterBank:
    """Per filter height h: weights (h*row_width) x filters, plus bias."""

    weights: dict[int, Tensor]
    biases: dict[int, Tensor]

    @property
    def heights(self) -> list[int]:
        return sorted(self.weights)

    def out_width(self) -> int:
        return sum(self.weights[h].data.shape[1] for h in self.heights)


@dataclass
class DenseParams:
    w: Tensor
    b: Tensor


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def xavier_init(shape: tuple[int, ...], seed: int, dtype=np.float32) -> np.ndarray:
    """uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)).

    Each tensor draws from its own seeded stream, so initialization does not
    depend on which party materializes the tensor or in what order.
    """
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_in, fan_out = shape[0], int(np.prod(shape[1:]))
    r = float(np.sqrt(6.0 / (fan_in + fan_out)))
    rng = SplitMix64(seed)
    flat = np.array([rng.uniform(-r, r) for _ in range(int(np.prod(shape)))])
    return flat.astype(dtype).reshape(shape)


def init_lstm(in_dim: int, hidden: int, base_seed: int, name: str, dtype=np.float32) -> LstmParams:
    w_x = Tensor(xavier_init((in_dim, 4 * hidden), derive_seed(base_seed, name, "w_x"), dtype),
                 requires_grad=True)
    w_h = Tensor(xavier_init((hidden, 4 * hidden), derive_seed(base_seed, name, "w_h"), dtype),
                 requires_grad=True)
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0  # forget gate starts open
    return LstmParams(w_x=w_x, w_h=w_h, b=Tensor(b, requires_grad=True))


def init_attention(width: int, base_seed: int, name: str, dtype=np.float32) -> AttentionParams:
    w_a = Tensor(xavier_init((width, width), derive_seed(base_seed, name, "w_a"), dtype),
                 requires_grad=True)
    v = Tensor(xavier_init((width, 1), derive_seed(base_seed, name, "v_context"), dtype),
               requires_grad=True)
    return AttentionParams(w_a=w_a, v_context=v)


def init_conv_bank(row_width: int, filters: dict[int, int], base_seed: int, name: str,
                   dtype=np.float32) -> ConvFilterBank:
    weights, biases = {}, {}
    for h, count in sorted(filters.items()):
        weights[h] = Tensor(
            xavier_init((h * row_width, count), derive_seed(base_seed, name, f"w_h{h}"), dtype),
            requires_grad=True)
        biases[h] = Tensor(np.zeros(count, dtype=dtype), requires_grad=True)
    return ConvFilterBank(weights=weights, biases=biases)


def init_dense(in_dim: int, out_dim: int, base_seed: int, name: str, dtype=np.float32) -> DenseParams:
    w = Tensor(xavier_init((in_dim, out_dim), derive_seed(base_seed, name, "w"), dtype),
               requires_grad=True)
    return DenseParams(w=w, b=Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True))


def init_embedding(vocab_size: int, dim: int, base_seed: int,
                   words: list[str] | None = None, trainable: bool = False,
                   dtype=np.float32) -> EmbeddingTable:
    """Random rows with norm ~1 (r = sqrt(3/dim)); pad and unk rows stay zero.

    When the id->word list is given, each row is drawn from a stream keyed by
    the token string, the way a shared pretrained file would assign it: the
    same word gets the same vector in every party's table without anything
    crossing the wire.  Without words, rows are keyed by position.
    """
    r = float(np.sqrt(3.0 / dim))
    m = np.zeros((vocab_size, dim))
    for row in range(UNK_ID + 1, vocab_size):
        key = words[row - UNK_ID - 1] if words is not None else row
        rng = SplitMix64(derive_seed(base_seed, "embedding-row", key))
        m[row] = [rng.uniform(-r, r) for _ in range(dim)]
    return EmbeddingTable(matrix=Tensor(m.astype(dtype), requires_grad=trainable))


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def embed(tape: Tape, token_ids: np.ndarray, table: EmbeddingTable) -> Tensor:
    """Row-gather to (B, L, dim); pad id 0 yields zero vectors."""
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be (B, L), got {ids.shape}")
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= table.vocab_size:
        raise ShapeError(f"token id out of range for vocab of {table.vocab_size}")
    mat = table.matrix
    out = Tensor(mat.data[ids])

    def bwd(g, flows):
        if mat.requires_grad:
            contrib = np.zeros_like(mat.data)
            np.add.at(contrib, ids.reshape(-1), g.reshape(-1, mat.data.shape[1]))
            contrib[PAD_ID] = 0.0
            tape._send(mat, contrib, flows)

    return tape.record(out, bwd)


def embed_sequence(tape: Tape, token_ids: np.ndarray, table: EmbeddingTable) -> list[Tensor]:
    """Same gather as embed(), but one (B, dim) tensor per position."""
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be (B, L), got {ids.shape}")
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= table.vocab_size:
        raise ShapeError(f"token id out of range for vocab of {table.vocab_size}")
    mat = table.matrix
    steps = []
    for t in range(ids.shape[1]):
        col = ids[:, t]
        out = Tensor(mat.data[col])

        def bwd(g, flows, col=col):
            if mat.requires_grad:
                contrib = np.zeros_like(mat.data)
                np.add.at(contrib, col, g)
                contrib[PAD_ID] = 0.0
                tape._send(mat, contrib, flows)

        steps.append(tape.record(out, bwd))
    return steps


def lstm_step(tape: Tape, x: Tensor, h_prev: Tensor, c_prev: Tensor,
              params: LstmParams) -> tuple[Tensor, Tensor]:
    d = params.hidden
    z = add(tape, add(tape, matmul(tape, x, params.w_x),
                      matmul(tape, h_prev, params.w_h)), params.b)
    i = sigmoid(tape, slice_cols(tape, z, 0, d))
    f = sigmoid(tape, slice_cols(tape, z, d, 2 * d))
    g = tanh(tape, slice_cols(tape, z, 2 * d, 3 * d))
    o = sigmoid(tape, slice_cols(tape, z, 3 * d, 4 * d))
    c = add(tape, mul(tape, f, c_prev), mul(tape, i, g))
    h = mul(tape, o, tanh(tape, c))
    return h, c


def length_masks(lengths: np.ndarray, max_len: int, dtype=np.float32) -> np.ndarray:
    """(B, L) matrix of 1.0 for real positions, 0.0 for padding."""
    lengths = np.asarray(lengths)
    return (np.arange(max_len)[None, :] < lengths[:, None]).astype(dtype)


def bilstm_encode(tape: Tape, xs: list[Tensor], lengths: np.ndarray,
                  fwd: LstmParams, bwd: LstmParams) -> list[Tensor]:
    """Bidirectional encoding; output t is fwd_h_t || bwd_h_t, zeros on pads.

    The backward direction starts on the padding and carries an exactly-zero
    state until it reaches the last real token, which is equivalent to
    starting there.
    """
    if len(xs) == 0 or np.asarray(lengths).min() < 1:
        raise ShapeError("bilstm_encode needs at least one real token per row")
    n = xs[0].data.shape[0]
    seq_len = len(xs)
    dtype = xs[0].data.dtype
    masks = length_masks(lengths, seq_len, dtype)
    mask_cols = [Tensor(masks[:, t:t + 1].copy()) for t in range(seq_len)]

    def run(params: LstmParams, order: list[int]) -> dict[int, Tensor]:
        d = params.hidden
        h = Tensor(np.zeros((n, d), dtype=dtype))
        c = Tensor(np.zeros((n, d), dtype=dtype))
        outs = {}
        for t in order:
            h_raw, c_raw = lstm_step(tape, xs[t], h, c, params)
            h = scale_rows(tape, h_raw, mask_cols[t])
            c = scale_rows(tape, c_raw, mask_cols[t])
            outs[t] = h
        return outs

    fwd_out = run(fwd, list(range(seq_len)))
    bwd_out = run(bwd, list(range(seq_len - 1, -1, -1)))
    return [concat(tape, [fwd_out[t], bwd_out[t]], axis=1) for t in range(seq_len)]


def attention_pool(tape: Tape, hs: list[Tensor], lengths: np.ndarray,
                   params: AttentionParams) -> Tensor:
    """Score each position with tanh(h W_a) . v_context, softmax over real
    tokens, return the weighted sum of states."""
    if len(hs) == 0 or np.asarray(lengths).min() < 1:
        raise ShapeError("attention_pool needs at least one real token per row")
    seq_len = len(hs)
    dtype = hs[0].data.dtype
    masks = length_masks(lengths, seq_len, dtype)
    scores = [matmul(tape, tanh(tape, matmul(tape, h, params.w_a)), params.v_context)
              for h in hs]
    alpha = masked_softmax(tape, concat(tape, scores, axis=1), masks)
    pooled = None
    for t, h in enumerate(hs):
        term = scale_rows(tape, h, slice_cols(tape, alpha, t, t + 1))
        pooled = term if pooled is None else add(tape, pooled, term)
    return pooled


def connection_conv(tape: Tape, v_title: Tensor, v_content: Tensor,
                    bank: ConvFilterBank) -> Tensor:
    """Convolve filters over the 2-row matrix [v_title; v_content].

    Height-1 filters see each row separately (max-pooled over the two);
    height-2 filters literally span title and content, producing the
    interaction features.  Output width is the total filter count.
    """
    if v_title.data.shape != v_content.data.shape:
        raise ShapeError(
            f"row widths differ: {v_title.data.shape} vs {v_content.data.shape}")
    rows = [v_title, v_content]
    pooled_parts = []
    for h in bank.heights:
        w, b = bank.weights[h], bank.biases[h]
        feats = []
        for start in range(0, 2 - h + 1):
            window = rows[start] if h == 1 else concat(tape, rows[start:start + h], axis=1)
            feats.append(relu(tape, add(tape, matmul(tape, window, w), b)))
        pooled = feats[0]
        for f in feats[1:]:
            pooled = maximum(tape, pooled, f)
        pooled_parts.append(pooled)
    return concat(tape, pooled_parts, axis=1) if len(pooled_parts) > 1 else pooled_parts[0]


def dense_logits(tape: Tape, v: Tensor, params: DenseParams) -> Tensor:
    return add(tape, matmul(tape, v, params.w), params.b)


def max_over_positions(tape: Tape, feats: list[Tensor]) -> Tensor:
    """Max-over-time pooling via pairwise maxima in a fixed left-to-right order."""
    pooled = feats[0]
    for f in feats[1:]:
        pooled = maximum(tape, pooled, f)
    return pooled
