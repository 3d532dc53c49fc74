"""Training runtimes: the label-holding party, the content-holding party,
and the centralized oracle that runs the identical math without a wire.

Determinism contract: parameter init, fold assignment, batch order, optimizer
stepping, and every tensor op are pure functions of the shared seed and the
corpora.  The federated pair and the centralized trainer therefore execute
the same real-arithmetic sequence, and their checkpoints match bit for bit;
the acceptance suite asserts exactly that.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import socket
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Batch, Corpus, batch_schedule, make_folds, pad_batch
from .errors import ConfigError, MetricError, ProtocolError, TrainingError
from .layers import EmbeddingTable
from .metrics import EvalResult, evaluate
from .models import (
    ModelParams,
    ModelSpec,
    Tape,
    extract_features,
    forward_head,
    hhn_logits,
    init_model,
    load_into,
    party_a_forward,
    party_b_forward,
    read_checkpoint,
    read_optimizer_state,
    single_view_logits,
    write_checkpoint,
    write_optimizer_state,
)
from .protocol import (
    MSG_ACT,
    MSG_ALIGN_REQ,
    MSG_ALIGN_RESP,
    MSG_EVAL_REQ,
    MSG_EVAL_RESP,
    MSG_GRAD,
    MSG_HELLO,
    MSG_SCHEDULE_ACK,
    MSG_TERM,
    ERR_CONFIG_MISMATCH,
    ERR_EMPTY_INTERSECTION,
    ERR_INTERNAL,
    Connection,
    EvalRequest,
    Hello,
    Schedule,
    TensorPayload,
    align,
    decode_digests,
    encode_digests,
    expect_tensor,
    hash_id,
)
from .rng import SplitMix64, derive_seed
from .tensor import Tensor, softmax_cross_entropy

log = logging.getLogger("fedsplit")

PARTY_A_GROUPS = ("theta1", "theta3", "theta4")
PARTY_B_GROUPS = ("theta2",)
ALL_GROUPS = ("theta1", "theta2", "theta3", "theta4")


@dataclass
class TrainConfig:
    """Every knob the protocol or the math depends on, pinned to defaults.

    Both parties must run with identical protocol-relevant fields; the
    digest of those fields is exchanged in HELLO and any mismatch aborts
    the session before data flows.
    """

    extractor: str = "san"
    use_connection: bool = True
    inputs: str = "both"
    embedding_dim: int = 100
    lstm_hidden: int = 64
    conn_filters: dict = field(default_factory=lambda: {1: 64, 2: 64})
    cnn_heights: tuple = (3, 4, 5)
    cnn_filters: int = 64
    fasttext_dim: int = 100
    title_max_len: int = 30
    content_max_len: int = 200
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shared_seed: int = 1
    precision: str = "f32"
    vocab_min_freq: int = 1
    trainable_embeddings: bool = False
    k_folds: int = 5
    fold_index: int = 0
    threshold: float = 0.5
    timeout_s: float = 60.0

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.fold_index >= self.k_folds:
            raise ConfigError("fold_index must be below k_folds")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            extractor_kind=self.extractor,
            use_connection_extractor=self.use_connection,
            inputs=self.inputs,
            embedding_dim=self.embedding_dim,
            lstm_hidden=self.lstm_hidden,
            conn_filters=tuple(sorted((int(h), c) for h, c in self.conn_filters.items())),
            cnn_heights=tuple(self.cnn_heights),
            cnn_filters=self.cnn_filters,
            fasttext_dim=self.fasttext_dim,
        )

    def to_json(self) -> str:
        d = asdict(self)
        d["conn_filters"] = {str(h): c for h, c in self.conn_filters.items()}
        d["cnn_heights"] = list(self.cnn_heights)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        d = json.loads(text)
        d["conn_filters"] = {int(h): c for h, c in d.get("conn_filters", {}).items()}
        d["cnn_heights"] = tuple(d.get("cnn_heights", (3, 4, 5)))
        return TrainConfig(**d)

    def protocol_digest(self) -> bytes:
        """Digest of the fields both parties must agree on.

        shared_seed is excluded: PartyA is its source of truth and ships it
        inside HELLO; timeout is local.
        """
        d = asdict(self)
        d["conn_filters"] = {str(h): c for h, c in self.conn_filters.items()}
        d["cnn_heights"] = list(self.cnn_heights)
        d.pop("shared_seed")
        d.pop("timeout_s")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).digest()

    def alignment_salt(self) -> bytes:
        return SplitMix64(derive_seed(self.shared_seed, "alignment-salt")).next_bytes(16)


class Adam:
    """Adam with bias correction, applied in canonical parameter-name order."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, named_params: list[tuple[str, Tensor]]) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in named_params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in {name}")
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, buf in self.m.items():
            out[f"m.{name}"] = buf
        for name, buf in self.v.items():
            out[f"v.{name}"] = buf
        return out

    def load_state(self, tensors: dict[str, np.ndarray], step_count: int) -> None:
        self.step_count = step_count
        for key, arr in tensors.items():
            kind, name = key.split(".", 1)
            target = self.m if kind == "m" else self.v
            target[name] = arr.copy()


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _check_finite_tensor(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise ProtocolError(f"{what} contains non-finite values")
    return values


def _split_plan(alignment_digests: list[bytes], labels_by_digest: dict[str, int],
                config: TrainConfig) -> tuple[list[str], list[str]]:
    """Stratified train/validation digests (hex), canonical for any runner."""
    pairs = [(d.hex(), labels_by_digest[d.hex()]) for d in alignment_digests]
    plan = make_folds(pairs, k=config.k_folds, seed=config.shared_seed)
    return plan.train_ids(config.fold_index), plan.val_ids(config.fold_index)


def _gather(corpus: Corpus, local_ids: list[str], with_labels: bool) -> Batch:
    records = [corpus.records[rid] for rid in local_ids]
    labels = [r.label for r in records] if with_labels else None
    return pad_batch([r.tokens for r in records], labels)


def _chunk(items: list, size: int) -> list[list]:
    return [items[i:i + size] for i in range(0, len(items), size)]


class MetricsLog:
    """Collects epoch rows; optionally mirrors them to an ndjson file."""

    def __init__(self, path=None):
        self.rows: list[dict] = []
        self._path = path
        if path is not None:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            open(path, "w").close()

    def add(self, **row) -> None:
        self.rows.append(row)
        log.info("metrics %s", row)
        if self._path is not None:
            with open(self._path, "a", encoding="utf-8") as f:
                f.write(json.dumps(row, sort_keys=True) + "\n")


def _metrics_or_none(scores, labels, threshold) -> EvalResult | None:
    try:
        return evaluate(scores, labels, threshold)
    except MetricError:
        return None


def _log_epoch(mlog: MetricsLog, epoch: int, split: str, loss: float,
               result: EvalResult | None, wall_ms: float) -> None:
    mlog.add(epoch=epoch, split=split, loss=loss,
             roc_auc=None if result is None else result.roc_auc,
             f1=None if result is None else result.f1,
             accuracy=None if result is None else result.accuracy,
             wall_ms=round(wall_ms, 3))


class EarlyStopper:
    """Stop once validation ROC-AUC has not improved for `patience` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("-inf")
        self.bad_epochs = 0

    def update(self, auc: float | None) -> bool:
        value = float("-inf") if auc is None else auc
        if value > self.best:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    def state(self) -> dict:
        return {"best": self.best, "bad_epochs": self.bad_epochs}

    def load(self, state: dict) -> None:
        self.best = state["best"]
        self.bad_epochs = state["bad_epochs"]


def _save_state(out_dir, name: str, params: ModelParams, groups, config: TrainConfig,
                adam: Adam, epoch: int, stopper: EarlyStopper | None) -> None:
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    digest = config.protocol_digest().hex()
    write_checkpoint(os.path.join(out_dir, f"{name}.fhhn"), params, digest, groups)
    meta = {"epoch": epoch, "step_count": adam.step_count,
            "config_digest": digest,
            "early_stop": None if stopper is None else stopper.state()}
    write_optimizer_state(os.path.join(out_dir, f"{name}.opt"),
                          adam.state_tensors(), meta)


def _load_state(resume, name: str, params: ModelParams, groups, config: TrainConfig,
                adam: Adam, stopper: EarlyStopper | None) -> int:
    """Restore params/optimizer from a checkpoint dir; returns next epoch."""
    spec, digest, tensors = read_checkpoint(os.path.join(resume, f"{name}.fhhn"))
    if digest != config.protocol_digest().hex():
        raise ConfigError("checkpoint config digest does not match this config")
    if spec != config.model_spec():
        raise ConfigError("checkpoint model spec does not match this config")
    load_into(params, tensors, groups)
    meta, state = read_optimizer_state(os.path.join(resume, f"{name}.opt"))
    adam.load_state(state, meta["step_count"])
    if stopper is not None and meta.get("early_stop"):
        stopper.load(meta["early_stop"])
    return meta["epoch"] + 1


def _eval_scores_a(params: ModelParams, title_batch: Batch,
                   v_content: np.ndarray) -> tuple[np.ndarray, float]:
    """Forward-only pass on PartyA's half; returns (scores, mean loss)."""
    tape = Tape()
    v_title = extract_features(tape, params.title, title_batch.ids, title_batch.lengths)
    logits = forward_head(tape, params, v_title, Tensor(np.asarray(v_content)))
    loss, probs = softmax_cross_entropy(tape, logits, title_batch.labels)
    return probs.data[:, 1].copy(), float(loss.data)


# ---------------------------------------------------------------------------
# PartyA: labels + title extractor + connection extractor + classifier
# ---------------------------------------------------------------------------

def run_party_a(config: TrainConfig, corpus: Corpus, conn: Connection,
                out_dir=None, resume=None, title_table: EmbeddingTable | None = None,
                predict_ids: list[str] | None = None,
                halt_after_epoch: int | None = None) -> dict:
    """Algorithm of the label-holding party; returns params, history, scores.

    halt_after_epoch checkpoints and terminates the session at that epoch
    boundary (both sides), for staged runs and crash-restart drills.
    """
    spec = config.model_spec()
    params = init_model(spec, config.shared_seed, title_vocab=corpus.vocab.size,
                        trainable_embeddings=config.trainable_embeddings,
                        dtype=config.dtype, title_table=title_table,
                        title_words=corpus.vocab.words, groups=PARTY_A_GROUPS)
    adam = Adam(config.lr, config.beta1, config.beta2, config.eps)
    stopper = EarlyStopper(config.patience)
    mlog = MetricsLog(None if out_dir is None else os.path.join(out_dir, "metrics_a.ndjson"))
    try:
        return _party_a_session(config, corpus, conn, params, adam, stopper, mlog,
                                out_dir, resume, predict_ids, halt_after_epoch)
    except ProtocolError:
        conn.close()
        raise
    except Exception as exc:
        conn.send_error(ERR_INTERNAL, f"party A aborted: {exc}")
        conn.close()
        raise


def _party_a_session(config, corpus, conn, params, adam, stopper, mlog,
                     out_dir, resume, predict_ids, halt_after_epoch=None) -> dict:
    digest = config.protocol_digest()
    salt = config.alignment_salt()
    conn.send(MSG_HELLO, Hello(config_digest=digest, salt=salt,
                               shared_seed=config.shared_seed).encode())
    _, payload = conn.expect(MSG_HELLO)
    peer = Hello.decode(payload)
    if peer.config_digest != digest:
        conn.send_error(ERR_CONFIG_MISMATCH, "config digests differ")
        conn.close()
        raise ProtocolError("peer config digest does not match")

    _, payload = conn.expect(MSG_ALIGN_REQ)
    remote, _ = decode_digests(payload)
    try:
        alignment = align(corpus.ids, remote, salt)
    except ProtocolError:
        conn.send_error(ERR_EMPTY_INTERSECTION, "no overlapping samples")
        conn.close()
        raise
    conn.send(MSG_ALIGN_RESP, encode_digests(alignment.ordered_digests))

    labels_by_digest = {d.hex(): corpus.records[alignment.local_id(d)].label
                        for d in alignment.ordered_digests}
    train_hex, val_hex = _split_plan(alignment.ordered_digests, labels_by_digest, config)
    id_of = {d.hex(): alignment.local_id(d) for d in alignment.ordered_digests}

    start_epoch = 0
    if resume is not None:
        start_epoch = _load_state(resume, "party_a", params, PARTY_A_GROUPS,
                                  config, adam, stopper)

    first_schedule_sent = False
    final_epoch = start_epoch
    for epoch in range(start_epoch, config.max_epochs):
        final_epoch = epoch
        t0 = time.monotonic()
        universe = tuple(bytes.fromhex(h) for h in train_hex) \
            if not first_schedule_sent else ()
        conn.send(MSG_SCHEDULE_ACK, Schedule(epoch=epoch, train_digests=universe).encode())
        first_schedule_sent = True

        batches = batch_schedule(train_hex, epoch, config.shared_seed, config.batch_size)
        epoch_losses: list[float] = []
        train_scores: list[np.ndarray] = []
        train_labels: list[np.ndarray] = []
        for bi, batch_hex in enumerate(batches):
            batch = _gather(corpus, [id_of[h] for h in batch_hex], with_labels=True)
            v_content = expect_tensor(conn, MSG_ACT, epoch, bi)
            if v_content.shape != (len(batch_hex), params.spec.extractor_width):
                conn.send_error(ERR_INTERNAL, "activation tensor has a wrong shape")
                conn.close()
                raise ProtocolError(
                    f"ACT tensor shape {v_content.shape} does not match batch")
            _check_finite_tensor(v_content, "received activations")
            params.zero_grads(PARTY_A_GROUPS)
            loss, probs, dvc, _ = party_a_forward(
                params, batch.ids, batch.lengths, v_content, batch.labels)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            adam.step(params.trainable_named(PARTY_A_GROUPS))
            conn.send(MSG_GRAD, TensorPayload(epoch, bi, dvc).encode())
            epoch_losses.append(float(loss.data))
            train_scores.append(probs.data[:, 1].copy())
            train_labels.append(batch.labels)

        train_result = _metrics_or_none(np.concatenate(train_scores),
                                        np.concatenate(train_labels), config.threshold)
        _log_epoch(mlog, epoch, "train", float(np.mean(epoch_losses)), train_result,
                   (time.monotonic() - t0) * 1e3)

        t0 = time.monotonic()
        val_scores, val_labels, val_losses = [], [], []
        for bi, chunk in enumerate(_chunk(val_hex, config.batch_size)):
            digests = tuple(bytes.fromhex(h) for h in chunk)
            conn.send(MSG_EVAL_REQ, EvalRequest(epoch, bi, digests).encode())
            v_content = expect_tensor(conn, MSG_EVAL_RESP, epoch, bi)
            if v_content.shape[0] != len(chunk):
                raise ProtocolError("EVAL_RESP row count does not match request")
            _check_finite_tensor(v_content, "received activations")
            batch = _gather(corpus, [id_of[h] for h in chunk], with_labels=True)
            scores, loss = _eval_scores_a(params, batch, v_content)
            val_scores.append(scores)
            val_labels.append(batch.labels)
            val_losses.append(loss * len(chunk))
        val_result = _metrics_or_none(np.concatenate(val_scores),
                                      np.concatenate(val_labels), config.threshold)
        _log_epoch(mlog, epoch, "val", float(np.sum(val_losses) / len(val_hex)),
                   val_result, (time.monotonic() - t0) * 1e3)

        should_stop = stopper.update(None if val_result is None else val_result.roc_auc)
        _save_state(out_dir, "party_a", params, PARTY_A_GROUPS, config, adam,
                    epoch, stopper)
        if should_stop:
            log.info("early stop after epoch %d", epoch)
            break
        if halt_after_epoch is not None and epoch >= halt_after_epoch:
            log.info("halting after epoch %d as requested", epoch)
            break

    predictions = {}
    if predict_ids:
        wanted = {rid: hash_id(salt, rid) for rid in predict_ids}
        known = [rid for rid in predict_ids if wanted[rid] in alignment.local_by_digest]
        for bi, chunk in enumerate(_chunk(known, config.batch_size)):
            digests = tuple(wanted[rid] for rid in chunk)
            conn.send(MSG_EVAL_REQ, EvalRequest(final_epoch, bi, digests).encode())
            v_content = expect_tensor(conn, MSG_EVAL_RESP, final_epoch, bi)
            _check_finite_tensor(v_content, "received activations")
            batch = _gather(corpus, chunk, with_labels=True)
            scores, _ = _eval_scores_a(params, batch, v_content)
            predictions.update(zip(chunk, scores.tolist()))

    conn.send(MSG_TERM)
    conn.close()
    return {"params": params, "history": mlog.rows, "predictions": predictions,
            "alignment_size": len(alignment), "final_epoch": final_epoch}


# ---------------------------------------------------------------------------
# PartyB: content extractor only
# ---------------------------------------------------------------------------

def run_party_b(config: TrainConfig, corpus: Corpus, conn: Connection,
                out_dir=None, resume=None,
                content_table: EmbeddingTable | None = None) -> dict:
    """Algorithm of the content-holding party; never sees a label."""
    try:
        return _party_b_session(config, corpus, conn, out_dir, resume, content_table)
    except ProtocolError:
        conn.close()
        raise
    except Exception as exc:
        conn.send_error(ERR_INTERNAL, f"party B aborted: {exc}")
        conn.close()
        raise


def _party_b_session(config, corpus, conn, out_dir, resume, content_table) -> dict:
    digest = config.protocol_digest()
    _, payload = conn.expect(MSG_HELLO)
    hello = Hello.decode(payload)
    if hello.salt is None:
        raise ProtocolError("peer HELLO is missing salt and shared seed")
    if hello.config_digest != digest:
        conn.send_error(ERR_CONFIG_MISMATCH, "config digests differ")
        conn.close()
        raise ProtocolError("peer config digest does not match")
    conn.send(MSG_HELLO, Hello(config_digest=digest).encode())

    # the seed is PartyA's to choose; adopt it for init/schedules
    seed = hello.shared_seed
    salt = hello.salt
    spec = config.model_spec()
    params = init_model(spec, seed, content_vocab=corpus.vocab.size,
                        trainable_embeddings=config.trainable_embeddings,
                        dtype=config.dtype, content_table=content_table,
                        content_words=corpus.vocab.words, groups=PARTY_B_GROUPS)
    adam = Adam(config.lr, config.beta1, config.beta2, config.eps)
    mlog = MetricsLog(None if out_dir is None else os.path.join(out_dir, "metrics_b.ndjson"))

    mine = {hash_id(salt, rid): rid for rid in corpus.ids}
    conn.send(MSG_ALIGN_REQ, encode_digests(sorted(mine)))
    _, payload = conn.expect(MSG_ALIGN_RESP)
    overlap, _ = decode_digests(payload)
    if not overlap:
        raise ProtocolError("peer reported an empty overlap")
    unknown = [d for d in overlap if d not in mine]
    if unknown:
        raise ProtocolError("peer intersection contains samples we do not hold")
    id_of = {d.hex(): mine[d] for d in overlap}

    start_epoch = 0
    if resume is not None:
        start_epoch = _load_state(resume, "party_b", params, PARTY_B_GROUPS,
                                  config, adam, None)

    _, payload = conn.expect(MSG_SCHEDULE_ACK)
    sched = Schedule.decode(payload)
    if sched.epoch != start_epoch:
        raise ProtocolError(
            f"peer wants to start at epoch {sched.epoch}, we expect {start_epoch}")
    if not sched.train_digests:
        raise ProtocolError("first SCHEDULE_ACK must carry the training universe")
    train_hex = sorted(d.hex() for d in sched.train_digests)
    if any(h not in id_of for h in train_hex):
        raise ProtocolError("training universe contains samples outside the overlap")

    def serve_eval(req_payload: bytes) -> None:
        req = EvalRequest.decode(req_payload)
        local = [id_of.get(d.hex()) for d in req.digests]
        if any(rid is None for rid in local):
            raise ProtocolError("EVAL_REQ referenced a sample outside the overlap")
        batch = _gather(corpus, local, with_labels=False)
        v_content, _ = party_b_forward(params, batch.ids, batch.lengths)
        conn.send(MSG_EVAL_RESP,
                  TensorPayload(req.epoch, req.batch_index, v_content.data).encode())

    epoch = start_epoch
    while True:
        t0 = time.monotonic()
        batches = batch_schedule(train_hex, epoch, seed, config.batch_size)
        for bi, batch_hex in enumerate(batches):
            batch = _gather(corpus, [id_of[h] for h in batch_hex], with_labels=False)
            v_content, tape = party_b_forward(params, batch.ids, batch.lengths)
            conn.send(MSG_ACT, TensorPayload(epoch, bi, v_content.data).encode())
            grad = expect_tensor(conn, MSG_GRAD, epoch, bi)
            if grad.shape != v_content.data.shape:
                raise ProtocolError(
                    f"GRAD shape {grad.shape} != activations {v_content.data.shape}")
            _check_finite_tensor(grad, "received gradient")
            params.zero_grads(PARTY_B_GROUPS)
            tape.backward(v_content, grad.astype(v_content.data.dtype))
            adam.step(params.trainable_named(PARTY_B_GROUPS))
        mlog.add(epoch=epoch, split="train", batches=len(batches),
                 wall_ms=round((time.monotonic() - t0) * 1e3, 3))
        _save_state(out_dir, "party_b", params, PARTY_B_GROUPS, config, adam,
                    epoch, None)

        while True:
            msg_type, payload = conn.expect(MSG_EVAL_REQ, MSG_SCHEDULE_ACK, MSG_TERM)
            if msg_type == MSG_EVAL_REQ:
                serve_eval(payload)
                continue
            if msg_type == MSG_SCHEDULE_ACK:
                sched = Schedule.decode(payload)
                if sched.epoch != epoch + 1:
                    raise ProtocolError(
                        f"peer advanced to epoch {sched.epoch}, expected {epoch + 1}")
                if sched.train_digests:
                    raise ProtocolError("training universe resent mid-session")
                epoch += 1
                break
            conn.close()
            return {"params": params, "history": mlog.rows, "final_epoch": epoch}


# ---------------------------------------------------------------------------
# centralized oracle
# ---------------------------------------------------------------------------

def train_centralized(config: TrainConfig, corpus_a: Corpus, corpus_b: Corpus,
                      out_dir=None, resume=None,
                      title_table: EmbeddingTable | None = None,
                      content_table: EmbeddingTable | None = None,
                      predict_ids: list[str] | None = None,
                      halt_after_epoch: int | None = None) -> dict:
    """The ideal-situation trainer: same math, same seeds, no wire."""
    spec = config.model_spec()
    params = init_model(spec, config.shared_seed,
                        title_vocab=corpus_a.vocab.size,
                        content_vocab=corpus_b.vocab.size,
                        trainable_embeddings=config.trainable_embeddings,
                        dtype=config.dtype, title_table=title_table,
                        content_table=content_table,
                        title_words=corpus_a.vocab.words,
                        content_words=corpus_b.vocab.words, groups=ALL_GROUPS)
    adam = Adam(config.lr, config.beta1, config.beta2, config.eps)
    stopper = EarlyStopper(config.patience)
    mlog = MetricsLog(None if out_dir is None else os.path.join(out_dir, "metrics_central.ndjson"))

    salt = config.alignment_salt()
    digests_b = [hash_id(salt, rid) for rid in corpus_b.ids]
    alignment = align(corpus_a.ids, digests_b, salt)
    labels_by_digest = {d.hex(): corpus_a.records[alignment.local_id(d)].label
                        for d in alignment.ordered_digests}
    train_hex, val_hex = _split_plan(alignment.ordered_digests, labels_by_digest, config)
    id_of = {d.hex(): alignment.local_id(d) for d in alignment.ordered_digests}

    start_epoch = 0
    if resume is not None:
        start_epoch = _load_state(resume, "central", params, ALL_GROUPS,
                                  config, adam, stopper)

    def forward_batch(local_ids: list[str]) -> tuple[Batch, Tape, Tensor, Tensor]:
        batch_a = _gather(corpus_a, local_ids, with_labels=True)
        batch_b = _gather(corpus_b, local_ids, with_labels=False)
        tape = Tape()
        logits = hhn_logits(tape, params, batch_a.ids, batch_a.lengths,
                            batch_b.ids, batch_b.lengths)
        loss, probs = softmax_cross_entropy(tape, logits, batch_a.labels)
        return batch_a, tape, loss, probs

    final_epoch = start_epoch
    for epoch in range(start_epoch, config.max_epochs):
        final_epoch = epoch
        t0 = time.monotonic()
        batches = batch_schedule(train_hex, epoch, config.shared_seed, config.batch_size)
        epoch_losses, train_scores, train_labels = [], [], []
        for batch_hex in batches:
            local = [id_of[h] for h in batch_hex]
            batch_a, tape, loss, probs = forward_batch(local)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            params.zero_grads(ALL_GROUPS)
            tape.backward(loss)
            adam.step(params.trainable_named(ALL_GROUPS))
            epoch_losses.append(float(loss.data))
            train_scores.append(probs.data[:, 1].copy())
            train_labels.append(batch_a.labels)
        train_result = _metrics_or_none(np.concatenate(train_scores),
                                        np.concatenate(train_labels), config.threshold)
        _log_epoch(mlog, epoch, "train", float(np.mean(epoch_losses)), train_result,
                   (time.monotonic() - t0) * 1e3)

        t0 = time.monotonic()
        val_scores, val_labels, val_losses = [], [], []
        for chunk in _chunk(val_hex, config.batch_size):
            local = [id_of[h] for h in chunk]
            batch_a, _, loss, probs = forward_batch(local)
            val_scores.append(probs.data[:, 1].copy())
            val_labels.append(batch_a.labels)
            val_losses.append(float(loss.data) * len(chunk))
        val_result = _metrics_or_none(np.concatenate(val_scores),
                                      np.concatenate(val_labels), config.threshold)
        _log_epoch(mlog, epoch, "val", float(np.sum(val_losses) / len(val_hex)),
                   val_result, (time.monotonic() - t0) * 1e3)

        should_stop = stopper.update(None if val_result is None else val_result.roc_auc)
        _save_state(out_dir, "central", params, ALL_GROUPS, config, adam,
                    epoch, stopper)
        if should_stop:
            log.info("early stop after epoch %d", epoch)
            break
        if halt_after_epoch is not None and epoch >= halt_after_epoch:
            log.info("halting after epoch %d as requested", epoch)
            break
        if halt_after_epoch is not None and epoch >= halt_after_epoch:
            log.info("halting after epoch %d as requested", epoch)
            break

    predictions = {}
    if predict_ids:
        known = [rid for rid in predict_ids
                 if rid in corpus_a.records and rid in corpus_b.records]
        for chunk in _chunk(known, config.batch_size):
            _, _, _, probs = forward_batch(chunk)
            predictions.update(zip(chunk, probs.data[:, 1].astype(float).tolist()))

    return {"params": params, "history": mlog.rows, "predictions": predictions,
            "alignment_size": len(alignment), "final_epoch": final_epoch}


# ---------------------------------------------------------------------------
# single-view baseline trainer (title-only / content-only)
# ---------------------------------------------------------------------------

def train_single_view(config: TrainConfig, corpus: Corpus, out_dir=None,
                      table: EmbeddingTable | None = None) -> dict:
    """Traditional training on one party's view alone (the (T)/(C) baselines)."""
    if config.inputs == "both":
        raise ConfigError("train_single_view needs inputs=title_only/content_only")
    spec = config.model_spec()
    title_side = config.inputs == "title_only"
    params = init_model(spec, config.shared_seed,
                        title_vocab=corpus.vocab.size if title_side else 0,
                        content_vocab=0 if title_side else corpus.vocab.size,
                        trainable_embeddings=config.trainable_embeddings,
                        dtype=config.dtype,
                        title_table=table if title_side else None,
                        content_table=None if title_side else table,
                        title_words=corpus.vocab.words if title_side else None,
                        content_words=None if title_side else corpus.vocab.words,
                        groups=("theta1" if title_side else "theta2", "theta4"))
    groups = ("theta1" if title_side else "theta2", "theta4")
    adam = Adam(config.lr, config.beta1, config.beta2, config.eps)
    stopper = EarlyStopper(config.patience)
    mlog = MetricsLog(None)

    salt = config.alignment_salt()
    by_digest = {hash_id(salt, rid).hex(): rid for rid in corpus.ids}
    pairs = [(h, corpus.records[rid].label) for h, rid in sorted(by_digest.items())]
    plan = make_folds(pairs, k=config.k_folds, seed=config.shared_seed)
    train_hex = plan.train_ids(config.fold_index)
    val_hex = plan.val_ids(config.fold_index)

    def forward(local_ids, with_grad: bool):
        batch = _gather(corpus, local_ids, with_labels=True)
        tape = Tape()
        logits = single_view_logits(tape, params, batch.ids, batch.lengths)
        loss, probs = softmax_cross_entropy(tape, logits, batch.labels)
        if with_grad:
            params.zero_grads(groups)
            tape.backward(loss)
            adam.step(params.trainable_named(groups))
        return batch, loss, probs

    final_epoch = 0
    for epoch in range(config.max_epochs):
        final_epoch = epoch
        t0 = time.monotonic()
        losses, scores_acc, labels_acc = [], [], []
        for batch_hex in batch_schedule(train_hex, epoch, config.shared_seed,
                                        config.batch_size):
            batch, loss, probs = forward([by_digest[h] for h in batch_hex], True)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            losses.append(float(loss.data))
            scores_acc.append(probs.data[:, 1].copy())
            labels_acc.append(batch.labels)
        train_result = _metrics_or_none(np.concatenate(scores_acc),
                                        np.concatenate(labels_acc), config.threshold)
        _log_epoch(mlog, epoch, "train", float(np.mean(losses)), train_result,
                   (time.monotonic() - t0) * 1e3)

        val_scores, val_labels, val_losses = [], [], []
        for chunk in _chunk(val_hex, config.batch_size):
            batch, loss, probs = forward([by_digest[h] for h in chunk], False)
            val_scores.append(probs.data[:, 1].copy())
            val_labels.append(batch.labels)
            val_losses.append(float(loss.data) * len(chunk))
        val_result = _metrics_or_none(np.concatenate(val_scores),
                                      np.concatenate(val_labels), config.threshold)
        _log_epoch(mlog, final_epoch, "val", float(np.sum(val_losses) / len(val_hex)),
                   val_result, 0.0)
        if stopper.update(None if val_result is None else val_result.roc_auc):
            break

    return {"params": params, "history": mlog.rows, "final_epoch": final_epoch,
            "val_ids": [by_digest[h] for h in val_hex]}


# ---------------------------------------------------------------------------
# two-thread loopback harness
# ---------------------------------------------------------------------------

def run_federated_pair(config: TrainConfig, corpus_a: Corpus, corpus_b: Corpus,
                       out_dir_a=None, out_dir_b=None, resume_a=None, resume_b=None,
                       title_table=None, content_table=None,
                       predict_ids=None, recorder_a=None, recorder_b=None,
                       halt_after_epoch: int | None = None) -> dict:
    """Run both parties over a loopback socket pair, PartyB on a thread.

    The protocol is strictly lock-step, so threading does not perturb
    determinism; this is the same path the CLI demo and the tests use.
    """
    sock_a, sock_b = socket.socketpair()
    conn_a = Connection(sock_a, timeout=config.timeout_s, recorder=recorder_a)
    conn_b = Connection(sock_b, timeout=config.timeout_s, recorder=recorder_b)
    result_b: dict = {}
    error_b: list[BaseException] = []

    def b_main():
        try:
            result_b.update(run_party_b(config, corpus_b, conn_b, out_dir=out_dir_b,
                                        resume=resume_b, content_table=content_table))
        except BaseException as exc:  # surfaced after join
            error_b.append(exc)

    thread = threading.Thread(target=b_main, name="party-b", daemon=True)
    thread.start()
    try:
        result_a = run_party_a(config, corpus_a, conn_a, out_dir=out_dir_a,
                               resume=resume_a, title_table=title_table,
                               predict_ids=predict_ids,
                               halt_after_epoch=halt_after_epoch)
    finally:
        thread.join(timeout=config.timeout_s)
    if error_b:
        raise error_b[0]
    if thread.is_alive():
        raise TrainingError("party B failed to terminate")
    return {"party_a": result_a, "party_b": result_b}


def merged_federated_tensors(result: dict) -> dict[str, np.ndarray]:
    """theta1/3/4 from PartyA plus theta2 from PartyB, as one named dict."""
    out = {}
    for name, t in result["party_a"]["params"].named_tensors(PARTY_A_GROUPS):
        out[name] = t.data
    for name, t in result["party_b"]["params"].named_tensors(PARTY_B_GROUPS):
        out[name] = t.data
    return out


def equivalence_report(fed: dict[str, np.ndarray],
                       central: dict[str, np.ndarray]) -> dict:
    """Compare two named parameter sets; exact match plus a fallback metric."""
    if sorted(fed) != sorted(central):
        raise ConfigError(f"parameter sets differ: {sorted(fed)} vs {sorted(central)}")
    bitwise = all(np.array_equal(fed[n], central[n]) for n in fed)
    max_rel = 0.0
    for n in fed:
        a, b = fed[n].astype(np.float64), central[n].astype(np.float64)
        denom = np.maximum(np.abs(a) + np.abs(b), 1e-12)
        max_rel = max(max_rel, float(np.max(np.abs(a - b) / denom)))
    return {"bitwise_equal": bitwise, "max_rel_diff": max_rel}
