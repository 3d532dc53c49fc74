"""Corpus ingestion, text preprocessing, vocabulary, embeddings, folds, and
deterministic batch schedules.

Every function here is a pure function of its inputs and seeds: re-running
it yields byte-identical output, which lets both parties agree on folds and
batch orders without exchanging anything beyond the shared seed.
"""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DataError, FormatError
from .layers import PAD_ID, UNK_ID, EmbeddingTable
from .rng import SplitMix64, derive_seed
from .tensor import Tensor

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)  # maximal runs of alphanumerics


def load_stopwords() -> frozenset[str]:
    text = resources.files("fedsplit").joinpath("stopwords.txt").read_text("utf-8")
    return frozenset(w for w in text.split() if w)


_STOPWORDS = load_stopwords()


def stopwords_digest() -> str:
    text = resources.files("fedsplit").joinpath("stopwords.txt").read_bytes()
    return hashlib.sha256(text).hexdigest()


def preprocess(text: str, max_len: int = 0, stopwords: frozenset[str] | None = None,
               ) -> list[str]:
    """Normalize, strip non-printables, lowercase, tokenize, drop stop words.

    max_len > 0 truncates (never reorders) the token list.
    """
    if stopwords is None:
        stopwords = _STOPWORDS
    text = unicodedata.normalize("NFC", text)
    text = "".join(ch for ch in text if ch.isprintable() or ch.isspace())
    text = text.lower()
    tokens = [t for t in _TOKEN_RE.findall(text) if t not in stopwords]
    if max_len > 0:
        tokens = tokens[:max_len]
    return tokens


@dataclass
class Vocabulary:
    """token -> id; id 0 is <pad>, id 1 is <unk>; deterministic ordering."""

    index: dict[str, int]
    min_freq: int = 1

    @property
    def size(self) -> int:
        return len(self.index) + 2

    @property
    def words(self) -> list[str]:
        """Tokens ordered by id (excluding pad/unk)."""
        return [t for t, _ in sorted(self.index.items(), key=lambda kv: kv[1])]

    def to_ids(self, tokens: list[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    @staticmethod
    def build(token_lists: list[list[str]], min_freq: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        for toks in token_lists:
            for t in toks:
                counts[t] = counts.get(t, 0) + 1
        kept = [t for t, c in counts.items() if c >= min_freq]
        kept.sort(key=lambda t: (-counts[t], t))
        return Vocabulary(index={t: i + 2 for i, t in enumerate(kept)}, min_freq=min_freq)


@dataclass
class CorpusRecord:
    id: str
    tokens: list[int]
    label: int | None = None


@dataclass
class Corpus:
    """One party's view: id-keyed token-id records (labels on PartyA only)."""

    records: dict[str, CorpusRecord]
    vocab: Vocabulary
    dropped: int = 0

    @property
    def ids(self) -> list[str]:
        return sorted(self.records)


def load_party_corpus(path, text_field: str, max_len: int, min_freq: int = 1,
                      with_labels: bool = False) -> Corpus:
    """Read a party corpus file (ndjson), preprocess, and build its vocab.

    Records whose text preprocesses to nothing are dropped and counted.
    """
    raw: list[tuple[str, list[str], int | None]] = []
    dropped = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rid = str(obj["id"])
                tokens = preprocess(str(obj[text_field]), max_len)
                label = int(obj["label"]) if with_labels else None
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad corpus line: {exc}") from exc
            if with_labels and label not in (0, 1):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label}")
            if not tokens:
                dropped += 1
                continue
            raw.append((rid, tokens, label))
    ids = [r[0] for r in raw]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate record ids")
    vocab = Vocabulary.build([toks for _, toks, _ in raw], min_freq)
    records = {rid: CorpusRecord(id=rid, tokens=vocab.to_ids(toks), label=lab)
               for rid, toks, lab in raw}
    return Corpus(records=records, vocab=vocab, dropped=dropped)


# ---------------------------------------------------------------------------
# Clickbait Challenge ingestion
# ---------------------------------------------------------------------------

def ingest_clickbait_challenge(instances_path, truth_path, out_a, out_b,
                               use_paragraphs: bool = False) -> dict:
    """Split the challenge corpus into the two party files.

    PartyA gets (id, title, label); PartyB gets (id, content).  Malformed
    lines are skipped and counted (hard error above 1%); records with empty
    content are dropped and counted.
    """
    labels: dict[str, int] = {}
    skipped = 0
    total = 0
    with open(truth_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                obj = json.loads(line)
                rid = str(obj["id"])
                cls = obj["truthClass"]
            except (json.JSONDecodeError, KeyError) as exc:
                skipped += 1
                continue
            if rid in labels:
                raise DataError(f"{truth_path}: duplicate id {rid!r}")
            if cls == "clickbait":
                labels[rid] = 1
            elif cls == "no-clickbait":
                labels[rid] = 0
            else:
                skipped += 1

    content_field = "targetParagraphs" if use_paragraphs else "targetDescription"
    written = 0
    empty_content = 0
    seen: set[str] = set()
    with open(instances_path, "r", encoding="utf-8") as f, \
            open(out_a, "w", encoding="utf-8") as fa, \
            open(out_b, "w", encoding="utf-8") as fb:
        for line in f:
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                obj = json.loads(line)
                rid = str(obj["id"])
                title = str(obj["targetTitle"])
                content = obj[content_field]
            except (json.JSONDecodeError, KeyError) as exc:
                skipped += 1
                continue
            if isinstance(content, list):
                content = " ".join(str(p) for p in content)
            else:
                content = str(content)
            if rid in seen:
                raise DataError(f"{instances_path}: duplicate id {rid!r}")
            seen.add(rid)
            if rid not in labels:
                raise DataError(f"{instances_path}: id {rid!r} missing from truth file")
            if not content.strip():
                empty_content += 1
                continue
            fa.write(json.dumps({"id": rid, "title": title, "label": labels[rid]},
                                ensure_ascii=False) + "\n")
            fb.write(json.dumps({"id": rid, "content": content},
                                ensure_ascii=False) + "\n")
            written += 1
    if total and skipped > 0.01 * total:
        raise DataError(
            f"too many malformed lines: {skipped}/{total} exceeds the 1% budget")
    return {"written": written, "skipped": skipped, "empty_content": empty_content}


def load_embeddings(path, vocab: Vocabulary, dim: int = 100,
                    trainable: bool = False) -> tuple[EmbeddingTable, float]:
    """Fill embedding rows from a GloVe-format text file; returns hit-rate."""
    matrix = np.zeros((vocab.size, dim), dtype=np.float32)
    hits = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise FormatError(
                    f"{path}:{lineno}: expected word + {dim} values, got "
                    f"{len(parts) - 1} values")
            word = parts[0]
            idx = vocab.index.get(word)
            if idx is not None:
                matrix[idx] = np.asarray([float(v) for v in parts[1:]], dtype=np.float32)
                hits += 1
    matrix[PAD_ID] = 0.0
    table = EmbeddingTable(matrix=Tensor(matrix, requires_grad=trainable))
    denom = max(1, vocab.size - 2)
    return table, hits / denom


# ---------------------------------------------------------------------------
# folds and schedules
# ---------------------------------------------------------------------------

@dataclass
class FoldPlan:
    k: int
    folds: list[list[str]]            # validation ids per fold
    test_ids: list[str] = field(default_factory=list)

    def train_ids(self, fold_index: int) -> list[str]:
        out: list[str] = []
        for i, fold in enumerate(self.folds):
            if i != fold_index:
                out.extend(fold)
        return sorted(out)

    def val_ids(self, fold_index: int) -> list[str]:
        return sorted(self.folds[fold_index])

    def canonical_bytes(self) -> bytes:
        return json.dumps({"k": self.k, "folds": self.folds, "test": self.test_ids},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")


def make_folds(ids_with_labels: list[tuple[str, int]], k: int = 5,
               seed: int = 0) -> FoldPlan:
    """Stratified k-fold split: shuffle each class, deal round-robin."""
    by_class: dict[int, list[str]] = {}
    for rid, label in ids_with_labels:
        by_class.setdefault(label, []).append(rid)
    for label, ids in sorted(by_class.items()):
        if len(ids) < k:
            raise DataError(f"class {label} has {len(ids)} samples, needs >= {k}")
    folds: list[list[str]] = [[] for _ in range(k)]
    for label, ids in sorted(by_class.items()):
        ids = sorted(ids)
        SplitMix64(derive_seed(seed, "folds", label)).shuffle(ids)
        for i, rid in enumerate(ids):
            folds[i % k].append(rid)
    return FoldPlan(k=k, folds=[sorted(f) for f in folds])


def batch_schedule(train_ids: list[str], epoch: int, shared_seed: int,
                   batch_size: int) -> list[list[str]]:
    """Shuffle the sorted id list with the epoch-keyed stream; fixed batches.

    Any party (or the centralized oracle) running this with the same inputs
    gets the identical schedule; this is the whole synchronization mechanism.
    """
    if not train_ids:
        raise DataError("cannot schedule an empty id list")
    ids = sorted(train_ids)
    SplitMix64(derive_seed(shared_seed, "schedule", epoch)).shuffle(ids)
    return [ids[i:i + batch_size] for i in range(0, len(ids), batch_size)]


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    ids: np.ndarray                    # (B, L) int token ids, 0-padded
    lengths: np.ndarray                # (B,)
    labels: np.ndarray | None = None   # (B,) on PartyA only


def pad_batch(token_lists: list[list[int]], labels: list[int] | None = None,
              min_len: int = 1) -> Batch:
    """Pad to the longest sequence in the batch (shared by all runners, so
    every run sees identical shapes for identical batches)."""
    if any(len(t) == 0 for t in token_lists):
        raise DataError("empty token list reached batch assembly")
    max_len = max(min_len, max(len(t) for t in token_lists))
    ids = np.zeros((len(token_lists), max_len), dtype=np.int64)
    lengths = np.zeros(len(token_lists), dtype=np.int64)
    for i, toks in enumerate(token_lists):
        ids[i, :len(toks)] = toks
        lengths[i] = len(toks)
    lab = None if labels is None else np.asarray(labels, dtype=np.int64)
    return Batch(ids=ids, lengths=lengths, labels=lab)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
