"""Built-in synthetic corpora so the repo is exercisable with zero downloads.

The interaction dataset encodes a pure title/content-interaction signal:
label 1 iff the title token set and the content token set are disjoint.
Neither view alone carries information about the label, so single-view
baselines stay near chance while a model that captures the interaction can
separate the classes.
"""

from __future__ import annotations

import json

from .data import Corpus, CorpusRecord, Vocabulary, preprocess
from .rng import SplitMix64, derive_seed

VOCAB_WORDS = [f"word{i:02d}" for i in range(20)]


def _sample_tokens(rng: SplitMix64, pool: list[str], count: int) -> list[str]:
    pool = list(pool)
    rng.shuffle(pool)
    return pool[:count]


def generate_interaction_records(n: int, seed: int,
                                 title_len: tuple[int, int] = (3, 4),
                                 content_len: tuple[int, int] = (3, 4),
                                 overlap: tuple[int, int] = (3, 3),
                                 ) -> list[dict]:
    """n records {id, title, content, label}; classes balanced by construction.

    Non-disjoint records share `overlap` tokens (capped by the lengths), so
    the two classes differ only in the joint statistic, never marginally:
    token frequencies, lengths, and order are class-independent by design.
    """
    rng = SplitMix64(derive_seed(seed, "synthetic"))
    records = []
    for i in range(n):
        want_disjoint = i % 2 == 0  # exact 50/50 split
        tlen = title_len[0] + rng.next_below(title_len[1] - title_len[0] + 1)
        clen = content_len[0] + rng.next_below(content_len[1] - content_len[0] + 1)
        title = _sample_tokens(rng, VOCAB_WORDS, tlen)
        if want_disjoint:
            pool = [w for w in VOCAB_WORDS if w not in title]
            content = _sample_tokens(rng, pool, min(clen, len(pool)))
        else:
            k = min(overlap[0] + rng.next_below(overlap[1] - overlap[0] + 1),
                    tlen, clen)
            shared = _sample_tokens(rng, title, k)
            pool = [w for w in VOCAB_WORDS if w not in shared]
            content = shared + _sample_tokens(rng, pool, max(0, clen - k))
            rng.shuffle(content)
        records.append({
            "id": f"synth{i:05d}",
            "title": " ".join(title),
            "content": " ".join(content),
            "label": 1 if want_disjoint else 0,
        })
    return records


def write_party_files(records: list[dict], path_a, path_b) -> None:
    with open(path_a, "w", encoding="utf-8") as fa:
        for r in records:
            fa.write(json.dumps({"id": r["id"], "title": r["title"],
                                 "label": r["label"]}) + "\n")
    with open(path_b, "w", encoding="utf-8") as fb:
        for r in records:
            fb.write(json.dumps({"id": r["id"], "content": r["content"]}) + "\n")


def _corpus_from(records: list[dict], text_key: str, max_len: int,
                 with_labels: bool, min_freq: int = 1) -> Corpus:
    token_lists = [preprocess(r[text_key], max_len) for r in records]
    vocab = Vocabulary.build(token_lists, min_freq)
    out: dict[str, CorpusRecord] = {}
    for r, toks in zip(records, token_lists):
        if not toks:
            continue
        out[r["id"]] = CorpusRecord(id=r["id"], tokens=vocab.to_ids(toks),
                                    label=r["label"] if with_labels else None)
    return Corpus(records=out, vocab=vocab)


def interaction_corpora(n: int, seed: int, title_max_len: int = 30,
                        content_max_len: int = 200) -> tuple[Corpus, Corpus]:
    """(PartyA corpus, PartyB corpus) for the interaction task, in memory."""
    records = generate_interaction_records(n, seed)
    corpus_a = _corpus_from(records, "title", title_max_len, with_labels=True)
    corpus_b = _corpus_from(records, "content", content_max_len, with_labels=False)
    return corpus_a, corpus_b
