"""Corpus reading and writing, vocabularies and padded minibatches.

Two on-disk formats are supported, both UTF-8 with ``\\n`` line endings.

``conll``::

    # intent: atis_flight
    show\\tO
    flights\\tO
    to\\tO
    boston\\tB-toloc.city_name

    # intent: ...

One block per utterance, blocks separated by a blank line.

``jsonl``: one object per line, ``{"tokens": [...], "slots": [...], "intent": "..."}``.
"""

from __future__ import annotations

import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .tensor import ContractError

INTENT_PREFIX = "# intent: "
TAG_RE = re.compile(r"^(O|[BI]-\S+)$")

PAD, UNK = "<pad>", "<unk>"
BOS = "<bos>"
PAD_ID = 0
UNK_ID = 1
BOS_ID = 1

ATIS_TRAIN_SIZE = 4978
ATIS_TEST_SIZE = 893
ATIS_INTENTS = 18
ATIS_SLOT_LABELS = 127

FORMATS = ("conll", "jsonl")


class CorpusFormatError(ValueError):
    """Malformed corpus file."""


class UsageError(ValueError):
    """Invalid argument, such as an unknown corpus format."""


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]
    slot_tags: tuple[str, ...]
    intent: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "slot_tags", tuple(self.slot_tags))
        if not self.tokens:
            raise CorpusFormatError("utterance has no tokens")
        if len(self.tokens) != len(self.slot_tags):
            raise CorpusFormatError(
                f"{len(self.tokens)} tokens but {len(self.slot_tags)} slot tags"
            )
        for tag in self.slot_tags:
            if not TAG_RE.match(tag):
                raise CorpusFormatError(f"invalid IOB tag {tag!r}")

    def __len__(self) -> int:
        return len(self.tokens)


def normalize_token(token: str, lowercase: bool = True, normalize_digits: bool = False) -> str:
    if lowercase:
        token = token.lower()
    if normalize_digits:
        token = re.sub(r"\d", "0", token)
    return token


def _guess_format(path: Path) -> str:
    return "jsonl" if path.suffix in (".jsonl", ".json") else "conll"


def load_corpus(path, format: str | None = None, lowercase: bool = True,
                normalize_digits: bool = False) -> list[Utterance]:
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt not in FORMATS:
        raise UsageError(f"unknown corpus format {fmt!r}; expected one of {FORMATS}")
    text = path.read_text(encoding="utf-8")
    raw = _parse_conll(text, path) if fmt == "conll" else _parse_jsonl(text, path)
    return [
        Utterance(tuple(normalize_token(t, lowercase, normalize_digits) for t in u.tokens), u.slot_tags, u.intent)
        for u in raw
    ]


def _parse_conll(text: str, path: Path) -> list[Utterance]:
    out = []
    block: list[tuple[int, str]] = []
    lines = text.split("\n")
    for lineno, line in enumerate(lines + [""], start=1):
        line = line.rstrip("\r")
        if line.strip():
            block.append((lineno, line))
            continue
        if block:
            out.append(_conll_block(block, len(out) + 1, path))
            block = []
    return out


def _conll_block(block: list[tuple[int, str]], index: int, path: Path) -> Utterance:
    first_line, header = block[0]
    if not header.startswith(INTENT_PREFIX):
        raise CorpusFormatError(f"{path}:{first_line}: block {index} does not start with {INTENT_PREFIX!r}")
    intent = header[len(INTENT_PREFIX):].strip()
    tokens, tags = [], []
    for lineno, line in block[1:]:
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise CorpusFormatError(
                f"{path}:{lineno}: block {index} has a line without exactly one token and one tag: {line!r}"
            )
        tokens.append(parts[0])
        tags.append(parts[1])
    try:
        return Utterance(tuple(tokens), tuple(tags), intent)
    except CorpusFormatError as exc:
        raise CorpusFormatError(f"{path}:{first_line}: block {index}: {exc}") from None


def _parse_jsonl(text: str, path: Path) -> list[Utterance]:
    out = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            utt = Utterance(tuple(obj["tokens"]), tuple(obj["slots"]), str(obj["intent"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorpusFormatError(f"{path}:{lineno}: bad record ({exc})") from None
        except CorpusFormatError as exc:
            raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
        out.append(utt)
    return out


def write_corpus(utterances: Iterable[Utterance], path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt not in FORMATS:
        raise UsageError(f"unknown corpus format {fmt!r}; expected one of {FORMATS}")
    if fmt == "conll":
        blocks = []
        for u in utterances:
            lines = [INTENT_PREFIX + u.intent] + [f"{t}\t{g}" for t, g in zip(u.tokens, u.slot_tags)]
            blocks.append("\n".join(lines) + "\n")
        text = "\n".join(blocks)
    else:
        text = "".join(
            json.dumps({"tokens": list(u.tokens), "slots": list(u.slot_tags), "intent": u.intent},
                       ensure_ascii=False) + "\n"
            for u in utterances
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def split_dev(train: Sequence[Utterance], dev_size: int = 500) -> tuple[list[Utterance], list[Utterance]]:
    """Hold out the last ``dev_size`` utterances."""
    if dev_size <= 0:
        return list(train), []
    if dev_size >= len(train):
        raise ContractError(f"dev split of {dev_size} leaves no training data ({len(train)} utterances)")
    return list(train[:-dev_size]), list(train[-dev_size:])


def check_atis_counts(train: Sequence[Utterance] | None = None, test: Sequence[Utterance] | None = None,
                      vocab: "Vocabulary | None" = None) -> list[str]:
    """Compare against the canonical ATIS split sizes; warn on any mismatch."""
    problems = []
    if train is not None and len(train) != ATIS_TRAIN_SIZE:
        problems.append(f"training split has {len(train)} utterances, expected {ATIS_TRAIN_SIZE}")
    if test is not None and len(test) != ATIS_TEST_SIZE:
        problems.append(f"test split has {len(test)} utterances, expected {ATIS_TEST_SIZE}")
    if vocab is not None:
        if vocab.num_intents != ATIS_INTENTS:
            problems.append(f"{vocab.num_intents} intents, expected {ATIS_INTENTS}")
        if vocab.num_slot_labels != ATIS_SLOT_LABELS:
            problems.append(f"{vocab.num_slot_labels} slot labels, expected {ATIS_SLOT_LABELS}")
    for p in problems:
        warnings.warn(f"variant ATIS split: {p}", stacklevel=2)
    return problems


# ---------------------------------------------------------------------------
# vocabulary


def _ranked(counts: Counter) -> list[str]:
    return [s for s, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


@dataclass
class Vocabulary:
    words: list[str]
    tags: list[str]
    intents: list[str]
    word_ids: dict[str, int] = field(init=False, repr=False)
    tag_ids: dict[str, int] = field(init=False, repr=False)
    intent_ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.word_ids = {w: i for i, w in enumerate(self.words)}
        self.tag_ids = {t: i for i, t in enumerate(self.tags)}
        self.intent_ids = {t: i for i, t in enumerate(self.intents)}
        if len(self.word_ids) != len(self.words) or len(self.tag_ids) != len(self.tags) \
                or len(self.intent_ids) != len(self.intents):
            raise ContractError("vocabulary contains duplicate entries")

    @property
    def num_words(self) -> int:
        return len(self.words)

    @property
    def num_tags(self) -> int:
        """Size of the tag id space, reserved ids included."""
        return len(self.tags)

    @property
    def num_slot_labels(self) -> int:
        return len(self.tags) - 2

    @property
    def num_intents(self) -> int:
        return len(self.intents)

    def word_id(self, token: str) -> int:
        return self.word_ids.get(token, UNK_ID)

    def encode_tokens(self, tokens: Sequence[str]) -> tuple[list[int], list[bool]]:
        """Word ids plus a per-token flag marking UNK substitutions."""
        ids = [self.word_id(t) for t in tokens]
        return ids, [t not in self.word_ids for t in tokens]

    def decode_tokens(self, ids: Sequence[int]) -> list[str]:
        return [self.words[i] for i in ids]

    def to_dict(self) -> dict:
        return {"words": list(self.words), "tags": list(self.tags), "intents": list(self.intents)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(list(d["words"]), list(d["tags"]), list(d["intents"]))


def build_vocab(train: Sequence[Utterance], min_freq: int = 1) -> Vocabulary:
    if not train:
        raise ContractError("build_vocab: empty corpus")
    words = Counter(t for u in train for t in u.tokens)
    tags = Counter(t for u in train for t in u.slot_tags)
    intents = Counter(u.intent for u in train)
    kept = Counter({w: c for w, c in words.items() if c >= min_freq})
    return Vocabulary(
        [PAD, UNK] + _ranked(kept),
        [PAD, BOS] + _ranked(tags),
        _ranked(intents),
    )


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    word_ids: np.ndarray    # seq x batch, int64
    tag_ids: np.ndarray     # seq x batch, int64
    intent_ids: np.ndarray  # batch, int64; -1 for intents unseen in training
    mask: np.ndarray        # seq x batch, bool
    lengths: np.ndarray     # batch
    indices: list[int]      # positions of the utterances in the source list
    unseen_tags: int = 0

    @property
    def size(self) -> int:
        return self.word_ids.shape[1]

    @property
    def seq_len(self) -> int:
        return self.word_ids.shape[0]


def encode_batch(utterances: Sequence[Utterance], vocab: Vocabulary, indices: Sequence[int] | None = None) -> Batch:
    if not utterances:
        raise ContractError("encode_batch: empty batch")
    lengths = np.array([len(u) for u in utterances], dtype=np.int64)
    seq, n = int(lengths.max()), len(utterances)
    word_ids = np.full((seq, n), PAD_ID, dtype=np.int64)
    tag_ids = np.full((seq, n), PAD_ID, dtype=np.int64)
    unseen = 0
    for b, u in enumerate(utterances):
        word_ids[: len(u), b] = [vocab.word_id(t) for t in u.tokens]
        for t, tag in enumerate(u.slot_tags):
            tid = vocab.tag_ids.get(tag)
            if tid is None:
                unseen += 1
                tid = PAD_ID
            tag_ids[t, b] = tid
    intent_ids = np.array([vocab.intent_ids.get(u.intent, -1) for u in utterances], dtype=np.int64)
    mask = np.arange(seq)[:, None] < lengths[None, :]
    return Batch(word_ids, tag_ids, intent_ids, mask, lengths,
                 list(indices) if indices is not None else list(range(n)), unseen)


def batches(data: Sequence[Utterance], vocab: Vocabulary, batch_size: int,
            shuffle_seed: int | None = None) -> Iterator[Batch]:
    """Length-bucketed padded minibatches.

    Without a seed, utterances are stably sorted by length and chunked. With a
    seed, the utterance order is shuffled before the stable sort (so equal
    lengths mix) and the resulting batch order is shuffled too.
    """
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    order = np.arange(len(data))
    rng = np.random.default_rng(shuffle_seed) if shuffle_seed is not None else None
    if rng is not None:
        order = rng.permutation(len(data))
    order = sorted(order.tolist(), key=lambda i: len(data[i]))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    for chunk in chunks:
        yield encode_batch([data[i] for i in chunk], vocab, chunk)
