"""Tokenization, the three-way embedding sum, and dynamic token masking.

The text input for a sample is the temporal concatenation
``<s> t_{i-k} </s> t_{i-k+1} </s> ... </s> t_i </s>``; segment id 1 marks
the tokens of the current turn plus the final ``</s>``, everything else
gets segment 0.  Word boundaries of the last two turns are tracked through
tokenization so time-alignment heads can index fused hidden states.

The tokenizer is pluggable.  The default splits on whitespace (one token
per word); a chunking tokenizer exists to exercise multi-token words in
tests.  Out-of-vocabulary words are an error, never a silent UNK.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, add, embedding
from .corpus import Sample

BOS, EOS, MASK, PAD = "<s>", "</s>", "<mask>", "<pad>"
SPECIALS = (BOS, EOS, MASK, PAD)


class VocabError(KeyError):
    pass


@dataclass
class Vocab:
    id_to_token: list

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIALS:
            raise VocabError(f"vocabulary must start with specials {SPECIALS}")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise VocabError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    bos_id, eos_id, mask_id, pad_id = 0, 1, 2, 3

    @property
    def special_ids(self) -> tuple:
        return (self.bos_id, self.eos_id, self.mask_id, self.pad_id)

    def lookup(self, token: str) -> int:
        try:
            return self.token_to_id[token]
        except KeyError:
            raise VocabError(f"token {token!r} not in vocabulary")

    @classmethod
    def from_tokens(cls, tokens) -> "Vocab":
        ordered = sorted(set(tokens) - set(SPECIALS))
        return cls(list(SPECIALS) + ordered)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text().splitlines()
        return cls([ln for ln in lines if ln])


class WhitespaceTokenizer:
    """Word-level tokenizer: every corpus word is a single token."""

    def tokenize(self, word: str) -> list:
        return [word]

    def vocabulary_tokens(self, words) -> list:
        return list(words)


class CharChunkTokenizer:
    """Splits words into fixed-size character chunks (multi-token words)."""

    def __init__(self, chunk: int = 2):
        self.chunk = chunk

    def tokenize(self, word: str) -> list:
        return [word[i:i + self.chunk] for i in range(0, len(word), self.chunk)]

    def vocabulary_tokens(self, words) -> list:
        out = []
        for w in words:
            out.extend(self.tokenize(w))
        return out


@dataclass(frozen=True)
class TokenBoundary:
    """Token span of one time-aligned word inside the concatenated input."""
    first_token_index: int
    last_token_index: int
    start_time: float
    end_time: float
    turn_flag: int          # 0 = previous turn, 1 = current turn


@dataclass
class TokenizedInput:
    token_ids: np.ndarray        # int64 [n]
    segment_ids: np.ndarray      # int64 [n], 1 on current turn + final </s>
    position_ids: np.ndarray     # int64 [n]
    word_boundaries: list        # list[TokenBoundary] over the last two turns
    dropped_history_turns: int = 0

    @property
    def length(self) -> int:
        return len(self.token_ids)


def tokenize_sample(sample: Sample, vocab: Vocab, tokenizer=None,
                    max_len: int | None = None) -> TokenizedInput:
    """Lay out a sample's text turns with specials, segments and boundaries.

    If ``max_len`` is given and the layout is longer, whole oldest history
    turns are dropped (the last two turns are never touched); if it still
    does not fit, a ValueError is raised.
    """
    tokenizer = tokenizer or WhitespaceTokenizer()
    turns = sample.text_turns
    dropped = 0
    while True:
        ids, segments, boundaries = _layout(turns, sample, vocab, tokenizer)
        if max_len is None or len(ids) <= max_len:
            break
        if len(turns) <= 2:
            raise ValueError(
                f"sample {sample.dialog_id}/{sample.target_turn_index}: last "
                f"two turns alone need {len(ids)} tokens > max {max_len}")
        turns = turns[1:]
        dropped += 1
    n = len(ids)
    return TokenizedInput(
        token_ids=np.asarray(ids, dtype=np.int64),
        segment_ids=np.asarray(segments, dtype=np.int64),
        position_ids=np.arange(n, dtype=np.int64),
        word_boundaries=boundaries,
        dropped_history_turns=dropped)


def _layout(turns, sample, vocab, tokenizer):
    ids = [vocab.bos_id]
    segments = [0]
    boundaries = []
    last_two_start = len(turns) - 2
    for ti, words in enumerate(turns):
        current = ti == len(turns) - 1
        flag = ti - last_two_start  # 0 for prev, 1 for cur, <0 for history
        word_spans = []
        for word in words:
            pieces = tokenizer.tokenize(word)
            first = len(ids)
            for piece in pieces:
                ids.append(vocab.lookup(piece))
                segments.append(1 if current else 0)
            word_spans.append((first, len(ids) - 1))
        ids.append(vocab.eos_id)
        segments.append(1 if current else 0)
        if flag >= 0:
            aligned = [w for w in sample.tpp_words if w.turn_flag == flag]
            for w in aligned:
                if w.word_pos < len(word_spans):
                    first, last = word_spans[w.word_pos]
                    boundaries.append(TokenBoundary(
                        first, last, w.start_time, w.end_time, flag))
    return ids, segments, boundaries


def embed_text(tokenized: TokenizedInput, token_table, position_table,
               segment_table, max_len: int = 512) -> Tensor:
    """Rowwise token + absolute-position + segment embedding sum."""
    n = tokenized.length
    if n > max_len:
        raise ValueError(
            f"text length {n} exceeds maximum {max_len}; drop oldest history "
            f"turns before embedding")
    tok = embedding(token_table, tokenized.token_ids)
    pos = embedding(position_table, tokenized.position_ids)
    seg = embedding(segment_table, tokenized.segment_ids)
    return add(add(tok, pos), seg)


@dataclass
class TextMaskPlan:
    positions: np.ndarray       # int64, indices into token_ids
    actions: np.ndarray         # 0 = <mask>, 1 = random token, 2 = keep
    replacement_ids: np.ndarray  # vocab ids where action == 1
    labels: np.ndarray          # original ids at masked positions

    MASK_TOKEN, RANDOM_TOKEN, KEEP = 0, 1, 2

    @property
    def is_empty(self) -> bool:
        return len(self.positions) == 0

    def apply(self, token_ids: np.ndarray, vocab: Vocab) -> np.ndarray:
        out = token_ids.copy()
        for pos, act, rep in zip(self.positions, self.actions,
                                 self.replacement_ids):
            if act == self.MASK_TOKEN:
                out[pos] = vocab.mask_id
            elif act == self.RANDOM_TOKEN:
                out[pos] = rep
        return out


def mask_tokens(tokenized: TokenizedInput, vocab: Vocab,
                rng: np.random.Generator, p: float = 0.15,
                corruption: tuple = (0.8, 0.1, 0.1)) -> TextMaskPlan:
    """Bernoulli(p) selection of non-special tokens with 80/10/10 corruption.

    Random replacements are drawn uniformly over regular (non-special)
    vocabulary entries.
    """
    special = np.isin(tokenized.token_ids, vocab.special_ids)
    draws = rng.random(tokenized.length)
    selected = np.flatnonzero((draws < p) & ~special)
    p_mask, p_rand, _ = corruption
    t = rng.random(selected.size)
    actions = np.where(t < p_mask, TextMaskPlan.MASK_TOKEN,
                       np.where(t < p_mask + p_rand,
                                TextMaskPlan.RANDOM_TOKEN, TextMaskPlan.KEEP))
    n_regular = vocab.size - len(SPECIALS)
    if n_regular < 1:
        raise VocabError("vocabulary has no regular tokens to sample from")
    replacements = rng.integers(len(SPECIALS), vocab.size, size=selected.size)
    return TextMaskPlan(
        positions=selected.astype(np.int64),
        actions=actions.astype(np.int64),
        replacement_ids=replacements.astype(np.int64),
        labels=tokenized.token_ids[selected].copy())
