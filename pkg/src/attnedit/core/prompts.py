"""Prompt tokenization and source/edit word alignment."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import AmbiguityError, MisalignmentError, ValidationError

BOS_ID = 1
EOS_ID = 2
_FIRST_PIECE_ID = 3

_TOKEN_RE = re.compile(r"[A-Za-z0-9']+|[^\sA-Za-z0-9']")
_NO_SPACE_BEFORE = set(",.!?;:)]}")
_CONT = "##"


@dataclass(frozen=True)
class WordSpan:
    word: str
    start: int
    stop: int  # exclusive

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class TokenizedPrompt:
    text: str
    token_ids: tuple[int, ...]
    word_spans: tuple[WordSpan, ...]
    pieces: tuple[str, ...] = field(repr=False, default=())

    def __len__(self) -> int:
        return len(self.token_ids)

    def find_word(self, word: str) -> WordSpan:
        hits = [s for s in self.word_spans if s.word == word]
        if not hits:
            raise ValidationError(f"word {word!r} not found in prompt {self.text!r}")
        if len(hits) > 1:
            raise AmbiguityError(f"word {word!r} occurs {len(hits)} times in {self.text!r}")
        return hits[0]

    def fingerprint(self) -> str:
        return hashlib.sha256(np.asarray(self.token_ids, dtype="<i8").tobytes()).hexdigest()


class Tokenizer(Protocol):
    context_length: int

    def encode(self, text: str) -> TokenizedPrompt: ...

    def decode(self, token_ids: Sequence[int]) -> str: ...


class WordTokenizer:
    """Whitespace/punctuation tokenizer with hashed ids.

    Words longer than ``max_piece`` characters are split into several
    pieces (continuations carry a ``##`` prefix), so multi-token words
    occur even without a learned vocabulary. Ids are a stable hash of the
    piece text; the id->piece table is filled on encode and used by
    ``decode``.
    """

    def __init__(self, context_length: int = 77, max_piece: int = 6, vocab_size: int = 1 << 20):
        self.context_length = context_length
        self.max_piece = max_piece
        self.vocab_size = vocab_size
        self._pieces: dict[int, str] = {BOS_ID: "<bos>", EOS_ID: "<eos>"}

    def piece_id(self, piece: str) -> int:
        digest = hashlib.sha1(piece.encode("utf-8")).digest()
        tid = _FIRST_PIECE_ID + int.from_bytes(digest[:8], "little") % (self.vocab_size - _FIRST_PIECE_ID)
        known = self._pieces.setdefault(tid, piece)
        if known != piece:
            raise ValidationError(f"token id collision between {known!r} and {piece!r}")
        return tid

    def _split_word(self, word: str) -> list[str]:
        n = self.max_piece
        parts = [word[i:i + n] for i in range(0, len(word), n)]
        return [parts[0]] + [_CONT + p for p in parts[1:]]

    def encode(self, text: str) -> TokenizedPrompt:
        ids = [BOS_ID]
        pieces = ["<bos>"]
        spans = []
        for m in _TOKEN_RE.finditer(text):
            tok = m.group(0)
            if tok[0].isalnum() or tok[0] == "'":
                parts = self._split_word(tok)
                spans.append(WordSpan(tok, len(ids), len(ids) + len(parts)))
            else:
                parts = [tok]
            for p in parts:
                ids.append(self.piece_id(p))
                pieces.append(p)
        ids.append(EOS_ID)
        pieces.append("<eos>")
        if len(ids) > self.context_length:
            raise ValidationError(
                f"prompt needs {len(ids)} tokens, context length is {self.context_length}"
            )
        return TokenizedPrompt(text, tuple(ids), tuple(spans), tuple(pieces))

    def decode(self, token_ids: Sequence[int]) -> str:
        out: list[str] = []
        for tid in token_ids:
            if tid in (BOS_ID, EOS_ID):
                continue
            try:
                piece = self._pieces[tid]
            except KeyError:
                raise ValidationError(f"unknown token id {tid}") from None
            if piece.startswith(_CONT) and out:
                out[-1] += piece[len(_CONT):]
            elif piece in _NO_SPACE_BEFORE and out:
                out[-1] += piece
            else:
                out.append(piece)
        return " ".join(out)


def normalize_whitespace(text: str) -> str:
    """Collapse whitespace and drop it before closing punctuation."""
    text = " ".join(text.split())
    return re.sub(r"\s+([,.!?;:)\]}])", r"\1", text)


@dataclass(frozen=True)
class EditSpec:
    """Aligned (source span -> edit span) token ranges plus ablation flags.

    Spans are half-open ``(start, stop)`` token ranges. ``src_len`` and
    ``edit_len`` are the full token counts of the two prompts.
    """

    pairs: tuple[tuple[tuple[int, int], tuple[int, int]], ...]
    src_len: int
    edit_len: int
    enable_cross: bool = True
    enable_spatial: bool = True

    def __post_init__(self):
        if self.enable_spatial and not self.enable_cross:
            raise ValidationError("enable_spatial requires enable_cross")
        prev_s = prev_e = 0
        for (s0, s1), (e0, e1) in self.pairs:
            if not (prev_s <= s0 < s1 <= self.src_len and prev_e <= e0 < e1 <= self.edit_len):
                raise ValidationError(f"span pair {(s0, s1)}->{(e0, e1)} is out of order or range")
            if (s1 - s0) != (e1 - e0) and not self.enable_cross:
                raise MisalignmentError("spans of unequal token length need enable_cross")
            prev_s, prev_e = s1, e1
        if self.src_len - self.edit_len != sum((s1 - s0) - (e1 - e0) for (s0, s1), (e0, e1) in self.pairs):
            raise MisalignmentError("non-edited token counts differ between prompts")

    @property
    def N(self) -> int:
        return len(self.pairs)

    def src_positions(self) -> np.ndarray:
        return np.array([i for (s0, s1), _ in self.pairs for i in range(s0, s1)], dtype=np.int64)

    def edit_positions(self) -> np.ndarray:
        return np.array([i for _, (e0, e1) in self.pairs for i in range(e0, e1)], dtype=np.int64)

    def edit_to_src(self) -> np.ndarray:
        """Source column for every edit-prompt token, -1 inside edited spans."""
        out = np.full(self.edit_len, -1, dtype=np.int64)
        s = e = 0
        for (s0, s1), (e0, e1) in self.pairs:
            out[e:e0] = np.arange(s, s0)
            s, e = s1, e1
        out[e:] = np.arange(s, self.src_len)
        return out

    def mirrored(self) -> "EditSpec":
        return EditSpec(
            tuple((e, s) for s, e in self.pairs),
            self.edit_len,
            self.src_len,
            self.enable_cross,
            self.enable_spatial,
        )

    def with_flags(self, enable_cross: bool, enable_spatial: bool) -> "EditSpec":
        return EditSpec(self.pairs, self.src_len, self.edit_len, enable_cross, enable_spatial)


def align_edit_words(
    src: TokenizedPrompt,
    edit: TokenizedPrompt,
    word_pairs: Sequence[tuple[str, str]],
    enable_cross: bool = True,
    enable_spatial: bool = True,
) -> EditSpec:
    """Resolve word pairs to token spans and check the rest of the prompts match.

    Only one-to-one word replacement is supported: outside the named
    words both prompts must tokenize identically.
    """
    spans = []
    for sw, ew in word_pairs:
        spans.append((src.find_word(sw), edit.find_word(ew)))
    spans.sort(key=lambda p: p[0].start)
    for (a, b), (c, d) in zip(spans, spans[1:]):
        if a.start == c.start:
            raise AmbiguityError(f"source word {a.word!r} is paired twice")
        if d.start <= b.start:
            raise MisalignmentError(
                f"edit words {b.word!r} and {d.word!r} are not in the same order as their source words"
            )

    s_ids, e_ids = src.token_ids, edit.token_ids
    s = e = 0
    for sspan, espan in spans + [(None, None)]:
        s_end = sspan.start if sspan else len(s_ids)
        e_end = espan.start if espan else len(e_ids)
        if s_ids[s:s_end] != e_ids[e:e_end]:
            raise MisalignmentError(
                f"prompts differ outside the edited words: {src.text!r} vs {edit.text!r}"
            )
        if sspan:
            s, e = sspan.stop, espan.stop

    pairs = tuple(((a.start, a.stop), (b.start, b.stop)) for a, b in spans)
    return EditSpec(pairs, len(src), len(edit), enable_cross, enable_spatial)
