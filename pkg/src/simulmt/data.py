"""Vocabularies, parallel corpora, synthetic tasks and plain-text loading."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nmt_env import BOS, EOS, UNK

log = logging.getLogger(__name__)

RESERVED = ("<s>", "</s>", "<unk>")
TASKS = ("copy", "window_swap", "vocab_shift")


class Vocabulary:
    """Token <-> id bijection with ids 0, 1, 2 reserved for <s>, </s>, <unk>."""

    def __init__(self, tokens=()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens, add_eos: bool = True) -> list[int]:
        ids = [self.stoi.get(t, UNK) for t in tokens]
        return ids + [EOS] if add_eos else ids

    def decode(self, ids, strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip and i in (BOS, EOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos[len(RESERVED):]),
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(t for t in lines if t)

    @classmethod
    def build(cls, sentences) -> "Vocabulary":
        """Every token seen at least once, in first-seen order."""
        v = cls()
        for sent in sentences:
            for t in sent:
                v.add(t)
        return v


@dataclass
class Corpus:
    pairs: list[tuple[list[int], list[int]]]
    vocab_src: Vocabulary
    vocab_tgt: Vocabulary
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[list[int]]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[list[int]]:
        return [t for _, t in self.pairs]

    def subset(self, start: int, stop: int, split: str) -> "Corpus":
        return Corpus(self.pairs[start:stop], self.vocab_src, self.vocab_tgt, split, dict(self.meta))

    def write(self, src_path, tgt_path) -> None:
        with open(src_path, "w", encoding="utf-8") as fs, open(tgt_path, "w", encoding="utf-8") as ft:
            for s, t in self.pairs:
                fs.write(" ".join(self.vocab_src.decode(s)) + "\n")
                ft.write(" ".join(self.vocab_tgt.decode(t)) + "\n")


def token_name(i: int) -> str:
    return chr(ord("a") + i) if i < 26 else f"t{i}"


def window_swap(tokens: list, w: int) -> list:
    """Reverse every consecutive window of ``w`` tokens (the last one may be short)."""
    out = []
    for i in range(0, len(tokens), w):
        out.extend(reversed(tokens[i:i + w]))
    return out


def vocab_shift(indices: list[int], k: int, n: int) -> list[int]:
    return [(i + k) % n for i in indices]


def generate_synthetic(task: str, n_pairs: int, len_range=(5, 12), vocab_size: int = 20,
                       seed: int = 0, window: int = 2, shift: int = 1,
                       split: str = "train") -> Corpus:
    """Random token sequences and their ``copy`` / ``window_swap`` / ``vocab_shift`` targets.

    ``vocab_size`` counts the three reserved ids, so ``vocab_size - 3`` content
    tokens are drawn.  Lengths exclude the trailing ``</s>``.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    lo, hi = len_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad length range {len_range}")
    n_content = vocab_size - len(RESERVED)
    if n_content < 1:
        raise ValueError("vocab_size must leave room for content tokens")
    if task == "window_swap" and not 1 <= window <= lo:
        raise ValueError(f"window {window} larger than minimum length {lo}")
    vocab = Vocabulary(token_name(i) for i in range(n_content))
    rng = np.random.default_rng(seed)
    base = len(RESERVED)
    pairs = []
    for _ in range(n_pairs):
        n = int(rng.integers(lo, hi + 1))
        idx = [int(i) for i in rng.integers(0, n_content, size=n)]
        if task == "copy":
            tgt = idx
        elif task == "window_swap":
            tgt = window_swap(idx, window)
        else:
            tgt = vocab_shift(idx, shift, n_content)
        pairs.append(([i + base for i in idx] + [EOS], [i + base for i in tgt] + [EOS]))
    meta = {"task": task, "window": window, "shift": shift, "seed": seed}
    return Corpus(pairs, vocab, vocab, split, meta)


def load_parallel(src_path, tgt_path, vocab_src: Vocabulary | None = None,
                  vocab_tgt: Vocabulary | None = None, max_len: int = 50,
                  split: str = "train") -> Corpus:
    """Read line-aligned whitespace-tokenised text.

    Vocabularies are built from the data when not given; unknown tokens map to
    ``<unk>``.  Pairs with more than ``max_len`` tokens on either side are
    dropped and counted in ``corpus.meta['dropped']``.
    """
    src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"line count mismatch: {src_path} has {len(src_lines)}, "
                         f"{tgt_path} has {len(tgt_lines)}")
    raw, dropped = [], 0
    for s, t in zip(src_lines, tgt_lines):
        s_tok, t_tok = s.split(), t.split()
        if not s_tok or not t_tok or len(s_tok) > max_len or len(t_tok) > max_len:
            dropped += 1
            continue
        raw.append((s_tok, t_tok))
    if dropped:
        log.info("dropped %d of %d pairs outside the length cap %d", dropped, len(src_lines), max_len)
    vocab_src = vocab_src or Vocabulary.build(s for s, _ in raw)
    vocab_tgt = vocab_tgt or Vocabulary.build(t for _, t in raw)
    pairs = [(vocab_src.encode(s), vocab_tgt.encode(t)) for s, t in raw]
    return Corpus(pairs, vocab_src, vocab_tgt, split, {"dropped": dropped})
