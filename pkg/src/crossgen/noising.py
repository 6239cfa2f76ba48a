"""Corruption procedures that manufacture pre-training instances.

Three flavours: masked-token prediction over one sentence, the same over a
concatenated bilingual pair, and source-side noise (local shuffle, drops,
pad substitutions) for denoising auto-encoding. All are pure functions of
(input, rng state).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .vocab import MASK_ID, NUM_SPECIALS, PAD_ID, SEP_ID, LanguageTag


@dataclass
class NoiseConfig:
    mask_rate: float = 0.15
    p_mask_token: float = 0.8
    p_random: float = 0.1
    p_keep: float = 0.1
    shuffle_window: int = 3
    p_drop: float = 0.1
    p_pad: float = 0.1

    def __post_init__(self):
        probs = (self.mask_rate, self.p_mask_token, self.p_random, self.p_keep,
                 self.p_drop, self.p_pad)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("all noise probabilities must lie in [0, 1]")
        if abs(self.p_mask_token + self.p_random + self.p_keep - 1.0) > 1e-12:
            raise ValueError("p_mask_token + p_random + p_keep must equal 1")
        if self.shuffle_window < 1:
            raise ValueError("shuffle_window must be >= 1")


@dataclass
class MaskedExample:
    """A corrupted sentence with the positions to reconstruct.

    For bilingual instances `boundary` is the [S] index separating the two
    sides; monolingual instances leave it as None.
    """

    corrupted: list[int]
    mask_positions: list[int]
    targets: list[int]
    lang_tags: list[int]
    boundary: int | None = None

    def __post_init__(self):
        if len(self.mask_positions) != len(self.targets):
            raise ValueError("mask_positions and targets must align")
        if len(self.corrupted) != len(self.lang_tags):
            raise ValueError("lang_tags must cover every position")
        if any(b <= a for a, b in zip(self.mask_positions, self.mask_positions[1:])):
            raise ValueError("mask_positions must be strictly increasing")
        if self.mask_positions and not (
                0 <= self.mask_positions[0] and self.mask_positions[-1] < len(self.corrupted)):
            raise ValueError("mask position out of bounds")


@dataclass
class NoisedExample:
    source: list[int]
    target: list[int]
    src_lang: LanguageTag
    tgt_lang: LanguageTag

    def __post_init__(self):
        if len(self.source) > len(self.target):
            raise ValueError("noise only removes tokens; source cannot outgrow target")


def _mask_one_side(x: Sequence[int], cfg: NoiseConfig, rng: np.random.Generator,
                   vocab_size: int) -> tuple[list[int], list[int], list[int]]:
    """15%-style masking of one sentence; always selects at least one position."""
    n = len(x)
    while True:
        selected = rng.random(n) < cfg.mask_rate
        if selected.any():
            break
    corrupted = list(x)
    positions, targets = [], []
    for i in np.nonzero(selected)[0]:
        i = int(i)
        positions.append(i)
        targets.append(int(x[i]))
        u = rng.random()
        if u < cfg.p_mask_token:
            corrupted[i] = MASK_ID
        elif u < cfg.p_mask_token + cfg.p_random:
            corrupted[i] = int(rng.integers(NUM_SPECIALS, vocab_size))
        # else: keep the original token (still a prediction target)
    return corrupted, positions, targets


def mask_mlm(x: Sequence[int], lang: LanguageTag, cfg: NoiseConfig,
             rng: np.random.Generator, vocab_size: int) -> MaskedExample:
    """Randomly mask tokens of a monolingual sentence for masked-token prediction."""
    if len(x) == 0:
        raise ValueError("cannot mask an empty sentence")
    if any(t < NUM_SPECIALS for t in x):
        raise ValueError("input sentence must not contain special ids")
    corrupted, positions, targets = _mask_one_side(x, cfg, rng, vocab_size)
    return MaskedExample(corrupted, positions, targets, [lang.id] * len(x))


def noise_dae(x: Sequence[int], lang: LanguageTag, cfg: NoiseConfig,
              rng: np.random.Generator) -> NoisedExample:
    """Perturb a sentence: local shuffle, then drops, then pad substitutions.

    The shuffle sorts tokens by (index + uniform[0, k)) with a stable sort, so
    no token moves more than k-1 positions. Drops never remove every token.
    """
    if len(x) == 0:
        raise ValueError("cannot noise an empty sentence")
    n = len(x)
    k = cfg.shuffle_window
    keys = np.arange(n) + rng.uniform(0.0, k, size=n)
    order = np.argsort(keys, kind="stable")
    shuffled = [int(x[i]) for i in order]

    if cfg.p_drop >= 1.0:
        keep = np.zeros(n, dtype=bool)
        keep[int(rng.integers(n))] = True
    else:
        while True:
            keep = rng.random(n) >= cfg.p_drop
            if keep.any():
                break
    survivors = [t for t, k_ in zip(shuffled, keep) if k_]

    pad_mask = rng.random(len(survivors)) < cfg.p_pad
    source = [PAD_ID if m else t for t, m in zip(survivors, pad_mask)]
    return NoisedExample(source=source, target=list(x), src_lang=lang, tgt_lang=lang)


def build_xmlm(x: Sequence[int], y: Sequence[int], src_lang: LanguageTag,
               tgt_lang: LanguageTag, cfg: NoiseConfig, rng: np.random.Generator,
               vocab_size: int) -> MaskedExample:
    """Mask both sides of a bilingual pair and concatenate them around [S].

    Each side is masked independently with the monolingual strategy (so both
    masked sets are nonempty). Language tags follow the tokens; [S] takes the
    source tag.
    """
    if len(x) == 0 or len(y) == 0:
        raise ValueError("both sides of a bilingual pair must be non-empty")
    cx, px, tx = _mask_one_side(x, cfg, rng, vocab_size)
    cy, py, ty = _mask_one_side(y, cfg, rng, vocab_size)
    offset = len(x) + 1
    return MaskedExample(
        corrupted=cx + [SEP_ID] + cy,
        mask_positions=px + [p + offset for p in py],
        targets=tx + ty,
        lang_tags=[src_lang.id] * (len(x) + 1) + [tgt_lang.id] * len(y),
        boundary=len(x),
    )
