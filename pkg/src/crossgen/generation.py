"""Language-controlled autoregressive decoding.

Beam search with accumulated log-probability scores (no length
normalization), deterministic lexicographic tie-breaking, an optional
allowed-vocabulary restriction, and target-language tag forcing on every
decoder call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .corpus import MonolingualCorpus
from .model import Seq2SeqModel
from .vocab import BOS_ID, EOS_ID, NUM_SPECIALS, LanguageTag


@dataclass
class BeamHypothesis:
    ids: list[int]          # BOS-prefixed partial target
    score: float            # accumulated log-probability
    finished: bool = False

    def sort_key(self):
        # higher score first; ties resolved by lexicographic token-id order
        return (-self.score, tuple(self.ids))


@dataclass
class DecodeConfig:
    tgt_lang: LanguageTag
    beam_size: int = 3
    max_len: int = 80
    allowed_vocab: set[int] | None = None

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.allowed_vocab is not None and EOS_ID not in self.allowed_vocab:
            raise ValueError("allowed_vocab must contain EOS")


def restrict_vocab(corpus: MonolingualCorpus) -> set[int]:
    """Token ids occurring in `corpus`, plus EOS; special ids are excluded."""
    if not corpus.sentences:
        raise ValueError("cannot restrict vocabulary from an empty corpus")
    ids = {int(t) for s in corpus.sentences for t in s if t >= NUM_SPECIALS}
    ids.add(EOS_ID)
    return ids


def beam_search(model: Seq2SeqModel, input_ids: Sequence[int], src_lang: LanguageTag,
                cfg: DecodeConfig) -> tuple[list[int], float]:
    """Decode one sequence; returns (output ids without BOS/EOS, score).

    Each step extends every live hypothesis over the allowed vocabulary and
    keeps the top beam_size candidates (finished hypotheses ride along
    unextended). The best finished hypothesis that ever entered the beam
    wins; if none finished within max_len steps, the best partial is
    returned. With beam_size 1 this reduces exactly to a greedy argmax chain.
    """
    if len(input_ids) == 0:
        raise ValueError("cannot decode from an empty input")
    input_ids = list(input_ids)[: model.config.max_positions]
    if cfg.max_len + 1 > model.config.max_positions:
        raise ValueError("max_len + BOS exceeds the model's max_positions")

    if cfg.allowed_vocab is not None:
        allowed = np.array(sorted(cfg.allowed_vocab), dtype=np.int64)
    else:
        allowed = np.arange(model.config.vocab_size, dtype=np.int64)

    with no_grad():
        src = np.asarray([input_ids], dtype=np.int64)
        tags = np.full_like(src, src_lang.id)
        enc = model.encode(src, tags)
        enc_np = enc.data

        beams = [BeamHypothesis([BOS_ID], 0.0)]
        best_finished: BeamHypothesis | None = None

        for _ in range(cfg.max_len):
            live = [h for h in beams if not h.finished]
            if not live:
                break
            prefixes = np.asarray([h.ids for h in live], dtype=np.int64)
            batch = prefixes.shape[0]
            enc_batch = Tensor(np.broadcast_to(enc_np, (batch,) + enc_np.shape[1:]))
            logits = model.decode_forward(enc_batch, None, prefixes, cfg.tgt_lang)
            last = logits.data[:, -1, :]
            logp = last - _logsumexp(last)

            candidates = [h for h in beams if h.finished]
            for b, hyp in enumerate(live):
                for tok in allowed:
                    tok = int(tok)
                    candidates.append(BeamHypothesis(
                        ids=hyp.ids + [tok],
                        score=hyp.score + float(logp[b, tok]),
                        finished=tok == EOS_ID,
                    ))
            candidates.sort(key=BeamHypothesis.sort_key)
            beams = candidates[: cfg.beam_size]
            # only hypotheses that survive beam selection count as finished
            for hyp in beams:
                if hyp.finished and (best_finished is None
                                     or hyp.sort_key() < best_finished.sort_key()):
                    best_finished = hyp
            if all(h.finished for h in beams):
                break

    if best_finished is not None:
        winner = best_finished
    else:
        winner = min(beams, key=BeamHypothesis.sort_key)
    out = winner.ids[1:]
    if winner.finished:
        out = out[:-1]
    return out, winner.score


def _logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
