"""Objectives, optimizer, the two-stage pre-training protocol, and fine-tuning.

Losses are per-example sums of negative log-likelihoods (masked positions for
the encoder objectives, target tokens plus EOS for the decoder objectives),
averaged over the batch. Stages alternate batches between their objectives;
freezing is enforced by handing the optimizer only the trainable groups.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import MonolingualCorpus, ParallelCorpus, TaskExample
from .model import ParamGroup, Seq2SeqModel, save_checkpoint
from .noising import MaskedExample, NoiseConfig, NoisedExample, build_xmlm, mask_mlm, noise_dae
from .seeding import named_rng
from .vocab import BOS_ID, EOS_ID, PAD_ID, LanguageTag


@dataclass
class OptimizerConfig:
    base_lr: float = 1e-4
    warmup_steps: int = 400
    total_steps: int = 2000
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")


def lr_at(step: int, cfg: OptimizerConfig) -> float:
    """Linear warm-up to base_lr, then linear decay to zero at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    return cfg.base_lr * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)


class Adam:
    """Bias-corrected Adam over an explicit set of trainable parameters.

    Parameters not handed to the constructor are frozen by construction: they
    are never touched, whatever gradients the backward pass computed for them.
    """

    def __init__(self, params: dict[str, Tensor], cfg: OptimizerConfig):
        self.params = dict(params)
        self.cfg = cfg
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params.items()}

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the lr used."""
        self.step_count += 1
        lr = lr_at(min(self.step_count, self.cfg.total_steps), self.cfg)
        b1, b2 = self.cfg.betas
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            mhat = self.m[name] / (1 - b1 ** self.step_count)
            vhat = self.v[name] / (1 - b2 ** self.step_count)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.cfg.eps)
        return lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# loss functions

def _pad_batch(seqs: Sequence[Sequence[int]], pad_value: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to a rectangle; returns (ids, pad_mask) with True at pads."""
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_value, dtype=np.int64)
    pad = np.ones((len(seqs), width), dtype=bool)
    for b, s in enumerate(seqs):
        ids[b, :len(s)] = s
        pad[b, :len(s)] = False
    return ids, pad


def _mean_scored_nll(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Mean over batch of per-example sums of -log p(target) at weighted positions."""
    logp = ad.log_softmax(logits)
    picked = ad.gather_last(logp, targets)
    total = ad.tsum(ad.mul(picked, weights.astype(logits.dtype)))
    return ad.mul(total, -1.0 / logits.shape[0])


def loss_mlm(model: Seq2SeqModel, examples: Sequence[MaskedExample]) -> Tensor:
    """Masked-token NLL over the encoder, scored at masked positions only."""
    for ex in examples:
        if not ex.mask_positions:
            raise ValueError("masked example has an empty mask set")
    ids, pad = _pad_batch([ex.corrupted for ex in examples], PAD_ID)
    tags, _ = _pad_batch([ex.lang_tags for ex in examples], 0)
    targets = np.zeros_like(ids)
    weights = np.zeros(ids.shape, dtype=np.float64)
    for b, ex in enumerate(examples):
        for pos, tgt in zip(ex.mask_positions, ex.targets):
            targets[b, pos] = tgt
            weights[b, pos] = 1.0
    states = model.encode(ids, tags, pad_mask=pad)
    logits = model.output_logits(states)
    return _mean_scored_nll(logits, targets, weights)


def loss_xmlm(model: Seq2SeqModel, examples: Sequence[MaskedExample]) -> Tensor:
    """Bilingual masked-token NLL; both sides of every example must carry masks."""
    for ex in examples:
        if ex.boundary is None:
            raise ValueError("xmlm loss expects bilingual examples with a [S] boundary")
        if not any(p < ex.boundary for p in ex.mask_positions) or \
           not any(p > ex.boundary for p in ex.mask_positions):
            raise ValueError("both sides of a bilingual example must have masked positions")
    return loss_mlm(model, examples)


def _teacher_forced_nll(model: Seq2SeqModel, sources: Sequence[Sequence[int]],
                        src_tag_rows: Sequence[Sequence[int]],
                        targets: Sequence[Sequence[int]],
                        tgt_lang_ids: Sequence[int]) -> Tensor:
    """Autoregressive NLL of targets (plus EOS) given encoded sources."""
    src_ids, src_pad = _pad_batch(sources, PAD_ID)
    src_tags, _ = _pad_batch(src_tag_rows, 0)
    enc = model.encode(src_ids, src_tags, pad_mask=src_pad)

    dec_inputs = [[BOS_ID] + list(t) for t in targets]
    scored = [list(t) + [EOS_ID] for t in targets]
    dec_ids, _ = _pad_batch(dec_inputs, PAD_ID)
    tgt_arr, tgt_pad = _pad_batch(scored, 0)
    weights = (~tgt_pad).astype(np.float64)
    logits = model.decode_forward(enc, src_pad, dec_ids, np.asarray(tgt_lang_ids))
    return _mean_scored_nll(logits, tgt_arr, weights)


def loss_dae(model: Seq2SeqModel, examples: Sequence[NoisedExample]) -> Tensor:
    """Reconstruction NLL of the pristine sentence given its noised version."""
    return _teacher_forced_nll(
        model,
        sources=[ex.source for ex in examples],
        src_tag_rows=[[ex.src_lang.id] * len(ex.source) for ex in examples],
        targets=[ex.target for ex in examples],
        tgt_lang_ids=[ex.tgt_lang.id for ex in examples],
    )


def loss_xae(model: Seq2SeqModel, pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
             src_lang: LanguageTag, tgt_lang: LanguageTag) -> Tensor:
    """Both translation directions of each pair, with the matching language tags."""
    xs = [list(x) for x, _ in pairs]
    ys = [list(y) for _, y in pairs]
    fwd = _teacher_forced_nll(model, xs, [[src_lang.id] * len(x) for x in xs],
                              ys, [tgt_lang.id] * len(pairs))
    bwd = _teacher_forced_nll(model, ys, [[tgt_lang.id] * len(y) for y in ys],
                              xs, [src_lang.id] * len(pairs))
    return ad.add(fwd, bwd)


def loss_task(model: Seq2SeqModel, examples: Sequence[TaskExample]) -> Tensor:
    """Supervised seq2seq loss on downstream task examples."""
    return _teacher_forced_nll(
        model,
        sources=[ex.input for ex in examples],
        src_tag_rows=[[ex.lang.id] * len(ex.input) for ex in examples],
        targets=[ex.target for ex in examples],
        tgt_lang_ids=[ex.lang.id for ex in examples],
    )


# ---------------------------------------------------------------------------
# stage plans and loops

STAGE1_GROUPS = frozenset({
    ParamGroup.ENCODER_LAYERS, ParamGroup.WORD_EMBEDDINGS,
    ParamGroup.TAG_AND_POSITION_EMBEDDINGS, ParamGroup.OUTPUT_HEAD,
})
STAGE2_GROUPS = frozenset({ParamGroup.DECODER_LAYERS})

FINETUNE_STRATEGIES: dict[str, frozenset[ParamGroup]] = {
    "all": frozenset(ParamGroup),
    "enc": frozenset({ParamGroup.ENCODER_LAYERS, ParamGroup.WORD_EMBEDDINGS,
                      ParamGroup.TAG_AND_POSITION_EMBEDDINGS}),
    "et": frozenset({ParamGroup.ENCODER_LAYERS}),
    "dec": frozenset({ParamGroup.DECODER_LAYERS, ParamGroup.OUTPUT_HEAD}),
}

FINETUNE_DEFAULT_LR = 5e-6


@dataclass
class StagePlan:
    stage: int
    trainable_groups: frozenset[ParamGroup]
    objective_weights: dict[str, float]

    def __post_init__(self):
        if self.stage == 2:
            banned = {ParamGroup.ENCODER_LAYERS, ParamGroup.WORD_EMBEDDINGS,
                      ParamGroup.TAG_AND_POSITION_EMBEDDINGS}
            if self.trainable_groups & banned:
                raise ValueError("stage 2 must keep the encoder and embeddings fixed")

    @property
    def objectives(self) -> list[str]:
        return [name for name, w in self.objective_weights.items() if w > 0.0]


def stage1_plan() -> StagePlan:
    return StagePlan(1, STAGE1_GROUPS, {"mlm": 1.0, "xmlm": 1.0})


def stage2_plan(dae_weight: float = 0.5, use_dae: bool = True,
                use_xae: bool = True) -> StagePlan:
    weights = {"dae": dae_weight if use_dae else 0.0, "xae": 1.0 if use_xae else 0.0}
    if not any(w > 0 for w in weights.values()):
        raise ValueError("stage 2 needs at least one active objective")
    return StagePlan(2, STAGE2_GROUPS, weights)


@dataclass
class TraceRow:
    step: int
    objective: str
    loss: float
    lr: float


def save_trace_csv(trace: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "objective", "loss", "lr"])
        for row in trace:
            writer.writerow([row.step, row.objective, repr(row.loss), repr(row.lr)])


def _mono_pool(corpora: Sequence[MonolingualCorpus]) -> list[tuple[list[int], LanguageTag]]:
    return [(s, c.lang) for c in corpora for s in c.sentences]


def _periodic_save(model, label: str, step: int, every: int, directory) -> None:
    if every > 0 and directory is not None and step % every == 0:
        save_checkpoint(model, os.path.join(directory, f"{label}_step{step:06d}.ckpt"))


def _run_stage(model: Seq2SeqModel, plan: StagePlan, optcfg: OptimizerConfig,
               noise_cfg: NoiseConfig, mono: Sequence[MonolingualCorpus],
               parallel: ParallelCorpus | None, batch_size: int, seed: int,
               stream: str, checkpoint_every: int = 0,
               checkpoint_dir=None) -> list[TraceRow]:
    rng = named_rng(seed, stream)
    opt = Adam(model.tensors(plan.trainable_groups), optcfg)
    pool = _mono_pool(mono)
    objectives = plan.objectives
    vocab_size = model.config.vocab_size
    trace: list[TraceRow] = []

    for step in range(1, optcfg.total_steps + 1):
        objective = objectives[(step - 1) % len(objectives)]
        weight = plan.objective_weights[objective]
        if objective in ("mlm", "dae"):
            idx = rng.integers(0, len(pool), size=batch_size)
            batch = [pool[int(i)] for i in idx]
            if objective == "mlm":
                examples = [mask_mlm(s, lang, noise_cfg, rng, vocab_size)
                            for s, lang in batch]
                loss = loss_mlm(model, examples)
            else:
                examples = [noise_dae(s, lang, noise_cfg, rng) for s, lang in batch]
                loss = loss_dae(model, examples)
        elif objective == "xmlm":
            idx = rng.integers(0, len(parallel.pairs), size=batch_size)
            examples = [build_xmlm(*parallel.pairs[int(i)], parallel.src_lang,
                                   parallel.tgt_lang, noise_cfg, rng, vocab_size)
                        for i in idx]
            loss = loss_xmlm(model, examples)
        elif objective == "xae":
            idx = rng.integers(0, len(parallel.pairs), size=batch_size)
            pairs = [parallel.pairs[int(i)] for i in idx]
            loss = loss_xae(model, pairs, parallel.src_lang, parallel.tgt_lang)
        else:
            raise ValueError(f"unknown objective {objective!r}")

        if weight != 1.0:
            loss = ad.mul(loss, weight)
        ad.zero_grads(model.params.values())
        loss.backward()
        lr = opt.step()
        trace.append(TraceRow(step, objective, loss.item(), lr))
        _periodic_save(model, f"stage{plan.stage}", step, checkpoint_every,
                       checkpoint_dir)
    return trace


def pretrain_stage1(model: Seq2SeqModel, mono: Sequence[MonolingualCorpus],
                    parallel: ParallelCorpus, optcfg: OptimizerConfig,
                    noise_cfg: NoiseConfig, batch_size: int = 16, seed: int = 0,
                    plan: StagePlan | None = None, checkpoint_every: int = 0,
                    checkpoint_dir=None) -> list[TraceRow]:
    """Stage one: train the encoding components with masked-token objectives."""
    plan = plan or stage1_plan()
    if plan.stage != 1:
        raise ValueError("pretrain_stage1 requires a stage-1 plan")
    return _run_stage(model, plan, optcfg, noise_cfg, mono, parallel,
                      batch_size, seed, "stage1", checkpoint_every, checkpoint_dir)


def pretrain_stage2(model: Seq2SeqModel, mono: Sequence[MonolingualCorpus],
                    parallel: ParallelCorpus, optcfg: OptimizerConfig,
                    noise_cfg: NoiseConfig, batch_size: int = 16, seed: int = 0,
                    plan: StagePlan | None = None, checkpoint_every: int = 0,
                    checkpoint_dir=None) -> list[TraceRow]:
    """Stage two: train the decoder on denoising plus translation, encoder fixed."""
    plan = plan or stage2_plan()
    if plan.stage != 2:
        raise ValueError("pretrain_stage2 requires a stage-2 plan")
    return _run_stage(model, plan, optcfg, noise_cfg, mono, parallel,
                      batch_size, seed, "stage2", checkpoint_every, checkpoint_dir)


def finetune(model: Seq2SeqModel, dataset: Sequence[TaskExample], strategy: str,
             optcfg: OptimizerConfig, batch_size: int = 16, seed: int = 0,
             checkpoint_every: int = 0, checkpoint_dir=None) -> list[TraceRow]:
    """Supervised fine-tuning under one of the freeze strategies (all/enc/dec/et)."""
    key = strategy.lower()
    if key not in FINETUNE_STRATEGIES:
        raise ValueError(f"unknown fine-tuning strategy {strategy!r}; "
                         f"expected one of {sorted(FINETUNE_STRATEGIES)}")
    if not dataset:
        raise ValueError("fine-tuning dataset is empty")
    rng = named_rng(seed, "finetune", key)
    opt = Adam(model.tensors(FINETUNE_STRATEGIES[key]), optcfg)
    trace: list[TraceRow] = []
    for step in range(1, optcfg.total_steps + 1):
        idx = rng.integers(0, len(dataset), size=min(batch_size, len(dataset)))
        batch = [dataset[int(i)] for i in idx]
        loss = loss_task(model, batch)
        ad.zero_grads(model.params.values())
        loss.backward()
        lr = opt.step()
        trace.append(TraceRow(step, "task", loss.item(), lr))
        _periodic_save(model, f"finetune_{key}", step, checkpoint_every, checkpoint_dir)
    return trace
