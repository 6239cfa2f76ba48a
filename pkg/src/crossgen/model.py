"""Transformer encoder-decoder with token/position/language-tag embeddings.

Pre-norm residual layout, learned positions, exact GELU, and an output
projection tied to the token embedding table. Parameters are plain tensors in
a flat name -> Tensor map; names encode the freeze group they belong to.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .seeding import named_rng
from .vocab import LanguageTag

NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 256
    max_positions: int = 64
    vocab_size: int = 32
    num_languages: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


class ParamGroup(Enum):
    WORD_EMBEDDINGS = "WordEmbeddings"
    ENCODER_LAYERS = "EncoderLayers"
    DECODER_LAYERS = "DecoderLayers"
    OUTPUT_HEAD = "OutputHead"
    TAG_AND_POSITION_EMBEDDINGS = "TagAndPositionEmbeddings"


def group_of(name: str) -> ParamGroup:
    """Freeze group a parameter belongs to, derived from its name."""
    if name == "tok_emb":
        return ParamGroup.WORD_EMBEDDINGS
    if name in ("pos_emb", "lang_emb"):
        return ParamGroup.TAG_AND_POSITION_EMBEDDINGS
    if name == "out_bias":
        return ParamGroup.OUTPUT_HEAD
    if name.startswith("enc."):
        return ParamGroup.ENCODER_LAYERS
    if name.startswith("dec."):
        return ParamGroup.DECODER_LAYERS
    raise KeyError(f"unknown parameter {name!r}")


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ValueError("expected a sequence or a batch of sequences")


class Seq2SeqModel:
    """Encoder-decoder over a shared subword vocabulary.

    All forward methods accept a single sequence (1D) or a batch (2D); a 1D
    input yields an output without the batch axis. `pad_mask` marks padded
    positions with True.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0) -> "Seq2SeqModel":
        rng = named_rng(seed, "model.init")
        dt = config.np_dtype
        params: dict[str, Tensor] = {}

        def normal(name, *shape):
            params[name] = Tensor((rng.normal(0.0, 0.02, shape)).astype(dt), requires_grad=True)

        def zeros(name, *shape):
            params[name] = Tensor(np.zeros(shape, dtype=dt), requires_grad=True)

        def ones(name, *shape):
            params[name] = Tensor(np.ones(shape, dtype=dt), requires_grad=True)

        d, f = config.d_model, config.d_ffn
        normal("tok_emb", config.vocab_size, d)
        normal("pos_emb", config.max_positions, d)
        normal("lang_emb", config.num_languages, d)
        zeros("out_bias", config.vocab_size)

        def attn_block(prefix):
            for w in ("wq", "wk", "wv", "wo"):
                normal(f"{prefix}.{w}", d, d)
            for b in ("bq", "bk", "bv", "bo"):
                zeros(f"{prefix}.{b}", d)

        def ln_block(prefix):
            ones(f"{prefix}.g", d)
            zeros(f"{prefix}.b", d)

        def ffn_block(prefix):
            normal(f"{prefix}.w1", d, f)
            zeros(f"{prefix}.b1", f)
            normal(f"{prefix}.w2", f, d)
            zeros(f"{prefix}.b2", d)

        for i in range(config.enc_layers):
            ln_block(f"enc.{i}.ln1")
            attn_block(f"enc.{i}.attn")
            ln_block(f"enc.{i}.ln2")
            ffn_block(f"enc.{i}.ffn")
        ln_block("enc.final_ln")

        for i in range(config.dec_layers):
            ln_block(f"dec.{i}.ln1")
            attn_block(f"dec.{i}.self_attn")
            ln_block(f"dec.{i}.ln2")
            attn_block(f"dec.{i}.cross_attn")
            ln_block(f"dec.{i}.ln3")
            ffn_block(f"dec.{i}.ffn")
        ln_block("dec.final_ln")

        return cls(config, params)

    # ------------------------------------------------------------------
    # parameter bookkeeping

    def partition_params(self) -> dict[ParamGroup, list[str]]:
        """Disjoint, exhaustive name partition used by freeze plans."""
        out: dict[ParamGroup, list[str]] = {g: [] for g in ParamGroup}
        for name in self.params:
            out[group_of(name)].append(name)
        return out

    def tensors(self, groups: Iterable[ParamGroup] | None = None) -> dict[str, Tensor]:
        if groups is None:
            return dict(self.params)
        wanted = set(groups)
        return {n: t for n, t in self.params.items() if group_of(n) in wanted}

    def num_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def group_digest(self, group: ParamGroup) -> str:
        """Content hash of one freeze group (bit-identity checks)."""
        h = hashlib.sha256()
        for name in sorted(self.partition_params()[group]):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------
    # forward passes

    def _check_positions(self, n: int) -> None:
        if n > self.config.max_positions:
            raise ValueError(f"sequence length {n} exceeds max_positions "
                             f"{self.config.max_positions}")

    def embed(self, ids, lang_tags) -> Tensor:
        """token + position + language-tag embeddings, summed per position."""
        ids, squeeze = _as_batch(ids)
        tags, _ = _as_batch(lang_tags)
        if ids.shape != tags.shape:
            raise ValueError("ids and lang_tags must have identical shape")
        self._check_positions(ids.shape[1])
        if tags.size and (tags.min() < 0 or tags.max() >= self.config.num_languages):
            raise ValueError("language tag id out of range")
        P = self.params
        x = ad.gather_rows(P["tok_emb"], ids)
        x = ad.add(x, ad.take_rows(P["pos_emb"], np.arange(ids.shape[1])))
        x = ad.add(x, ad.gather_rows(P["lang_emb"], tags))
        return _squeeze0(x) if squeeze else x

    def _attention(self, prefix: str, q_in: Tensor, kv_in: Tensor,
                   bias: np.ndarray | None) -> Tensor:
        P, cfg = self.params, self.config
        B, Tq = q_in.shape[0], q_in.shape[1]
        Tk = kv_in.shape[1]
        H, dh = cfg.n_heads, cfg.head_dim

        def proj(x, w, b):
            return ad.add(ad.matmul(x, P[f"{prefix}.{w}"]), P[f"{prefix}.{b}"])

        def heads(x, T):
            return ad.swapaxes(ad.reshape(x, (B, T, H, dh)), 1, 2)

        q = heads(proj(q_in, "wq", "bq"), Tq)
        k = heads(proj(kv_in, "wk", "bk"), Tk)
        v = heads(proj(kv_in, "wv", "bv"), Tk)
        scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
        if bias is not None:
            scores = ad.add(scores, bias.astype(cfg.np_dtype))
        ctx = ad.matmul(ad.softmax(scores), v)
        merged = ad.reshape(ad.swapaxes(ctx, 1, 2), (B, Tq, cfg.d_model))
        return ad.add(ad.matmul(merged, P[f"{prefix}.wo"]), P[f"{prefix}.bo"])

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        P = self.params
        h = ad.gelu(ad.add(ad.matmul(x, P[f"{prefix}.w1"]), P[f"{prefix}.b1"]))
        return ad.add(ad.matmul(h, P[f"{prefix}.w2"]), P[f"{prefix}.b2"])

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def encode(self, ids, lang_tags, pad_mask=None) -> Tensor:
        """Bidirectional encoding; padded positions are never attended to."""
        ids2, squeeze = _as_batch(ids)
        tags2, _ = _as_batch(lang_tags)
        x = self.embed(ids2, tags2)
        bias = None
        if pad_mask is not None:
            pm, _ = _as_batch(pad_mask)
            if pm.shape != ids2.shape:
                raise ValueError("pad_mask shape mismatch")
            bias = np.where(pm.astype(bool), NEG_INF, 0.0)[:, None, None, :]
        for i in range(self.config.enc_layers):
            normed = self._ln(f"enc.{i}.ln1", x)
            x = ad.add(x, self._attention(f"enc.{i}.attn", normed, normed, bias))
            x = ad.add(x, self._ffn(f"enc.{i}.ffn", self._ln(f"enc.{i}.ln2", x)))
        x = self._ln("enc.final_ln", x)
        return _squeeze0(x) if squeeze else x

    def decode_forward(self, encoder_states: Tensor, src_pad_mask, target_ids,
                       tgt_lang) -> Tensor:
        """Causal decoding over BOS-prefixed targets; logits[t] sees targets[0..t]."""
        tgt, squeeze = _as_batch(target_ids)
        enc = encoder_states
        if len(enc.shape) == 2:
            enc = _unsqueeze0(enc)
        B, T = tgt.shape
        if enc.shape[0] != B:
            raise ValueError("batch mismatch between targets and encoder states")
        self._check_positions(T)
        if isinstance(tgt_lang, LanguageTag):
            tags = np.full((B, T), tgt_lang.id, dtype=np.int64)
        else:
            arr = np.asarray(tgt_lang, dtype=np.int64)
            if arr.ndim == 0:
                tags = np.full((B, T), int(arr), dtype=np.int64)
            elif arr.shape == (B,):
                tags = np.repeat(arr[:, None], T, axis=1)
            else:
                raise ValueError("tgt_lang must be a tag, a scalar, or one id per example")
        y = self.embed(tgt, tags)

        causal = np.where(np.triu(np.ones((T, T), dtype=bool), k=1), NEG_INF, 0.0)
        causal = causal[None, None, :, :]
        cross_bias = None
        if src_pad_mask is not None:
            spm, _ = _as_batch(src_pad_mask)
            cross_bias = np.where(spm.astype(bool), NEG_INF, 0.0)[:, None, None, :]

        for i in range(self.config.dec_layers):
            normed = self._ln(f"dec.{i}.ln1", y)
            y = ad.add(y, self._attention(f"dec.{i}.self_attn", normed, normed, causal))
            y = ad.add(y, self._attention(f"dec.{i}.cross_attn",
                                          self._ln(f"dec.{i}.ln2", y), enc, cross_bias))
            y = ad.add(y, self._ffn(f"dec.{i}.ffn", self._ln(f"dec.{i}.ln3", y)))
        y = self._ln("dec.final_ln", y)
        logits = self.output_logits(y)
        return _squeeze0(logits) if squeeze else logits

    def output_logits(self, states: Tensor) -> Tensor:
        """Project hidden states through the tied token embedding table."""
        w = ad.swapaxes(self.params["tok_emb"], 0, 1)
        return ad.add(ad.matmul(states, w), self.params["out_bias"])

    def mlm_head(self, encoder_states: Tensor, positions) -> Tensor:
        """Logits at selected positions of a single encoded sequence."""
        if len(encoder_states.shape) != 2:
            raise ValueError("mlm_head expects states for a single sequence (T, d)")
        positions = np.asarray(positions, dtype=np.intp)
        if positions.size and (positions.min() < 0
                               or positions.max() >= encoder_states.shape[0]):
            raise ValueError("mlm position out of range")
        return self.output_logits(ad.take_rows(encoder_states, positions))


def _squeeze0(t: Tensor) -> Tensor:
    return ad.reshape(t, t.shape[1:])


def _unsqueeze0(t: Tensor) -> Tensor:
    return ad.reshape(t, (1, *t.shape))


# ---------------------------------------------------------------------------
# Checkpoint container: one JSON header line, then raw little-endian arrays.
# Deterministic byte-for-byte so rerun checkpoints hash identically.

CKPT_FORMAT = "crossgen-ckpt-v1"


def save_checkpoint(model: Seq2SeqModel, path) -> None:
    names = list(model.params)
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        arr = model.params[name].data
        le_dtype = np.dtype(arr.dtype).newbyteorder("<")
        raw = np.ascontiguousarray(arr, dtype=le_dtype).tobytes()
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": le_dtype.str,
            "group": group_of(name).value,
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format": CKPT_FORMAT, "config": asdict(model.config), "params": manifest},
        sort_keys=True, separators=(",", ":"),
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> Seq2SeqModel:
    """Load and verify a checkpoint; any shape/config mismatch fails loudly."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: not a checkpoint file: {exc}") from None
    if header.get("format") != CKPT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    config = ModelConfig(**header["config"])
    reference = Seq2SeqModel.build(config, seed=0)
    params: dict[str, Tensor] = {}
    for entry in header["params"]:
        name = entry["name"]
        if name not in reference.params:
            raise ValueError(f"{path}: unexpected parameter {name!r}")
        expected = reference.params[name].data.shape
        if tuple(entry["shape"]) != expected:
            raise ValueError(f"{path}: shape mismatch for {name}: "
                             f"{entry['shape']} vs expected {list(expected)}")
        if entry["group"] != group_of(name).value:
            raise ValueError(f"{path}: group mismatch for {name}")
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ValueError(f"{path}: truncated payload for {name}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        params[name] = Tensor(arr.astype(config.np_dtype), requires_grad=True)
    missing = set(reference.params) - set(params)
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)[:3]}...")
    return Seq2SeqModel(config, params)


def checkpoint_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()
