import numpy as np
import pytest

from crossgen.model import ModelConfig, Seq2SeqModel
from crossgen.vocab import LanguageTag

VERIFY_VOCAB = 23  # six specials + 17 regular tokens


@pytest.fixture
def verify_config():
    """Float64 config small enough for finite-difference verification."""
    return ModelConfig(enc_layers=2, dec_layers=2, d_model=16, n_heads=2, d_ffn=32,
                       max_positions=40, vocab_size=VERIFY_VOCAB, num_languages=2,
                       dtype="float64")


@pytest.fixture
def verify_model(verify_config):
    return Seq2SeqModel.build(verify_config, seed=11)


@pytest.fixture
def langs():
    return LanguageTag(0, "la"), LanguageTag(1, "lb")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
