import os
from pathlib import Path
from typing import Sequence

import numpy as np
import pytest

import lexstress
from lexstress.lexicon import VOCABULARY, parse_dictionary
from lexstress.model import ModelConfig

manual_tests = pytest.mark.skipif(not bool(os.getenv("MANUAL_TESTS")), reason="slow end-to-end run")

TINY_DICTIONARY = """;;; test lexicon
PREDICT  P R IH0 D IH1 K T
THE  DH AH0
THE(2)  DH IY0
CAT  K AE1 T
BANANA  B AH0 N AE1 N AH0
RECORD  R EH1 K ER0 D
RECORD(2)  R IH0 K AO1 R D
"""


@pytest.fixture(scope="session")
def project_root() -> Path:
    return Path(__file__).parent.parent


@pytest.fixture(scope="session")
def project_version() -> str:
    return lexstress.__version__


@pytest.fixture()
def tiny_lexicon():
    return parse_dictionary(TINY_DICTIONARY)


@pytest.fixture(scope="session")
def tiny_config() -> ModelConfig:
    return ModelConfig(d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=16, dropout_rate=0.0)


class RandomStepModel:
    """Logits are a fixed pseudo-random function of the prefix, as a trained model's would be"""

    vocab_size = len(VOCABULARY)

    def __init__(self, seed: int):
        self.seed = seed
        self.calls = 0

    def decode_step(self, prefix: Sequence[int]) -> np.ndarray:
        self.calls += 1
        return np.random.default_rng([self.seed, *prefix]).standard_normal(self.vocab_size)


class FixedStepModel:
    """Returns the same logits for every prefix"""

    vocab_size = len(VOCABULARY)

    def __init__(self, logits: np.ndarray):
        self.logits = np.asarray(logits, dtype=np.float64)

    def decode_step(self, prefix: Sequence[int]) -> np.ndarray:
        return self.logits.copy()
