import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from silkforge.model import ModelConfig  # noqa: E402
from silkforge.tokenizer import Vocabulary  # noqa: E402

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary()


@pytest.fixture(scope="session")
def tiny_config(vocab):
    return ModelConfig(n_embd=16, n_layer=2, n_heads=2, hidden_dim=64,
                       vocab_size=vocab.size, context_len=64)
