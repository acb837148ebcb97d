import pytest
import torch

from cplm.model import ModelConfig, build_model
from cplm.synthetic import write_fixture
from cplm.tokenizer import SPECIAL_TOKENS, Tokenizer


CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_tok():
    return Tokenizer(SPECIAL_TOKENS + ("the", "cat", "sat", "dog", "runs", "."))


def tiny_model(vocab=11, d_model=8, n_heads=2, n_layers=1, positional="none", dtype=torch.float64,
               seed=0, max_seq_len=16, tied=True):
    cfg = ModelConfig(n_layers=n_layers, n_heads=n_heads, d_model=d_model, vocab_size=vocab,
                      max_seq_len=max_seq_len, dropout=0.0, positional=positional, tied_embeddings=tied)
    return build_model(cfg, seed=seed, dtype=dtype)


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """A synthetic corpus (~8k tokens) and a 100-pair benchmark."""
    root = tmp_path_factory.mktemp("fixture")
    write_fixture(root / "corpus.txt", root / "pairs.jsonl", n_tokens=8000, n_pairs=100, seed=0)
    return root
