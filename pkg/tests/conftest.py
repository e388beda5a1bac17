import numpy as np
import pytest

from sprinterlab.cli import demo_corpus, split_paragraphs
from sprinterlab.dist import CategoricalDist
from sprinterlab.lm import tokenize, train_ngram

P2 = CategoricalDist([0.6, 0.4])
Q2 = CategoricalDist([0.2, 0.8])


@pytest.fixture(scope="session")
def demo_text():
    return demo_corpus().read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def demo_pair(demo_text):
    """The shipped k=1 draft / k=3 target pair, trained the way ``train-lm`` does."""
    _, vocab = tokenize(demo_text, "char")
    train, _ = split_paragraphs(demo_text, 0.1)
    ids = vocab.encode(train)
    return train_ngram(ids, 1, 0.1, vocab), train_ngram(ids, 3, 0.1, vocab)


def dirichlet_pair(rng: np.random.Generator, V: int):
    return CategoricalDist(rng.dirichlet(np.ones(V))), CategoricalDist(rng.dirichlet(np.ones(V)))


ACCEPTANCE_LINES: list[str] = []


def record(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
