import numpy as np
import pytest

from nngec.synth import SyntheticErrorSpec, generate_sentences, synthesize_corpus


def toks(text):
    return tuple(text.split())


@pytest.fixture(scope="session")
def desk_corpus():
    """Seeded synthetic train/dev split shared by the model tests."""
    corpus, gold = synthesize_corpus(generate_sentences(2600, seed=11), SyntheticErrorSpec(seed=12))
    return corpus.pairs[:2300], corpus.pairs[2300:], gold[2300:]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
