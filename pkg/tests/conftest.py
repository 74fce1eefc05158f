import numpy as np
import pytest

from egcnn.experiments import small_model, uniform_aspects
from egcnn.model import init_encoder
from egcnn.synthetic import SyntheticSpec, generate
from egcnn.text import build_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_synthetic():
    spec = SyntheticSpec(docs_per_domain=(30, 30, 30), vocab_size=80, seed=3)
    return generate(spec)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_synthetic):
    d = tiny_synthetic
    return build_dataset(d.tokens, d.domain_ids, d.targets, d.domains, seed=0, m=24,
                         max_chars=8, min_count=1)


@pytest.fixture
def tiny_encoder(tiny_dataset):
    mc = small_model(m=24)
    table = uniform_aspects(len(tiny_dataset.vocab), mc.n_aspects)
    return init_encoder(mc, len(tiny_dataset.vocab), len(tiny_dataset.charvocab), table,
                        np.random.default_rng(0))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
