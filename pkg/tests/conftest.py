import time

import pytest

from sonar_llm.codec import CodecConfig, CodecTrainConfig, pretrain_codec
from sonar_llm.model import ConceptModelConfig
from sonar_llm.text import build_vocab, generate_synthetic_corpus
from sonar_llm.training import TrainConfig, encode_corpus, train_run

TRAIN_SEED, VAL_SEED = 3, 4
DESK_MODEL = ConceptModelConfig()

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    verdict = "PASS" if rep.passed else "FAIL"
    if number not in _ACCEPTANCE or verdict == "FAIL":
        _ACCEPTANCE[number] = (title, verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, verdict, detail = _ACCEPTANCE[number]
        line = f"[{verdict}] {number}. {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)


@pytest.fixture(scope="session")
def train_docs():
    return generate_synthetic_corpus(TRAIN_SEED, 500)


@pytest.fixture(scope="session")
def val_docs():
    return generate_synthetic_corpus(VAL_SEED, 100)


@pytest.fixture(scope="session")
def vocab(train_docs):
    return build_vocab(train_docs)


@pytest.fixture(scope="session")
def trained_codec(train_docs, vocab):
    """Default-config codec on the 500-document corpus, with its wall-clock cost."""
    history: list[float] = []
    t0 = time.perf_counter()
    codec = pretrain_codec(train_docs, vocab, CodecConfig(len(vocab)), CodecTrainConfig(), history)
    return codec, time.perf_counter() - t0, history


@pytest.fixture(scope="session")
def codec(trained_codec):
    return trained_codec[0]


@pytest.fixture(scope="session")
def encoded(train_docs, val_docs, vocab, codec):
    return encode_corpus(train_docs, vocab, codec), encode_corpus(val_docs, vocab, codec)


class ModelCache:
    """Trains desk models lazily so tests share one run per (objective, seed)."""

    def __init__(self, encoded, codec, vocab):
        self.encoded, self.codec, self.vocab = encoded, codec, vocab
        self.runs = {}

    def get(self, objective: str, seed: int = 0):
        key = (objective, seed)
        if key not in self.runs:
            tr, va = self.encoded
            self.runs[key] = train_run(objective, tr, va, DESK_MODEL, TrainConfig(seed=seed),
                                       codec=self.codec, vocab_size=len(self.vocab))
        return self.runs[key]


@pytest.fixture(scope="session")
def desk_models(encoded, codec, vocab):
    return ModelCache(encoded, codec, vocab)
