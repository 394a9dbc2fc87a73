from pathlib import Path

import pytest

from sonar_llm.text import (BOS, EOS, RESERVED, SENTINEL, UNK, Document, build_vocab, decode_tokens,
                            document_from_text, encode_tokens, frame_document, generate_synthetic_corpus,
                            make_document, normalize_whitespace, read_corpus, segment_sentences,
                            synthetic_word_list, tokenize, write_corpus)

FIXTURE = Path(__file__).parent / "fixtures" / "english_50.txt"


def test_segment_examples():
    assert segment_sentences("") == []
    assert segment_sentences("Hi. Bye!") == ["Hi.", "Bye!"]
    assert segment_sentences("Dr. Smith ran. He fell.") == ["Dr. Smith ran.", "He fell."]


def test_segment_quotes_and_questions():
    text = '"Close it," she said. Is it late? "Yes!" Then we left'
    assert segment_sentences(text) == ['"Close it," she said.', "Is it late?", '"Yes!"', "Then we left"]


def test_segment_lowercase_continuation_is_not_a_boundary():
    assert segment_sentences("Tools, e.g. saws. Done.") == ["Tools, e.g. saws.", "Done."]
    assert segment_sentences("It costs 3.5 dollars. Fine.") == ["It costs 3.5 dollars.", "Fine."]


def _lossless(paragraph: str) -> bool:
    parts = segment_sentences(paragraph)
    return all(parts) and normalize_whitespace(" ".join(parts)) == normalize_whitespace(paragraph)


def test_segmentation_lossless_on_english_fixture():
    paragraphs = [p for p in FIXTURE.read_text(encoding="utf-8").split("\n\n") if p.strip()]
    assert len(paragraphs) == 50
    for p in paragraphs:
        parts = segment_sentences(p)
        assert _lossless(p)
        assert all(s[-1] in ".!?\"" for s in parts)
    assert segment_sentences(paragraphs[4])[0].startswith("Dr. Patel")


def test_segmentation_lossless_on_synthetic_corpus():
    for doc in generate_synthetic_corpus(9, 50):
        text = " ".join(doc.sentences)
        assert segment_sentences(text) == list(doc.sentences)


def test_build_vocab_frequency_order():
    v = build_vocab(["a a b"], 10)
    assert v.token_of == RESERVED + ("a", "b")
    assert v.id_of["a"] < v.id_of["b"]


def test_build_vocab_tie_break_is_lexicographic():
    v = build_vocab(["c b a"], 10)
    assert v.token_of[len(RESERVED):] == ("a", "b", "c")


def test_build_vocab_truncation():
    words = " ".join(f"w{i:03d}" for i in range(100))
    v = build_vocab([words], 20)
    assert len(v) == 20
    assert v.token_of[:4] == RESERVED


def test_vocab_inverse_maps_and_determinism():
    corpus = generate_synthetic_corpus(7, 100)
    v1, v2 = build_vocab(corpus), build_vocab(generate_synthetic_corpus(7, 100))
    assert v1 == v2
    assert all(v1.id_of[t] == i for i, t in enumerate(v1.token_of))
    assert len(set(v1.token_of)) == len(v1)


def test_encode_direct_lookup_and_unk():
    v = build_vocab(["hi ."], 10)
    assert encode_tokens("hi .", v) == [BOS, v.id_of["hi"], v.id_of["."], EOS]
    assert UNK in encode_tokens("hi zebra", v)


def test_decode_out_of_range():
    v = build_vocab(["hi ."], 10)
    with pytest.raises(IndexError):
        decode_tokens([BOS, 99], v)


def test_round_trip_200_generated_sentences():
    corpus = generate_synthetic_corpus(5, 60)
    v = build_vocab(corpus)
    sentences = [s for d in corpus for s in d.sentences][:200]
    assert len(sentences) == 200
    mismatches = [s for s in sentences if decode_tokens(encode_tokens(s, v), v) != normalize_whitespace(s)]
    assert mismatches == []


def test_encode_truncates_long_sentences(caplog):
    v = build_vocab(["a"], 10)
    ids = encode_tokens(" ".join(["a"] * 100), v, max_len=8)
    assert len(ids) == 8 and ids[0] == BOS and ids[-1] == EOS
    assert "truncat" in caplog.text


def test_synthetic_corpus_contract():
    a, b = generate_synthetic_corpus(1, 2), generate_synthetic_corpus(1, 2)
    assert a == b
    for doc in generate_synthetic_corpus(3, 200):
        assert doc.sentences[-1] == SENTINEL
        assert doc.sentences.count(SENTINEL) == 1
        assert 3 <= len(doc.content) <= 10


def test_synthetic_vocabulary_size():
    corpus = generate_synthetic_corpus(3, 500)
    surface = {t for d in corpus for s in d.sentences for t in tokenize(s)}
    assert len(surface) <= 124
    assert surface <= synthetic_word_list() | set(tokenize(SENTINEL))


def test_pronouns_follow_the_named_character():
    for doc in generate_synthetic_corpus(11, 100):
        first = doc.sentences[0]
        girl = any(f"named {n}." in first for n in ("Lily", "Mia", "Anna", "Sue"))
        body = " ".join(doc.content[1:])
        assert (" He " not in f" {body}") if girl else (" She " not in f" {body}")


def test_document_has_single_sentinel():
    doc = make_document(["One.", "Two.", SENTINEL])
    assert doc.sentences == ("One.", "Two.", SENTINEL)
    assert doc.content == ("One.", "Two.")
    assert document_from_text("A b. C d.").sentences[-1] == SENTINEL


def test_frame_document_spans():
    doc = make_document(["The cat ran.", "It was happy."])
    v = build_vocab([doc])
    spans = frame_document(doc, v, 64)
    assert [s.text for s in spans] == list(doc.sentences)
    for s in spans:
        assert s.tokens[0] == BOS and s.tokens[-1] == EOS and 2 <= len(s.tokens) <= 64
        assert decode_tokens(s.tokens, v) == s.text


def test_corpus_file_round_trip(tmp_path):
    docs = generate_synthetic_corpus(2, 5)
    path = tmp_path / "c.txt"
    write_corpus(path, docs)
    text = path.read_text(encoding="utf-8")
    assert text.count("\n\n") == 4
    assert read_corpus(path) == docs
    assert isinstance(read_corpus(path)[0], Document)
