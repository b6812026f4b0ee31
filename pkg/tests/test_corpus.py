import numpy as np
import pytest

from crossfuse.corpus import (
    Article,
    build_manifests,
    parse_passage_id,
    read_articles,
    read_passages,
    split_passages,
    split_sentences,
    write_names,
    write_passages,
)
from crossfuse.errors import ValidationError


def sentence(words, tag):
    return " ".join([f"w{tag}{i}" for i in range(words - 1)] + ["end."])


def make_article(sentence_words, entity="e1"):
    body = " ".join(
        sentence(w, i).capitalize() for i, w in enumerate(sentence_words)
    )
    return Article(entity_id=entity, title=f"Title {entity}", body=body)


def test_greedy_packing_three_two():
    article = make_article([30, 30, 30, 30, 30])
    passages = split_passages(article, limit=100)
    counts = [len(split_sentences(p.text)) for p in passages]
    assert counts == [3, 2]
    assert [len(p.text.split()) for p in passages] == [90, 60]


def test_single_oversized_sentence_stands_alone():
    article = make_article([150])
    passages = split_passages(article, limit=100)
    assert len(passages) == 1
    assert len(passages[0].text.split()) == 150


def test_oversized_sentence_between_normal_ones():
    article = make_article([40, 150, 40])
    passages = split_passages(article, limit=100)
    assert [len(p.text.split()) for p in passages] == [40, 150, 40]
    assert [p.ordinal for p in passages] == [0, 1, 2]


def test_word_limit_respected_except_oversized():
    rng = np.random.default_rng(22)
    for trial in range(20):
        words = [int(rng.integers(3, 60)) for _ in range(int(rng.integers(1, 20)))]
        article = make_article(words, entity=f"e{trial}")
        for p in split_passages(article, limit=50):
            sentences = split_sentences(p.text)
            if len(p.text.split()) > 50:
                assert len(sentences) == 1
    # limit 1 forces one sentence per passage
    article = make_article([5, 5])
    assert len(split_passages(article, limit=1)) == 2


def test_empty_body_gives_empty_list():
    assert split_passages(Article("e1", "T", "")) == []


@pytest.mark.parametrize("seed", range(5))
def test_rejoined_passages_reproduce_sentence_sequence(seed):
    rng = np.random.default_rng(1300 + seed)
    words = [int(rng.integers(3, 40)) for _ in range(int(rng.integers(1, 30)))]
    article = make_article(words, entity=f"e{seed}")
    original = split_sentences(article.body)
    passages = split_passages(article, limit=int(rng.integers(20, 120)))
    rejoined = []
    for p in passages:
        rejoined.extend(split_sentences(p.text))
    assert rejoined == original


def test_abbreviations_do_not_split():
    body = "Dr. Smith visited the tower. It was tall."
    assert split_sentences(body) == ["Dr. Smith visited the tower.", "It was tall."]


def test_passage_ids_reversible():
    assert parse_passage_id("e42#7") == ("e42", 7)
    assert parse_passage_id("weird#entity#3") == ("weird#entity", 3)
    with pytest.raises(ValidationError):
        parse_passage_id("nohash")


def test_build_manifests_shapes():
    articles = [make_article([30, 30, 30, 30], entity=f"e{i}") for i in range(2)]
    epmap, store, names = build_manifests(articles, limit=60)
    assert sorted(epmap.passages) == ["e0", "e1"]
    assert len(store) == 4
    assert store[0].passage_id == "e0#0"
    assert names == [("e0", "Title e0"), ("e1", "Title e1")]


def test_build_manifests_empty_and_duplicates():
    epmap, store, names = build_manifests([])
    assert epmap.passages == {} and store == [] and names == []
    articles = [make_article([10]), make_article([10])]
    with pytest.raises(ValidationError, match="duplicate"):
        build_manifests(articles)


def test_manifest_alignment_with_embedding_sidecar(tmp_path):
    # the names manifest row order must match the entity-name embedding rows
    import numpy as np

    from crossfuse.embedstore import ChannelRole, EmbeddingMatrix, write_embeddings

    articles = [make_article([20], entity=f"e{i}") for i in range(5)]
    _, _, names = build_manifests(articles)
    write_names(names, tmp_path / "names.tsv")

    rows = (tmp_path / "names.tsv").read_text().splitlines()
    ids = [r.split("\t")[0] for r in rows]
    data = np.eye(5, dtype=np.float32)
    matrix = EmbeddingMatrix(ids=ids, data=data, role=ChannelRole.ENTITY_NAME, normalized=True)
    write_embeddings(matrix, tmp_path / "names.emb")
    sidecar = (tmp_path / "names.emb.ids").read_text().splitlines()
    assert sidecar == [a.entity_id for a in articles]


def test_articles_and_passages_io(tmp_path):
    path = tmp_path / "articles.jsonl"
    path.write_text(
        '{"entity_id": "e1", "title": "One", "body": "First sentence. Second one."}\n'
        '{"entity_id": "e2", "title": "Two", "body": "Only sentence.", "image": "img/e2.png"}\n'
    )
    articles = read_articles(path)
    assert articles[1].image == "img/e2.png"

    passages = split_passages(articles[0], limit=100)
    out = tmp_path / "passages.jsonl"
    write_passages(passages, out)
    assert read_passages(out) == passages
