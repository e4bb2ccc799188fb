import json

import numpy as np
import pytest
import requests

from mupo.mock_service import MockEmbeddingServer, hash_embedding
from mupo.rollouts import (
    EmbeddingServiceError,
    RolloutFormatError,
    example_embeddings,
    fetch_embeddings,
    fill_missing_embeddings,
    ingest_rollouts,
)


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_ingest_two_lines_with_embeddings(tmp_path):
    path = write_jsonl(tmp_path / "r.jsonl", [
        {"example_id": "q1", "response": "a", "correct": True, "embedding": [3, 4]},
        {"example_id": "q1", "response": "b", "correct": False, "embedding": [0, 2]},
    ])
    (ex,) = ingest_rollouts(path)
    assert len(ex.records) == 2
    np.testing.assert_allclose(ex.records[0].embedding, [0.6, 0.8])
    np.testing.assert_allclose(np.linalg.norm(example_embeddings(ex), axis=1), 1.0)


def test_missing_reasoning_and_embedding_names_line(tmp_path):
    path = write_jsonl(tmp_path / "r.jsonl", [
        {"example_id": "q1", "response": "a", "correct": True, "reasoning": "r"},
        {"example_id": "q1", "response": "b", "correct": False},
    ])
    with pytest.raises(RolloutFormatError, match="line 2"):
        ingest_rollouts(path, require_diversity=True)
    assert len(ingest_rollouts(path)[0].records) == 2


def test_duplicate_ids_grouped_in_file_order(tmp_path):
    path = write_jsonl(tmp_path / "r.jsonl", [
        {"example_id": "b", "response": "1", "correct": True},
        {"example_id": "a", "response": "2", "correct": False},
        {"example_id": "b", "response": "3", "correct": False},
    ])
    exs = ingest_rollouts(path)
    assert [e.example_id for e in exs] == ["b", "a"]
    assert exs[0].lines == [1, 3]
    assert [r.rollout_id for r in exs[0].records] == [0, 1]


def test_reasoning_extracted_and_format_judged(tmp_path):
    path = write_jsonl(tmp_path / "r.jsonl", [
        {"example_id": "a", "response": "<think>plan</think> 7", "correct": True},
        {"example_id": "a", "response": "just 7", "correct": True},
        {"example_id": "a", "response": "[[x]] 7", "correct": True, "well_formed": True},
    ])
    (ex,) = ingest_rollouts(path)
    assert ex.reasoning == ["plan", "just 7", "[[x]] 7"]
    assert [r.well_formed for r in ex.records] == [True, False, True]


@pytest.mark.parametrize("line,msg", [
    ("{not json", "invalid JSON"),
    ('{"example_id": "a", "response": "x"}', "missing field 'correct'"),
    ('{"example_id": "a", "response": "x", "correct": 1}', "boolean"),
    ('{"example_id": "a", "response": "x", "correct": true, "embedding": [0, 0]}', "degenerate"),
])
def test_malformed_lines(tmp_path, line, msg):
    path = tmp_path / "r.jsonl"
    path.write_text('{"example_id": "a", "response": "ok", "correct": true}\n' + line + "\n")
    with pytest.raises(RolloutFormatError, match=f"line 2.*{msg}"):
        ingest_rollouts(path)


def test_empty_file(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text("\n")
    with pytest.raises(RolloutFormatError, match="no rollout records"):
        ingest_rollouts(path)


def test_fetch_preserves_order(mock_service):
    texts = ["alpha", "beta", "gamma"]
    out = fetch_embeddings(texts, mock_service.url)
    assert len(out) == 3
    for t, v in zip(texts, out):
        np.testing.assert_allclose(v, hash_embedding(t), atol=1e-12)
    assert mock_service.request_count == 1


def test_fetch_count_mismatch():
    with MockEmbeddingServer(mode="short") as srv:
        with pytest.raises(EmbeddingServiceError, match="count mismatch"):
            fetch_embeddings(["a", "b", "c"], srv.url)


def test_fetch_nan():
    with MockEmbeddingServer(mode="nan") as srv:
        with pytest.raises(EmbeddingServiceError, match="non-finite embedding"):
            fetch_embeddings(["a", "b", "c"], srv.url)


def test_fetch_retries_transient_failures():
    with MockEmbeddingServer(fail_first=2) as srv:
        out = fetch_embeddings(["a"], srv.url, backoff=0.001)
        assert len(out) == 1
        assert srv.request_count == 3


def test_fetch_gives_up_after_retries():
    with MockEmbeddingServer(fail_first=10) as srv:
        with pytest.raises(EmbeddingServiceError, match="after 3 retries"):
            fetch_embeddings(["a"], srv.url, backoff=0.001)
        assert srv.request_count == 4


def test_fetch_backoff_schedule(monkeypatch):
    delays = []
    monkeypatch.setattr("mupo.rollouts.time.sleep", delays.append)

    class Down:
        def post(self, *a, **kw):
            raise requests.ConnectionError("refused")

    with pytest.raises(EmbeddingServiceError):
        fetch_embeddings(["a"], "http://unused", session=Down())
    assert delays == [0.5, 1.0, 2.0]


def test_fill_missing_uses_one_request(tmp_path, mock_service):
    path = write_jsonl(tmp_path / "r.jsonl", [
        {"example_id": "a", "response": "<think>p</think>1", "correct": True},
        {"example_id": "b", "response": "2", "correct": True, "reasoning": "q"},
        {"example_id": "b", "response": "3", "correct": True},
    ])
    exs = fill_missing_embeddings(ingest_rollouts(path), mock_service.url)
    assert mock_service.request_count == 1
    np.testing.assert_allclose(exs[0].records[0].embedding, hash_embedding("p"), atol=1e-12)
    np.testing.assert_allclose(exs[1].records[0].embedding, hash_embedding("q"), atol=1e-12)
