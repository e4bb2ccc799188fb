"""Recorded-rollout ingestion and the embedding-service client."""

import json
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import requests

from .config import RolloutRecord
from .embedding import DegenerateEmbeddingError, normalize
from .rewards import THINK_CLOSE, THINK_OPEN, extract_reasoning, verify_format

log = logging.getLogger(__name__)

ENDPOINT_ENV = "MUPO_EMBED_ENDPOINT"
RETRIES = 3
BACKOFF_BASE = 0.5


class RolloutFormatError(ValueError):
    pass


class EmbeddingServiceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RolloutFileRecord:
    example_id: str
    response: str
    correct: bool
    reasoning: Optional[str] = None
    embedding: Optional[list] = None
    well_formed: Optional[bool] = None
    line: int = 0


@dataclass
class IngestedExample:
    example_id: str
    records: List[RolloutRecord]
    reasoning: List[str]
    lines: List[int]


def _parse_line(text, lineno):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RolloutFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise RolloutFormatError(f"line {lineno}: expected a JSON object")
    for key in ("example_id", "response", "correct"):
        if key not in obj:
            raise RolloutFormatError(f"line {lineno}: missing field {key!r}")
    if not isinstance(obj["correct"], bool):
        raise RolloutFormatError(f"line {lineno}: 'correct' must be a boolean")
    wf = obj.get("well_formed")
    if wf is not None and not isinstance(wf, bool):
        raise RolloutFormatError(f"line {lineno}: 'well_formed' must be a boolean")
    emb = obj.get("embedding")
    if emb is not None:
        if not isinstance(emb, list) or not emb or not all(isinstance(x, (int, float)) for x in emb):
            raise RolloutFormatError(f"line {lineno}: 'embedding' must be a non-empty list of numbers")
    return RolloutFileRecord(
        example_id=str(obj["example_id"]),
        response=str(obj["response"]),
        correct=obj["correct"],
        reasoning=obj.get("reasoning"),
        embedding=emb,
        well_formed=wf,
        line=lineno,
    )


def read_rollout_file(path) -> List[RolloutFileRecord]:
    path = Path(path)
    records = []
    with path.open() as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            records.append(_parse_line(text, lineno))
    if not records:
        raise RolloutFormatError(f"{path}: no rollout records")
    return records


def ingest_rollouts(path, require_diversity=False, open_tag=THINK_OPEN, close_tag=THINK_CLOSE):
    """Parse a JSON-lines rollout file into examples, preserving file order.

    Embeddings are normalized on the way in. Missing reasoning is taken from
    the response between the reasoning tags (whole response if untagged), and
    a missing ``well_formed`` is judged from the tags.
    """
    raw = read_rollout_file(path)
    dims = {len(r.embedding) for r in raw if r.embedding is not None}
    if len(dims) > 1:
        raise RolloutFormatError(f"embeddings have mixed dimensions {sorted(dims)}")
    examples = OrderedDict()
    for r in raw:
        if require_diversity and r.reasoning is None and r.embedding is None:
            raise RolloutFormatError(
                f"line {r.line}: needs 'reasoning' or 'embedding' for diversity"
            )
        emb = None
        if r.embedding is not None:
            try:
                emb = normalize(r.embedding)
            except DegenerateEmbeddingError as exc:
                raise RolloutFormatError(f"line {r.line}: {exc}") from None
        reasoning = r.reasoning if r.reasoning is not None else extract_reasoning(r.response, open_tag, close_tag)
        well_formed = r.well_formed if r.well_formed is not None else verify_format(r.response, open_tag, close_tag)
        ex = examples.setdefault(r.example_id, IngestedExample(r.example_id, [], [], []))
        ex.records.append(RolloutRecord(
            rollout_id=len(ex.records),
            example_id=r.example_id,
            token_count=max(1, len(r.response.split())),
            correct=r.correct,
            well_formed=well_formed,
            embedding=emb,
        ))
        ex.reasoning.append(reasoning)
        ex.lines.append(r.line)
    return list(examples.values())


def _transient(status):
    return status == 429 or status >= 500


def fetch_embeddings(texts, endpoint, retries=RETRIES, backoff=BACKOFF_BASE, timeout=30.0,
                     session=None):
    """POST ``{"texts": [...]}`` and return unit-norm vectors in request order.

    Connection errors and 429/5xx responses are retried ``retries`` times
    with exponential backoff starting at ``backoff`` seconds.
    """
    texts = list(texts)
    if not texts:
        return []
    http = session or requests
    attempt = 0
    while True:
        try:
            resp = http.post(endpoint, json={"texts": texts}, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            status, err = None, exc
        else:
            status, err = resp.status_code, None
            if 200 <= status < 300:
                break
            if not _transient(status):
                raise EmbeddingServiceError(f"embedding service returned HTTP {status}")
        if attempt >= retries:
            what = f"HTTP {status}" if status is not None else str(err)
            raise EmbeddingServiceError(f"embedding service failed after {retries} retries: {what}")
        delay = backoff * 2**attempt
        log.warning("embedding request failed (%s); retrying in %.2fs",
                    status if status is not None else err, delay)
        time.sleep(delay)
        attempt += 1

    try:
        vectors = resp.json()["embeddings"]
    except (ValueError, KeyError, TypeError):
        raise EmbeddingServiceError("malformed embedding response") from None
    if not isinstance(vectors, list) or len(vectors) != len(texts):
        got = len(vectors) if isinstance(vectors, list) else "?"
        raise EmbeddingServiceError(f"count mismatch: sent {len(texts)} texts, got {got} embeddings")
    out = []
    for v in vectors:
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise EmbeddingServiceError("malformed embedding vector") from None
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise EmbeddingServiceError("non-finite embedding")
        try:
            out.append(normalize(arr))
        except DegenerateEmbeddingError as exc:
            raise EmbeddingServiceError(str(exc)) from None
    return out


def fill_missing_embeddings(examples, endpoint, **kwargs):
    """Fetch embeddings for every record lacking one, in a single request."""
    todo = [(ex, i) for ex in examples for i, r in enumerate(ex.records) if r.embedding is None]
    if not todo:
        return examples
    vectors = fetch_embeddings([ex.reasoning[i] for ex, i in todo], endpoint, **kwargs)
    for (ex, i), v in zip(todo, vectors):
        ex.records[i] = ex.records[i].with_(embedding=v)
    dims = {len(r.embedding) for ex in examples for r in ex.records}
    if len(dims) > 1:
        raise EmbeddingServiceError(f"service and file embeddings differ in dimension: {sorted(dims)}")
    return examples


def example_embeddings(ex: IngestedExample) -> Optional[np.ndarray]:
    if any(r.embedding is None for r in ex.records):
        return None
    return np.vstack([r.embedding for r in ex.records])
