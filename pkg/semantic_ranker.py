"""
Model-backed SemanticRanker adapters.

AnthropicRanker asks a language model to order the permissible values;
EmbeddingRanker orders them by sentence-embedding cosine similarity. Both
are optional: rank_semantic treats any exception they raise as "no
suggestion", and the test suite drives them with mocks.
"""
import json
import os
from collections.abc import Sequence

import numpy as np
from anthropic import Anthropic
from anthropic.types import TextBlock

from logger import DEBUG, INFO, ERROR, log_message
from prompts import RANKING_SYSTEM_PROMPT, get_ranking_user_message
from repair_engine import DefaultRanker, SemanticRanker
from template_model import Field, Term

SIMPLE_MODEL = "claude-haiku-4-5-20251001"
EMBEDDING_MODEL_NAME = "sentence-transformers/all-MiniLM-L6-v2"

# Initialize client (can be mocked for testing)
_client = None


def get_client():
    """Get or create Anthropic client"""
    global _client
    if _client is None:
        api_key = os.environ.get("ANTHROPIC_API_KEY")
        if not api_key:
            raise ValueError("ANTHROPIC_API_KEY environment variable not set")
        _client = Anthropic(api_key=api_key)
    return _client


# For testing - inject a mock client
def set_client(client):
    """Set custom client (for testing)"""
    global _client
    _client = client


class AnthropicRanker:
    def __init__(self, model: str = SIMPLE_MODEL):
        self.model = model

    def rank(self, field: Field, observed: str, candidates: Sequence[Term]) -> list[tuple[str, float]]:
        client = get_client()
        user_message = get_ranking_user_message(
            field.key, field.label, field.description, observed, [t.label for t in candidates],
        )
        message = client.messages.create(
            model=self.model,
            max_tokens=500,
            stop_sequences=["```"],
            system=[
                {
                    "type": "text",
                    "text": RANKING_SYSTEM_PROMPT,
                    "cache_control": {"type": "ephemeral"},
                }
            ],
            messages=[
                {"role": "user", "content": user_message},
                {"role": "assistant", "content": "```json"},  # start a code block so only JSON follows
            ],
        )

        text = next((block.text.strip() for block in message.content if isinstance(block, TextBlock)), None)
        if text is None:
            raise ValueError("No text content in response")

        usage = getattr(message, "usage", None)
        cache_read = getattr(usage, "cache_read_input_tokens", None)
        if isinstance(cache_read, int) and cache_read > 0:
            log_message(DEBUG, f"   Cache hit: {cache_read} tokens")

        ranked = json.loads(text)
        if not isinstance(ranked, list):
            raise ValueError("ranking response is not a JSON array")
        return [(str(item["value"]), float(item["score"])) for item in ranked]


class EmbeddingRanker:
    """Cosine similarity between the entered value and each label with its synonyms"""

    def __init__(self, model=None):
        self._model = model

    @property
    def model(self):
        if self._model is None:
            from sentence_transformers import SentenceTransformer

            log_message(INFO, f"Loading embedding model: {EMBEDDING_MODEL_NAME}")
            try:
                self._model = SentenceTransformer(EMBEDDING_MODEL_NAME)
            except Exception as e:
                log_message(ERROR, f"Failed to load embedding model: {e}")
                raise
        return self._model

    def _unit(self, texts: list[str]) -> np.ndarray:
        vectors = np.asarray(self.model.encode(texts, convert_to_numpy=True), dtype=np.float32)
        # Pre-normalise rows so dot product == cosine similarity
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        return vectors / np.maximum(norms, 1e-10)

    def rank(self, field: Field, observed: str, candidates: Sequence[Term]) -> list[tuple[str, float]]:
        names = [(t.label, name) for t in candidates for name in (t.label, *t.synonyms)]
        matrix = self._unit([name for _, name in names])
        query = self._unit([observed])[0]
        scores = matrix @ query

        best: dict[str, float] = {}
        for (label, _), score in zip(names, scores.tolist()):
            # cosine lies in [-1, 1]; map onto [0, 1]
            best[label] = max(best.get(label, 0.0), (score + 1) / 2)
        return sorted(best.items(), key=lambda item: -item[1])


def get_ranker(name: str) -> SemanticRanker:
    """Ranker for a SHEETCHECK_RANKER setting"""
    if name == "anthropic":
        return AnthropicRanker()
    if name == "embedding":
        return EmbeddingRanker()
    if name == "default":
        return DefaultRanker()
    raise ValueError(f"unknown ranker '{name}' (expected default, anthropic or embedding)")
