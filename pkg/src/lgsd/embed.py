"""Text embeddings and the cosine language distance between described states."""
from __future__ import annotations

import os
import re
import threading

import httpx
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .describer import Describer, LlmClient, discretize_batch

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF

TOKENIZERS = {
    # punctuation stays attached, so "[-0.30," and "0.30]" are different tokens
    "whitespace": re.compile(r"\S+"),
    "alnum": re.compile(r"[a-z0-9]+"),
}


class DegenerateTextError(ValueError):
    pass


def fnv1a_64(data: bytes, seed: int = 0) -> int:
    h = _FNV_OFFSET ^ (seed & _MASK)
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


def tokenize(text: str, tokenizer: str = "whitespace") -> list[str]:
    return TOKENIZERS[tokenizer].findall(text.lower())


def hashed_slot(token: str, n_features: int, seed: int = 0) -> tuple[int, float]:
    """Bucket index and sign (+1 when bit 63 of the hash is clear) for one token."""
    h = fnv1a_64(token.encode("utf-8"), seed)
    return h % n_features, (1.0 if h >> 63 == 0 else -1.0)


def embed_hash(text: str, n_features: int = 256, seed: int = 0, tokenizer: str = "whitespace") -> np.ndarray:
    """Signed feature hashing of the token bag, L2-normalized."""
    tokens = tokenize(text, tokenizer)
    if not tokens:
        raise DegenerateTextError(f"text has no tokens: {text!r}")
    v = np.zeros(n_features)
    for tok in tokens:
        idx, sign = hashed_slot(tok, n_features, seed)
        v[idx] += sign
    norm = np.linalg.norm(v)
    if norm == 0.0:
        # every token cancelled against a colliding one
        raise DegenerateTextError(f"hashed token bag cancels to zero: {text!r}")
    return v / norm


def cosine_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine distance is undefined for a zero vector")
    return float(np.clip(1.0 - (u @ v) / (nu * nv), 0.0, 2.0))


class HashingEmbedder(BaseEstimator, TransformerMixin):
    """Deterministic bag-of-tokens embedder; ``transform`` maps texts to rows.

    Parameters
    ----------
    n_features : int
        Embedding width.
    seed : int
        Folded into the FNV-1a offset basis; 0 gives the standard hash.
    tokenizer : {"whitespace", "alnum"}
        ``"alnum"`` splits on every non-alphanumeric character, which drops
        minus signs and decimal points from coordinates.
    """

    def __init__(self, n_features: int = 256, seed: int = 0, tokenizer: str = "whitespace"):
        self.n_features = n_features
        self.seed = seed
        self.tokenizer = tokenizer

    def fit(self, X=None, y=None):
        if self.n_features < 2:
            raise ValueError("n_features must be >= 2")
        if self.tokenizer not in TOKENIZERS:
            raise ValueError(f"unknown tokenizer {self.tokenizer!r}")
        return self

    def embed(self, text: str) -> np.ndarray:
        return embed_hash(text, self.n_features, self.seed, self.tokenizer)

    def transform(self, X) -> np.ndarray:
        if isinstance(X, str):
            raise TypeError("transform expects an iterable of texts, not a single string")
        self.fit()
        return np.stack([self.embed(t) for t in X]) if len(X) else np.zeros((0, self.n_features))

    @property
    def dim(self) -> int:
        return self.n_features


class ServiceEmbedder:
    """Embeddings from an OpenAI-style ``/embeddings`` endpoint, L2-normalized.

    Shares the describer client's retry and in-flight limits.
    """

    def __init__(self, client: LlmClient, model: str | None = None, dim: int | None = None):
        self.client = client
        self.model = model or os.environ.get("LGSD_EMBED_MODEL", "all-MiniLM-L6-v2")
        self._dim = dim
        self._memo: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        if text in self._memo:
            return self._memo[text]
        data = self.client._post("/embeddings", {"model": self.model, "input": text})
        v = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise DegenerateTextError(f"service returned a zero embedding for {text!r}")
        if self._dim is not None and v.size != self._dim:
            raise ValueError(f"service returned a {v.size}-d embedding, expected {self._dim}")
        v = v / norm
        with self._lock:
            self._memo.setdefault(text, v)
            self._dim = self._dim or v.size
        return self._memo[text]

    def transform(self, X) -> np.ndarray:
        return np.stack([self.embed(t) for t in X])

    @property
    def dim(self) -> int:
        if self._dim is None:
            raise RuntimeError("dimension unknown until the first request")
        return self._dim


def make_embedder(backend: str = "hash_builtin", n_features: int = 256, seed: int = 0, tokenizer: str = "whitespace", transport: httpx.BaseTransport | None = None):
    if backend == "hash_builtin":
        return HashingEmbedder(n_features, seed, tokenizer).fit()
    if backend == "external_service":
        # the service decides the width; n_features only applies to the builtin
        return ServiceEmbedder(LlmClient.from_env(transport=transport))
    raise ValueError(f"unknown embedder backend {backend!r}")


def d_lang(s, s_next, describer, embedder) -> float:
    return cosine_distance(embedder.embed(describer(s).text), embedder.embed(describer(s_next).text))


class LanguageSpace:
    """Batched ``describe -> embed`` over many states, memoized per cell.

    Cells are resolved once; afterwards a batch lookup is a dict probe per row.
    Distances follow the cosine definition exactly; rows are unit-norm so the
    cosine reduces to a dot product.
    """

    def __init__(self, describer: Describer, embedder):
        self.describer = describer
        self.embedder = embedder
        self._ids: dict[tuple, int] = {}
        self._texts: list[str] = []
        self._rows: list[np.ndarray] = []
        self._text_ids: dict[str, int] = {}
        self._matrix: np.ndarray | None = None

    def _resolve(self, key: tuple, state) -> int:
        desc = self.describer(state)
        tid = self._text_ids.get(desc.text)
        if tid is None:
            vec = self.embedder.embed(desc.text)
            tid = len(self._texts)
            self._text_ids[desc.text] = tid
            self._texts.append(desc.text)
            self._rows.append(vec)
            self._matrix = None
            if self.describer.cache is not None:
                self.describer.cache.put_embedding(key, vec)
        self._ids[key] = tid
        return tid

    def text_ids(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        keys = discretize_batch(states, self.describer.rho)
        out = np.empty(len(states), dtype=np.int64)
        ids = self._ids
        for i, row in enumerate(map(tuple, keys.tolist())):
            tid = ids.get(row)
            out[i] = tid if tid is not None else self._resolve(row, states[i])
        return out

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.stack(self._rows)
        return self._matrix

    def texts(self, ids) -> list[str]:
        return [self._texts[i] for i in np.asarray(ids)]

    def embeddings(self, states) -> np.ndarray:
        return self.matrix[self.text_ids(states)]

    def distance_ids(self, a, b) -> np.ndarray:
        m = self.matrix
        a, b = np.asarray(a), np.asarray(b)
        dots = np.einsum("ij,ij->i", m[a], m[b])
        return np.where(a == b, 0.0, np.clip(1.0 - dots, 0.0, 2.0))

    def distance(self, states, next_states) -> np.ndarray:
        return self.distance_ids(self.text_ids(states), self.text_ids(next_states))
