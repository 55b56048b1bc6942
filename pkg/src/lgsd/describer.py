"""State describers: rule oracle, chat-completions client, and a keyed cache.

Every backend produces the raw reply of a language model (a rule oracle
fakes one deterministically) and the final sentence is whatever follows the
last ``Description:`` marker. Descriptions are computed from the discretized
state, so a cached text is always consistent with its cell key.
"""
from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

logger = logging.getLogger(__name__)

MARKER = "Description:"
DEFAULT_RHO = 0.05

_POINT_FORBIDDEN = {
    # direction -> (axis, sign of forbidden cells, area name)
    "N": (1, -1, "southern"),
    "S": (1, 1, "northern"),
    "E": (0, -1, "western"),
    "W": (0, 1, "eastern"),
}

_POINT_PROMPT = """\
You will describe the state of a robot that moves on a flat plane. Its state is:

Robot's x, y coordinates: [{x}, {y}]

{rule}

When the robot is inside the allowed area, report its [x, y] position and finish your answer with a final line in the format 'Description: The robot's x, y position is [x, y]'.

When the robot is inside the excluded area, finish your answer with exactly 'Description: The robot is located in the {area} area.'"""

_POINT_RULES = {
    "N": "A y-coordinate below 0 counts as the southern area (excluded); a y-coordinate of 0 or more counts as the northern area (allowed).",
    "S": "A y-coordinate above 0 counts as the northern area (excluded); a y-coordinate of 0 or less counts as the southern area (allowed).",
    "E": "An x-coordinate below 0 counts as the western area (excluded); an x-coordinate of 0 or more counts as the eastern area (allowed).",
    "W": "An x-coordinate above 0 counts as the eastern area (excluded); an x-coordinate of 0 or less counts as the western area (allowed).",
}

_PUSHER_HEADER = """\
You will describe a scene in which a robot arm approaches an object on a table. The scene is:

Robot's end effector's x, y coordinates: [{ax}, {ay}], Object's x, y coordinates: [{ox}, {oy}], Origin's x, y coordinates: [0.00, 0.00]
"""

_PUSHER_TWO_STAGE = _PUSHER_HEADER + """
If the object is away from the origin, give the object's x, y coordinates. Any introduction is fine, but finish your answer with a final line in the format 'Description: The object's x, y position is [x, y].'

If the object sits at the origin, give the distance between the end effector and the object instead, and finish with a final line in the format 'Description: The distance is ___ units.'"""

_PUSHER_HALF_PLANE = _PUSHER_HEADER + """
If {rule}, answer 'Description: The object is located in {area} area.'

Otherwise, if the object is away from the origin, give the object's x, y coordinates and finish with a final line in the format 'Description: The object's x, y position is [x, y].'

If the object sits at the origin, give the distance between the end effector and the object instead, and finish with a final line in the format 'Description: The distance is ___ units.'"""

_PUSHER_RULES = {
    "N": "the object's y coordinate is below 0",
    "S": "the object's y coordinate is above 0",
    "E": "the object's x coordinate is below 0",
    "W": "the object's x coordinate is above 0",
}

CONSTANT_TEXT = "The scene looks the same as before."

TEMPLATE_IDS = (
    tuple(f"point_half_plane_{d}" for d in "NSEW")
    + ("pusher_two_stage",)
    + tuple(f"pusher_half_plane_{d}" for d in "NSEW")
    + ("constant",)
)


class DescriptionParseError(ValueError):
    def __init__(self, raw: str):
        super().__init__(f"no {MARKER!r} marker in model output:\n{raw}")
        self.raw = raw


@dataclass(frozen=True)
class Description:
    text: str
    source: str  # "rule_oracle" | "llm" | "cache"

    def __post_init__(self):
        if not self.text:
            raise ValueError("empty description")


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    env: str  # "point", "pusher" or "any"
    text: str

    def render(self, state, rho: float = DEFAULT_RHO) -> str:
        coords = snapped(state, rho)
        if self.env == "point":
            x, y = coords
            return self.text.format(x=_fmt(x), y=_fmt(y))
        if self.env == "pusher":
            ax, ay, ox, oy = coords
            return self.text.format(ax=_fmt(ax), ay=_fmt(ay), ox=_fmt(ox), oy=_fmt(oy))
        return self.text


def get_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise KeyError(f"unknown template id {template_id!r}")
    if template_id.startswith("point_half_plane_"):
        d = template_id[-1]
        return PromptTemplate(template_id, "point", _POINT_PROMPT.replace("{rule}", _POINT_RULES[d]).replace("{area}", _POINT_FORBIDDEN[d][2]))
    if template_id == "pusher_two_stage":
        return PromptTemplate(template_id, "pusher", _PUSHER_TWO_STAGE)
    if template_id.startswith("pusher_half_plane_"):
        d = template_id[-1]
        text = _PUSHER_HALF_PLANE.replace("{rule}", _PUSHER_RULES[d]).replace("{area}", _POINT_FORBIDDEN[d][2])
        return PromptTemplate(template_id, "pusher", text)
    return PromptTemplate(template_id, "any", "Describe the scene. Always answer 'Description: " + CONSTANT_TEXT + "'")


def template_env(template_id: str) -> str:
    return get_template(template_id).env


def discretize(state, rho: float = DEFAULT_RHO) -> tuple[int, ...]:
    """Cell key: each coordinate divided by ``rho``, rounded half away from zero.

    A 1e-9 guard absorbs binary representation error, so 0.075 / 0.05 lands
    on the half-way point as it does in decimal arithmetic.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    q = np.asarray(state, dtype=np.float64) / rho
    k = np.sign(q) * np.floor(np.abs(q) + 0.5 + 1e-9)
    return tuple(int(v) for v in k)


def discretize_batch(states, rho: float = DEFAULT_RHO) -> np.ndarray:
    q = np.asarray(states, dtype=np.float64) / rho
    return (np.sign(q) * np.floor(np.abs(q) + 0.5 + 1e-9)).astype(np.int64)


def snapped(state, rho: float = DEFAULT_RHO) -> tuple[float, ...]:
    return tuple(k * rho for k in discretize(state, rho))


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def rule_output(state, template_id: str, rho: float = DEFAULT_RHO) -> str:
    """Raw reply the oracle 'model' gives for ``state`` under ``template_id``."""
    if template_id not in TEMPLATE_IDS:
        raise KeyError(f"unknown template id {template_id!r}")
    if template_id == "constant":
        return f"{MARKER} {CONSTANT_TEXT}"
    key = discretize(state, rho)
    env = template_env(template_id)
    if env == "point":
        if len(key) != 2:
            raise ValueError(f"{template_id} expects a 2-d point state, got {len(key)} coordinates")
        axis, sign, area = _POINT_FORBIDDEN[template_id[-1]]
        if key[axis] * sign > 0:
            return f"{MARKER} The robot is located in the {area} area."
        x, y = (k * rho for k in key)
        return f"{MARKER} The robot's x, y position is [{_fmt(x)}, {_fmt(y)}]"
    if len(key) != 4:
        raise ValueError(f"{template_id} expects a 4-d pusher state, got {len(key)} coordinates")
    arm = np.array(key[0:2]) * rho
    obj = np.array(key[2:4]) * rho
    if key[2] == 0 and key[3] == 0:
        d = math.hypot(*(arm - obj))
        return f"{MARKER} The distance is {d:.2f} units."
    if template_id.startswith("pusher_half_plane_"):
        axis, sign, area = _POINT_FORBIDDEN[template_id[-1]]
        if key[2 + axis] * sign > 0:
            return f"{MARKER} The object is located in {area} area."
    return f"{MARKER} The object's x, y position is [{_fmt(obj[0])}, {_fmt(obj[1])}]."


def parse_description(raw: str) -> str:
    """Text after the last ``Description:`` marker, whitespace-trimmed."""
    pos = raw.rfind(MARKER)
    if pos < 0:
        raise DescriptionParseError(raw)
    text = raw[pos + len(MARKER):].strip()
    if not text:
        raise DescriptionParseError(raw)
    return text


def describe_rule(state, template_id: str, rho: float = DEFAULT_RHO) -> Description:
    return Description(parse_description(rule_output(state, template_id, rho)), "rule_oracle")


class TransportFailure(RuntimeError):
    pass


class LlmClient:
    """Minimal chat-completions client pinned to temperature 0.

    Bounds concurrent requests with a semaphore and retries transport errors
    and 429/5xx replies with exponential backoff.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        model: str = "gpt-4-turbo-2024-04-09",
        max_in_flight: int = 4,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.retries = retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> "LlmClient":
        base = os.environ.get("LGSD_LLM_BASE_URL")
        if not base:
            raise RuntimeError("LGSD_LLM_BASE_URL is not set")
        return cls(
            base,
            api_key=os.environ.get("LGSD_LLM_API_KEY", ""),
            model=os.environ.get("LGSD_LLM_MODEL", "gpt-4-turbo-2024-04-09"),
            **kwargs,
        )

    def _post(self, path: str, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._http.post(f"{self.base_url}{path}", json=payload)
            except httpx.TransportError as exc:
                last = exc
                logger.warning("request to %s failed (attempt %d): %s", path, attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransportFailure(f"HTTP {resp.status_code}: {resp.text[:200]}")
                logger.warning("request to %s got HTTP %d (attempt %d)", path, resp.status_code, attempt + 1)
                continue
            resp.raise_for_status()
            return resp.json()
        raise TransportFailure(f"giving up on {path} after {self.retries + 1} attempts") from last

    def complete(self, prompt: str) -> str:
        data = self._post(
            "/chat/completions",
            {"model": self.model, "temperature": 0, "messages": [{"role": "user", "content": prompt}]},
        )
        return data["choices"][0]["message"]["content"]

    def close(self):
        self._http.close()


def describe_llm(state, template_id: str, client: LlmClient, rho: float = DEFAULT_RHO) -> Description:
    prompt = get_template(template_id).render(state, rho)
    return Description(parse_description(client.complete(prompt)), "llm")


def _key_str(key) -> str:
    return ",".join(str(int(k)) for k in key)


class DescriptionCache:
    """Write-once map from cell key to description text (plus optional embeddings)."""

    VERSION = 1

    def __init__(self, template_id: str, rho: float = DEFAULT_RHO):
        self.template_id = template_id
        self.rho = rho
        self.entries: dict[tuple, str] = {}
        self.embeddings: dict[tuple, list[float]] = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.entries)

    def get(self, key):
        text = self.entries.get(tuple(key))
        with self._lock:
            if text is None:
                self.misses += 1
            else:
                self.hits += 1
        return text

    def put(self, key, text: str) -> str:
        """Store ``text`` unless the key is taken; returns the stored text."""
        key = tuple(key)
        with self._lock:
            return self.entries.setdefault(key, text)

    def put_embedding(self, key, vector) -> None:
        with self._lock:
            self.embeddings.setdefault(tuple(key), [float(v) for v in vector])

    def to_dict(self) -> dict:
        d = {
            "version": self.VERSION,
            "template_id": self.template_id,
            "rho": self.rho,
            "entries": {_key_str(k): self.entries[k] for k in sorted(self.entries)},
        }
        if self.embeddings:
            d["embeddings"] = {_key_str(k): self.embeddings[k] for k in sorted(self.embeddings)}
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DescriptionCache":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        if d.get("version") != cls.VERSION:
            raise ValueError(f"unsupported cache version {d.get('version')!r}")
        cache = cls(d["template_id"], d["rho"])
        for k, text in d["entries"].items():
            cache.entries[tuple(int(v) for v in k.split(","))] = text
        for k, vec in d.get("embeddings", {}).items():
            cache.embeddings[tuple(int(v) for v in k.split(","))] = vec
        return cache


def cached_describe(state, template_id: str, backend, cache: DescriptionCache, rho: float = DEFAULT_RHO) -> Description:
    """Return the cached text for the state's cell, calling ``backend`` on a miss.

    ``backend(state, template_id, rho)`` returns a :class:`Description`; its
    errors propagate and nothing is stored for that key.
    """
    key = discretize(state, rho)
    text = cache.get(key)
    if text is not None:
        return Description(text, "cache")
    desc = backend(state, template_id, rho)
    stored = cache.put(key, desc.text)
    return Description(stored, desc.source)


class Describer:
    """Callable ``state -> Description`` bundling template, backend and cache."""

    def __init__(self, template_id: str, rho: float = DEFAULT_RHO, backend="rule", cache: DescriptionCache | None = None, client: LlmClient | None = None):
        get_template(template_id)
        self.template_id = template_id
        self.rho = rho
        self.cache = cache if cache is not None else DescriptionCache(template_id, rho)
        if backend == "rule":
            self._backend = describe_rule
        elif backend == "llm":
            if client is None:
                client = LlmClient.from_env()
            self._backend = lambda s, t, r: describe_llm(s, t, client, r)
        elif callable(backend):
            self._backend = backend
        else:
            raise ValueError(f"unknown describer backend {backend!r}")
        self.backend_name = backend if isinstance(backend, str) else "custom"

    def __call__(self, state) -> Description:
        return cached_describe(state, self.template_id, self._backend, self.cache, self.rho)

    def describe_many(self, states) -> list[str]:
        return [self(s).text for s in np.asarray(states)]
