"""Prompting, fine-tuning export and rating-token scoring for the vision LMM.

The model runs out of process behind a chat-completions style endpoint that
returns top-k log-probabilities of the next token. ``mock_score`` stands in
for it offline.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import httpx
import numpy as np

from .errors import (
    EndpointUnreachable,
    MalformedResponse,
    MissingProjection,
    NoRatingTokenFound,
    OutOfRange,
    WrongImageCount,
)
from .rating import LEVEL_WORDS, LmmEvaluation, MosRange, RatingLevel, level_text, logits_to_probabilities, mos_to_level

log = logging.getLogger(__name__)

N_IMAGES = 6
IMAGE_SLOTS = "".join(f"<|img{k}|>" for k in range(1, N_IMAGES + 1))
QUESTION = "How would you rate the quality of the point cloud from the projections?" + IMAGE_SLOTS
ANSWER_PREFIX = "The quality of this point cloud is"
API_KEY_ENV = "PCQA_API_KEY"
MISSING_LEVEL_GAP = 10.0

SFT_META = {"batch_size": 64, "learning_rate": 2e-5, "epochs": 2, "image_size": 448}

SFT_RECORD_SCHEMA = {
    "type": "object",
    "required": ["cloud_name", "images", "question", "answer", "mos", "level"],
    "additionalProperties": False,
    "properties": {
        "cloud_name": {"type": "string", "minLength": 1},
        "images": {"type": "array", "items": {"type": "string"}, "minItems": 6, "maxItems": 6},
        "question": {"type": "string", "const": QUESTION},
        "answer": {
            "type": "string",
            "enum": [f"{ANSWER_PREFIX} {w}." for w in LEVEL_WORDS],
        },
        "mos": {"type": "number"},
        "level": {"type": "string", "enum": list(LEVEL_WORDS)},
    },
}


@dataclass(frozen=True)
class PromptPair:
    question: str
    answer_prefix: str = ANSWER_PREFIX
    answer_full: str | None = None
    image_paths: tuple = ()


def answer_for(level: RatingLevel) -> str:
    return f"{ANSWER_PREFIX} {level_text(level)}."


def parse_answer(answer: str) -> RatingLevel:
    """Recover the level from ``"<prefix> <word>."``."""
    text = answer.strip()
    if not text.startswith(ANSWER_PREFIX):
        raise ValueError(f"answer does not start with {ANSWER_PREFIX!r}: {answer!r}")
    word = text[len(ANSWER_PREFIX):].strip().rstrip(".").strip()
    return RatingLevel[word.upper()]


def build_prompt(image_paths: Sequence[str | os.PathLike], level: RatingLevel | None = None) -> PromptPair:
    paths = tuple(str(p) for p in image_paths)
    if len(paths) != N_IMAGES:
        raise WrongImageCount(f"expected {N_IMAGES} projections, got {len(paths)}")
    return PromptPair(QUESTION, ANSWER_PREFIX, None if level is None else answer_for(level), paths)


@dataclass(frozen=True)
class SftRecord:
    cloud_name: str
    image_paths: tuple
    question: str
    answer: str
    level: RatingLevel
    mos: float

    def to_json(self) -> dict:
        return {
            "cloud_name": self.cloud_name,
            "images": list(self.image_paths),
            "question": self.question,
            "answer": self.answer,
            "mos": self.mos,
            "level": level_text(self.level),
        }


def projection_paths(image_dir: str | os.PathLike, cloud_name: str) -> list[Path]:
    """Face images in the fixed order [+X, -X, +Y, -Y, +Z, -Z]."""
    return [Path(image_dir) / f"{cloud_name}_face{k}.png" for k in range(1, N_IMAGES + 1)]


def sft_records(manifest, train_groups: Iterable[str], image_dir: str | os.PathLike) -> list[SftRecord]:
    groups = set(train_groups)
    out = []
    for e in manifest.entries:
        if e.group_id not in groups:
            continue
        paths = projection_paths(image_dir, e.cloud_name)
        missing = [str(p) for p in paths if not p.is_file()]
        if missing:
            raise MissingProjection(f"{e.cloud_name}: missing {missing[0]}")
        level = mos_to_level(e.mos, manifest.score_range)
        out.append(SftRecord(e.cloud_name, tuple(str(p) for p in paths), QUESTION, answer_for(level), level, e.mos))
    return out


def export_sft_dataset(manifest, split, out: str | os.PathLike, image_dir: str | os.PathLike) -> int:
    """Write one JSONL line per training cloud of ``split`` plus ``meta.json`` beside it."""
    out = Path(out)
    records = sft_records(manifest, split.train_groups, image_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")
    meta = dict(SFT_META, fold_index=split.fold_index, records=len(records),
                face_order=["+X", "-X", "+Y", "-Y", "+Z", "-Z"])
    (out.parent / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return len(records)


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str = "default"
    timeout: float = 60.0
    max_concurrency: int = 4
    retries: int = 3
    api_key: str | None = field(default=None, repr=False)
    top_logprobs: int = 20
    backoff: float = 0.5

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.top_logprobs < 20:
            raise ValueError("top_logprobs must be >= 20")

    def resolved_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)


def _image_part(path: str | os.PathLike) -> dict:
    p = Path(path)
    if not p.is_file():
        raise MissingProjection(f"missing projection {p}")
    data = base64.b64encode(p.read_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{data}"}}


def build_request(image_paths: Sequence[str | os.PathLike], cfg: EndpointConfig) -> dict:
    prompt = build_prompt(image_paths)
    content = [{"type": "text", "text": prompt.question}] + [_image_part(p) for p in prompt.image_paths]
    return {
        "model": cfg.model,
        "messages": [
            {"role": "user", "content": content},
            {"role": "assistant", "content": prompt.answer_prefix},
        ],
        "max_tokens": 1,
        "logprobs": True,
        "top_logprobs": cfg.top_logprobs,
        "temperature": 0,
    }


def _normalise_token(token: str) -> str:
    # sentencepiece / byte-BPE word-boundary markers
    return token.replace("▁", " ").replace("Ġ", " ").strip().lower()


def match_level(token: str) -> RatingLevel | None:
    """Level whose adjective equals the token or starts with it (>= 2 chars)."""
    t = _normalise_token(token)
    if not t:
        return None
    for word in LEVEL_WORDS:
        if t == word or (len(t) >= 2 and word.startswith(t)):
            return RatingLevel[word.upper()]
    return None


def top_logprobs_from_response(payload: Mapping) -> list[tuple[str, float]]:
    """Extract ``(token, logprob)`` pairs for the first generated token."""
    try:
        choice = payload["choices"][0]
        lp = choice["logprobs"]
        if isinstance(lp, Mapping) and "content" in lp:
            entries = lp["content"][0]["top_logprobs"]
            return [(str(e["token"]), float(e["logprob"])) for e in entries]
        # legacy completions layout: {"top_logprobs": [{token: logprob, ...}]}
        first = lp["top_logprobs"][0]
        return [(str(k), float(v)) for k, v in first.items()]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise MalformedResponse(f"response lacks top log-probabilities: {exc!r}") from exc


def levels_from_top_logprobs(pairs: Iterable[tuple[str, float]]) -> np.ndarray:
    """Five per-level log-probabilities; unseen levels get (lowest seen - 10)."""
    found: dict[RatingLevel, float] = {}
    for token, lp in pairs:
        if not math.isfinite(lp):
            continue
        level = match_level(token)
        if level is not None and lp > found.get(level, -math.inf):
            found[level] = lp
    if not found:
        raise NoRatingTokenFound("none of the rating adjectives is among the top log-probabilities")
    floor = min(found.values()) - MISSING_LEVEL_GAP
    return np.array([found.get(level, floor) for level in RatingLevel])


class ScoringClient:
    """Thread-safe client with bounded concurrency and retry with exponential backoff."""

    def __init__(self, cfg: EndpointConfig, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        headers = {}
        key = cfg.resolved_api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(base_url=cfg.base_url.rstrip("/"), timeout=cfg.timeout,
                                  headers=headers, transport=transport)
        self._window = threading.BoundedSemaphore(cfg.max_concurrency)

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, body: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.cfg.retries + 1):
            if attempt:
                time.sleep(self.cfg.backoff * 2 ** (attempt - 1))
            try:
                with self._window:
                    resp = self._http.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last = exc
                log.warning("scoring request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = EndpointUnreachable(f"HTTP {resp.status_code}")
                log.warning("scoring request got HTTP %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise EndpointUnreachable(f"endpoint rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponse(f"response is not JSON: {exc}") from exc
        raise EndpointUnreachable(f"no response after {self.cfg.retries + 1} attempts: {last}")

    def score(self, image_paths: Sequence[str | os.PathLike]) -> LmmEvaluation:
        payload = self._post(build_request(image_paths, self.cfg))
        return logits_to_probabilities(levels_from_top_logprobs(top_logprobs_from_response(payload)))

    def score_many(self, jobs: Mapping[str, Sequence[str | os.PathLike]]) -> dict[str, LmmEvaluation]:
        """Score several clouds concurrently; keys of ``jobs`` are cloud names."""
        names = list(jobs)
        with ThreadPoolExecutor(max_workers=self.cfg.max_concurrency) as pool:
            results = list(pool.map(lambda n: self.score(jobs[n]), names))
        return dict(zip(names, results))


def score_point_cloud(image_paths: Sequence[str | os.PathLike], cfg: EndpointConfig,
                      transport: httpx.BaseTransport | None = None) -> LmmEvaluation:
    with ScoringClient(cfg, transport) as client:
        return client.score(image_paths)


def _stream_seed(noise_seed: int, cloud_name: str) -> int:
    digest = hashlib.sha256(f"{int(noise_seed)}:{cloud_name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def mock_score(cloud_name: str, mos: float, rng: MosRange, noise_seed: int = 0,
               noise_sigma: float = 0.0, faces: Sequence[int] | None = None) -> LmmEvaluation:
    """Deterministic stand-in for the LMM.

    Each of the six faces carries an independent standard-normal reading
    error seeded by ``(noise_seed, cloud_name)``. The errors of the ``faces``
    used (all six by default) are averaged and scaled so that six faces give
    noise of std ``noise_sigma * (M - m)``; fewer faces give proportionally
    more. The log-probabilities form a unit-width Gaussian bump over levels
    centered on the level of the noisy score.
    """
    if not rng.contains(mos):
        raise OutOfRange(f"mos {mos} outside [{rng.m}, {rng.M}]")
    z = np.random.default_rng(_stream_seed(noise_seed, cloud_name)).standard_normal(N_IMAGES)
    used = list(range(N_IMAGES)) if faces is None else sorted(set(int(f) for f in faces))
    if not used or any(f < 0 or f >= N_IMAGES for f in used):
        raise ValueError(f"faces must be a non-empty subset of 0..5, got {faces}")
    err = z[used].mean() * math.sqrt(N_IMAGES)
    span = rng.M - rng.m
    noisy = min(max(mos + err * span * noise_sigma, rng.m), rng.M)
    center = int(mos_to_level(noisy, rng))
    levels = np.arange(1, 6)
    return logits_to_probabilities(-0.5 * (levels - center) ** 2.0)
