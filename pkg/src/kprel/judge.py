"""Judge prompting, verdict parsing, the pluggable backend boundary, and a
simulated judge for closed-loop experiments."""

from __future__ import annotations

import json
import string
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
import requests

from .errors import InputError, JudgeBackendError
from .labels import JudgeVerdict
from .simkit import _JUDGE_STREAM, SimWorld

# Template applied verbatim; placeholders are substituted as-is with no
# escaping, so quotes inside titles pass straight through.
PROMPT_TEMPLATE = (
    "Below is an instruction that describes a task. "
    "Write a response that appropriately completes the request.\n"
    "\n"
    "### Instruction:\n"
    'Given an item with title: "{title}", determine whether the keyphrase: '
    '"{keyphrase}", is relevant for cpc targeting or not by giving ONLY yes '
    "or no answer:\n"
    "\n"
    "### Response:\n"
)


@dataclass(frozen=True)
class PromptRequest:
    """One pair to judge. item_id/category ride along for downstream mixing."""

    title: str
    keyphrase: str
    item_id: str = ""
    category: str = ""

    def __post_init__(self) -> None:
        if not self.title:
            raise InputError("prompt title must be non-empty")
        if not self.keyphrase:
            raise InputError("prompt keyphrase must be non-empty")


def build_prompt(req: PromptRequest) -> str:
    """Fill the judging template; pure, byte-stable substitution."""
    return PROMPT_TEMPLATE.replace("{title}", req.title).replace(
        "{keyphrase}", req.keyphrase
    )


def parse_verdict(completion: str) -> Optional[str]:
    """Map a completion to "yes"/"no", or None when neither matches.

    Trims whitespace and punctuation, then matches the first token
    case-insensitively.
    """
    stripped = completion.strip()
    if not stripped:
        return None
    token = stripped.split()[0].strip(string.punctuation).lower()
    if token in ("yes", "no"):
        return token
    return None


class JudgeBackend(Protocol):
    """Boundary to a completion service: one completion per prompt, in order."""

    max_batch_size: int

    def complete(self, prompts: Sequence[str]) -> list[str]: ...


class HTTPJudgeBackend:
    """HTTP judge client: POSTs a JSON list of prompts, expects a JSON list
    of completions of the same length."""

    def __init__(
        self,
        url: str,
        auth_token: Optional[str] = None,
        max_batch_size: int = 100,
        timeout: float = 30.0,
    ):
        if max_batch_size < 1:
            raise InputError("max_batch_size must be at least 1")
        self.url = url
        self.auth_token = auth_token
        self.max_batch_size = max_batch_size
        self.timeout = timeout

    def complete(self, prompts: Sequence[str]) -> list[str]:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        try:
            resp = requests.post(
                self.url, json=list(prompts), headers=headers, timeout=self.timeout
            )
            resp.raise_for_status()
            completions = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise JudgeBackendError(f"judge backend call failed: {exc}") from exc
        if not isinstance(completions, list) or len(completions) != len(prompts):
            raise JudgeBackendError(
                f"judge backend returned {len(completions) if isinstance(completions, list) else 'non-list'} "
                f"completions for {len(prompts)} prompts"
            )
        return [str(c) for c in completions]


class VerdictCache:
    """Thread-safe verdict store keyed by (title, keyphrase).

    Identical text must judge identically, so the key deliberately omits
    item_id. Optionally persists as an append-only JSONL file.
    """

    def __init__(self, path: Optional[Path] = None):
        self._lock = threading.Lock()
        self._store: dict[tuple[str, str], str] = {}
        self._path = Path(path) if path is not None else None
        if self._path is not None and self._path.exists():
            with self._path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    doc = json.loads(line)
                    self._store[(doc["title"], doc["keyphrase"])] = doc["verdict"]

    def __len__(self) -> int:
        return len(self._store)

    def get(self, title: str, keyphrase: str) -> Optional[str]:
        with self._lock:
            return self._store.get((title, keyphrase))

    def put(self, title: str, keyphrase: str, verdict: str) -> None:
        with self._lock:
            if (title, keyphrase) in self._store:
                return
            self._store[(title, keyphrase)] = verdict
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(
                        json.dumps(
                            {"title": title, "keyphrase": keyphrase, "verdict": verdict},
                            sort_keys=True,
                        )
                        + "\n"
                    )


@dataclass(frozen=True)
class JudgeBatchResult:
    """Verdicts in input order plus what could not be judged."""

    verdicts: list[JudgeVerdict]
    skipped: list[PromptRequest]     # unparseable after one retry
    failed: list[tuple[PromptRequest, str]]  # backend errors, with reason
    backend_calls: int
    cache_hits: int


def _chunk(seq: list, size: int) -> list[list]:
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def judge_batch(
    pairs: Sequence[PromptRequest],
    backend: JudgeBackend,
    cache: Optional[VerdictCache] = None,
    judge_kind: str = "general",
    max_concurrency: int = 1,
) -> JudgeBatchResult:
    """Judge pairs through the backend, consulting the cache first.

    Cache hits never reach the backend. Misses are batched up to the
    backend's limit; unparseable completions are retried once and then
    recorded as skipped. Backend failures surface as per-pair error
    markers, never as silent drops.
    """
    cache = cache if cache is not None else VerdictCache()
    outcomes: list[Optional[str]] = [None] * len(pairs)  # verdict, "skip", or "error:..."
    cache_hits = 0

    pending: list[int] = []
    first_for_key: dict[tuple[str, str], int] = {}
    duplicates: list[int] = []  # same text as an earlier pending pair
    for idx, req in enumerate(pairs):
        hit = cache.get(req.title, req.keyphrase)
        key = (req.title, req.keyphrase)
        if hit is not None:
            outcomes[idx] = hit
            cache_hits += 1
        elif key in first_for_key:
            duplicates.append(idx)
        else:
            pending.append(idx)
            first_for_key[key] = idx

    backend_calls = 0
    calls_lock = threading.Lock()

    def run_round(indices: list[int]) -> list[int]:
        """Judge one round of pairs; returns indices still unparseable."""
        batches = _chunk(indices, backend.max_batch_size)

        def call(batch: list[int]) -> None:
            nonlocal backend_calls
            prompts = [build_prompt(pairs[i]) for i in batch]
            with calls_lock:
                backend_calls += 1
            try:
                completions = backend.complete(prompts)
            except JudgeBackendError as exc:
                for i in batch:
                    outcomes[i] = f"error:{exc}"
                return
            for i, completion in zip(batch, completions):
                verdict = parse_verdict(completion)
                if verdict is None:
                    outcomes[i] = "skip"
                else:
                    outcomes[i] = verdict
                    cache.put(pairs[i].title, pairs[i].keyphrase, verdict)

        if max_concurrency > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
                list(pool.map(call, batches))
        else:
            for batch in batches:
                call(batch)
        return [i for i in indices if outcomes[i] == "skip"]

    if pending:
        retry = run_round(pending)
        if retry:
            run_round(retry)
    for idx in duplicates:
        req = pairs[idx]
        outcomes[idx] = outcomes[first_for_key[(req.title, req.keyphrase)]]

    verdicts: list[JudgeVerdict] = []
    skipped: list[PromptRequest] = []
    failed: list[tuple[PromptRequest, str]] = []
    for idx, outcome in enumerate(outcomes):
        req = pairs[idx]
        if outcome in ("yes", "no"):
            verdicts.append(
                JudgeVerdict(
                    item_id=req.item_id,
                    keyphrase=req.keyphrase,
                    title=req.title,
                    category=req.category,
                    verdict=outcome,
                    judge_kind=judge_kind,
                )
            )
        elif outcome == "skip":
            skipped.append(req)
        else:
            failed.append((req, str(outcome)[len("error:"):]))
    return JudgeBatchResult(
        verdicts=verdicts,
        skipped=skipped,
        failed=failed,
        backend_calls=backend_calls,
        cache_hits=cache_hits,
    )


def simulated_judge(world: SimWorld, epsilon: float) -> list[JudgeVerdict]:
    """Ground truth flipped independently with probability epsilon.

    Judges every pair in the world's recommendation pool using a stream
    derived from the world seed; bit-reproducible for a given seed.
    """
    if not 0 <= epsilon < 0.5:
        raise InputError(f"epsilon must lie in [0, 0.5), got {epsilon}")
    cfg = world.config
    rng = np.random.default_rng([_JUDGE_STREAM, cfg.seed])
    flips = rng.random((cfg.n_items, cfg.n_keyphrases)) < epsilon
    verdict_matrix = world.relevant ^ flips
    return [
        JudgeVerdict(
            item_id=it.item_id,
            keyphrase=kp.text,
            title=it.title,
            category=it.category,
            verdict="yes" if verdict_matrix[i, j] else "no",
            judge_kind="simulated",
        )
        for i, it in enumerate(world.items)
        for j, kp in enumerate(world.keyphrases)
    ]
