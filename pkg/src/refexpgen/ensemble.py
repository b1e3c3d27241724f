"""Fan each instance out to N describer backends, then merge the candidates.

Failed describers become explicit gaps (``None`` slots) rather than aborting
the instance; merging runs over the survivors. ``baseline_merge`` is the
deterministic offline merger used by tests and mock runs: it keeps the words
a majority of candidates agree on and drops low-frequency details.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace

from .backends import (
    BackendError,
    BackendKind,
    BackendSpec,
    DecodeError,
    KindMismatch,
    TimedDescription,
    build_generation_prompt,
    build_merge_prompt,
    get_client,
)
from .geometry import Instance
from .ingest import CropSpec


class AllBackendsFailed(BackendError):
    """Every describer errored for one instance."""


class NoCandidates(ValueError):
    """A merge was requested over a candidate set with no surviving entries."""


class MergeFailed(BackendError):
    """The merger backend errored or returned unusable text."""


@dataclass(frozen=True)
class CandidateSet:
    """Per-backend candidate descriptions for one instance, in config order.

    ``None`` entries are gaps left by failed describers.
    """

    instance_id: str
    category: str
    candidates: tuple[TimedDescription | None, ...]

    def non_gap(self) -> list[TimedDescription]:
        return [c for c in self.candidates if c is not None]


@dataclass(frozen=True)
class MergedDescription:
    instance_id: str
    text: str
    merger_name: str
    source_count: int
    elapsed: float = 0.0


# Function words excluded from the majority vote; everything else counts as
# a content word.
STOP_WORDS = frozenset(
    {
        "a", "an", "the", "and", "or", "but", "with", "without", "of", "in",
        "on", "at", "to", "for", "by", "from", "as", "is", "are", "was",
        "were", "be", "been", "being", "it", "its", "this", "that", "these",
        "those", "there", "has", "have", "had",
    }
)

_WORD_RE = re.compile(r"[a-z0-9']+")
_ARTICLES = ("a", "an", "the")


def _tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _content_words(text: str) -> list[str]:
    return [w for w in _tokens(text) if w not in STOP_WORDS]


def baseline_merge(candidates: list[str], quorum: int) -> str:
    """Keep content words appearing in at least ``quorum`` distinct candidates.

    Kept words are emitted in first-appearance order (scanning candidates in
    input order), prefixed with the leading article when every candidate opens
    with the same one.
    """
    if not candidates:
        raise ValueError("candidates must be nonempty")
    if not 1 <= quorum <= len(candidates):
        raise ValueError(f"quorum must be in [1, {len(candidates)}], got {quorum}")

    counts: dict[str, int] = {}
    for cand in candidates:
        for word in set(_content_words(cand)):
            counts[word] = counts.get(word, 0) + 1

    kept: list[str] = []
    seen: set[str] = set()
    for cand in candidates:
        for word in _content_words(cand):
            if word not in seen and counts.get(word, 0) >= quorum:
                kept.append(word)
                seen.add(word)

    leading = [_tokens(c)[0] if _tokens(c) else "" for c in candidates]
    prefix: list[str] = []
    if leading and leading[0] in _ARTICLES and all(w == leading[0] for w in leading):
        prefix = [leading[0]]
    return " ".join(prefix + kept)


def generate_candidates(
    inst: Instance,
    crop: CropSpec,
    describers: list[BackendSpec],
    *,
    client_for=get_client,
) -> CandidateSet:
    """Query every describer concurrently; result order follows config order.

    Raises:
        AllBackendsFailed: every describer errored.
    """
    if not describers:
        raise ValueError("describers must be nonempty")
    for spec in describers:
        if spec.kind not in (BackendKind.VISION_DESCRIBER, BackendKind.MOCK):
            raise KindMismatch(f"{spec.name!r} is not a describer backend ({spec.kind})")

    base = build_generation_prompt(inst.category, inst.role)
    prompt = replace(base, image_ref=crop, instance_id=inst.instance_id)

    results: list[TimedDescription | None] = [None] * len(describers)
    errors: list[str] = []
    with ThreadPoolExecutor(max_workers=len(describers)) as pool:
        futures = {
            pool.submit(client_for(spec).query, prompt): i
            for i, spec in enumerate(describers)
        }
        for future in as_completed(futures):
            i = futures[future]
            try:
                results[i] = future.result()
            except (BackendError, DecodeError, OSError) as exc:
                # Unreadable crops fail an instance the same way a dead
                # backend does: a gap, not an aborted run.
                errors.append(f"{describers[i].name}: {exc}")

    if all(r is None for r in results):
        raise AllBackendsFailed(
            f"all describers failed for {inst.instance_id!r}: " + "; ".join(errors)
        )
    return CandidateSet(
        instance_id=inst.instance_id, category=inst.category, candidates=tuple(results)
    )


def merge_candidates(
    cs: CandidateSet,
    merger: BackendSpec,
    *,
    client_for=get_client,
    instruction: str | None = None,
) -> MergedDescription:
    """Merge the surviving candidates into one description via the merger backend.

    The merger's reply is taken verbatim (trimmed); ``instruction``, when set,
    is prepended to the default merge prompt.
    """
    if merger.kind not in (BackendKind.TEXT_MERGER, BackendKind.MOCK):
        raise KindMismatch(f"{merger.name!r} is not a merger backend ({merger.kind})")
    texts = [c.text for c in cs.non_gap()]
    if not texts:
        raise NoCandidates(f"no surviving candidates for {cs.instance_id!r}")

    prompt = build_merge_prompt(cs.category, texts)
    if instruction:
        prompt = replace(prompt, text=f"{instruction}\n{prompt.text}")
    try:
        timed = client_for(merger).query(prompt)
    except BackendError as exc:
        raise MergeFailed(f"merger {merger.name!r} failed for {cs.instance_id!r}: {exc}") from exc

    text = timed.text.strip()
    if not text:
        raise MergeFailed(f"merger {merger.name!r} returned empty text for {cs.instance_id!r}")
    return MergedDescription(
        instance_id=cs.instance_id,
        text=text,
        merger_name=merger.name,
        source_count=len(texts),
        elapsed=timed.elapsed,
    )


def default_quorum(n: int) -> int:
    """Majority quorum: keep what at least half (rounded up) agree on."""
    return math.ceil(n / 2)
