"""Label sources, filtering rules, and the six dataset-mixing strategies."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import DatasetError, InputError

GRADES = ("excellent", "good", "fair", "bad")
RELEVANT_GRADES = frozenset({"excellent", "good"})

LABEL_RELEVANT = "relevant"
LABEL_IRRELEVANT = "irrelevant"

# Click-log noise thresholds: a pair must show sustained engagement before
# it counts as a positive.
MIN_IMPRESSIONS = 30
MIN_CLICKS = 1
MIN_CTR = 0.1


@dataclass(frozen=True)
class ClickRecord:
    """Logged engagement for one item-keyphrase pair."""

    item_id: str
    keyphrase: str
    category: str
    title: str
    impressions: int
    clicks: int
    purchases: int
    gmb: float

    def __post_init__(self) -> None:
        if self.impressions < 0 or self.clicks < 0 or self.purchases < 0:
            raise InputError(f"negative count in click record for {self.item_id!r}")
        if self.clicks > self.impressions:
            raise InputError(
                f"clicks ({self.clicks}) exceed impressions ({self.impressions}) "
                f"for {self.item_id!r} / {self.keyphrase!r}"
            )
        if self.purchases > self.clicks:
            raise InputError(
                f"purchases ({self.purchases}) exceed clicks ({self.clicks}) "
                f"for {self.item_id!r} / {self.keyphrase!r}"
            )
        if self.gmb < 0:
            raise InputError(f"negative gmb for {self.item_id!r} / {self.keyphrase!r}")


@dataclass(frozen=True)
class HumanJudgment:
    """One item-keyphrase pair graded independently by three annotators."""

    item_id: str
    keyphrase: str
    title: str
    category: str
    grades: tuple[str, str, str]

    def __post_init__(self) -> None:
        if len(self.grades) != 3:
            raise InputError(f"expected exactly 3 grades, got {len(self.grades)}")
        for g in self.grades:
            if g not in GRADES:
                raise InputError(f"unknown grade {g!r}; expected one of {GRADES}")


@dataclass(frozen=True)
class SearchRelevanceRecord:
    """Binary search-side relevance verdict for an item-keyphrase pair."""

    item_id: str
    keyphrase: str
    title: str
    category: str
    verdict: str

    def __post_init__(self) -> None:
        if self.verdict not in (LABEL_RELEVANT, LABEL_IRRELEVANT):
            raise InputError(f"search verdict must be relevant/irrelevant, got {self.verdict!r}")


JUDGE_KINDS = ("general", "finetuned", "simulated")


@dataclass(frozen=True)
class JudgeVerdict:
    """Yes/no relevance verdict from an LLM-style judge."""

    item_id: str
    keyphrase: str
    title: str
    category: str
    verdict: str
    judge_kind: str

    def __post_init__(self) -> None:
        if self.verdict not in ("yes", "no"):
            raise InputError(f"judge verdict must be yes/no, got {self.verdict!r}")
        if self.judge_kind not in JUDGE_KINDS:
            raise InputError(f"unknown judge_kind {self.judge_kind!r}")


PROVENANCES = ("click", "search", "llm", "human")


@dataclass(frozen=True)
class LabeledExample:
    """One training example with a binary label and its source."""

    title: str
    category: str
    keyphrase: str
    label: str
    provenance: str

    def __post_init__(self) -> None:
        if self.label not in (LABEL_RELEVANT, LABEL_IRRELEVANT):
            raise InputError(f"label must be relevant/irrelevant, got {self.label!r}")
        if self.provenance not in PROVENANCES:
            raise InputError(f"unknown provenance {self.provenance!r}")

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.title, self.category, self.keyphrase)


class MixStrategy(Enum):
    """The six ways of combining label sources into a training dataset."""

    SEARCH_PM = "search_pm"
    CLICK_P_SEARCH_M = "click_p_search_m"
    CLICK_P_LLM_PM = "click_p_llm_pm"
    CLICK_P_LLM_M = "click_p_llm_m"
    LLM_PM = "llm_pm"
    FT_LLM_PM = "ft_llm_pm"

    @property
    def display(self) -> str:
        return _STRATEGY_DISPLAY[self]

    @classmethod
    def parse(cls, name: str) -> "MixStrategy":
        key = name.strip().lower()
        for member in cls:
            if key in (member.name.lower(), member.value):
                return member
        raise InputError(f"unknown mix strategy {name!r}; expected one of "
                         f"{', '.join(m.name for m in cls)}")


_STRATEGY_DISPLAY = {
    MixStrategy.SEARCH_PM: "Search (+/-)",
    MixStrategy.CLICK_P_SEARCH_M: "Click (+) Search (-)",
    MixStrategy.CLICK_P_LLM_PM: "Click (+) LLM (+/-)",
    MixStrategy.CLICK_P_LLM_M: "Click (+) LLM (-)",
    MixStrategy.LLM_PM: "LLM (+/-)",
    MixStrategy.FT_LLM_PM: "fine-tuned LLM (+/-)",
}

# Strategies that consume judge verdicts, and the judge kinds each accepts.
# The simulated judge stands in for either real judge in closed-loop runs.
_STRATEGY_JUDGE_KINDS = {
    MixStrategy.CLICK_P_LLM_PM: {"general", "simulated"},
    MixStrategy.CLICK_P_LLM_M: {"general", "simulated"},
    MixStrategy.LLM_PM: {"general", "simulated"},
    MixStrategy.FT_LLM_PM: {"finetuned", "simulated"},
}


def filter_clicks(records: Iterable[ClickRecord]) -> list[ClickRecord]:
    """Keep records with >= 30 impressions, >= 1 click, and CTR >= 0.1.

    This is the positive-signal filter; everything below the thresholds is
    treated as engagement noise, not as a negative.
    """
    return [
        r
        for r in records
        if r.impressions >= MIN_IMPRESSIONS
        and r.clicks >= MIN_CLICKS
        and r.clicks / r.impressions >= MIN_CTR
    ]


def binarize_human(j: HumanJudgment) -> Optional[str]:
    """Binarize a triple-graded judgment, or None when annotators disagree.

    Only unanimous grades survive; excellent/good map to relevant and
    fair/bad map to irrelevant.
    """
    first = j.grades[0]
    if any(g != first for g in j.grades[1:]):
        return None
    return LABEL_RELEVANT if first in RELEVANT_GRADES else LABEL_IRRELEVANT


def _check_judgments(strategy: MixStrategy, judgments: Sequence[JudgeVerdict]) -> None:
    allowed = _STRATEGY_JUDGE_KINDS[strategy]
    kinds = {j.judge_kind for j in judgments}
    if len(kinds) > 1:
        raise InputError(f"mixed judge kinds {sorted(kinds)} in one dataset")
    if kinds and not kinds <= allowed:
        raise InputError(
            f"strategy {strategy.name} expects judge kind in {sorted(allowed)}, "
            f"got {kinds.pop()!r}"
        )


def mix(
    strategy: MixStrategy,
    clicks: Sequence[ClickRecord] = (),
    search: Sequence[SearchRelevanceRecord] = (),
    judgments: Sequence[JudgeVerdict] = (),
) -> list[LabeledExample]:
    """Materialize one training dataset under a mixing strategy.

    `clicks` must already have passed filter_clicks. Conflicts on the same
    (title, category, keyphrase) triple resolve in favor of click-derived
    positives, then any positive; exactly one example per triple survives.
    Output is sorted by triple for deterministic downstream training.

    Raises DatasetError when the result is empty or single-class.
    """
    # candidates per triple: (label, provenance, is_click_positive)
    candidates: dict[tuple[str, str, str], list[tuple[str, str, bool]]] = {}

    def add(title: str, category: str, keyphrase: str, label: str, provenance: str,
            click_pos: bool = False) -> None:
        key = (title, category, keyphrase)
        candidates.setdefault(key, []).append((label, provenance, click_pos))

    def add_clicks() -> None:
        for r in clicks:
            add(r.title, r.category, r.keyphrase, LABEL_RELEVANT, "click", True)

    def add_search(labels: tuple[str, ...]) -> None:
        for r in search:
            if r.verdict in labels:
                add(r.title, r.category, r.keyphrase, r.verdict, "search")

    def add_judgments(yes_as_positive: bool) -> None:
        _check_judgments(strategy, judgments)
        for j in judgments:
            if j.verdict == "yes":
                if yes_as_positive:
                    add(j.title, j.category, j.keyphrase, LABEL_RELEVANT, "llm")
            else:
                add(j.title, j.category, j.keyphrase, LABEL_IRRELEVANT, "llm")

    if strategy is MixStrategy.SEARCH_PM:
        add_search((LABEL_RELEVANT, LABEL_IRRELEVANT))
    elif strategy is MixStrategy.CLICK_P_SEARCH_M:
        add_clicks()
        add_search((LABEL_IRRELEVANT,))
    elif strategy is MixStrategy.CLICK_P_LLM_PM:
        add_clicks()
        add_judgments(yes_as_positive=True)
    elif strategy is MixStrategy.CLICK_P_LLM_M:
        add_clicks()
        add_judgments(yes_as_positive=False)
    elif strategy in (MixStrategy.LLM_PM, MixStrategy.FT_LLM_PM):
        add_judgments(yes_as_positive=True)
    else:  # pragma: no cover - enum is closed
        raise InputError(f"unhandled strategy {strategy!r}")

    _POSITIVE_PRIORITY = {"click": 0, "llm": 1, "search": 2, "human": 3}
    examples: list[LabeledExample] = []
    for key in sorted(candidates):
        title, category, keyphrase = key
        cands = candidates[key]
        click_positive = any(cp for _, _, cp in cands)
        positives = [(lbl, prov) for lbl, prov, _ in cands if lbl == LABEL_RELEVANT]
        if click_positive or positives:
            provenance = "click" if click_positive else min(
                positives, key=lambda lp: _POSITIVE_PRIORITY[lp[1]]
            )[1]
            label = LABEL_RELEVANT
        else:
            label = LABEL_IRRELEVANT
            provenance = cands[0][1]
        examples.append(LabeledExample(title, category, keyphrase, label, provenance))

    labels_seen = {e.label for e in examples}
    if not examples:
        raise DatasetError(f"strategy {strategy.name} produced an empty dataset")
    if len(labels_seen) < 2:
        raise DatasetError(
            f"strategy {strategy.name} produced a single-class dataset "
            f"({labels_seen.pop()} only); it cannot train a classifier"
        )
    return examples
