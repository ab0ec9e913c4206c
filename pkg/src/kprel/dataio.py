"""JSONL and CSV readers/writers for the pipeline's file interfaces.

All JSONL files carry one record per line with lower_snake_case field
names matching the domain types. CSV is accepted for click records only,
with a header row.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Iterable, Iterator, TypeVar

from .errors import InputError
from .evalkit import Recommendation, SearchOracle
from .labels import (
    ClickRecord,
    HumanJudgment,
    JudgeVerdict,
    LabeledExample,
    SearchRelevanceRecord,
)

T = TypeVar("T")


def _read_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise InputError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, doc


def _build(path: Path, lineno: int, factory: Callable[..., T], doc: dict) -> T:
    try:
        return factory(**doc)
    except (InputError, TypeError) as exc:
        raise InputError(f"{path}:{lineno}: {exc}") from exc


def write_jsonl(records: Iterable, path: Path) -> int:
    """Write dataclass records as JSONL; returns the record count."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(asdict(record), sort_keys=True) + "\n")
            count += 1
    return count


def _click_from_doc(doc: dict) -> dict:
    return {
        "item_id": str(doc["item_id"]),
        "keyphrase": str(doc["keyphrase"]),
        "category": str(doc.get("category", "")),
        "title": str(doc["title"]),
        "impressions": int(doc["impressions"]),
        "clicks": int(doc["clicks"]),
        "purchases": int(doc["purchases"]),
        "gmb": float(doc["gmb"]),
    }


def read_click_records(path: Path) -> list[ClickRecord]:
    """Read click records from JSONL, or CSV when the suffix is .csv."""
    path = Path(path)
    records: list[ClickRecord] = []
    if path.suffix.lower() == ".csv":
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                try:
                    records.append(ClickRecord(**_click_from_doc(row)))
                except (InputError, KeyError, ValueError) as exc:
                    raise InputError(f"{path}:{lineno}: {exc}") from exc
        return records
    for lineno, doc in _read_jsonl(path):
        try:
            records.append(ClickRecord(**_click_from_doc(doc)))
        except (InputError, KeyError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
    return records


def read_human_judgments(path: Path) -> list[HumanJudgment]:
    out = []
    for lineno, doc in _read_jsonl(Path(path)):
        grades = doc.get("grades")
        if not isinstance(grades, list):
            raise InputError(f"{path}:{lineno}: grades must be a list of 3 grades")
        doc = dict(doc, grades=tuple(grades))
        out.append(_build(Path(path), lineno, HumanJudgment, doc))
    return out


def read_search_records(path: Path) -> list[SearchRelevanceRecord]:
    return [
        _build(Path(path), lineno, SearchRelevanceRecord, doc)
        for lineno, doc in _read_jsonl(Path(path))
    ]


def read_judge_verdicts(path: Path) -> list[JudgeVerdict]:
    return [
        _build(Path(path), lineno, JudgeVerdict, doc)
        for lineno, doc in _read_jsonl(Path(path))
    ]


def read_labeled_examples(path: Path) -> list[LabeledExample]:
    return [
        _build(Path(path), lineno, LabeledExample, doc)
        for lineno, doc in _read_jsonl(Path(path))
    ]


def read_recommendations(path: Path) -> list[Recommendation]:
    return [
        _build(Path(path), lineno, Recommendation, doc)
        for lineno, doc in _read_jsonl(Path(path))
    ]


def write_ground_truth(pairs: Iterable[tuple[str, str, bool]], path: Path) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for item_id, keyphrase, relevant in pairs:
            fh.write(
                json.dumps(
                    {"item_id": item_id, "keyphrase": keyphrase, "relevant": bool(relevant)},
                    sort_keys=True,
                )
                + "\n"
            )
            count += 1
    return count


def read_ground_truth(path: Path) -> dict[tuple[str, str], bool]:
    truth = {}
    for lineno, doc in _read_jsonl(Path(path)):
        try:
            truth[(str(doc["item_id"]), str(doc["keyphrase"]))] = bool(doc["relevant"])
        except KeyError as exc:
            raise InputError(f"{path}:{lineno}: missing field {exc}") from exc
    return truth


def write_search_verdicts(pairs: Iterable[tuple[str, str, bool]], path: Path) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for item_id, keyphrase, passed in pairs:
            fh.write(
                json.dumps(
                    {"item_id": item_id, "keyphrase": keyphrase, "pass": bool(passed)},
                    sort_keys=True,
                )
                + "\n"
            )
            count += 1
    return count


def load_search_oracle(path: Path) -> SearchOracle:
    """Build a (item_id, keyphrase) -> pass/fail callable from a verdict file.

    Pairs absent from the file fail closed.
    """
    verdicts = {}
    for lineno, doc in _read_jsonl(Path(path)):
        try:
            verdicts[(str(doc["item_id"]), str(doc["keyphrase"]))] = bool(doc["pass"])
        except KeyError as exc:
            raise InputError(f"{path}:{lineno}: missing field {exc}") from exc

    def oracle(item_id: str, keyphrase: str) -> bool:
        return verdicts.get((item_id, keyphrase), False)

    return oracle
