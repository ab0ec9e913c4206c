from __future__ import annotations

from pathlib import Path

import pytest

from kprel.labels import ClickRecord

GOLDEN_DIR = Path(__file__).parent / "golden"
FIXTURE_DIR = Path(__file__).parent / "fixtures"


def click(
    item_id: str = "item1",
    keyphrase: str = "red shoes",
    category: str = "shoes",
    title: str = "red shoes size 9",
    impressions: int = 100,
    clicks: int = 20,
    purchases: int = 2,
    gmb: float = 50.0,
) -> ClickRecord:
    return ClickRecord(
        item_id=item_id,
        keyphrase=keyphrase,
        category=category,
        title=title,
        impressions=impressions,
        clicks=clicks,
        purchases=purchases,
        gmb=gmb,
    )


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN_DIR


@pytest.fixture
def fixture_dir() -> Path:
    return FIXTURE_DIR
