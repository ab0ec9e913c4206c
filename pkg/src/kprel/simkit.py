"""Synthetic tri-system marketplace: hidden ground-truth relevance, noisy
search/seller filters, and biased click-log generation.

Ground truth is attribute containment: a keyphrase is relevant to an item
exactly when the keyphrase's attribute set is a subset of the item's.
Titles mix attribute tokens with filler tokens so token-overlap baselines
are informative but imperfect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import SimConfigError
from .evalkit import Recommendation
from .labels import ClickRecord, SearchRelevanceRecord
from .scorer import RelevanceModel, score_features
from .text import featurize_pairs

# Child-stream tags keep auction and judge draws independent of the
# world-generation stream (and of each other).
_AUCTION_STREAM = 101
_JUDGE_STREAM = 202

# Attribute-token frequency skew. Steep enough that popular attribute pairs
# recur across items, keeping conjunctive keyphrases broadly relevant.
_ATTR_SKEW = 1.3


@dataclass(frozen=True)
class SimConfig:
    n_items: int = 200
    n_keyphrases: int = 300
    vocab_size: int = 500
    attrs_per_item: int = 6
    attrs_per_keyphrase: int = 2
    search_fpr: float = 0.10
    search_fnr: float = 0.15
    seller_error_rate: float = 0.05
    base_ctr: float = 0.3
    irrelevant_ctr: float = 0.03
    cvr: float = 0.2
    popularity_skew: float = 1.5
    impressions_per_auction: int = 200
    seed: int = 7

    def __post_init__(self) -> None:
        for name in ("n_items", "n_keyphrases", "vocab_size", "attrs_per_item",
                     "attrs_per_keyphrase", "impressions_per_auction"):
            if getattr(self, name) < 1:
                raise SimConfigError(f"{name} must be a positive integer")
        for name in ("search_fpr", "search_fnr", "seller_error_rate"):
            rate = getattr(self, name)
            if not 0 <= rate < 0.5:
                raise SimConfigError(f"{name} must lie in [0, 0.5), got {rate}")
        if not 0 < self.base_ctr <= 1:
            raise SimConfigError(f"base_ctr must lie in (0, 1], got {self.base_ctr}")
        if not 0 <= self.irrelevant_ctr < self.base_ctr:
            raise SimConfigError(
                f"irrelevant_ctr must lie in [0, base_ctr), got {self.irrelevant_ctr}"
            )
        if not 0 <= self.cvr <= 1:
            raise SimConfigError(f"cvr must lie in [0, 1], got {self.cvr}")
        if self.popularity_skew <= 0:
            raise SimConfigError("popularity_skew must be positive")
        if self.vocab_size < self.attrs_per_item:
            raise SimConfigError("vocab_size must be at least attrs_per_item")
        if self.attrs_per_keyphrase > self.attrs_per_item:
            raise SimConfigError(
                "attrs_per_keyphrase exceeds attrs_per_item; no keyphrase "
                "could ever be relevant"
            )


@dataclass(frozen=True)
class SimItem:
    item_id: str
    attrs: frozenset[str]
    title: str
    category: str
    popularity: float
    price: float


@dataclass(frozen=True)
class SimKeyphrase:
    text: str
    attrs: frozenset[str]


@dataclass
class SimWorld:
    """Immutable materialized marketplace; safe for concurrent queries."""

    config: SimConfig
    items: list[SimItem]
    keyphrases: list[SimKeyphrase]
    relevant: np.ndarray       # bool (n_items, n_keyphrases), hidden ground truth
    search_pass: np.ndarray    # bool, noise fixed per pair at generation
    seller_accept: np.ndarray  # bool, independent fixed noise
    _item_index: dict[str, int] = field(repr=False, default_factory=dict)
    _kp_index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        self._item_index = {it.item_id: i for i, it in enumerate(self.items)}
        self._kp_index = {kp.text: j for j, kp in enumerate(self.keyphrases)}

    def pair_indices(self, item_id: str, keyphrase: str) -> tuple[int, int]:
        try:
            return self._item_index[item_id], self._kp_index[keyphrase]
        except KeyError as exc:
            raise KeyError(f"unknown pair ({item_id!r}, {keyphrase!r})") from exc

    def ground_truth(self, item_id: str, keyphrase: str) -> bool:
        i, j = self.pair_indices(item_id, keyphrase)
        return bool(self.relevant[i, j])

    def recommendation_pool(self) -> list[Recommendation]:
        """Every item-keyphrase pair, item-major order."""
        return [
            Recommendation(it.item_id, it.category, it.title, kp.text)
            for it in self.items
            for kp in self.keyphrases
        ]

    def search_oracle(self, item_id: str, keyphrase: str) -> bool:
        i, j = self.pair_indices(item_id, keyphrase)
        return bool(self.search_pass[i, j])


def generate_world(config: SimConfig) -> SimWorld:
    """Materialize a world deterministically from the config's seed."""
    rng = np.random.default_rng(config.seed)
    vocab = [f"w{i:04d}" for i in range(config.vocab_size)]

    # attribute tokens follow a Zipf-like frequency, so popular attributes
    # recur across items and short keyphrases can be widely relevant
    attr_weights = np.arange(1, config.vocab_size + 1, dtype=np.float64) ** -_ATTR_SKEW
    attr_weights /= attr_weights.sum()

    items: list[SimItem] = []
    ranks = rng.permutation(config.n_items)
    for i in range(config.n_items):
        attr_ids = rng.choice(
            config.vocab_size, size=config.attrs_per_item, replace=False, p=attr_weights
        )
        # filler counts vary, so token-overlap scores feel title length
        n_fillers = int(rng.integers(config.attrs_per_item // 2,
                                     2 * config.attrs_per_item + 1))
        filler_ids = rng.choice(config.vocab_size, size=n_fillers, replace=True)
        title_tokens = [vocab[t] for t in attr_ids] + [vocab[t] for t in filler_ids]
        order = rng.permutation(len(title_tokens))
        attrs = frozenset(vocab[t] for t in attr_ids)
        items.append(
            SimItem(
                item_id=f"item{i:05d}",
                attrs=attrs,
                title=" ".join(title_tokens[k] for k in order),
                category=min(attrs),
                popularity=float((int(ranks[i]) + 1) ** -config.popularity_skew),
                price=round(float(rng.uniform(5.0, 500.0)), 2),
            )
        )

    # Half the keyphrases copy attributes from some item (relevant pairs are
    # guaranteed to exist); the rest are uniform draws (mostly irrelevant).
    token_pos = {tok: i for i, tok in enumerate(vocab)}
    keyphrases: list[SimKeyphrase] = []
    seen: set[str] = set()
    n_grounded = config.n_keyphrases // 2
    attempts = 0
    while len(keyphrases) < config.n_keyphrases:
        attempts += 1
        if attempts > 200 * config.n_keyphrases:
            raise SimConfigError(
                "could not generate enough distinct keyphrases; "
                "increase vocab_size or lower n_keyphrases"
            )
        if len(keyphrases) < n_grounded:
            source = items[int(rng.integers(config.n_items))]
            pool = sorted(source.attrs)
            # buyers query popular attributes, so bias the pick the same way
            pool_w = np.array([attr_weights[token_pos[tok]] for tok in pool])
            pool_w /= pool_w.sum()
            picked = rng.choice(
                len(pool), size=config.attrs_per_keyphrase, replace=False, p=pool_w
            )
            tokens = [pool[k] for k in picked]
        else:
            ids = rng.choice(config.vocab_size, size=config.attrs_per_keyphrase, replace=False)
            tokens = [vocab[t] for t in ids]
        text = " ".join(tokens[k] for k in rng.permutation(len(tokens)))
        if text in seen:
            continue
        seen.add(text)
        keyphrases.append(SimKeyphrase(text=text, attrs=frozenset(tokens)))

    token_id = {tok: i for i, tok in enumerate(vocab)}
    item_mat = np.zeros((config.n_items, config.vocab_size), dtype=bool)
    for i, it in enumerate(items):
        for tok in it.attrs:
            item_mat[i, token_id[tok]] = True
    kp_mat = np.zeros((config.n_keyphrases, config.vocab_size), dtype=bool)
    for j, kp in enumerate(keyphrases):
        for tok in kp.attrs:
            kp_mat[j, token_id[tok]] = True
    # kp subset of item: no keyphrase attribute missing from the item
    missing = (~item_mat).astype(np.int64) @ kp_mat.T.astype(np.int64)
    relevant = missing == 0

    shape = (config.n_items, config.n_keyphrases)
    search_noise = rng.random(shape)
    search_pass = np.where(relevant, search_noise >= config.search_fnr,
                           search_noise < config.search_fpr)
    seller_flip = rng.random(shape) < config.seller_error_rate
    seller_accept = relevant ^ seller_flip

    return SimWorld(
        config=config,
        items=items,
        keyphrases=keyphrases,
        relevant=relevant,
        search_pass=search_pass,
        seller_accept=seller_accept,
    )


def search_filter(world: SimWorld, item_id: str, keyphrase: str) -> bool:
    """Search's relevance verdict for a pair; stable across calls."""
    i, j = world.pair_indices(item_id, keyphrase)
    return bool(world.search_pass[i, j])


def seller_curation(world: SimWorld, item_id: str, keyphrase: str) -> bool:
    """Seller's accept/reject for a pair; stable across calls."""
    i, j = world.pair_indices(item_id, keyphrase)
    return bool(world.seller_accept[i, j])


def advertising_mask(
    world: SimWorld, advertising: Optional[tuple[RelevanceModel, float]]
) -> np.ndarray:
    """Pass/fail of the advertising relevance filter over the whole pool."""
    shape = (world.config.n_items, world.config.n_keyphrases)
    if advertising is None:
        return np.ones(shape, dtype=bool)
    model, threshold = advertising
    pool = world.recommendation_pool()
    features = featurize_pairs((r.keyphrase, r.category, r.title) for r in pool)
    scores = score_features(model, features).reshape(shape)
    return scores >= threshold


def run_auctions(
    world: SimWorld, advertising: Optional[tuple[RelevanceModel, float]] = None
) -> list[ClickRecord]:
    """Run one auction round and return the engagement log.

    A pair enters its auction only if it passes the advertising filter (or
    pass-all), seller curation, and the search filter; pairs that never
    enter produce no record at all. Click randomness is drawn for every
    pool pair in fixed order, so a pair's outcome does not depend on which
    filters are active.
    """
    cfg = world.config
    rng = np.random.default_rng([_AUCTION_STREAM, cfg.seed])

    pop = np.array([it.popularity for it in world.items])
    p_click = np.where(world.relevant, cfg.base_ctr, cfg.irrelevant_ctr) * pop[:, None]
    clicks = rng.binomial(cfg.impressions_per_auction, p_click)
    purchases = rng.binomial(clicks, cfg.cvr)

    enter = world.seller_accept & world.search_pass & advertising_mask(world, advertising)

    records: list[ClickRecord] = []
    for i, j in np.argwhere(enter):
        item = world.items[i]
        kp = world.keyphrases[j]
        n_purchases = int(purchases[i, j])
        records.append(
            ClickRecord(
                item_id=item.item_id,
                keyphrase=kp.text,
                category=item.category,
                title=item.title,
                impressions=cfg.impressions_per_auction,
                clicks=int(clicks[i, j]),
                purchases=n_purchases,
                gmb=n_purchases * item.price,
            )
        )
    return records


def search_relevance_records(world: SimWorld) -> list[SearchRelevanceRecord]:
    """Search's fixed verdicts over the whole pool, as training records."""
    return [
        SearchRelevanceRecord(
            item_id=it.item_id,
            keyphrase=kp.text,
            title=it.title,
            category=it.category,
            verdict="relevant" if world.search_pass[i, j] else "irrelevant",
        )
        for i, it in enumerate(world.items)
        for j, kp in enumerate(world.keyphrases)
    ]
