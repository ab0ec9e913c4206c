from __future__ import annotations

import numpy as np
import pytest

from kprel.errors import SimConfigError
from kprel.labels import filter_clicks
from kprel.scorer import jaccard_baseline
from kprel.simkit import (
    SimConfig,
    generate_world,
    run_auctions,
    search_filter,
    search_relevance_records,
    seller_curation,
)

SMALL = SimConfig(n_items=40, n_keyphrases=60, vocab_size=120, seed=3)


class TestSimConfig:
    def test_defaults_valid(self):
        SimConfig()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_items": 0},
            {"search_fpr": 0.5},
            {"search_fnr": -0.1},
            {"seller_error_rate": 0.7},
            {"base_ctr": 0.0},
            {"irrelevant_ctr": 0.4, "base_ctr": 0.3},
            {"cvr": 1.5},
            {"popularity_skew": 0.0},
            {"vocab_size": 4, "attrs_per_item": 6},
            {"attrs_per_keyphrase": 7, "attrs_per_item": 6},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(SimConfigError):
            SimConfig(**kwargs)


class TestGenerateWorld:
    def test_deterministic(self):
        w1 = generate_world(SMALL)
        w2 = generate_world(SMALL)
        assert w1.items == w2.items
        assert w1.keyphrases == w2.keyphrases
        assert np.array_equal(w1.relevant, w2.relevant)
        assert np.array_equal(w1.search_pass, w2.search_pass)
        assert np.array_equal(w1.seller_accept, w2.seller_accept)

    def test_ground_truth_is_attribute_subset(self):
        world = generate_world(SMALL)
        for i, item in enumerate(world.items):
            for j, kp in enumerate(world.keyphrases):
                assert world.relevant[i, j] == (kp.attrs <= item.attrs)

    def test_keyphrase_copied_from_item_is_relevant(self):
        config = SimConfig(n_items=10, n_keyphrases=20, vocab_size=60,
                           attrs_per_item=3, attrs_per_keyphrase=3, seed=5)
        world = generate_world(config)
        # grounded keyphrases with attrs_per_keyphrase == attrs_per_item copy
        # a full attribute set, so each must be relevant to its source item
        assert world.relevant.any()

    def test_relevant_and_irrelevant_pairs_both_exist(self):
        world = generate_world(SMALL)
        assert world.relevant.any()
        assert (~world.relevant).any()

    def test_titles_contain_attribute_tokens(self):
        world = generate_world(SMALL)
        for item in world.items:
            title_tokens = set(item.title.split())
            assert item.attrs <= title_tokens

    def test_keyphrases_distinct(self):
        world = generate_world(SMALL)
        texts = [kp.text for kp in world.keyphrases]
        assert len(texts) == len(set(texts))

    def test_popularity_in_unit_interval(self):
        world = generate_world(SMALL)
        pops = [it.popularity for it in world.items]
        assert max(pops) == 1.0
        assert min(pops) > 0.0


class TestFilters:
    def test_zero_noise_filters_equal_ground_truth(self):
        config = SimConfig(n_items=20, n_keyphrases=30, search_fpr=0.0, search_fnr=0.0,
                           seller_error_rate=0.0, seed=9)
        world = generate_world(config)
        for i, item in enumerate(world.items):
            for j, kp in enumerate(world.keyphrases):
                truth = bool(world.relevant[i, j])
                assert search_filter(world, item.item_id, kp.text) == truth
                assert seller_curation(world, item.item_id, kp.text) == truth

    def test_verdicts_stable_across_calls(self):
        world = generate_world(SMALL)
        item = world.items[0].item_id
        kp = world.keyphrases[0].text
        assert all(
            search_filter(world, item, kp) == search_filter(world, item, kp)
            and seller_curation(world, item, kp) == seller_curation(world, item, kp)
            for _ in range(5)
        )

    def test_search_fnr_within_binomial_interval(self):
        from scipy import stats

        config = SimConfig(n_items=60, n_keyphrases=80, vocab_size=150,
                           search_fnr=0.2, seed=21)
        world = generate_world(config)
        relevant = world.relevant
        n_rel = int(relevant.sum())
        assert n_rel >= 200
        failed = int((relevant & ~world.search_pass).sum())
        lo = stats.binom.ppf(0.005, n_rel, config.search_fnr)
        hi = stats.binom.ppf(0.995, n_rel, config.search_fnr)
        assert lo <= failed <= hi

    def test_seller_and_search_errors_uncorrelated(self):
        config = SimConfig(n_items=80, n_keyphrases=120, vocab_size=200,
                           seller_error_rate=0.2, search_fpr=0.2, search_fnr=0.2, seed=13)
        world = generate_world(config)
        search_err = (world.search_pass != world.relevant).ravel().astype(float)
        seller_err = (world.seller_accept != world.relevant).ravel().astype(float)
        corr = np.corrcoef(search_err, seller_err)[0, 1]
        assert abs(corr) < 0.03


class TestRunAuctions:
    def test_every_logged_pair_passed_search(self):
        world = generate_world(SMALL)
        for record in run_auctions(world):
            assert search_filter(world, record.item_id, record.keyphrase)
            assert seller_curation(world, record.item_id, record.keyphrase)

    def test_zero_irrelevant_ctr_zero_noise_means_clicked_pairs_relevant(self):
        config = SimConfig(n_items=30, n_keyphrases=40, irrelevant_ctr=0.0,
                           search_fpr=0.0, search_fnr=0.0, seller_error_rate=0.0, seed=17)
        world = generate_world(config)
        for record in run_auctions(world):
            if record.clicks > 0:
                assert world.ground_truth(record.item_id, record.keyphrase)

    def test_deterministic_logs(self):
        world = generate_world(SMALL)
        assert run_auctions(world) == run_auctions(world)

    def test_click_outcomes_stable_across_filters(self):
        # the same pair gets the same draw whether or not a model filters it
        world = generate_world(SMALL)
        unfiltered = {(r.item_id, r.keyphrase): r for r in run_auctions(world)}
        model = jaccard_baseline()
        filtered = run_auctions(world, advertising=(model, 0.5))
        for record in filtered:
            assert unfiltered[(record.item_id, record.keyphrase)] == record

    def test_advertising_filter_never_adds_pairs(self):
        world = generate_world(SMALL)
        base_keys = {(r.item_id, r.keyphrase) for r in run_auctions(world)}
        model = jaccard_baseline()
        for threshold in (0.3, 0.5, 0.6):
            keys = {(r.item_id, r.keyphrase)
                    for r in run_auctions(world, advertising=(model, threshold))}
            assert keys <= base_keys

    def test_record_fields_consistent(self):
        world = generate_world(SMALL)
        for record in run_auctions(world):
            assert record.impressions == SMALL.impressions_per_auction
            assert 0 <= record.clicks <= record.impressions
            assert 0 <= record.purchases <= record.clicks
            price = next(it.price for it in world.items if it.item_id == record.item_id)
            assert record.gmb == record.purchases * price

    def test_relevant_pair_missing_from_log_exists(self):
        world = generate_world(SimConfig())  # defaults: seed 7, skew 1.5, fnr 0.15
        logged = {(r.item_id, r.keyphrase) for r in run_auctions(world)}
        missing = [
            (it.item_id, kp.text)
            for i, it in enumerate(world.items)
            for j, kp in enumerate(world.keyphrases)
            if world.relevant[i, j] and (it.item_id, kp.text) not in logged
        ]
        assert missing

    def test_click_filter_composes(self):
        world = generate_world(SMALL)
        log = run_auctions(world)
        positives = filter_clicks(log)
        assert all(r.clicks >= 1 and r.impressions >= 30 for r in positives)


class TestSearchRelevanceRecords:
    def test_covers_pool_and_matches_filter(self):
        world = generate_world(SimConfig(n_items=10, n_keyphrases=12, seed=2))
        records = search_relevance_records(world)
        assert len(records) == 120
        for r in records[:30]:
            assert (r.verdict == "relevant") == search_filter(world, r.item_id, r.keyphrase)
