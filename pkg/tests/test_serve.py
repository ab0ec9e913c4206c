from __future__ import annotations

import json

import numpy as np
import pytest
import requests

from kprel.errors import InputError, SnapshotError
from kprel.evalkit import Recommendation
from kprel.scorer import jaccard_baseline, save_model, score, train
from kprel.serve import (
    RelevanceService,
    Snapshot,
    SnapshotHeader,
    batch_infer,
    diff_merge,
    read_snapshot,
    write_snapshot,
)

T0 = "2024-01-01T00:00:00+00:00"
T1 = "2024-01-02T00:00:00+00:00"


def make_pairs(n: int, prefix: str = "item") -> list[Recommendation]:
    rng = np.random.default_rng(99)
    vocab = [f"tok{i}" for i in range(40)]
    pairs = []
    for i in range(n):
        title = " ".join(rng.choice(vocab, size=6, replace=False))
        kp = " ".join(rng.choice(vocab, size=2, replace=False))
        pairs.append(Recommendation(f"{prefix}{i:04d}", "cat", title, kp))
    return pairs


class TestBatchInfer:
    def test_empty_input(self):
        snapshot, rejects = batch_infer(jaccard_baseline(), 0.5, [], created_at=T0)
        assert snapshot.header.record_count == 0
        assert snapshot.records == ()
        assert rejects == []

    def test_partition_counts_agree(self):
        model = jaccard_baseline()
        pairs = make_pairs(123)
        s1, _ = batch_infer(model, 0.5, pairs, partitions=1, created_at=T0)
        s8, _ = batch_infer(model, 0.5, pairs, partitions=8, created_at=T0)
        assert s1 == s8

    def test_matches_in_process_score(self):
        model = jaccard_baseline()
        pairs = make_pairs(50)
        snapshot, _ = batch_infer(model, 0.5, pairs, partitions=4, created_at=T0)
        by_key = {(r.item_id, r.keyphrase): r for r in snapshot.records}
        for p in pairs:
            expected = score(model, p.keyphrase, p.category, p.title)
            assert by_key[(p.item_id, p.keyphrase)].score == expected

    def test_sorted_and_unique(self):
        snapshot, _ = batch_infer(jaccard_baseline(), 0.5, make_pairs(60), created_at=T0)
        keys = [(r.item_id, r.keyphrase) for r in snapshot.records]
        assert keys == sorted(keys)
        assert len(set(keys)) == len(keys)

    def test_unfeaturizable_rows_rejected_not_dropped(self):
        pairs = make_pairs(5) + [Recommendation("bad", "cat", "!!!", "kp tokens")]
        snapshot, rejects = batch_infer(jaccard_baseline(), 0.5, pairs, created_at=T0)
        assert snapshot.header.record_count == 5
        assert len(rejects) == 1
        assert rejects[0].item_id == "bad"
        assert "no tokens" in rejects[0].reason

    def test_duplicate_keys_first_wins(self):
        pairs = make_pairs(3)
        dup = Recommendation(pairs[0].item_id, "cat", "different title tokens",
                             pairs[0].keyphrase)
        snapshot, rejects = batch_infer(jaccard_baseline(), 0.5, pairs + [dup],
                                        partitions=2, created_at=T0)
        assert snapshot.header.record_count == 3
        assert len(rejects) == 1
        assert rejects[0].reason == "duplicate key"
        kept = next(r for r in snapshot.records
                    if (r.item_id, r.keyphrase) == (pairs[0].item_id, pairs[0].keyphrase))
        assert kept.score == score(jaccard_baseline(), pairs[0].keyphrase,
                                   pairs[0].category, pairs[0].title)

    def test_relevant_flag_consistent(self):
        snapshot, _ = batch_infer(jaccard_baseline(), 0.55, make_pairs(40), created_at=T0)
        for r in snapshot.records:
            assert r.relevant == (r.score >= 0.55)


class TestSnapshotIO:
    def test_round_trip(self, tmp_path):
        snapshot, _ = batch_infer(jaccard_baseline(), 0.5, make_pairs(20), created_at=T0)
        path = tmp_path / "snap.jsonl"
        write_snapshot(snapshot, path)
        assert read_snapshot(path) == snapshot

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("")
        with pytest.raises(SnapshotError):
            read_snapshot(path)

    def test_count_mismatch_rejected(self, tmp_path):
        snapshot, _ = batch_infer(jaccard_baseline(), 0.5, make_pairs(3), created_at=T0)
        path = tmp_path / "snap.jsonl"
        write_snapshot(snapshot, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(SnapshotError):
            read_snapshot(path)

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"format": "nope/9", "model_version": "x",
                                    "threshold": 0.5, "created_at": T0,
                                    "record_count": 0}) + "\n")
        with pytest.raises(SnapshotError):
            read_snapshot(path)


class TestDiffMerge:
    def snapshots(self):
        model = jaccard_baseline()
        full_pairs = make_pairs(30, prefix="a")
        diff_pairs = full_pairs[10:15] + make_pairs(8, prefix="b")
        # re-title the overlapping keys so the diff genuinely revises them
        revised = [
            Recommendation(p.item_id, p.category, p.title + " extra", p.keyphrase)
            for p in diff_pairs[:5]
        ] + diff_pairs[5:]
        full, _ = batch_infer(model, 0.5, full_pairs, created_at=T0)
        diff, _ = batch_infer(model, 0.5, revised, created_at=T1)
        return model, full_pairs, revised, full, diff

    def test_empty_diff_is_identity_on_records(self):
        model, _, _, full, _ = self.snapshots()
        empty, _ = batch_infer(model, 0.5, [], created_at=T1)
        merged = diff_merge(full, empty)
        assert merged.records == full.records

    def test_collision_diff_wins(self):
        model, full_pairs, revised, full, diff = self.snapshots()
        merged = diff_merge(full, diff)
        assert merged.header.record_count == 30 + 8
        by_key = {(r.item_id, r.keyphrase): r for r in merged.records}
        for p in revised[:5]:
            assert by_key[(p.item_id, p.keyphrase)].score == score(
                model, p.keyphrase, p.category, p.title
            )
            assert by_key[(p.item_id, p.keyphrase)].scored_at == T1

    def test_equals_recompute_from_union(self):
        model, full_pairs, revised, full, diff = self.snapshots()
        merged = diff_merge(full, diff)
        final_rows: dict[tuple[str, str], Recommendation] = {}
        for p in full_pairs:
            final_rows[(p.item_id, p.keyphrase)] = p
        for p in revised:
            final_rows[(p.item_id, p.keyphrase)] = p
        recomputed, _ = batch_infer(model, 0.5, list(final_rows.values()), created_at=T1)
        assert {(r.item_id, r.keyphrase, r.score) for r in merged.records} == {
            (r.item_id, r.keyphrase, r.score) for r in recomputed.records
        }

    def test_idempotent(self):
        _, _, _, full, diff = self.snapshots()
        once = diff_merge(full, diff)
        twice = diff_merge(once, diff)
        assert once == twice

    def test_version_mismatch_rejected_without_flag(self):
        _, _, _, full, diff = self.snapshots()
        upgraded = Snapshot(
            header=SnapshotHeader("other-model", diff.header.threshold,
                                  diff.header.created_at, diff.header.record_count),
            records=diff.records,
        )
        with pytest.raises(SnapshotError):
            diff_merge(full, upgraded)
        merged = diff_merge(full, upgraded, allow_version_change=True)
        assert merged.header.model_version == "other-model"

    def test_threshold_mismatch_rejected(self):
        _, _, _, full, diff = self.snapshots()
        moved = Snapshot(
            header=SnapshotHeader(diff.header.model_version, 0.9,
                                  diff.header.created_at, diff.header.record_count),
            records=diff.records,
        )
        with pytest.raises(SnapshotError):
            diff_merge(full, moved)


@pytest.fixture
def service(tmp_path):
    model = train_toy_model()
    model_path = tmp_path / "model.json"
    model_path.write_bytes(save_model(model))
    svc = RelevanceService(model_path, threshold=0.5).start()
    yield svc, model, model_path
    svc.stop()


def train_toy_model():
    from kprel.labels import LabeledExample

    dataset = [
        LabeledExample("red shoes", "shoes", "red shoes", "relevant", "click"),
        LabeledExample("blue hat", "hats", "blue hat", "relevant", "click"),
        LabeledExample("green sofa", "furniture", "wool mittens", "irrelevant", "llm"),
        LabeledExample("oak table", "furniture", "usb cable", "irrelevant", "llm"),
    ]
    return train(dataset).model


class TestRelevanceService:
    def test_health(self, service):
        svc, model, _ = service
        resp = requests.get(f"{svc.url}/health", timeout=5)
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok", "model_version": model.version}

    def test_score_matches_in_process(self, service):
        svc, model, _ = service
        body = {"item_title": "red shoes size 9", "category": "shoes", "keyphrase": "red shoes"}
        resp = requests.post(f"{svc.url}/score", json=body, timeout=5)
        assert resp.status_code == 200
        doc = resp.json()
        expected = score(model, "red shoes", "shoes", "red shoes size 9")
        assert doc["score"] == expected
        assert doc["relevant"] == (expected >= 0.5)
        assert doc["model_version"] == model.version

    def test_batch_score_order(self, service):
        svc, model, _ = service
        bodies = [
            {"item_title": f"title tok{i}", "category": "c", "keyphrase": f"tok{i}"}
            for i in range(100)
        ]
        resp = requests.post(f"{svc.url}/batch-score", json=bodies, timeout=10)
        assert resp.status_code == 200
        results = resp.json()
        assert len(results) == 100
        for body, result in zip(bodies, results):
            assert result["score"] == score(
                model, body["keyphrase"], body["category"], body["item_title"]
            )

    def test_malformed_request_4xx(self, service):
        svc, _, _ = service
        resp = requests.post(f"{svc.url}/score", data=b"{not json",
                             headers={"Content-Type": "application/json"}, timeout=5)
        assert 400 <= resp.status_code < 500
        assert "error" in resp.json()

        resp = requests.post(f"{svc.url}/score", json={"keyphrase": "kp"}, timeout=5)
        assert resp.status_code == 400
        assert "item_title" in resp.json()["error"]["message"]

    def test_unfeaturizable_is_4xx_with_machine_readable_body(self, service):
        svc, _, _ = service
        resp = requests.post(
            f"{svc.url}/score",
            json={"item_title": "!!!", "category": "", "keyphrase": "kp"},
            timeout=5,
        )
        assert 400 <= resp.status_code < 500
        assert resp.json()["error"]["code"] == "bad_request"

    def test_batch_keeps_per_row_errors_in_order(self, service):
        svc, _, _ = service
        bodies = [
            {"item_title": "good title", "category": "", "keyphrase": "good"},
            {"item_title": "!!!", "category": "", "keyphrase": "bad"},
            {"item_title": "another title", "category": "", "keyphrase": "another"},
        ]
        results = requests.post(f"{svc.url}/batch-score", json=bodies, timeout=5).json()
        assert len(results) == 3
        assert "score" in results[0] and "score" in results[2]
        assert "error" in results[1]

    def test_unknown_path_404(self, service):
        svc, _, _ = service
        assert requests.get(f"{svc.url}/nope", timeout=5).status_code == 404
        assert requests.post(f"{svc.url}/nope", json={}, timeout=5).status_code == 404

    def test_hot_reload_swaps_model(self, service, tmp_path):
        svc, model, model_path = service
        new_model = jaccard_baseline(weight=2.0)
        model_path.write_bytes(save_model(new_model))
        resp = requests.post(f"{svc.url}/reload", json={}, timeout=5)
        assert resp.status_code == 200
        assert resp.json()["model_version"] == new_model.version
        health = requests.get(f"{svc.url}/health", timeout=5).json()
        assert health["model_version"] == new_model.version
        body = {"item_title": "red shoes", "category": "", "keyphrase": "red shoes"}
        doc = requests.post(f"{svc.url}/score", json=body, timeout=5).json()
        assert doc["score"] == score(new_model, "red shoes", "", "red shoes")

    def test_concurrent_requests(self, service):
        from concurrent.futures import ThreadPoolExecutor

        svc, model, _ = service
        body = {"item_title": "red shoes size 9", "category": "shoes",
                "keyphrase": "red shoes"}
        expected = score(model, "red shoes", "shoes", "red shoes size 9")

        def hit(_):
            return requests.post(f"{svc.url}/score", json=body, timeout=5).json()["score"]

        with ThreadPoolExecutor(max_workers=8) as pool:
            scores = list(pool.map(hit, range(64)))
        assert all(s == expected for s in scores)
