from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kprel.errors import InputError, JudgeBackendError
from kprel.judge import (
    HTTPJudgeBackend,
    PromptRequest,
    VerdictCache,
    build_prompt,
    judge_batch,
    parse_verdict,
    simulated_judge,
)
from kprel.simkit import SimConfig, generate_world


class FakeBackend:
    """Scripted in-process backend; answers by keyphrase lookup."""

    def __init__(self, answers: dict[str, str], max_batch_size: int = 100,
                 fail: bool = False):
        self.answers = answers
        self.max_batch_size = max_batch_size
        self.fail = fail
        self.calls: list[list[str]] = []

    def complete(self, prompts):
        self.calls.append(list(prompts))
        if self.fail:
            raise JudgeBackendError("backend down")
        out = []
        for prompt in prompts:
            kp = re.search(r'the keyphrase: "(.*?)", is relevant', prompt).group(1)
            out.append(self.answers.get(kp, "maybe"))
        return out


class TestBuildPrompt:
    def test_matches_golden_fixture(self, golden_dir):
        prompt = build_prompt(PromptRequest(title="iPhone 11 64GB", keyphrase="yellow iphone"))
        golden = (golden_dir / "prompt_fixture.txt").read_text(encoding="utf-8")
        assert prompt == golden

    def test_contains_substituted_values(self):
        prompt = build_prompt(PromptRequest(title="iPhone 11 64GB", keyphrase="yellow iphone"))
        assert 'item with title: "iPhone 11 64GB"' in prompt
        assert 'keyphrase: "yellow iphone"' in prompt

    def test_pure(self):
        req = PromptRequest(title="a b", keyphrase="c")
        assert build_prompt(req) == build_prompt(req)

    def test_quotes_embedded_as_is(self):
        prompt = build_prompt(PromptRequest(title='5" tablet', keyphrase="kp"))
        assert '5" tablet' in prompt
        assert "\\" not in prompt

    def test_empty_fields_rejected(self):
        with pytest.raises(InputError):
            PromptRequest(title="", keyphrase="kp")
        with pytest.raises(InputError):
            PromptRequest(title="t", keyphrase="")

    @given(
        st.text(min_size=1, max_size=40).filter(lambda s: '", is relevant' not in s),
        st.text(min_size=1, max_size=40).filter(lambda s: '", is relevant' not in s),
    )
    def test_round_trip_recovery(self, title, keyphrase):
        prompt = build_prompt(PromptRequest(title=title, keyphrase=keyphrase))
        m = re.search(
            r'Given an item with title: "(.*)", determine whether the keyphrase: '
            r'"(.*)", is relevant for cpc targeting',
            prompt,
            flags=re.DOTALL,
        )
        assert m is not None
        assert m.group(1) == title
        assert m.group(2) == keyphrase


class TestParseVerdict:
    @pytest.mark.parametrize(
        "completion,expected",
        [
            ("Yes", "yes"),
            (" no.", "no"),
            ("YES!!", "yes"),
            ("No, not relevant", "no"),
            ("yes it is", "yes"),
            ("maybe relevant", None),
            ("", None),
            ("   ", None),
            ("yesterday", None),
        ],
    )
    def test_cases(self, completion, expected):
        assert parse_verdict(completion) == expected


class TestJudgeBatch:
    def pairs(self, n: int) -> list[PromptRequest]:
        return [PromptRequest(title=f"title {i}", keyphrase=f"kp {i}", item_id=f"i{i}")
                for i in range(n)]

    def test_all_cached_makes_zero_backend_calls(self):
        pairs = self.pairs(5)
        cache = VerdictCache()
        for p in pairs:
            cache.put(p.title, p.keyphrase, "yes")
        backend = FakeBackend({})
        result = judge_batch(pairs, backend, cache=cache)
        assert backend.calls == []
        assert result.backend_calls == 0
        assert result.cache_hits == 5
        assert len(result.verdicts) == 5

    def test_batching_ceiling_division(self):
        pairs = self.pairs(250)
        backend = FakeBackend({p.keyphrase: "yes" for p in pairs}, max_batch_size=100)
        result = judge_batch(pairs, backend)
        assert result.backend_calls == 3
        assert len(result.verdicts) == 250

    def test_unparseable_retried_once_then_skipped(self):
        pairs = self.pairs(3)
        answers = {p.keyphrase: "yes" for p in pairs}
        answers[pairs[1].keyphrase] = "maybe"
        backend = FakeBackend(answers)
        result = judge_batch(pairs, backend)
        # first round judges all 3; retry round re-asks only the bad one
        assert result.backend_calls == 2
        assert len(backend.calls[1]) == 1
        assert [p.keyphrase for p in result.skipped] == [pairs[1].keyphrase]
        assert len(result.verdicts) == 2

    def test_backend_failure_yields_error_markers(self):
        pairs = self.pairs(4)
        backend = FakeBackend({}, fail=True)
        result = judge_batch(pairs, backend)
        assert len(result.failed) == 4
        assert all("backend down" in reason for _, reason in result.failed)
        assert result.verdicts == []
        assert result.skipped == []

    def test_results_in_input_order(self):
        pairs = self.pairs(30)
        backend = FakeBackend({p.keyphrase: "yes" if i % 2 else "no"
                               for i, p in enumerate(pairs)}, max_batch_size=7)
        result = judge_batch(pairs, backend, max_concurrency=4)
        assert [v.keyphrase for v in result.verdicts] == [p.keyphrase for p in pairs]
        assert [v.item_id for v in result.verdicts] == [p.item_id for p in pairs]

    def test_duplicate_pairs_share_one_judgment(self):
        req = PromptRequest(title="same", keyphrase="kp")
        backend = FakeBackend({"kp": "yes"})
        result = judge_batch([req, req, req], backend)
        assert backend.calls == [[build_prompt(req)]]
        assert len(result.verdicts) == 3

    def test_verdicts_carry_judge_kind(self):
        pairs = self.pairs(1)
        backend = FakeBackend({pairs[0].keyphrase: "no"})
        result = judge_batch(pairs, backend, judge_kind="finetuned")
        assert result.verdicts[0].judge_kind == "finetuned"

    def test_deterministic_with_deterministic_backend(self):
        pairs = self.pairs(20)
        answers = {p.keyphrase: ("yes" if i % 3 else "no") for i, p in enumerate(pairs)}
        r1 = judge_batch(pairs, FakeBackend(answers, max_batch_size=6))
        r2 = judge_batch(pairs, FakeBackend(answers, max_batch_size=6))
        assert r1.verdicts == r2.verdicts


class TestVerdictCache:
    def test_persists_as_append_only_jsonl(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        cache = VerdictCache(path)
        cache.put("t1", "k1", "yes")
        cache.put("t2", "k2", "no")
        cache.put("t1", "k1", "no")  # first write wins; no duplicate line
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(lines) == 2
        reloaded = VerdictCache(path)
        assert reloaded.get("t1", "k1") == "yes"
        assert reloaded.get("t2", "k2") == "no"

    def test_concurrent_puts(self):
        cache = VerdictCache()
        pairs = [(f"t{i}", f"k{i}") for i in range(200)]

        def work(chunk):
            for t, k in chunk:
                cache.put(t, k, "yes")

        threads = [threading.Thread(target=work, args=(pairs[i::4],)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(cache) == 200


class _StubJudgeHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        prompts = json.loads(self.rfile.read(length))
        self.server.seen_auth.append(self.headers.get("Authorization"))
        completions = ["yes" if "odd" not in p else "no" for p in prompts]
        body = json.dumps(completions).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class TestHTTPJudgeBackend:
    @pytest.fixture
    def stub_server(self):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _StubJudgeHandler)
        server.seen_auth = []
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        yield server
        server.shutdown()
        server.server_close()

    def test_round_trip_with_auth(self, stub_server):
        host, port = stub_server.server_address[:2]
        backend = HTTPJudgeBackend(f"http://{host}:{port}/judge", auth_token="sekret")
        pairs = [
            PromptRequest(title="even title", keyphrase="kp1"),
            PromptRequest(title="odd title", keyphrase="kp2"),
        ]
        result = judge_batch(pairs, backend)
        assert [v.verdict for v in result.verdicts] == ["yes", "no"]
        assert stub_server.seen_auth == ["Bearer sekret"]

    def test_unreachable_backend_fails_not_crashes(self):
        backend = HTTPJudgeBackend("http://127.0.0.1:1/judge", timeout=0.2)
        result = judge_batch([PromptRequest(title="t", keyphrase="k")], backend)
        assert len(result.failed) == 1


class TestSimulatedJudge:
    def test_zero_epsilon_equals_ground_truth(self):
        world = generate_world(SimConfig(n_items=20, n_keyphrases=30, seed=3))
        verdicts = simulated_judge(world, 0.0)
        assert len(verdicts) == 20 * 30
        for v in verdicts:
            assert (v.verdict == "yes") == world.ground_truth(v.item_id, v.keyphrase)
            assert v.judge_kind == "simulated"

    def test_flip_count_within_binomial_interval(self):
        from scipy import stats

        config = SimConfig(n_items=25, n_keyphrases=40, seed=7)
        world = generate_world(config)
        verdicts = simulated_judge(world, 0.1)
        flips = sum(
            1 for v in verdicts
            if (v.verdict == "yes") != world.ground_truth(v.item_id, v.keyphrase)
        )
        n = len(verdicts)
        assert n == 1000
        lo = stats.binom.ppf(0.005, n, 0.1)
        hi = stats.binom.ppf(0.995, n, 0.1)
        assert lo <= flips <= hi

    def test_bit_reproducible(self):
        config = SimConfig(n_items=15, n_keyphrases=20, seed=11)
        v1 = simulated_judge(generate_world(config), 0.2)
        v2 = simulated_judge(generate_world(config), 0.2)
        assert v1 == v2

    def test_epsilon_bounds(self):
        world = generate_world(SimConfig(n_items=5, n_keyphrases=5, seed=1))
        with pytest.raises(InputError):
            simulated_judge(world, 0.5)
        with pytest.raises(InputError):
            simulated_judge(world, -0.1)
