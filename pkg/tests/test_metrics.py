import io
import math

import numpy as np
import pytest

from convsparse.metrics import (
    map_at,
    mrr,
    ndcg_at,
    read_qrels,
    read_run,
    recall_at,
    standard_report,
    summarize,
    write_per_query,
    write_report,
    write_run,
)
from oracles import oracle_metrics


def as_run(qid, docs):
    return {qid: [(d, 1.0 / (i + 1)) for i, d in enumerate(docs)]}


class TestExamples:
    def test_ndcg(self):
        run = as_run("q", ["a", "b", "c"])
        qrels = {"q": {"a": 1, "c": 2}}
        want = (1 + 2 / math.log2(4)) / (2 + 1 / math.log2(3))
        assert ndcg_at(run, qrels, 3).mean == pytest.approx(want, rel=1e-12)

    def test_mrr(self):
        run = {**as_run("q1", ["x", "a"]), **as_run("q2", ["a"])}
        qrels = {"q1": {"a": 1}, "q2": {"a": 1}}
        assert mrr(run, qrels).mean == 0.75

    def test_recall_map(self):
        run = as_run("q", ["a", "x", "b", "y"])
        qrels = {"q": {"a": 1, "b": 1, "c": 1}}
        assert recall_at(run, qrels, 3).mean == pytest.approx(2 / 3)
        assert map_at(run, qrels, 4).mean == pytest.approx((1 + 2 / 3) / 3)

    def test_map_two_relevant(self):
        run = as_run("q", ["a", "x", "b"])
        assert map_at(run, {"q": {"a": 1, "b": 1}}, 3).mean == pytest.approx((1 + 2 / 3) / 2)

    def test_perfect_and_empty(self):
        qrels = {"q": {"a": 2, "b": 1}}
        assert ndcg_at(as_run("q", ["a", "b"]), qrels, 3).mean == 1.0
        assert ndcg_at(as_run("q", []), qrels, 3).mean == 0.0

    def test_order_of_ties_respected(self):
        run = {"q": [("x", 1.0), ("a", 1.0)]}
        assert mrr(run, {"q": {"a": 1}}).mean == 0.5


class TestConventions:
    def test_no_relevant_skipped(self):
        run = {**as_run("q1", ["a"]), **as_run("q2", ["a"])}
        res = mrr(run, {"q1": {"a": 1}, "q2": {"a": 0}})
        assert list(res.per_query) == ["q1"]

    def test_missing_from_qrels(self):
        res = mrr(as_run("zz", ["a"]), {"q": {"a": 1}})
        assert res.per_query == {} and res.missing == ["zz"] and math.isnan(res.mean)

    def test_include_missing(self):
        qrels = {"q1": {"a": 1}, "q2": {"b": 1}}
        assert mrr(as_run("q1", ["a"]), qrels).mean == 1.0
        assert mrr(as_run("q1", ["a"]), qrels, include_missing=True).mean == 0.5

    def test_stderr(self):
        mean, se = summarize([1.0, 0.0, 0.5, 0.5])
        assert mean == 0.5
        assert se == pytest.approx(math.sqrt(0.125) / 2, rel=1e-12)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            ndcg_at({}, {}, 0)


class TestAgainstOracle:
    def test_random_runs(self, rng):
        docs = [f"d{i}" for i in range(40)]
        run, qrels = {}, {}
        for q in range(60):
            qid = f"q{q}"
            run[qid] = [(d, 0.0) for d in rng.permutation(docs)[: int(rng.integers(0, 30))]]
            qrels[qid] = {d: int(rng.integers(0, 3)) for d in rng.choice(docs, 8, replace=False)}
        for k in (3, 10, 100):
            ours = {"ndcg": ndcg_at(run, qrels, k), "recall": recall_at(run, qrels, k),
                    "ap": map_at(run, qrels, k)}
            ours["rr"] = mrr(run, qrels)
            for qid in run:
                want = oracle_metrics([d for d, _ in run[qid]], qrels[qid], k)
                if want is None:
                    assert qid not in ours["ndcg"].per_query
                    continue
                for name, res in ours.items():
                    assert res.per_query[qid] == pytest.approx(want[name], abs=1e-12), (name, qid, k)

    def test_monotone_in_k(self, rng):
        docs = [f"d{i}" for i in range(30)]
        run = as_run("q", list(rng.permutation(docs)))
        qrels = {"q": {d: 1 for d in docs[:6]}}
        prev = 0.0
        for k in range(1, 31):
            r = recall_at(run, qrels, k).mean
            assert r >= prev
            assert map_at(run, qrels, k).mean <= r + 1e-15
            prev = r


class TestFiles:
    def test_run_round_trip(self, tmp_path):
        run = {"q1": [("a", 2.5), ("b", 1.0)], "q2": [("c", 0.125)]}
        write_run(tmp_path / "r.txt", run, "tag")
        assert read_run(tmp_path / "r.txt") == run

    def test_run_read_uses_rank_column(self, tmp_path):
        (tmp_path / "r.txt").write_text("q Q0 b 2 1.0 t\nq Q0 a 1 1.0 t\n")
        assert [d for d, _ in read_run(tmp_path / "r.txt")["q"]] == ["a", "b"]

    def test_qrels(self, tmp_path):
        (tmp_path / "q.txt").write_text("q 0 a 1\nq 0 b 0\n\nr 0 c 2\n")
        assert read_qrels(tmp_path / "q.txt") == {"q": {"a": 1, "b": 0}, "r": {"c": 2}}

    @pytest.mark.parametrize("content", ["q 0 a\n", "q 0 a 1\nq 0 a 2\n"])
    def test_qrels_errors(self, tmp_path, content):
        (tmp_path / "q.txt").write_text(content)
        with pytest.raises(ValueError, match="line"):
            read_qrels(tmp_path / "q.txt")

    def test_report(self, tmp_path):
        run = as_run("q", ["a", "b"])
        results = standard_report(run, {"q": {"b": 1}}, 10)
        buf = io.StringIO()
        write_report(buf, results)
        rows = [line.split("\t") for line in buf.getvalue().splitlines()]
        assert rows[0] == ["metric", "mean", "stderr", "queries"]
        assert [r[0] for r in rows[1:]] == ["ndcg@3", "mrr", "recall@10", "map@10", "ndcg@10"]
        assert rows[2][1] == "0.500000"
        write_per_query(tmp_path / "pq.tsv", results)
        assert "mrr\tq\t0.500000" in (tmp_path / "pq.tsv").read_text()

    def test_summarize_empty(self):
        assert all(np.isnan(summarize([])))
