import json

import pytest

from convsparse.cli import derive_seed, main
from convsparse.context import read_conversations, write_conversations


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> index -> train (on a subset) -> search -> eval, run once for the module."""
    root = tmp_path_factory.mktemp("suite")
    assert main(["synth", "--output", str(root)]) == 0
    subset = root / "train_small.jsonl"
    write_conversations(subset, read_conversations(root / "train.jsonl")[:40])
    (root / "pipeline.toml").write_text(
        '[paths]\n'
        'vocab = "vocab.txt"\ncorpus = "corpus.jsonl"\nindex = "index.bin"\n'
        'checkpoints = "checkpoints"\nqrels = "qrels.txt"\n'
        '[train]\nbatch_size = 8\nlr_queries = 1e-3\nlr_answers = 1e-3\n'
    )
    cfg = ["--config", str(root / "pipeline.toml")]
    assert main(["index", *cfg]) == 0
    assert main(["train", *cfg, "--conversations", str(subset), "--figures", str(root / "fig")]) == 0
    for variant in ("raw", "dual"):
        assert main(["search", *cfg, "--variant", variant, "--topk", "50",
                     "--conversations", str(root / "test.jsonl"), "--run", str(root / f"{variant}.run")]) == 0
    return root, cfg


def read_report(path):
    rows = [line.split("\t") for line in path.read_text().splitlines()[1:]]
    return {r[0]: float(r[1]) for r in rows}


def test_synth_outputs(pipeline):
    root, _ = pipeline
    for name in ("vocab.txt", "corpus.jsonl", "train.jsonl", "test.jsonl", "qrels.txt",
                 "checkpoints/reference.ckpt"):
        assert (root / name).exists(), name


def test_synth_deterministic(pipeline, tmp_path):
    root, _ = pipeline
    assert main(["synth", "--output", str(tmp_path)]) == 0
    for name in ("corpus.jsonl", "qrels.txt", "checkpoints/reference.ckpt"):
        assert (tmp_path / name).read_bytes() == (root / name).read_bytes()


def test_train_artifacts(pipeline):
    root, _ = pipeline
    trace = (root / "checkpoints" / "dual_loss_trace.tsv").read_text().splitlines()
    assert trace[0] == "step\tloss" and len(trace) > 1
    assert (root / "fig" / "dual_loss_trace.png").stat().st_size > 0
    assert (root / "checkpoints" / "queries.ckpt").exists()


def test_run_tags_and_difference(pipeline):
    root, _ = pipeline
    raw = (root / "raw.run").read_text()
    dual = (root / "dual.run").read_text()
    assert raw.split("\n", 1)[0].endswith("rawQuery")
    assert dual.split("\n", 1)[0].endswith("dual")
    assert raw.replace("rawQuery", "") != dual.replace("dual", "")


def test_eval_report(pipeline, tmp_path):
    root, cfg = pipeline
    results = {}
    for variant in ("raw", "dual"):
        report = tmp_path / f"{variant}.tsv"
        assert main(["eval", *cfg, "--run", str(root / f"{variant}.run"), "--topk", "10",
                     "--report", str(report), "--per-query", str(tmp_path / f"{variant}_pq.tsv"),
                     "--figures", str(tmp_path / variant)]) == 0
        results[variant] = read_report(report)
        assert (tmp_path / variant / f"{variant}_metrics.png").exists()
    assert set(results["raw"]) == {"ndcg@3", "mrr", "recall@10", "map@10", "ndcg@10"}
    assert results["dual"]["recall@10"] > results["raw"]["recall@10"]


def test_eval_stdout(pipeline, capsys):
    root, cfg = pipeline
    assert main(["eval", *cfg, "--run", str(root / "raw.run"), "--topk", "10"]) == 0
    assert capsys.readouterr().out.startswith("metric\tmean\tstderr\tqueries")


def test_search_deterministic(pipeline, tmp_path):
    root, cfg = pipeline
    assert main(["search", *cfg, "--variant", "dual", "--topk", "50",
                 "--conversations", str(root / "test.jsonl"), "--run", str(tmp_path / "again.run")]) == 0
    assert (tmp_path / "again.run").read_bytes() == (root / "dual.run").read_bytes()


def test_rerank_prep(pipeline, tmp_path):
    root, cfg = pipeline
    args = ["rerank-prep", *cfg, "--conversations", str(root / "test.jsonl"), "--run", str(root / "dual.run"),
            "--enriched", str(tmp_path / "e.jsonl"), "--pairs", str(tmp_path / "p.tsv")]
    assert main(args) == 0
    prompts = [json.loads(line) for line in (tmp_path / "e.jsonl").read_text().splitlines()]
    assert all(len(p["keywords"]) <= 10 and "Keywords:" in p["text"] for p in prompts)
    pairs = (tmp_path / "p.tsv").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "p.tsv").read_bytes() == pairs

    assert main([*args, "--keywords", "0"]) == 0
    prompts = [json.loads(line) for line in (tmp_path / "e.jsonl").read_text().splitlines()]
    assert all(p["keywords"] == [] and p["text"].endswith("Keywords: ") for p in prompts)


def test_partial_outputs_removed(pipeline, tmp_path, capsys):
    root, cfg = pipeline
    (tmp_path / "pairs_dir").mkdir()
    code = main(["rerank-prep", *cfg, "--conversations", str(root / "test.jsonl"),
                 "--run", str(root / "dual.run"), "--enriched", str(tmp_path / "e.jsonl"),
                 "--pairs", str(tmp_path / "pairs_dir")])
    assert code == 2
    assert not (tmp_path / "e.jsonl").exists()
    assert capsys.readouterr().err.startswith("error:")


def test_malformed_run(pipeline, tmp_path, capsys):
    _, cfg = pipeline
    bad = tmp_path / "bad.run"
    bad.write_text("q1 Q0 d1 1 0.5 tag\nq1 Q0 d2 oops\n")
    assert main(["eval", *cfg, "--run", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_gold(pipeline, tmp_path, capsys):
    root, cfg = pipeline
    convs = read_conversations(root / "test.jsonl")[:2]
    path = tmp_path / "nogold.jsonl"
    lines = []
    for c in convs:
        lines.append({"id": c.id, "turns": [{"query": t.query, "answer": t.answer} for t in c.turns]})
    path.write_text("\n".join(json.dumps(x) for x in lines) + "\n")
    ckpt = tmp_path / "ckpt"
    ckpt.mkdir()
    (ckpt / "reference.ckpt").write_bytes((root / "checkpoints" / "reference.ckpt").read_bytes())
    assert main(["train", *cfg, "--conversations", str(path), "--checkpoints", str(ckpt)]) == 2
    assert "gold" in capsys.readouterr().err
    assert sorted(p.name for p in ckpt.iterdir()) == ["reference.ckpt"]


def test_missing_inputs(pipeline, tmp_path, capsys):
    _, cfg = pipeline
    assert main(["search", "--vocab", str(tmp_path / "nope.txt")]) == 2
    assert main(["search", *cfg, "--index", str(tmp_path / "nope.bin"),
                 "--conversations", "x", "--run", str(tmp_path / "r")]) == 2
    assert "index not found" in capsys.readouterr().err
    assert main(["train", *cfg, "--variant", "raw", "--conversations", "x"]) == 2


def test_bad_config_key(tmp_path):
    (tmp_path / "c.toml").write_text('[pipeline]\nbogus = 1\n')
    assert main(["eval", "--config", str(tmp_path / "c.toml")]) == 2
    (tmp_path / "c.toml").write_text('[train]\nlr = 1\n')
    assert main(["eval", "--config", str(tmp_path / "c.toml")]) == 2


def test_derive_seed():
    assert derive_seed(0, "train") == derive_seed(0, "train")
    assert derive_seed(0, "train") != derive_seed(1, "train")
    assert derive_seed(0, "train") != derive_seed(0, "synth")
