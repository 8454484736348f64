from convsparse.metrics import standard_report
from convsparse.plots import plot_loss_trace, plot_metrics

PNG = b"\x89PNG"


def test_loss_trace(tmp_path):
    out = plot_loss_trace([0.5 - 0.01 * i for i in range(30)], tmp_path / "sub" / "loss.png", 0.5, 0.2)
    assert out.read_bytes().startswith(PNG)


def test_loss_trace_short(tmp_path):
    assert plot_loss_trace([0.3], tmp_path / "one.png").exists()


def test_metrics(tmp_path):
    run = {"q1": [("a", 1.0), ("b", 0.5)], "q2": [("c", 1.0)]}
    results = standard_report(run, {"q1": {"b": 1}, "q2": {"c": 2}}, 10)
    assert plot_metrics(results, tmp_path / "m.png", title="run").read_bytes().startswith(PNG)
