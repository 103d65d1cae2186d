import numpy as np

from rugwatch.gbdt import CvReport, FoldResult, Params
from rugwatch.report import (
    HOURS_CSV_FIELDS,
    activity_markdown,
    activity_table,
    hours_markdown,
    hours_table,
    plot_activity,
    plot_hours,
    plot_label_distribution,
    plot_recovery_histogram,
    write_activity_csv,
    write_hours_csv,
    write_markdown_report,
)
from rugwatch.labeling import summarize

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def fake_summary(metric_sets):
    """Exercise the real fold-aggregation path to produce a summary."""
    folds = [
        FoldResult(fold=i, trial=0, params=Params(), inner_f1=0.9, rounds=3, metrics=dict(m))
        for i, m in enumerate(metric_sets)
    ]
    return CvReport(folds, [], None).summary()


def metrics(accuracy, sensitivity, precision, f1):
    return {"accuracy": accuracy, "sensitivity": sensitivity, "precision": precision, "f1": f1}


def five_fold_report(base=0.9, jitter=0.02):
    sets = []
    for i in range(5):
        shift = jitter * (i - 2)
        sets.append(metrics(base + shift, base - shift, base + shift / 2, base - shift / 2))
    return sets


def test_activity_table_layout(tmp_path):
    sets = five_fold_report()
    table = activity_table(fake_summary(sets))
    assert [name for name, _, _ in table] == ["Accuracy", "Recall", "Precision", "F1-score"]
    accuracies = [m["accuracy"] for m in sets]
    assert table[0][1] == np.mean(accuracies)
    assert table[0][2] == np.std(accuracies, ddof=1)
    path = tmp_path / "activity.csv"
    write_activity_csv(table, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "metric,mean,std"
    assert len(lines) == 5
    assert lines[1].startswith(f"Accuracy,{np.mean(accuracies):.4f},")
    md = activity_markdown(table)
    assert md.splitlines()[0] == "| Metric | Mean | Std |"
    assert "| Recall |" in md and "| F1-score |" in md


def test_hours_table_layout(tmp_path):
    summaries = {hour: fake_summary(five_fold_report(base=0.5 + hour * 0.018)) for hour in range(1, 25)}
    rows = hours_table(summaries)
    assert [row["hour"] for row in rows] == list(range(1, 25))
    path = tmp_path / "hours.csv"
    write_hours_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(HOURS_CSV_FIELDS)
    assert lines[0] == "hour,accuracy,sensitivity,precision,f1"
    assert len(lines) == 25
    assert lines[1].startswith("1,") and lines[24].startswith("24,")
    for line in lines[1:]:
        cells = line.split(",")
        assert len(cells) == 5
        for cell in cells[1:]:
            assert len(cell.split(".")[1]) == 4
    md = hours_markdown(rows)
    assert md.splitlines()[0] == "| Hour | Accuracy | Sensitivity | Precision | F1_Score |"
    assert len(md.splitlines()) == 26


def test_figures_render_deterministically(tmp_path):
    table = activity_table(fake_summary(five_fold_report()))
    rows = hours_table({hour: fake_summary(five_fold_report(base=0.6 + hour * 0.01)) for hour in range(1, 25)})
    label_rows = [
        {"token": "0x01", "label": "Malicious", "rule": "FastRugPull", "liq_rc": 0.0, "price_rc": 0.5},
        {"token": "0x02", "label": "Malicious", "rule": "NoBurnPriceCollapse", "liq_rc": None, "price_rc": 0.004},
        {"token": "0x03", "label": "NonMalicious", "rule": "Allowlist", "liq_rc": 0.9, "price_rc": 0.9},
        {"token": "0x04", "label": "Unlabeled", "rule": "", "liq_rc": None, "price_rc": None},
    ]
    summary = summarize(label_rows)
    assert summary["by_label"] == {"Malicious": 2, "NonMalicious": 1, "Unlabeled": 1}

    outputs = {}
    for attempt in ("first", "second"):
        base = tmp_path / attempt
        base.mkdir()
        plot_activity(table, base / "activity.png")
        plot_hours(rows, base / "hours.png")
        plot_label_distribution(summary, base / "labels.png")
        plot_recovery_histogram(label_rows, base / "recovery.png")
        outputs[attempt] = {
            name: (base / name).read_bytes()
            for name in ("activity.png", "hours.png", "labels.png", "recovery.png")
        }
    for name, blob in outputs["first"].items():
        assert blob.startswith(PNG_MAGIC)
        assert len(blob) > 1000
        assert blob == outputs["second"][name]


def test_recovery_histogram_with_no_malicious(tmp_path):
    path = tmp_path / "empty.png"
    plot_recovery_histogram([{"token": "0x03", "label": "NonMalicious", "rule": "Allowlist",
                              "liq_rc": 0.9, "price_rc": 0.9}], path)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_markdown_report_assembly(tmp_path):
    path = tmp_path / "report.md"
    write_markdown_report([("Labels", "body one"), ("Metrics", "body two\n")], path)
    text = path.read_text()
    assert "## Labels" in text and "## Metrics" in text
    assert text.index("## Labels") < text.index("## Metrics")
    assert "body two\n" in text
