import numpy as np
import pandas as pd
import pytest

from ttabench.errors import ValidationError
from ttabench.metrics import MetricReport
from ttabench.report import (
    pivot_reports,
    read_reports,
    render_markdown,
    report_from_row,
    reports_to_frame,
    write_reports_csv,
)


def _report(method_tag, bundle_name, accuracy, seed=0, ece=0.1, auroc=None, adversarial_accuracy=None):
    return MetricReport(
        method_tag=method_tag,
        bundle_name=bundle_name,
        config_hash="0123456789ab",
        seed=seed,
        accuracy=accuracy,
        ece=ece,
        auroc=auroc,
        n_evaluated=10,
        per_class_accuracy=(0.5, None),
        class_counts=(10, 0),
        id_digest="00ff00ff00ff00ff",
        adversarial_accuracy=adversarial_accuracy,
        n_adversarial=0 if adversarial_accuracy is None else 4,
    )


@pytest.fixture
def reports():
    return [
        _report("zero_shot", "pets", 0.5),
        _report("zero_shot", "cars", 0.7),
        _report("tpt", "pets", 0.6),
        _report("tpt", "pets", 0.7, seed=1),
        _report("tpt", "cars", 0.8, adversarial_accuracy=0.25),
    ]


class TestCSV(object):
    def test_round_trip(self, tmp_path, reports):
        path = str(tmp_path / "report.csv")
        write_reports_csv(reports, path)

        frame = read_reports([path])

        assert [report_from_row(row) for _, row in frame.iterrows()] == reports

    def test_concatenates_in_order(self, tmp_path, reports):
        first, second = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        write_reports_csv(reports[:2], first)
        write_reports_csv(reports[2:], second)

        frame = read_reports([first, second])

        assert list(frame["method_tag"]) == ["zero_shot", "zero_shot", "tpt", "tpt", "tpt"]

    def test_reads_reports_without_adversarial_columns(self, tmp_path, reports):
        path = str(tmp_path / "older.csv")
        reports_to_frame(reports[:2]).drop(columns=["adversarial_accuracy", "n_adversarial"]).to_csv(path, index=False)

        frame = read_reports([path])

        assert [report_from_row(row) for _, row in frame.iterrows()] == reports[:2]

    def test_no_inputs(self):
        with pytest.raises(ValidationError):
            read_reports([])

    def test_missing_columns(self, tmp_path):
        path = str(tmp_path / "bad.csv")
        pd.DataFrame({"method_tag": ["tpt"]}).to_csv(path, index=False)

        with pytest.raises(ValidationError) as e:
            read_reports([path])
        assert "accuracy" in e.value.message

    def test_unreadable_input(self, tmp_path):
        with pytest.raises(ValidationError):
            read_reports([str(tmp_path / "missing.csv")])


class TestPivot(object):
    def test_matches_hand_pivot(self, reports):
        table = pivot_reports(reports_to_frame(reports))

        assert list(table.index) == ["zero_shot", "tpt"]
        assert list(table.columns) == ["cars", "pets", "Avg.", "Gain"]
        assert table.loc["tpt", "pets"] == pytest.approx(65.0)
        assert table.loc["tpt", "cars"] == pytest.approx(80.0)
        assert table.loc["tpt", "Avg."] == pytest.approx(72.5)
        assert table.loc["zero_shot", "Avg."] == pytest.approx(60.0)
        assert table.loc["tpt", "Gain"] == pytest.approx(12.5)

    def test_no_gain_column_without_a_baseline(self, reports):
        table = pivot_reports(reports_to_frame(reports[2:]))

        assert "Gain" not in table.columns

    def test_ood_average_column(self, reports):
        table = pivot_reports(reports_to_frame(reports), ood_datasets=["cars"])

        assert list(table.columns) == ["cars", "pets", "Avg.", "OOD Avg.", "Gain"]
        assert table.loc["tpt", "OOD Avg."] == pytest.approx(80.0)
        assert table.loc["zero_shot", "OOD Avg."] == pytest.approx(70.0)
        assert table.loc["tpt", "Gain"] == pytest.approx(12.5)

    def test_ood_datasets_must_have_reports(self, reports):
        with pytest.raises(ValidationError) as e:
            pivot_reports(reports_to_frame(reports), ood_datasets=["imagenet-a"])
        assert e.value.context["field"] == "ood_datasets"

    def test_adversarial_accuracy(self, reports):
        table = pivot_reports(reports_to_frame(reports), metric="adversarial_accuracy")

        assert table.loc["tpt", "cars"] == pytest.approx(25.0)
        assert np.isnan(table.loc["tpt", "pets"])
        assert np.isnan(table.loc["zero_shot", "Avg."])

    def test_unknown_metric(self, reports):
        with pytest.raises(ValidationError):
            pivot_reports(reports_to_frame(reports), metric="f1")


class TestMarkdown(object):
    def test_render(self, reports):
        lines = render_markdown(reports_to_frame(reports)).splitlines()

        assert lines[0] == "| Method | cars | pets | Avg. | Gain |"
        assert lines[1] == "|---|---:|---:|---:|---:|"
        assert lines[2] == "| zero_shot | 70.00 | 50.00 | 60.00 | - |"
        assert lines[3] == "| tpt | 80.00 | 65.00 | 72.50 | +12.50 |"

    def test_ood_average(self, reports):
        lines = render_markdown(reports_to_frame(reports), ood_datasets=["pets"]).splitlines()

        assert lines[0] == "| Method | cars | pets | Avg. | OOD Avg. | Gain |"
        assert lines[3] == "| tpt | 80.00 | 65.00 | 72.50 | 65.00 | +12.50 |"

    def test_missing_values_render_as_dashes(self, reports):
        markdown = render_markdown(reports_to_frame(reports), metric="auroc")

        assert "| tpt | - | - | - | - |" in markdown
