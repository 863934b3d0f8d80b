"""Report serialization: one CSV row per (bundle, method, config, seed), and Markdown method x dataset tables."""
import json
import math

import pandas as pd

from .errors import ValidationError
from .metrics import MetricReport

REPORT_COLUMNS = [
    "bundle_name",
    "method_tag",
    "config_hash",
    "seed",
    "accuracy",
    "ece",
    "auroc",
    "n_evaluated",
    "per_class_accuracy",
    "class_counts",
    "id_digest",
    "adversarial_accuracy",
    "n_adversarial",
]
# Columns added after the first release; older report files read with these defaults.
LATER_COLUMN_DEFAULTS = {"adversarial_accuracy": math.nan, "n_adversarial": 0}
METRICS = ("accuracy", "ece", "auroc", "adversarial_accuracy")
BASELINE_TAG = "zero_shot"
AVERAGE_COLUMN = "Avg."
OOD_AVERAGE_COLUMN = "OOD Avg."
GAIN_COLUMN = "Gain"


def reports_to_frame(reports):
    rows = []
    for report in reports:
        rows.append({
            "bundle_name": report.bundle_name,
            "method_tag": report.method_tag,
            "config_hash": report.config_hash,
            "seed": report.seed,
            "accuracy": report.accuracy,
            "ece": report.ece,
            "auroc": report.auroc,
            "n_evaluated": report.n_evaluated,
            "per_class_accuracy": json.dumps(list(report.per_class_accuracy)),
            "class_counts": json.dumps(list(report.class_counts)),
            "id_digest": report.id_digest,
            "adversarial_accuracy": report.adversarial_accuracy,
            "n_adversarial": report.n_adversarial,
        })
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_reports_csv(reports, path):
    reports_to_frame(reports).to_csv(path, index=False)


def _optional(value):
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else float(value)


def report_from_row(row):
    return MetricReport(
        method_tag=str(row["method_tag"]),
        bundle_name=str(row["bundle_name"]),
        config_hash=str(row["config_hash"]),
        seed=int(row["seed"]),
        accuracy=_optional(row["accuracy"]),
        ece=_optional(row["ece"]),
        auroc=_optional(row["auroc"]),
        n_evaluated=int(row["n_evaluated"]),
        per_class_accuracy=tuple(json.loads(row["per_class_accuracy"])),
        class_counts=tuple(json.loads(row["class_counts"])),
        id_digest=str(row["id_digest"]),
        adversarial_accuracy=_optional(row["adversarial_accuracy"]),
        n_adversarial=int(row["n_adversarial"]),
    )


def read_reports(paths):
    """Concatenate report CSVs in the given order."""
    paths = list(paths)
    if not paths:
        raise ValidationError("no report files given")
    frames = []
    for path in paths:
        try:
            frame = pd.read_csv(path, dtype={"config_hash": str, "id_digest": str, "bundle_name": str})
        except (OSError, ValueError) as e:
            raise ValidationError("cannot read report {}: {}".format(path, e)) from e
        frame = frame.assign(**{
            column: default for column, default in LATER_COLUMN_DEFAULTS.items() if column not in frame.columns
        })
        missing = [column for column in REPORT_COLUMNS if column not in frame.columns]
        if missing:
            raise ValidationError("report {} lacks columns {}".format(path, ", ".join(missing)))
        frames.append(frame[REPORT_COLUMNS])
    return pd.concat(frames, ignore_index=True)


def _cell(value, signed=False):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return "{:+.2f}".format(value) if signed else "{:.2f}".format(value)


def pivot_reports(frame, metric="accuracy", ood_datasets=()):
    """Methods as rows (first-appearance order), datasets as columns, metric in percent averaged over seeds.

    Datasets named in ``ood_datasets`` (distribution-shifted variants) get their own ``OOD Avg.`` column next
    to the overall average.
    """
    if metric not in METRICS:
        raise ValidationError("metric must be one of {}".format(", ".join(METRICS)), field="metric")
    methods = list(dict.fromkeys(frame["method_tag"]))
    datasets = sorted(dict.fromkeys(frame["bundle_name"]))
    ood_datasets = list(dict.fromkeys(ood_datasets))
    missing = [name for name in ood_datasets if name not in datasets]
    if missing:
        raise ValidationError("no reports for OOD datasets {}".format(", ".join(missing)), field="ood_datasets")
    values = frame.assign(**{metric: pd.to_numeric(frame[metric], errors="coerce")})
    table = values.pivot_table(index="method_tag", columns="bundle_name", values=metric, aggfunc="mean", dropna=False)
    table = table.reindex(index=methods, columns=datasets).astype(float) * 100.0
    table[AVERAGE_COLUMN] = table[datasets].mean(axis=1)
    if ood_datasets:
        table[OOD_AVERAGE_COLUMN] = table[ood_datasets].mean(axis=1)
    if BASELINE_TAG in table.index and len(table.index) > 1:
        table[GAIN_COLUMN] = table[AVERAGE_COLUMN] - table.loc[BASELINE_TAG, AVERAGE_COLUMN]
    return table


def render_markdown(frame, metric="accuracy", ood_datasets=()):
    table = pivot_reports(frame, metric, ood_datasets)
    columns = list(table.columns)
    lines = [
        "| Method | " + " | ".join(str(column) for column in columns) + " |",
        "|---|" + "---:|" * len(columns),
    ]
    for method, row in table.iterrows():
        cells = []
        for column in columns:
            if column == GAIN_COLUMN:
                cells.append("-" if method == BASELINE_TAG else _cell(row[column], signed=True))
            else:
                cells.append(_cell(row[column]))
        lines.append("| {} | {} |".format(method, " | ".join(cells)))
    return "\n".join(lines) + "\n"
