"""``ttabench`` command line: generate bundles, run experiments, mix streams and render reports.

Exit codes: 0 on success, 2 for usage and validation errors, 3 for runtime failures. Diagnostics go to
stderr; stdout carries data summaries only.
"""
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Tuple

import click

from . import __version__
from .bundle import SampleFlag, SynthSpec, generate_synthetic, load_bundle, read_manifest, save_bundle
from .config import load_settings
from .errors import RUNTIME_ERROR_EXIT_CODE, USAGE_ERROR_EXIT_CODE, TTABenchError, ValidationError
from .exceptions import ImproperlyConfigured
from .harness import (
    BenchHarness,
    ContaminationSpec,
    ExperimentSpec,
    OODDetectionSpec,
    TemplateMode,
    build_mixed_stream,
    synthesize_adversarial,
)
from .log import configure_logging
from .report import METRICS, read_reports, render_markdown, write_reports_csv
from .scoring import ScoringRule
from .tags import Mode

logger = logging.getLogger(__name__)

REPORT_FILE = "report.csv"
MARKDOWN_FILE = "report.md"
CONTAMINATION_KINDS = [SampleFlag.ood.name, SampleFlag.adversarial.name]


def _error_exit_code(error):
    if isinstance(error, TTABenchError):
        return error.exit_code
    if isinstance(error, ImproperlyConfigured):
        return USAGE_ERROR_EXIT_CODE
    return RUNTIME_ERROR_EXIT_CODE


def _error_message(error):
    return error.message if isinstance(error, TTABenchError) else str(error)


@contextmanager
def reporting_errors():
    """Turn package errors into a stderr diagnostic and the matching exit code."""
    try:
        yield
    except (TTABenchError, ImproperlyConfigured, OSError) as e:
        click.echo("Error: {}".format(_error_message(e)), err=True)
        click.get_current_context().exit(_error_exit_code(e))


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except ValueError as e:
        raise ValidationError("{} {} is not valid JSON: {}".format(what, path, e)) from e


@dataclass(frozen=True)
class RunManifest:
    experiments: Tuple[ExperimentSpec, ...]
    output_dir: str
    report_format: str = "csv"

    def __post_init__(self):
        if self.report_format not in ("csv", "markdown"):
            raise ValidationError("report_format must be 'csv' or 'markdown'", field="report_format")
        seen = set()
        for spec in self.experiments:
            key = (
                spec.method_tag,
                os.path.normpath(str(spec.bundle_path)),
                spec.config_hash(ScoringRule()),
                spec.seed,
                spec.contamination,
                spec.ood_detection,
            )
            if key in seen:
                raise ValidationError(
                    "duplicate experiment: {} on {} with seed {}".format(
                        spec.method_tag.value, spec.bundle_path, spec.seed
                    )
                )
            seen.add(key)


def _resolve_path(path, base_dir):
    if path is None or os.path.isabs(path) or base_dir is None:
        return path
    return os.path.join(base_dir, path)


def _parse_seed(value):
    try:
        seed = int(value)
    except (TypeError, ValueError):
        seed = None
    if seed is None or isinstance(value, bool) or (isinstance(value, float) and value != seed):
        raise ValidationError("seed must be an integer, got {!r}".format(value), field="seed")
    return seed


def experiment_from_dict(data, base_dir=None):
    data = dict(data)
    unknown = set(data) - {
        "bundle_path", "method_tag", "mode", "config", "seed", "template_mode", "contamination", "ood_detection",
    }
    if unknown:
        raise ValidationError("unknown experiment fields: {}".format(", ".join(sorted(unknown))))
    if "bundle_path" not in data or "method_tag" not in data:
        raise ValidationError("every experiment needs a bundle_path and a method_tag")
    contamination = data.get("contamination")
    if contamination is not None:
        contamination = dict(contamination)
        contamination["contaminant_bundle_path"] = _resolve_path(contamination.get("contaminant_bundle_path"), base_dir)
        contamination = ContaminationSpec(**contamination)
    ood_detection = data.get("ood_detection")
    if ood_detection is not None:
        ood_detection = OODDetectionSpec(**ood_detection)
    return ExperimentSpec(
        bundle_path=_resolve_path(data["bundle_path"], base_dir),
        method_tag=data["method_tag"],
        mode=data.get("mode", Mode.episodic.value),
        config=data.get("config"),
        seed=_parse_seed(data.get("seed", 0)),
        template_mode=data.get("template_mode", TemplateMode.single.value),
        contamination=contamination,
        ood_detection=ood_detection,
    )


def load_run_manifest(path, output_dir=None, report_format=None):
    data = _read_json(path, "manifest")
    base_dir = os.path.dirname(os.path.abspath(path))
    try:
        experiments = tuple(experiment_from_dict(entry, base_dir) for entry in data["experiments"])
    except (KeyError, TypeError) as e:
        raise ValidationError("malformed manifest {}: {!r}".format(path, e)) from e
    return RunManifest(
        experiments=experiments,
        output_dir=output_dir or _resolve_path(data.get("output_dir", "results"), base_dir),
        report_format=report_format or data.get("report_format", "csv"),
    )


@click.group()
@click.version_option(__version__, prog_name="ttabench")
@click.option("--settings", type=click.Path(dir_okay=False), default=None, help="JSON settings file.")
@click.option("--log-level", default=None, help="Overrides TTABENCH_LOG_LEVEL.")
@click.pass_context
def cli(ctx, settings, log_level):
    with reporting_errors():
        ctx.obj = load_settings(settings)
        configure_logging(log_level or ctx.obj["TTABENCH_LOG_LEVEL"], stream=sys.stderr)


@cli.command("generate")
@click.option("--spec", "spec_path", required=True, type=click.Path(dir_okay=False), help="SynthSpec JSON file.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Bundle directory to write.")
def cmd_generate(spec_path, out_dir):
    """Generate a synthetic embedding bundle."""
    with reporting_errors():
        spec = SynthSpec.from_dict(_read_json(spec_path, "spec"))
        bundle = generate_synthetic(spec)
        save_bundle(bundle, out_dir)
        click.echo("{} C={} D={} N={} V={} -> {}".format(
            bundle.dataset_name, bundle.num_classes, bundle.dim, bundle.num_samples, bundle.views_per_sample, out_dir
        ))


def _single_experiment(bundle, method, mode, config_path, seed, template_mode, contaminant, ratio, kind, ood_fraction):
    if bundle is None or method is None:
        raise click.UsageError("either --manifest or both --bundle and --method are required")
    contamination = None
    if ratio is not None or contaminant is not None:
        contamination = ContaminationSpec(
            ratio=0.5 if ratio is None else ratio,
            kind=kind,
            contaminant_bundle_path=contaminant,
        )
    return ExperimentSpec(
        bundle_path=bundle,
        method_tag=method,
        mode=mode,
        config=_read_json(config_path, "config") if config_path else None,
        seed=seed,
        template_mode=template_mode,
        contamination=contamination,
        ood_detection=None if ood_fraction is None else OODDetectionSpec(fraction=ood_fraction, seed=seed),
    )


def _run_name(index, report, spec):
    return "{:03d}_{}_{}_{}_s{}".format(index, report.bundle_name, spec.method_tag.value, report.config_hash, spec.seed)


@cli.command("run")
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), help="RunManifest JSON file.")
@click.option("--bundle", type=click.Path(file_okay=False), help="Bundle directory (single-experiment form).")
@click.option("--method", help="Method tag, e.g. tpt or tda.")
@click.option("--mode", type=click.Choice([mode.value for mode in Mode]), default=Mode.episodic.value)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Method config overrides (JSON).")
@click.option("--seed", type=int, default=0)
@click.option("--template-mode", type=click.Choice([m.value for m in TemplateMode]), default=TemplateMode.single.value)
@click.option("--contaminant", type=click.Path(file_okay=False), help="Contaminant bundle for mixed online streams.")
@click.option("--ratio", type=float, default=None, help="Contaminants per clean sample.")
@click.option("--kind", type=click.Choice(CONTAMINATION_KINDS), default=SampleFlag.adversarial.name)
@click.option("--ood-fraction", type=float, default=None, help="Run the OOD-detection protocol.")
@click.option("--workers", type=int, default=None, help="Episodic fan-out; overrides TTABENCH_WORKERS.")
@click.option("--format", "report_format", type=click.Choice(["csv", "markdown"]), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_obj
def cmd_run(settings, manifest_path, bundle, method, mode, config_path, seed, template_mode, contaminant, ratio, kind,
            ood_fraction, workers, report_format, out_dir):
    """Run experiments and write a report CSV plus one prediction log per experiment."""
    with reporting_errors():
        report_format = report_format or settings["TTABENCH_OUTPUT_FORMAT"]
        if manifest_path:
            manifest = load_run_manifest(manifest_path, out_dir, report_format)
        else:
            spec = _single_experiment(
                bundle, method, mode, config_path, seed, template_mode, contaminant, ratio, kind, ood_fraction
            )
            manifest = RunManifest((spec,), out_dir or "results", report_format)

        harness = BenchHarness()
        harness.init_config(settings)
        if workers:
            harness = BenchHarness(workers=workers)
        os.makedirs(manifest.output_dir, exist_ok=True)

        reports, failures = [], []
        for index, spec in enumerate(manifest.experiments):
            try:
                report, prediction_log = harness.run(spec)
                rule = ScoringRule.from_dict(read_manifest(spec.bundle_path)["scoring"])
            except (TTABenchError, ImproperlyConfigured, OSError) as e:
                message = "Error: {} on {}: {}".format(spec.method_tag.value, spec.bundle_path, _error_message(e))
                click.echo(message, err=True)
                failures.append(e)
                continue
            run_name = _run_name(index, report, spec)
            prediction_log.to_csv(os.path.join(manifest.output_dir, run_name + ".log.csv"))
            document = spec.resolved_config(rule)
            document["config_hash"] = report.config_hash
            with open(os.path.join(manifest.output_dir, run_name + ".config.json"), "w", encoding="utf-8") as f:
                json.dump(document, f, indent=2, sort_keys=True)
                f.write("\n")
            reports.append(report)
            click.echo("{} {} {} accuracy={} ece={} auroc={} n={}".format(
                report.bundle_name, report.method_tag, report.config_hash,
                report.accuracy, report.ece, report.auroc, report.n_evaluated,
            ))

        report_path = os.path.join(manifest.output_dir, REPORT_FILE)
        write_reports_csv(reports, report_path)
        if manifest.report_format == "markdown" and reports:
            with open(os.path.join(manifest.output_dir, MARKDOWN_FILE), "w", encoding="utf-8") as f:
                f.write(render_markdown(read_reports([report_path])))
        if failures:
            click.get_current_context().exit(_error_exit_code(failures[0]))


@cli.command("mix")
@click.option("--clean", "clean_dir", required=True, type=click.Path(file_okay=False))
@click.option("--contaminant", "contaminant_dir", type=click.Path(file_okay=False), default=None,
              help="Omit with --kind adversarial to synthesize contaminants from the clean bundle.")
@click.option("--ratio", type=float, required=True)
@click.option("--kind", type=click.Choice(CONTAMINATION_KINDS), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def cmd_mix(clean_dir, contaminant_dir, ratio, kind, seed, out_dir):
    """Interleave contaminants into a clean bundle's stream."""
    with reporting_errors():
        clean = load_bundle(clean_dir)
        if contaminant_dir is not None:
            contaminant = load_bundle(contaminant_dir)
        elif kind == SampleFlag.adversarial.name:
            contaminant = synthesize_adversarial(clean, seed=seed)
        else:
            raise ValidationError("--contaminant is required for OOD mixing", field="contaminant")
        mixed = build_mixed_stream(clean, contaminant, ratio, kind, seed=seed)
        save_bundle(mixed, out_dir)
        click.echo("{} N={} contaminants={} -> {}".format(
            mixed.dataset_name, mixed.num_samples, mixed.num_samples - clean.num_samples, out_dir
        ))


@cli.command("report")
@click.option("--inputs", "inputs", multiple=True, type=click.Path(dir_okay=False), help="Report CSV (repeatable).")
@click.argument("extra_inputs", nargs=-1, type=click.Path(dir_okay=False))
@click.option("--format", "report_format", type=click.Choice(["csv", "markdown"]), default=None)
@click.option("--metric", type=click.Choice(list(METRICS)), default="accuracy")
@click.option("--ood-dataset", "ood_datasets", multiple=True, help="OOD variant dataset (repeatable).")
@click.pass_obj
def cmd_report(settings, inputs, extra_inputs, report_format, metric, ood_datasets):
    """Concatenate report CSVs, or render them as a methods x datasets Markdown table."""
    with reporting_errors():
        frame = read_reports(list(inputs) + list(extra_inputs))
        if (report_format or settings["TTABENCH_OUTPUT_FORMAT"]) == "markdown":
            click.echo(render_markdown(frame, metric, ood_datasets), nl=False)
        else:
            click.echo(frame.to_csv(index=False), nl=False)


def main(argv=None):
    return cli.main(args=argv, prog_name="ttabench")
