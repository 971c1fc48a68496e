"""Command-line entry points: dataset synthesis, training, evaluation,
projector export, and the HTTP service."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import click

from . import datasets as ds
from . import evaluation as ev
from . import imaging, report, synthetic, training
from .models import (
    CLASSIFIER_CLASSES,
    FILTER_CLASSES,
    STAGE1_CLASSES,
    CovidNetConfig,
    FilterNetConfig,
    build_covid_net,
    build_filter_net,
    load_model,
    save_model,
)
from .training import TwoStageData


@click.group()
def main():
    """Desk-scale chest X-ray triage tools."""


def _split_options(fn):
    fn = click.option("--split-strategy", default="by_patient",
                      type=click.Choice(["by_patient", "random", "predefined"]),
                      show_default=True)(fn)
    fn = click.option("--split-seed", default=0, show_default=True, type=int)(fn)
    return fn


def _load_classifier_manifest(manifest_path: str) -> ds.Manifest:
    return ds.harmonize_labels(ds.load_manifest(manifest_path, task="classifier"))


def _resolve_root(root: str | None, manifest_path: str) -> Path:
    return Path(root) if root else Path(manifest_path).parent


@main.command("make-synthetic")
@click.option("--out", required=True, type=click.Path())
@click.option("--task", default="both", type=click.Choice(["filter", "classifier", "both"]),
              show_default=True)
@click.option("--size", default=48, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--n-valid", default=60, show_default=True, type=int,
              help="Upright images for the filter task.")
def make_synthetic(out, task, size, seed, n_valid):
    """Generate deterministic synthetic datasets with manifests."""
    out = Path(out)
    if task in ("filter", "both"):
        path = synthetic.materialize_filter_dataset(out / "filter", n_valid, size, seed)
        click.echo(f"filter manifest: {path}")
    if task in ("classifier", "both"):
        path = synthetic.materialize_classifier_dataset(out / "classifier", size=size, seed=seed)
        click.echo(f"classifier manifest: {path}")


def _finish_training(model, history, out_dir: Path, label: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(out_dir, model)
    history.write_jsonl(out_dir / f"history_{label}.jsonl")
    report.save_training_curves([history], out_dir / f"curves_{label}.png")


@main.command("train-filter")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--root", default=None, type=click.Path(),
              help="Image root; defaults to the manifest's directory.")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--input-size", default=48, show_default=True, type=int)
@click.option("--max-epochs", default=None, type=int,
              help="Override the preset's epoch budget.")
@click.option("--lr", default=None, type=float, help="Override the preset's learning rate.")
@click.option("--batch-size", default=None, type=int)
@_split_options
def train_filter(manifest_path, root, out, seed, input_size, max_epochs, lr, batch_size,
                 split_strategy, split_seed):
    """Train the validity filter and save the best checkpoint with figures."""
    manifest = ds.load_manifest(manifest_path, task="filter")
    assignment = ds.split(manifest, split_strategy, seed=split_seed)
    for w in assignment.warnings:
        click.echo(f"warning: {w}", err=True)
    sets = training.manifest_datasets(
        manifest, assignment, FILTER_CLASSES, input_size, "unit_interval",
        grayscale=True, augment_spec=imaging.AugmentSpec.filter_pipeline(),
        root=_resolve_root(root, manifest_path),
    )
    config = training.filter_train_config()
    if max_epochs is not None:
        config.max_epochs = max_epochs
    if lr is not None:
        config.initial_lr = lr
    if batch_size is not None:
        config.batch_size = batch_size
    model = build_filter_net(FilterNetConfig(input_size=input_size), seed=seed)
    model, history = training.train(model, sets["train"], sets["validation"], config, seed=seed)
    _finish_training(model, history, Path(out), "filter")
    result = ev.evaluate_model(model, sets["test"])
    click.echo(f"best epoch {history.best_epoch}, test accuracy {result.accuracy:.4f}")


@main.command("train-covid")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--root", default=None, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--stage", default="both", type=click.Choice(["1", "2", "both"]),
              show_default=True)
@click.option("--init", "init_dir", default=None, type=click.Path(exists=True),
              help="Stage-1 model directory to transfer the backbone from (stage 2).")
@click.option("--weights-mode", default="inverse",
              type=click.Choice(["as_written", "inverse", "none"]), show_default=True)
@click.option("--freeze-backbone", is_flag=True, default=False)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--input-size", default=48, show_default=True, type=int)
@click.option("--max-epochs", default=None, type=int)
@click.option("--lr", default=None, type=float)
@click.option("--batch-size", default=None, type=int)
@_split_options
def train_covid(manifest_path, root, out, stage, init_dir, weights_mode, freeze_backbone,
                seed, input_size, max_epochs, lr, batch_size, split_strategy, split_seed):
    """Train the three-class classifier (two-stage by default)."""
    manifest = _load_classifier_manifest(manifest_path)
    assignment = ds.split(manifest, split_strategy, seed=split_seed)
    for w in assignment.warnings:
        click.echo(f"warning: {w}", err=True)
    root_dir = _resolve_root(root, manifest_path)
    aug = imaging.AugmentSpec.classifier_pipeline()

    def make_sets(m, classes):
        return training.manifest_datasets(
            m, assignment, classes, input_size, "imagenet_stats",
            grayscale=False, augment_spec=aug, root=root_dir,
        )

    config = training.classifier_train_config()
    config.weights_mode = None if weights_mode == "none" else weights_mode
    if max_epochs is not None:
        config.max_epochs = max_epochs
    if lr is not None:
        config.initial_lr = lr
    if batch_size is not None:
        config.batch_size = batch_size
    net_config = CovidNetConfig(input_size=input_size)
    out = Path(out)

    if stage == "1":
        sets = make_sets(ds.stage1_relabel(manifest), STAGE1_CLASSES)
        model = build_covid_net(replace(net_config, num_classes=2), seed=seed)
        model, history = training.train(model, sets["train"], sets["validation"], config, seed=seed)
        _finish_training(model, history, out, "stage1")
        result = ev.evaluate_model(model, sets["test"])
        click.echo(f"stage 1 best epoch {history.best_epoch}, test accuracy {result.accuracy:.4f}")
        return

    sets2 = make_sets(manifest, CLASSIFIER_CLASSES)
    if stage == "2":
        model = build_covid_net(net_config, seed=seed + 1)
        if init_dir is not None:
            training.transfer_backbone(load_model(init_dir, "covid"), model)
        if freeze_backbone:
            training.freeze_backbone(model)
        model, history = training.train(model, sets2["train"], sets2["validation"], config, seed=seed + 1)
        _finish_training(model, history, out, "stage2")
        histories = [history]
    else:
        sets1 = make_sets(ds.stage1_relabel(manifest), STAGE1_CLASSES)
        data = TwoStageData(sets1["train"], sets1["validation"],
                            sets2["train"], sets2["validation"])
        model, (h1, h2) = training.train_two_stage(
            net_config, data, config, config, seed=seed,
            freeze_backbone_stage2=freeze_backbone,
        )
        out.mkdir(parents=True, exist_ok=True)
        save_model(out, model)
        h1.write_jsonl(out / "history_stage1.jsonl")
        h2.write_jsonl(out / "history_stage2.jsonl")
        report.save_training_curves([h1, h2], out / "curves_two_stage.png")
        histories = [h1, h2]
    result = ev.evaluate_model(model, sets2["test"])
    click.echo(f"best epoch {histories[-1].best_epoch}, test accuracy {result.accuracy:.4f}")


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--root", default=None, type=click.Path())
@click.option("--model", "model_dirs", required=True, multiple=True, type=click.Path(exists=True),
              help="Model directory; repeat to aggregate separately trained runs.")
@click.option("--kind", default="covid", type=click.Choice(["filter", "covid"]),
              show_default=True)
@click.option("--runs", default=1, show_default=True, type=int,
              help="Evaluations per model over re-seeded splits (seed, seed+1, ...).")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="report.json path (figures and metrics.tsv land next to it) "
                   "or a report directory.")
@click.option("--which", default="test", type=click.Choice(["train", "validation", "test"]),
              show_default=True)
@click.option("--input-size", default=None, type=int,
              help="Defaults to each model's configured input size.")
@click.option("--pca/--no-pca", "with_pca", default=True, show_default=True,
              help="Render an embedding scatter from the first model.")
@_split_options
def eval_cmd(manifest_path, root, model_dirs, kind, runs, out_path, which, input_size,
             with_pca, split_strategy, split_seed):
    """Evaluate trained runs on a split and render a report.

    Run variation covers both axes of repetition: repeat --model for runs that
    differ in initialization, and raise --runs to re-seed the split per run.
    """
    out_path = Path(out_path)
    if out_path.suffix == ".json":
        out_dir, report_json = out_path.parent, out_path
    else:
        out_dir, report_json = out_path, out_path / "report.json"
    if kind == "filter":
        manifest = ds.load_manifest(manifest_path, task="filter")
        classes = FILTER_CLASSES
        normalization, grayscale = "unit_interval", True
    else:
        manifest = _load_classifier_manifest(manifest_path)
        classes = CLASSIFIER_CLASSES
        normalization, grayscale = "imagenet_stats", False
    root_dir = _resolve_root(root, manifest_path)

    matrices = []
    first_model = None
    eval_ds = None
    for model_dir in model_dirs:
        model = load_model(model_dir, kind)
        size = input_size or model.config.input_size
        for run in range(max(runs, 1)):
            assignment = ds.split(manifest, split_strategy, seed=split_seed + run)
            sets = training.manifest_datasets(
                manifest, assignment, classes, size, normalization,
                grayscale=grayscale, augment_spec=None, root=root_dir,
            )
            eval_ds = sets[which]
            result = ev.evaluate_model(model, eval_ds)
            matrices.append(result.confusion)
            if first_model is None:
                first_model = model
            click.echo(
                f"{model_dir} (split seed {split_seed + run}): accuracy "
                f"{result.accuracy:.4f} on {len(eval_ds)} samples"
            )

    agg = ev.aggregate_runs(matrices)
    pca = pca_labels = None
    if with_pca and len(eval_ds) >= 3:
        emb = ev.extract_embeddings(first_model, eval_ds)
        k = min(2, emb.vectors.shape[1])
        pca = ev.pca_project(emb.vectors, k)
        pca_labels = emb.labels
    written = report.render_report(agg, classes, out_dir, pca=pca, pca_labels=pca_labels)
    summary = {
        "runs": len(matrices),
        "classes": classes,
        "summed_confusion": agg.total_confusion.tolist(),
        "pooled": {
            name: {"sensitivity": agg.pooled[c].sensitivity,
                   "specificity": agg.pooled[c].specificity}
            for c, name in enumerate(classes)
        },
        "across_runs": {
            name: {
                "sensitivity_mean": agg.sensitivity_mean[c],
                "sensitivity_std": agg.sensitivity_std[c],
                "specificity_mean": agg.specificity_mean[c],
                "specificity_std": agg.specificity_std[c],
            }
            for c, name in enumerate(classes)
        },
    }
    report_json.write_text(json.dumps(summary, indent=2))
    written["json"] = report_json
    for c, name in enumerate(classes):
        sens = agg.pooled[c].sensitivity
        spec = agg.pooled[c].specificity
        click.echo(
            f"{name}: sensitivity "
            + ("undefined" if sens is None else f"{sens:.4f}")
            + ", specificity "
            + ("undefined" if spec is None else f"{spec:.4f}")
        )
    click.echo("report: " + ", ".join(str(p) for p in written.values()))


@main.command("export-projector")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--root", default=None, type=click.Path())
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True))
@click.option("--kind", default="covid", type=click.Choice(["filter", "covid"]),
              show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--which", default="test", type=click.Choice(["train", "validation", "test"]),
              show_default=True)
@_split_options
def export_projector(manifest_path, root, model_dir, kind, out_dir, which,
                     split_strategy, split_seed):
    """Write penultimate-feature vectors.tsv and metadata.tsv for a split."""
    if kind == "filter":
        manifest = ds.load_manifest(manifest_path, task="filter")
        classes, normalization, grayscale = FILTER_CLASSES, "unit_interval", True
    else:
        manifest = _load_classifier_manifest(manifest_path)
        classes, normalization, grayscale = CLASSIFIER_CLASSES, "imagenet_stats", False
    assignment = ds.split(manifest, split_strategy, seed=split_seed)
    model = load_model(model_dir, kind)
    sets = training.manifest_datasets(
        manifest, assignment, classes, model.config.input_size, normalization,
        grayscale=grayscale, augment_spec=None, root=_resolve_root(root, manifest_path),
    )
    emb = ev.extract_embeddings(model, sets[which])
    vectors_path, metadata_path = ev.write_projector_files(emb, out_dir)
    click.echo(f"wrote {vectors_path} and {metadata_path} ({len(emb.labels)} rows)")


@main.command("serve")
@click.option("--model-dir", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--store-dir", default=None, type=click.Path(),
              help="Result store; defaults to $XRAY_TRIAGE_STORE or ./xray_triage_store.")
@click.option("--max-upload-bytes", default=None, type=int)
def serve(model_dir, host, port, store_dir, max_upload_bytes):
    """Run the HTTP inference service."""
    import uvicorn

    from .service import DEFAULT_MAX_UPLOAD_BYTES, create_app

    app = create_app(
        model_dir,
        store_dir=store_dir,
        max_upload_bytes=max_upload_bytes or DEFAULT_MAX_UPLOAD_BYTES,
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
