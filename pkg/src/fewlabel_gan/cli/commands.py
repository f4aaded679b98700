"""CLI stages: pretrain, train, evaluate, report and audit."""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from fewlabel_gan.constants import (
    FULL_DISCRIMINATOR_PARAMETERS,
    FULL_GENERATOR_PARAMETERS,
    LABEL_MANIFEST_FILE,
)
from fewlabel_gan.core.checkpoint import latest_checkpoint, load_checkpoint
from fewlabel_gan.core.clustering import fit_clusters
from fewlabel_gan.core.data_pipeline import (
    LabeledDataset,
    SyntheticSpec,
    load_image_folder,
    make_synthetic_dataset,
    subsample_labels,
    to_tensor,
)
from fewlabel_gan.core.embedder import load_or_train_embedder
from fewlabel_gan.core.feature_extractor import extract_features, train_feature_extractor
from fewlabel_gan.core.gan_models import (
    Discriminator,
    Generator,
    count_parameters,
    format_parameter_table,
    parameter_table,
)
from fewlabel_gan.core.label_inference import (
    cluster_provider,
    export_label_manifest,
    provider_exists,
    s2l_provider,
    save_provider,
)
from fewlabel_gan.core.metrics import real_statistics
from fewlabel_gan.core.reporting import ReportOutput, median_grid, write_report
from fewlabel_gan.core.trainer import (
    Trainer,
    build_method,
    configure_runtime,
    evaluate_trainer,
    run_experiment,
)
from fewlabel_gan.models.architecture import DiscriminatorSpec, GeneratorSpec
from fewlabel_gan.models.config import Method, MethodConfig, format_flat
from fewlabel_gan.models.manifest import ExperimentManifest, ReportTarget
from fewlabel_gan.models.metrics import MetricsReport
from fewlabel_gan.utils.config import get_settings
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import ConfigurationError

logger = setup_logger(__name__)

EVALUATION_FILE = "evaluation.json"


def load_datasets(manifest: ExperimentManifest) -> Tuple[LabeledDataset, LabeledDataset]:
    """
    Training set and held-out real evaluation set.

    Raises:
        ConfigurationError: If the dataset path does not exist.
    """
    source = manifest.dataset
    if source.synthetic is not None:
        params = source.synthetic
        dataset = make_synthetic_dataset(
            SyntheticSpec(
                num_classes=params.num_classes,
                per_class=params.per_class,
                image_size=params.image_size,
                noise=params.noise,
            ),
            seed=params.seed,
        )
    else:
        root = source.resolved_path()
        if root is None or not root.is_dir():
            raise ConfigurationError(f"Dataset path not found: {root}")
        dataset = load_image_folder(root, image_size=source.image_size)

    order = np.random.default_rng(source.split_seed).permutation(len(dataset))
    n_eval = max(2, int(round(source.eval_fraction * len(dataset))))
    eval_set = dataset.subset(np.sort(order[:n_eval]), name=f"{dataset.name}-eval")
    train_set = dataset.subset(np.sort(order[n_eval:]), name=dataset.name)
    logger.info(f"Dataset {dataset.name}: {len(train_set)} train, {len(eval_set)} held out")
    return train_set, eval_set


def select_configs(
    manifest: ExperimentManifest,
    method: Optional[str] = None,
    k_percent: Optional[float] = None,
) -> List[MethodConfig]:
    """
    Manifest methods filtered by name and k%; a method absent from the manifest
    is built from the flags alone.

    Raises:
        ConfigurationError: If nothing matches and no method was named, or the
            flags do not form a valid config.
    """
    configs = manifest.method_configs()
    if method is not None:
        configs = [c for c in configs if c.method.value == method or c.name == method]
    if k_percent is not None:
        configs = [c for c in configs if c.k_percent == k_percent]
    if configs:
        return configs
    if method is None:
        raise ConfigurationError("No method configs selected")
    try:
        values = {"method": Method(method)}
        if k_percent is not None:
            values["k_percent"] = k_percent
        return [MethodConfig.model_validate(values)]
    except (ValueError, PydanticValidationError) as exc:
        raise ConfigurationError(f"Invalid method selection {method!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# pretrain


def _pretrain_provider(
    manifest: ExperimentManifest,
    config: MethodConfig,
    directory: Path,
    train_set: LabeledDataset,
    eval_set: LabeledDataset,
    device: str,
) -> None:
    seed = manifest.pretrain_seed
    if config.method == Method.CLUSTERING:
        result = train_feature_extractor(
            train_set, manifest.pretrain, seed, semi_supervised=False, device=device
        )
        features = extract_features(result.extractor, train_set.images, device)
        clusters = fit_clusters(features, config.n_clusters or 1, seed=seed)
        provider = cluster_provider(result.extractor, clusters, train_set.images, device)
        save_provider(
            provider,
            directory,
            dataset=train_set.name,
            rotation_accuracy=result.rotation_accuracy,
        )
    else:
        labeled = subsample_labels(train_set, config.k_percent, config.label_seed)
        pretrain = manifest.pretrain.model_copy(update={"gamma": config.weights.gamma})
        result = train_feature_extractor(
            labeled, pretrain, seed, semi_supervised=True, eval_dataset=eval_set, device=device
        )
        provider = s2l_provider(result.extractor)
        save_provider(
            provider,
            directory,
            dataset=train_set.name,
            k_percent=config.k_percent,
            gamma=pretrain.gamma,
            heldout_accuracy=result.heldout_accuracy,
            rotation_accuracy=result.rotation_accuracy,
        )
    export_label_manifest(provider, train_set, directory / LABEL_MANIFEST_FILE, device)


def cmd_pretrain(
    manifest: ExperimentManifest, configs: Sequence[MethodConfig]
) -> Dict[str, str]:
    """
    Train the evaluation embedder and every pretrained label provider the
    methods need. Existing artifacts are skipped.

    Returns:
        Artifact directory -> "created" or "skipped".
    """
    device = get_settings().device
    configure_runtime()
    train_set, eval_set = load_datasets(manifest)
    status: Dict[str, str] = {}

    embedder_dir = manifest.embedder_path
    existed = embedder_dir.is_dir()
    load_or_train_embedder(embedder_dir, train_set, seed=manifest.pretrain_seed, device=device)
    status[str(embedder_dir)] = "skipped" if existed else "created"

    for config in configs:
        directory = manifest.provider_path(config)
        if directory is None or str(directory) in status:
            continue
        if provider_exists(directory):
            logger.info(f"Provider for {config.name} exists at {directory}; skipped")
            status[str(directory)] = "skipped"
            continue
        logger.info(f"Pretraining provider for {config.name} into {directory}")
        _pretrain_provider(manifest, config, directory, train_set, eval_set, device)
        status[str(directory)] = "created"
    return status


# ---------------------------------------------------------------------------
# train / evaluate


def cmd_train(
    manifest: ExperimentManifest,
    configs: Sequence[MethodConfig],
    seeds: Sequence[int],
    dry_run: bool = False,
) -> List[MetricsReport]:
    """
    Train every config for every seed, resuming interrupted runs.

    With `dry_run` the resolved configs are printed and nothing is trained.

    Raises:
        ConfigurationError: If a pretrained provider has not been produced yet.
    """
    if dry_run:
        for config in configs:
            print(f"# {config.name}")
            print(format_flat(config))
            print()
        return []

    missing = manifest.missing_artifacts(list(configs))
    if missing:
        names = ", ".join(str(p) for p in missing)
        raise ConfigurationError(f"Missing pretrained artifacts: {names} (run `fewlabel pretrain`)")

    device = get_settings().device
    train_set, eval_set = load_datasets(manifest)
    embedder = load_or_train_embedder(
        manifest.embedder_path, train_set, seed=manifest.pretrain_seed, device=device
    )
    reports = []
    for config in configs:
        reports.append(
            run_experiment(
                config,
                train_set,
                seeds,
                manifest.out_path,
                embedder,
                eval_set.images,
                artifact_dir=manifest.provider_path(config),
                ch=manifest.channels,
                device=device,
            )
        )
    print(median_grid(reports, "fid").render())
    print()
    print(median_grid(reports, "is").render())
    return reports


def cmd_evaluate(
    manifest: ExperimentManifest, configs: Sequence[MethodConfig], seeds: Sequence[int]
) -> List[dict]:
    """
    Re-evaluate the latest checkpoint of every run without training.

    Results go to evaluation.json in each run directory; the training logs are
    left untouched.

    Raises:
        ConfigurationError: If a run has no checkpoint.
    """
    device = get_settings().device
    configure_runtime()
    train_set, eval_set = load_datasets(manifest)
    embedder = load_or_train_embedder(manifest.embedder_path, train_set, device=device)
    real_stats = real_statistics(
        embedder, to_tensor(eval_set.images, device), key=f"{eval_set.name}-{len(eval_set)}"
    )
    results = []
    for config in configs:
        for seed in seeds:
            run_dir = manifest.out_path / config.name / f"seed-{seed}"
            checkpoint = latest_checkpoint(run_dir)
            if checkpoint is None:
                raise ConfigurationError(f"No checkpoint in {run_dir}")
            graph = build_method(
                config,
                train_set,
                seed,
                manifest.provider_path(config),
                ch=manifest.channels,
                device=device,
            )
            info = load_checkpoint(checkpoint, graph.generator, graph.discriminator)
            trainer = Trainer(graph, seed)
            trainer.step = info.step
            record = evaluate_trainer(trainer, real_stats, embedder, seed)
            (run_dir / EVALUATION_FILE).write_text(record.model_dump_json(indent=2))
            print(
                f"{config.name} seed {seed} step {info.step}: "
                f"FID {record.fid_mean:.3f}  IS {record.is_mean:.3f}"
            )
            results.append(record.model_dump())
    return results


# ---------------------------------------------------------------------------
# report / audit


def cmd_report(
    log_dir: Path, out_dir: Path, targets: Optional[Sequence[ReportTarget]] = None
) -> ReportOutput:
    """Tables and charts from the metric logs under `log_dir` (read-only)."""
    output = write_report(log_dir, out_dir, targets=targets)
    print(output.text.read_text())
    return output


def cmd_audit(scale: str = "full", num_classes: Optional[int] = None) -> Tuple[int, int]:
    """
    Print the parameter tables of both networks in reference naming.

    Returns:
        (generator parameters, discriminator parameters)
    """
    if scale == "full":
        k = num_classes or 1000
        g_spec, d_spec = GeneratorSpec.full_scale(k), DiscriminatorSpec.full_scale(k)
    else:
        k = num_classes or 10
        g_spec, d_spec = GeneratorSpec.desk_scale(k), DiscriminatorSpec.desk_scale(k)
    generator, discriminator = Generator(g_spec), Discriminator(d_spec)
    counts = (count_parameters(generator), count_parameters(discriminator))
    for model, count in zip((generator, discriminator), counts):
        print(format_parameter_table(parameter_table(model)))
        print(f"Total {model.scope}: {count:,}")
        print()
    if scale == "full" and k == 1000:
        expected = (FULL_GENERATOR_PARAMETERS, FULL_DISCRIMINATOR_PARAMETERS)
        verdict = "match" if counts == expected else "MISMATCH"
        print(f"Reference counts {expected[0]:,} / {expected[1]:,}: {verdict}")
    return counts
