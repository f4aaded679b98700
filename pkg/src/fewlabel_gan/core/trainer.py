"""Alternating GAN training, method assembly and multi-seed experiments."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from fewlabel_gan.constants import (
    DESK_CHANNELS,
    DESK_IMAGE_SIZE,
    MAX_CONSECUTIVE_DIVERGENCES,
    METRICS_FILE,
)
from fewlabel_gan.core.checkpoint import latest_checkpoint, load_checkpoint, save_checkpoint
from fewlabel_gan.core.data_pipeline import (
    BatchPrefetcher,
    LabeledDataset,
    MixedBatch,
    make_mixed_batch,
    rotate_batch,
    subsample_labels,
    to_tensor,
)
from fewlabel_gan.core.gan_models import (
    Discriminator,
    Generator,
    build_discriminator,
    build_generator,
)
from fewlabel_gan.core.label_inference import (
    LabelProvider,
    ProviderKind,
    cotrain_provider,
    ground_truth_provider,
    load_provider,
    provide_labels,
    random_provider,
    sample_fake_labels,
    single_label_provider,
)
from fewlabel_gan.core.losses import (
    cotrain_d_loss,
    d_selfsup_term,
    g_selfsup_term,
    hinge_d_loss,
    hinge_g_loss,
)
from fewlabel_gan.core.methods import MethodSpec, get_method_spec
from fewlabel_gan.core.metrics import (
    Embedder,
    GaussianStats,
    Sampler,
    evaluate_model,
    real_statistics,
)
from fewlabel_gan.core.reporting import save_image_grid
from fewlabel_gan.models.architecture import DiscriminatorSpec, GeneratorSpec
from fewlabel_gan.models.config import LabelMode, MethodConfig
from fewlabel_gan.models.metrics import MetricRecord, MetricsReport
from fewlabel_gan.utils.config import get_settings
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import ConfigurationError, DivergenceError

logger = setup_logger(__name__)

PREVIEW_ROWS = 8
LABEL_CHUNK = 1024


def configure_runtime(deterministic: Optional[bool] = None, num_threads: Optional[int] = None):
    """Apply the torch determinism and threading settings."""
    settings = get_settings()
    deterministic = settings.deterministic if deterministic is None else deterministic
    num_threads = settings.num_threads if num_threads is None else num_threads
    torch.use_deterministic_algorithms(deterministic, warn_only=True)
    if num_threads:
        torch.set_num_threads(num_threads)


# ---------------------------------------------------------------------------
# Method assembly


@dataclass
class MethodGraph:
    """Everything one training run needs, wired for a specific method."""

    config: MethodConfig
    spec: MethodSpec
    dataset: LabeledDataset
    provider: LabelProvider
    generator: Generator
    discriminator: Discriminator
    g_optimizer: torch.optim.Optimizer
    d_optimizer: torch.optim.Optimizer
    real_labels: Optional[np.ndarray] = None
    device: str = "cpu"

    @property
    def num_unlabeled(self) -> int:
        """Unlabeled part of each batch; the rest is drawn from the labeled pool."""
        if self.spec.cotrain:
            return int(self.config.num_unlabeled or 0)
        if self.provider.kind == ProviderKind.GROUND_TRUTH:
            return 0
        return self.config.optimizer.batch_size


def _load_pretrained(config: MethodConfig, artifact_dir: Optional[Path]) -> LabelProvider:
    if artifact_dir is None:
        raise ConfigurationError(f"{config.method.value} needs a pretrained provider directory")
    provider = load_provider(artifact_dir, mode=config.label_mode)
    expected = ProviderKind.CLUSTER if config.n_clusters is not None else ProviderKind.S2L
    if provider.kind != expected:
        raise ConfigurationError(
            f"{artifact_dir} holds a {provider.kind.value} provider, expected {expected.value}"
        )
    if expected == ProviderKind.CLUSTER and provider.num_classes != config.n_clusters:
        raise ConfigurationError(
            f"{artifact_dir} has {provider.num_classes} clusters, config asks for "
            f"{config.n_clusters}"
        )
    return provider


def _label_dataset(provider: LabelProvider, dataset: LabeledDataset, device: str) -> np.ndarray:
    chunks = [
        provide_labels(provider, dataset.images[i : i + LABEL_CHUNK], device=device)
        for i in range(0, len(dataset), LABEL_CHUNK)
    ]
    return np.concatenate(chunks)


def build_method(
    config: MethodConfig,
    dataset: LabeledDataset,
    seed: int,
    artifact_dir: Optional[Path] = None,
    ch: int = DESK_CHANNELS,
    device: str = "cpu",
) -> MethodGraph:
    """
    Assemble data, label provider, models and optimizers for one method.

    Args:
        config: Method and hyperparameters.
        dataset: Fully labeled training set; labels are subsampled to k% here.
        seed: Seed for initialization and sampling.
        artifact_dir: Directory of the pretrained provider (CLUSTERING, S2GAN, S3GAN).
        ch: Channel width of both networks.

    Raises:
        ConfigurationError: If a required pretrained artifact is missing.
    """
    spec = get_method_spec(config.method)
    if config.method.is_semi_supervised:
        dataset = subsample_labels(dataset, config.k_percent, config.label_seed)
    if spec.prune_unlabeled:
        dataset = dataset.labeled_only()
        logger.info(f"{config.name}: training set reduced to {len(dataset)} labeled examples")

    if dataset.image_size != DESK_IMAGE_SIZE:
        raise ConfigurationError(
            f"Desk-scale models train on {DESK_IMAGE_SIZE}x{DESK_IMAGE_SIZE} images, "
            f"got {dataset.image_size}"
        )
    k = dataset.num_classes
    real_labels: Optional[np.ndarray] = None
    if spec.provider == "GROUND_TRUTH":
        provider = ground_truth_provider(k)
        real_labels = dataset.labels
    elif spec.provider == "SINGLE":
        provider = single_label_provider()
    elif spec.provider == "RANDOM":
        provider = random_provider(k, seed)
    elif spec.needs_artifact:
        provider = _load_pretrained(config, artifact_dir)
        real_labels = _label_dataset(provider, dataset, device)
    else:
        provider = None  # type: ignore[assignment]

    torch.manual_seed(seed)
    effective = k if spec.cotrain else provider.num_classes
    batch = config.optimizer
    generator = build_generator(
        GeneratorSpec.desk_scale(effective, ch=ch, latent_dim=batch.latent_dim)
    ).to(device)
    discriminator = build_discriminator(
        DiscriminatorSpec.desk_scale(
            effective if spec.projection else 0,
            ch=ch,
            rotation_head=config.self_supervised,
            cotrain_head=spec.cotrain,
        )
    ).to(device)

    if spec.cotrain:

        def logits_fn(images: torch.Tensor) -> torch.Tensor:
            return discriminator(images, cotrain=True).cotrain_logits  # type: ignore

        provider = cotrain_provider(logits_fn, k, config.label_mode or LabelMode.SOFT)

    betas = (batch.beta1, batch.beta2)
    g_optimizer = torch.optim.Adam(
        generator.parameters(), lr=batch.g_lr, betas=betas, eps=batch.epsilon
    )
    d_optimizer = torch.optim.Adam(
        discriminator.parameters(), lr=batch.d_lr, betas=betas, eps=batch.epsilon
    )
    logger.info(
        f"Built {config.name}: {len(dataset)} images, {dataset.labeled_indices.size} labeled, "
        f"{effective} effective labels, provider {provider.kind.value}"
    )
    return MethodGraph(
        config=config,
        spec=spec,
        dataset=dataset,
        provider=provider,
        generator=generator,
        discriminator=discriminator,
        g_optimizer=g_optimizer,
        d_optimizer=d_optimizer,
        real_labels=real_labels,
        device=device,
    )


# ---------------------------------------------------------------------------
# Training step


@dataclass
class DivergenceEvent:
    step: int
    phase: str
    loss: float


@dataclass
class StepResult:
    step: int
    d_losses: List[float] = field(default_factory=list)
    g_loss: Optional[float] = None
    diverged: bool = False


class Trainer:
    """
    Alternating optimization: `d_steps_per_g` discriminator updates on fresh
    batches, then one generator update.

    Randomness of every phase is derived from (seed, batch index, phase), so a
    run is reproducible from its seed and resumable from any step. Every attempt
    advances `batch_cursor` by `d_steps_per_g`, a rolled-back one included.
    """

    def __init__(self, graph: MethodGraph, seed: int):
        self.graph = graph
        self.seed = seed
        self.step = 0
        self.batch_cursor = 0
        self.d_updates = 0
        self.g_updates = 0
        self.events: List[DivergenceEvent] = []
        self.consecutive_divergences = 0
        self.generator = graph.generator
        self.discriminator = graph.discriminator
        self.config = graph.config
        self.device = graph.device

    # -- sampling --------------------------------------------------------

    def _rng(self, index: int, phase: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, index, phase])

    def _latents(self, rng: np.random.Generator, count: int) -> Tuple[torch.Tensor, torch.Tensor]:
        z = rng.standard_normal((count, self.config.optimizer.latent_dim), dtype=np.float32)
        y = sample_fake_labels(self.graph.provider, count, rng)
        return torch.from_numpy(z).to(self.device), torch.from_numpy(y).to(self.device)

    def batch_for(self, index: int) -> MixedBatch:
        return make_mixed_batch(
            self.graph.dataset,
            self.config.optimizer.batch_size,
            self.graph.num_unlabeled,
            self.seed,
            index,
            disjoint=self.graph.spec.cotrain,
        )

    def _real_label_distribution(self, batch: MixedBatch, index: int) -> Optional[torch.Tensor]:
        provider = self.graph.provider
        num_classes = provider.num_classes
        if not self.discriminator.has_projection:
            return None
        indices = np.concatenate([batch.unlabeled_indices, batch.labeled_indices])
        if self.graph.real_labels is not None:
            labels = self.graph.real_labels[indices]
        else:
            labels = provide_labels(provider, batch.all_images(), step=index, device=self.device)
        tensor = torch.from_numpy(np.asarray(labels)).to(self.device)
        if tensor.is_floating_point():
            return tensor
        return F.one_hot(tensor.long(), num_classes).float()

    # -- updates ---------------------------------------------------------

    def _discriminator_loss(self, batch: MixedBatch, index: int) -> torch.Tensor:
        g, d, cfg = self.generator, self.discriminator, self.config
        x_real = to_tensor(batch.all_images(), self.device)
        n_real = x_real.shape[0]
        z, y_fake = self._latents(self._rng(index, 0), cfg.optimizer.batch_size)
        with torch.no_grad():
            x_fake = g(z, y_fake)

        inputs = [x_real, x_fake]
        rotated = None
        if cfg.self_supervised:
            rotated = rotate_batch(x_real[: max(1, n_real // 4)])
            inputs.append(rotated.images)
        representation = d.represent(torch.cat(inputs))
        rep_real = representation[:n_real]
        rep_fake = representation[n_real : n_real + x_fake.shape[0]]

        if self.graph.spec.cotrain:
            num_unlabeled = self.graph.num_unlabeled
            logits = d.cotrain_head(rep_real)  # type: ignore[misc]
            with torch.no_grad():
                predicted = logits[:num_unlabeled].detach()
                if self.graph.provider.mode == LabelMode.SOFT:
                    predicted = torch.softmax(predicted, dim=1)
                else:
                    predicted = F.one_hot(predicted.argmax(1), logits.shape[1]).float()
            labels = torch.from_numpy(batch.labels).to(self.device)
            y_real = torch.cat([predicted, F.one_hot(labels, logits.shape[1]).float()])
            y_rows = torch.cat([y_real, F.one_hot(y_fake, logits.shape[1]).float()])
            scores, _ = d.score(torch.cat([rep_real, rep_fake]), y_rows)
            real_scores, fake_scores = scores[:n_real], scores[n_real:]
            loss = cotrain_d_loss(
                real_scores[num_unlabeled:],
                logits[num_unlabeled:],
                labels,
                real_scores[:num_unlabeled],
                fake_scores,
                cfg.weights.lambda_ or 0.0,
            )
        else:
            y_real = self._real_label_distribution(batch, index)
            y_all = None
            if y_real is not None:
                y_fake_rows = F.one_hot(y_fake, self.graph.provider.num_classes).float()
                y_all = torch.cat([y_real, y_fake_rows])
            scores, _ = d.score(torch.cat([rep_real, rep_fake]), y_all)
            loss = hinge_d_loss(scores[:n_real], scores[n_real:])

        if rotated is not None:
            rotation_logits = d.rotation_head(  # type: ignore[misc]
                representation[n_real + x_fake.shape[0] :]
            )
            loss = loss + d_selfsup_term(
                rotation_logits, rotated.rotation_targets, cfg.weights.beta or 0.0
            )
        return loss

    def _generator_loss(self, index: int) -> torch.Tensor:
        g, d, cfg = self.generator, self.discriminator, self.config
        batch_size = cfg.optimizer.batch_size
        z, y_fake = self._latents(self._rng(index, 1), batch_size)
        x_fake = g(z, y_fake)

        inputs = [x_fake]
        rotated = None
        if cfg.self_supervised:
            rotated = rotate_batch(x_fake[: max(1, batch_size // 4)])
            inputs.append(rotated.images)
        representation = d.represent(torch.cat(inputs))
        scores, _ = d.score(representation[:batch_size], y_fake if d.has_projection else None)
        loss = hinge_g_loss(scores)
        if rotated is not None:
            rotation_logits = d.rotation_head(representation[batch_size:])  # type: ignore[misc]
            loss = loss + g_selfsup_term(
                rotation_logits, rotated.rotation_targets, cfg.weights.alpha or 0.0
            )
        return loss

    def _snapshot(self) -> Dict[str, dict]:
        return {
            "generator": copy.deepcopy(self.generator.state_dict()),
            "discriminator": copy.deepcopy(self.discriminator.state_dict()),
            "g_optimizer": copy.deepcopy(self.graph.g_optimizer.state_dict()),
            "d_optimizer": copy.deepcopy(self.graph.d_optimizer.state_dict()),
        }

    def _restore(self, snapshot: Dict[str, dict]) -> None:
        self.generator.load_state_dict(snapshot["generator"])
        self.discriminator.load_state_dict(snapshot["discriminator"])
        self.graph.g_optimizer.load_state_dict(snapshot["g_optimizer"])
        self.graph.d_optimizer.load_state_dict(snapshot["d_optimizer"])

    def _diverged(self, snapshot: Dict[str, dict], phase: str, loss: torch.Tensor) -> StepResult:
        self._restore(snapshot)
        event = DivergenceEvent(step=self.step, phase=phase, loss=float(loss))
        self.events.append(event)
        self.consecutive_divergences += 1
        logger.warning(
            f"Non-finite {phase} loss at step {self.step} ({event.loss}); "
            f"restored pre-step parameters ({self.consecutive_divergences} in a row)"
        )
        if self.consecutive_divergences >= MAX_CONSECUTIVE_DIVERGENCES:
            raise DivergenceError(
                f"{self.consecutive_divergences} consecutive non-finite steps at step {self.step}"
            )
        return StepResult(step=self.step, diverged=True)

    def train_step(self, batches: Optional[Sequence[MixedBatch]] = None) -> StepResult:
        """
        One generator step preceded by `d_steps_per_g` discriminator steps.

        Args:
            batches: Real batches for the discriminator steps; drawn from the
                dataset by batch index when omitted.

        Returns:
            The losses, or `diverged=True` if a loss was non-finite and the
            parameters were rolled back.
        """
        cfg = self.config
        d_steps = cfg.d_steps_per_g
        first_index = self.batch_cursor
        if batches is None:
            batches = [self.batch_for(first_index + i) for i in range(d_steps)]
        self.batch_cursor += d_steps
        snapshot = self._snapshot()
        self.generator.train()
        self.discriminator.train()
        result = StepResult(step=self.step)

        d_params = list(self.discriminator.parameters())
        for i, batch in enumerate(batches):
            loss = self._discriminator_loss(batch, first_index + i)
            if not torch.isfinite(loss):
                return self._diverged(snapshot, "discriminator", loss)
            self.graph.d_optimizer.zero_grad(set_to_none=True)
            loss.backward()
            self.graph.d_optimizer.step()
            self.d_updates += 1
            result.d_losses.append(float(loss))

        for p in d_params:
            p.requires_grad_(False)
        try:
            loss = self._generator_loss(first_index // d_steps)
            if not torch.isfinite(loss):
                return self._diverged(snapshot, "generator", loss)
            self.graph.g_optimizer.zero_grad(set_to_none=True)
            loss.backward()
            self.graph.g_optimizer.step()
        finally:
            for p in d_params:
                p.requires_grad_(True)
        self.g_updates += 1
        result.g_loss = float(loss)
        self.consecutive_divergences = 0
        self.step += 1
        return result

    # -- evaluation ------------------------------------------------------

    def sampler(self) -> Sampler:
        """Samples from the generator in evaluation mode, labels from the provider prior."""

        def sample(count: int, seed: int) -> torch.Tensor:
            z, y = self._latents(np.random.default_rng(seed), count)
            was_training = self.generator.training
            self.generator.eval()
            with torch.no_grad():
                images = self.generator(z, y)
            self.generator.train(was_training)
            return images

        return sample

    def preview(self, path: Path) -> Path:
        """Save an 8x8 grid from a fixed latent / label draw."""
        images = self.sampler()(PREVIEW_ROWS * PREVIEW_ROWS, 0)
        return save_image_grid(images, path, rows=PREVIEW_ROWS)


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class RunResult:
    seed: int
    run_dir: Path
    records: List[MetricRecord]
    collapsed: bool
    divergence_events: List[DivergenceEvent]
    steps: int


def read_metric_records(path: Path) -> List[MetricRecord]:
    if not path.is_file():
        return []
    return [
        MetricRecord.model_validate_json(line)
        for line in path.read_text().splitlines()
        if line.strip()
    ]


def write_metric_records(path: Path, records: List[MetricRecord]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(r.model_dump_json() + "\n" for r in records))


def evaluate_trainer(
    trainer: Trainer,
    real_stats: GaussianStats,
    embedder: Embedder,
    seed: int,
) -> MetricRecord:
    """FID / IS of the trainer's current generator as a metric record."""
    cfg = trainer.config
    result = evaluate_model(
        trainer.sampler(), real_stats, embedder, cfg.n_fake, cfg.n_sets, seed=seed
    )
    return MetricRecord(
        step=trainer.step,
        seed=seed,
        method=cfg.method.value,
        run_name=cfg.name,
        k_percent=cfg.k_percent,
        label_mode=cfg.label_mode.value if cfg.label_mode else None,
        fid_mean=result.fid_mean,
        is_mean=result.is_mean,
        fid_sets=result.fid_sets,
        is_sets=result.is_sets,
        embedder_id=embedder.identifier,
        n_fake=cfg.n_fake,
        n_sets=result.n_sets,
    )


def run_seed(
    config: MethodConfig,
    dataset: LabeledDataset,
    seed: int,
    out_dir: Path,
    embedder: Embedder,
    real_stats: GaussianStats,
    artifact_dir: Optional[Path] = None,
    ch: int = DESK_CHANNELS,
    device: str = "cpu",
) -> RunResult:
    """
    Train one seed to `total_g_steps`, evaluating and checkpointing every
    `eval_every` steps. Resumes from the latest checkpoint in the run directory.
    """
    run_dir = Path(out_dir) / config.name / f"seed-{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(config.model_dump_json(indent=2))
    metrics_path = run_dir / METRICS_FILE

    graph = build_method(config, dataset, seed, artifact_dir, ch=ch, device=device)
    trainer = Trainer(graph, seed)
    records = read_metric_records(metrics_path)

    checkpoint = latest_checkpoint(run_dir)
    if checkpoint is not None:
        info = load_checkpoint(
            checkpoint, graph.generator, graph.discriminator, graph.g_optimizer, graph.d_optimizer
        )
        trainer.step = info.step
        trainer.batch_cursor = int(
            info.metadata.get("batch_cursor", info.step * config.d_steps_per_g)
        )
        trainer.d_updates = info.step * config.d_steps_per_g
        trainer.g_updates = info.step
        records = [r for r in records if r.step <= info.step]
        logger.info(f"Resuming {config.name} seed {seed} from step {info.step}")
    else:
        records = []
    write_metric_records(metrics_path, records)

    metadata = {"run_name": config.name, "seed": seed, "method": config.method.value}

    def checkpoint_and_evaluate() -> None:
        record = evaluate_trainer(trainer, real_stats, embedder, seed)
        records.append(record)
        write_metric_records(metrics_path, records)
        save_checkpoint(
            run_dir,
            trainer.step,
            graph.generator,
            graph.discriminator,
            graph.g_optimizer,
            graph.d_optimizer,
            metadata={**metadata, "batch_cursor": trainer.batch_cursor},
        )
        trainer.preview(run_dir / f"preview-{trainer.step:07d}.png")

    if not records:
        checkpoint_and_evaluate()

    collapsed = False
    d_steps = config.d_steps_per_g
    with BatchPrefetcher(
        graph.dataset,
        config.optimizer.batch_size,
        graph.num_unlabeled,
        seed,
        start_step=trainer.batch_cursor,
        disjoint=graph.spec.cotrain,
    ) as batches:
        while trainer.step < config.total_g_steps:
            try:
                result = trainer.train_step([next(batches) for _ in range(d_steps)])
            except DivergenceError as exc:
                logger.error(f"{config.name} seed {seed}: {exc}")
                collapsed = True
                break
            if result.diverged:
                continue
            if trainer.step % config.eval_every == 0 or trainer.step == config.total_g_steps:
                checkpoint_and_evaluate()

    if collapsed:
        last = latest_checkpoint(run_dir)
        if last is not None:
            load_checkpoint(last, graph.generator, graph.discriminator)
        logger.warning(f"{config.name} seed {seed} collapsed at step {trainer.step}")
        if records:
            records.append(records[-1].model_copy(update={"collapsed": True}))
            write_metric_records(metrics_path, records)

    (run_dir / "events.json").write_text(
        json.dumps([e.__dict__ for e in trainer.events], indent=2)
    )
    return RunResult(
        seed=seed,
        run_dir=run_dir,
        records=records,
        collapsed=collapsed,
        divergence_events=trainer.events,
        steps=trainer.step,
    )


def run_experiment(
    config: MethodConfig,
    dataset: LabeledDataset,
    seeds: Sequence[int],
    out_dir: Path,
    embedder: Embedder,
    eval_images: np.ndarray,
    artifact_dir: Optional[Path] = None,
    eval_every: Optional[int] = None,
    ch: int = DESK_CHANNELS,
    device: str = "cpu",
) -> MetricsReport:
    """
    One run per seed; the report holds every seed's final metrics plus the
    cross-seed median, mean and population std. Collapsed runs are kept.

    Raises:
        ConfigurationError: If no seed is given.
    """
    if not seeds:
        raise ConfigurationError("run_experiment needs at least one seed")
    if eval_every is not None:
        config = config.model_copy(update={"eval_every": eval_every})
    configure_runtime()
    real_stats = real_statistics(
        embedder, to_tensor(eval_images, device), key=f"{dataset.name}-eval-{len(eval_images)}"
    )
    records: List[MetricRecord] = []
    for seed in seeds:
        records.extend(
            run_seed(
                config,
                dataset,
                seed,
                out_dir,
                embedder,
                real_stats,
                artifact_dir=artifact_dir,
                ch=ch,
                device=device,
            ).records
        )
    report = MetricsReport.from_records(records)
    logger.info(
        f"{config.name}: median FID {report.median_fid:.3f}, median IS {report.median_is:.3f} "
        f"over seeds {list(seeds)}"
    )
    return report

