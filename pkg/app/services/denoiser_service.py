"""
Toy convolutional noise predictor and its training loop.

The network sees the noisy 8-channel dual sample concatenated with the 4-channel
condition map. Timesteps enter through a sinusoidal embedding; a two-entry learned
embedding marks whether the condition is blank. Sampling code talks to the network
through TorchDenoiser, which speaks the numpy Denoiser protocol.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from pydantic import ValidationError
from torch import nn
from tqdm import tqdm

from app.core.artifacts import read_checkpoint, write_checkpoint
from app.core.exceptions import (
    CheckpointCorruptError,
    CheckpointMismatchError,
    DivergenceError,
    ParameterError,
)
from app.core.service_utils import ensure_in_range
from app.models.diffusion import Condition, VarianceSchedule
from app.models.training import TrainExample, TrainResult
from app.schemas.denoiser import DenoiserArchitecture, TrainConfig
from app.schemas.diffusion import GuidanceParams
from app.services.diffusion_service import sample

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
REFERENCE_TIMESTEPS = 1000


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding (N,) -> (N, dim); odd dims get a zero pad column."""
    half = dim // 2
    frequencies = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1)
    )
    angles = t.to(torch.float64)[:, None] * frequencies[None, :]
    embedding = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
    if dim % 2:
        embedding = torch.cat([embedding, torch.zeros_like(embedding[:, :1])], dim=1)
    return embedding


class ConvDenoiser(nn.Module):
    def __init__(self, architecture: DenoiserArchitecture):
        super().__init__()
        self.architecture = architecture
        hidden = architecture.hidden_channels
        padding = architecture.kernel_size // 2
        self.time_mlp = nn.Sequential(
            nn.Linear(architecture.embedding_dim, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
        )
        self.blank_embedding = nn.Embedding(2, hidden)
        kernel = architecture.kernel_size
        self.conv_in = nn.Conv2d(
            architecture.input_channels, hidden, kernel, padding=padding
        )
        self.hidden_convs = nn.ModuleList(
            nn.Conv2d(hidden, hidden, kernel, padding=padding)
            for _ in range(architecture.depth - 2)
        )
        self.conv_out = nn.Conv2d(
            hidden, architecture.sample_channels, kernel, padding=padding
        )
        self.activation = nn.SiLU()

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        cond: torch.Tensor,
        blank: torch.Tensor,
    ) -> torch.Tensor:
        if self.architecture.cond_channels:
            cond = torch.where(blank[:, None, None, None], torch.zeros_like(cond), cond)
            x = torch.cat([x, cond], dim=1)
        # timesteps are rescaled onto a 1000-step range so the embedding frequencies
        # do not depend on the chain length
        scale = REFERENCE_TIMESTEPS / self.architecture.timesteps
        scaled = t.to(torch.float64) * scale
        embedding = timestep_embedding(scaled, self.architecture.embedding_dim)
        embedding = embedding.to(x.dtype)
        embedding = self.time_mlp(embedding) + self.blank_embedding(blank.long())
        h = self.activation(self.conv_in(x) + embedding[:, :, None, None])
        for conv in self.hidden_convs:
            h = h + self.activation(conv(h))
        return self.conv_out(h)


def build_model(architecture: DenoiserArchitecture, seed: int = 0) -> ConvDenoiser:
    torch.manual_seed(seed)
    return ConvDenoiser(architecture)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


class TorchDenoiser:
    """Adapter from a trained ConvDenoiser to the numpy Denoiser protocol."""

    def __init__(self, model: ConvDenoiser):
        self.model = model.eval()
        self.dtype = next(model.parameters()).dtype

    def predict(self, x_t: np.ndarray, t: int, cond: Optional[Condition]) -> np.ndarray:
        """
        Raises:
            ParameterError: If t lies outside the timestep range the model was built
                for
        """
        x_t = np.asarray(x_t)
        arch = self.model.architecture
        ensure_in_range(t, "t", 1, arch.timesteps)
        batch = x_t.reshape((-1,) + x_t.shape[-3:])
        n = len(batch)
        spatial = x_t.shape[-2:]
        if cond is None:
            cond = Condition.blank_like((arch.cond_channels,) + spatial)
        cond_shape = (n, arch.cond_channels) + spatial
        if arch.cond_channels:
            cond_batch = np.broadcast_to(cond.array, cond_shape)
        else:
            cond_batch = np.zeros(cond_shape)
        with torch.no_grad():
            eps = self.model(
                torch.as_tensor(batch, dtype=self.dtype),
                torch.full((n,), int(t), dtype=torch.long),
                torch.as_tensor(np.ascontiguousarray(cond_batch), dtype=self.dtype),
                torch.full((n,), bool(cond.blank)),
            )
        return eps.numpy().astype(np.float64).reshape(x_t.shape)


@dataclass(frozen=True)
class TrainBatch:
    """Stacked sample-space tensors: dual (N, 8, H, W) and cond (N, 4, H, W)."""

    dual: np.ndarray
    cond: np.ndarray

    @classmethod
    def from_examples(cls, examples: Sequence[TrainExample]) -> "TrainBatch":
        if not examples:
            raise ParameterError("Batch must not be empty", "batch")
        return cls(
            np.stack([e.dual_sample() for e in examples]),
            np.stack([e.cond_sample() for e in examples]),
        )

    def __len__(self) -> int:
        return len(self.dual)

    def subset(self, index: np.ndarray) -> "TrainBatch":
        return TrainBatch(self.dual[index], self.cond[index])


@dataclass(frozen=True)
class TrainStepResult:
    loss: float
    gradients: Dict[str, np.ndarray]


def _step_loss(
    model: nn.Module,
    batch: TrainBatch,
    t: np.ndarray,
    noise: np.ndarray,
    blank: np.ndarray,
    schedule: VarianceSchedule,
) -> torch.Tensor:
    if noise.shape != batch.dual.shape or len(t) != len(batch):
        raise ParameterError(
            f"Noise {noise.shape} / timesteps {len(t)} do not fit batch "
            f"{batch.dual.shape}",
            "noise",
        )
    dtype = next(model.parameters()).dtype
    alpha_bar = schedule.alpha_bars[np.asarray(t) - 1][:, None, None, None]
    x_t = np.sqrt(alpha_bar) * batch.dual + np.sqrt(1.0 - alpha_bar) * noise
    target = torch.as_tensor(noise, dtype=dtype)
    predicted = model(
        torch.as_tensor(x_t, dtype=dtype),
        torch.as_tensor(t, dtype=torch.long),
        torch.as_tensor(batch.cond, dtype=dtype),
        torch.as_tensor(blank, dtype=torch.bool),
    )
    return ((predicted - target) ** 2).mean()


def draw_blank(rng: np.random.Generator, n: int, dropout_prob: float) -> np.ndarray:
    """Per-example condition dropout flags."""
    return rng.random(n) < dropout_prob


def train_step(
    model: nn.Module,
    batch: TrainBatch,
    t: np.ndarray,
    noise: np.ndarray,
    dropout_prob: float,
    schedule: VarianceSchedule,
    rng: np.random.Generator,
) -> TrainStepResult:
    """
    Noise-prediction loss and its gradient for one batch.

    Each example's condition is replaced by the blank condition with probability
    dropout_prob.
    """
    blank = draw_blank(rng, len(batch), dropout_prob)
    loss = _step_loss(model, batch, t, noise, blank, schedule)
    names = [name for name, _ in model.named_parameters()]
    gradients = torch.autograd.grad(loss, list(model.parameters()), allow_unused=True)
    return TrainStepResult(
        float(loss.detach()),
        {
            name: (
                g.detach().numpy()
                if g is not None
                else np.zeros(tuple(p.shape))
            )
            for name, g, p in zip(names, gradients, model.parameters())
        },
    )


def train(
    examples: Sequence[TrainExample],
    architecture: DenoiserArchitecture,
    config: TrainConfig,
    schedule: VarianceSchedule,
    seed: int,
) -> TrainResult:
    """
    Adam training on the noise-prediction objective, one loss value per epoch.

    Raises:
        ParameterError: If the dataset is empty or the architecture was built for
            another chain length
        DivergenceError: If an epoch's loss is not finite
    """
    if not examples:
        raise ParameterError("Training needs at least one example", "dataset")
    if architecture.timesteps != schedule.timesteps:
        raise ParameterError(
            f"Architecture built for {architecture.timesteps} timesteps, schedule has "
            f"{schedule.timesteps}",
            "timesteps",
            str(architecture.timesteps),
        )
    rng = np.random.default_rng(seed)
    model = build_model(architecture, seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    data = TrainBatch.from_examples(examples)
    curve: List[float] = []
    logger.info(
        f"Training {parameter_count(model)}-parameter denoiser on {len(data)} examples "
        f"for {config.epochs} epochs"
    )

    for epoch in tqdm(range(config.epochs), desc="train", leave=False):
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(data), config.batch_size):
            batch = data.subset(order[start : start + config.batch_size])
            t = rng.integers(1, schedule.timesteps + 1, size=len(batch))
            noise = rng.standard_normal(batch.dual.shape)
            step = train_step(
                model, batch, t, noise, config.dropout_prob, schedule, rng
            )
            for parameter, gradient in zip(
                model.parameters(), step.gradients.values()
            ):
                parameter.grad = torch.as_tensor(gradient, dtype=parameter.dtype)
            optimizer.step()
            losses.append(step.loss)
        epoch_loss = float(np.mean(losses))
        if not math.isfinite(epoch_loss):
            logger.error(f"Training loss became {epoch_loss} at epoch {epoch}")
            raise DivergenceError("train", "epoch", epoch)
        curve.append(epoch_loss)
        logger.debug(f"epoch {epoch}: loss {epoch_loss:.6g}")

    logger.info(f"Training finished: loss {curve[0]:.4g} -> {curve[-1]:.4g}")
    if config.checkpoint_path:
        save_checkpoint(model, config.checkpoint_path)
    return TrainResult(model.eval(), curve)


def save_checkpoint(model: ConvDenoiser, path: Path | str) -> Path:
    parameters = {
        name: tensor.detach().to(torch.float32).numpy()
        for name, tensor in model.state_dict().items()
    }
    path = write_checkpoint(
        path, CHECKPOINT_VERSION, model.architecture.model_dump(), parameters
    )
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(
    path: Path | str, architecture: Optional[DenoiserArchitecture] = None
) -> ConvDenoiser:
    """
    Rebuild a ConvDenoiser from a checkpoint.

    When `architecture` is given the stored parameters must fit it.

    Raises:
        ArtifactNotFoundError: If the file does not exist
        CheckpointCorruptError: On a damaged file or unsupported version
        CheckpointMismatchError: If a parameter shape differs from the architecture
    """
    version, descriptor, parameters = read_checkpoint(path)
    if version != CHECKPOINT_VERSION:
        raise CheckpointCorruptError(
            str(path), f"format version {version}, expected {CHECKPOINT_VERSION}"
        )
    try:
        stored = DenoiserArchitecture.model_validate(descriptor)
    except ValidationError as exc:
        raise CheckpointCorruptError(
            str(path), f"bad architecture descriptor: {exc.error_count()} errors"
        ) from exc
    model = ConvDenoiser(architecture or stored)
    expected = model.state_dict()
    for name, tensor in expected.items():
        found = tuple(parameters[name].shape) if name in parameters else ()
        if found != tuple(tensor.shape):
            raise CheckpointMismatchError(name, tuple(tensor.shape), found)
    extra = sorted(set(parameters) - set(expected))
    if extra:
        raise CheckpointMismatchError(extra[0], (), tuple(parameters[extra[0]].shape))
    model.load_state_dict({name: torch.from_numpy(a) for name, a in parameters.items()})
    return model.eval()


def retrieval_audit(
    denoiser: TorchDenoiser,
    examples: Sequence[TrainExample],
    schedule: VarianceSchedule,
    guidance: GuidanceParams,
    seed: int,
) -> float:
    """
    Fraction of training conditions whose sample is closer (L2) to its own ground
    truth than to any other example's.
    """
    rng = np.random.default_rng(seed)
    truths = np.stack([e.dual_sample() for e in examples])
    hits = 0
    for index, example in enumerate(examples):
        generated = sample(
            denoiser,
            Condition.of(example.cond_sample()),
            schedule,
            guidance,
            truths.shape[1:],
            rng,
        )
        residuals = (truths - generated).reshape(len(truths), -1)
        distances = np.linalg.norm(residuals, axis=1)
        hits += int(np.argmin(distances) == index)
    fraction = hits / len(examples)
    logger.info(f"Retrieval audit: {hits}/{len(examples)} conditions matched")
    return fraction
