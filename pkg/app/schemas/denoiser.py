from typing import List, Optional

from pydantic import BaseModel, Field


class DenoiserArchitecture(BaseModel):
    """Shape descriptor of the convolutional noise predictor."""

    sample_channels: int = Field(8, ge=1, description="front (4) + back (4)")
    cond_channels: int = Field(4, ge=0)
    hidden_channels: int = Field(32, ge=1)
    depth: int = Field(4, ge=2, le=8, description="Number of convolution layers")
    kernel_size: int = Field(3, ge=1)
    embedding_dim: int = Field(32, ge=2)
    timesteps: int = Field(100, ge=1)

    @property
    def input_channels(self) -> int:
        return self.sample_channels + self.cond_channels


class TrainConfig(BaseModel):
    """Training loop settings for the toy denoiser."""

    epochs: int = Field(200, ge=1)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    dropout_prob: float = Field(0.10, ge=0, le=1)
    checkpoint_path: Optional[str] = None


class DatasetEntry(BaseModel):
    """File names of one cached training example, relative to the dataset directory."""

    front: str
    back: str
    cond: str


class DatasetIndex(BaseModel):
    """Index file written next to the cached NMAP maps."""

    seed: int
    resolution: int
    entries: List[DatasetEntry] = []
