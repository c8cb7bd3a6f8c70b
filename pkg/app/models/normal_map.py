from dataclasses import dataclass

import numpy as np

from app.core.exceptions import ParameterError

BACKGROUND_RGB = (0.5, 0.5, 0.5)
ENCODE_NORM_RANGE = (0.9, 1.1)


def encode_normal(normals: np.ndarray) -> np.ndarray:
    """Map unit normals (..., 3) to rgb = (n + 1) / 2."""
    normals = np.asarray(normals, dtype=np.float64)
    norms = np.linalg.norm(normals, axis=-1)
    low, high = ENCODE_NORM_RANGE
    if np.any((norms < low) | (norms > high)):
        raise ParameterError(
            f"Normal length must lie in [{low}, {high}] to encode",
            "normal",
            f"{float(norms.min()):.4f}..{float(norms.max()):.4f}",
        )
    return (normals + 1.0) * 0.5


def decode_normal(rgb: np.ndarray) -> np.ndarray:
    """Inverse of encode_normal, renormalized; the background decodes to zero."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if np.any((rgb < 0.0) | (rgb > 1.0)):
        raise ParameterError("rgb values must lie in [0, 1] to decode", "rgb")
    return _normalize(rgb * 2.0 - 1.0)


def _normalize(vectors: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    safe = np.where(norms > eps, norms, 1.0)
    return np.where(norms > eps, vectors / safe, 0.0)


@dataclass(frozen=True)
class NormalMap:
    """H x W x 4 buffer: rgb-encoded camera-space normal plus alpha coverage."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 4:
            raise ParameterError(
                f"NormalMap pixels must be H x W x 4, got {pixels.shape}", "pixels"
            )
        if not np.issubdtype(pixels.dtype, np.floating):
            pixels = pixels.astype(np.float64)
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def background(cls, height: int, width: int) -> "NormalMap":
        pixels = np.zeros((height, width, 4))
        pixels[..., :3] = BACKGROUND_RGB
        return cls(pixels)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[..., :3]

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[..., 3]

    def mask(self, threshold: float = 0.5) -> np.ndarray:
        return self.alpha > threshold

    def normals(self) -> np.ndarray:
        """Decoded camera-space normals (H, W, 3)."""
        return decode_normal(np.clip(self.rgb, 0.0, 1.0))

    def flipped_horizontally(self) -> "NormalMap":
        return NormalMap(self.pixels[:, ::-1, :].copy())

    def as_float32(self) -> "NormalMap":
        return NormalMap(self.pixels.astype(np.float32))

    def to_sample(self) -> np.ndarray:
        """Diffusion sample space: (4, H, W) in [-1, 1]."""
        return np.transpose(self.pixels.astype(np.float64), (2, 0, 1)) * 2.0 - 1.0

    @classmethod
    def from_sample(cls, sample: np.ndarray) -> "NormalMap":
        """Clip a (4, H, W) sample to pixels; uncovered pixels become background."""
        pixels = np.clip((np.transpose(sample, (1, 2, 0)) + 1.0) * 0.5, 0.0, 1.0)
        uncovered = pixels[..., 3] <= 0.0
        pixels[uncovered, :3] = BACKGROUND_RGB
        return cls(pixels)


def pack_dual(front: NormalMap, back: NormalMap) -> np.ndarray:
    """8-channel sample: front channels 0-3, back channels 4-7."""
    if front.resolution != back.resolution:
        raise ParameterError(
            f"Front {front.resolution} and back {back.resolution} resolutions differ",
            "resolution",
        )
    return np.concatenate([front.to_sample(), back.to_sample()], axis=0)


def unpack_dual(sample: np.ndarray) -> tuple[NormalMap, NormalMap]:
    if sample.shape[0] != 8:
        raise ParameterError(
            f"Dual sample needs 8 channels, got {sample.shape[0]}", "channels"
        )
    return NormalMap.from_sample(sample[:4]), NormalMap.from_sample(sample[4:])
