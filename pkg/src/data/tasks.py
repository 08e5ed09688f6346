"""
Synthetic unpaired two-domain tasks on procedural grey-scale images.

Base images are a smooth background ramp in [0, 0.3] with one to three
rectangles or anti-aliased disks of intensity 0.4-1.0, clipped to [0, 1].

- denoise: X clean images, Y independently drawn images plus Gaussian noise,
  and a held-out paired (clean, noisy) evaluation set
- style: X = 0.2 + 0.3 * base (dim, low contrast), Y = 0.9 - 0.6 * base
  (bright, inverted), with held-out samples of both domains
"""
import hashlib
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Set
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from src.utils.errors import DatasetError
from src.utils.logger import LOGGER


class TaskSpec(BaseModel):
    """Everything a dataset is generated from."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: Literal["denoise", "style"] = "denoise"
    n_train: int = Field(default=64, ge=1)
    n_eval: int = Field(default=16, ge=1)
    noise_sigma: float = Field(default=0.1, ge=0)
    seed: int = 0
    image_size: int = Field(default=16, ge=4)


@dataclass(frozen=True)
class DomainDataset:
    """Samples of one domain, stacked as [n, 1, H, W] float32."""
    domain: str
    samples: np.ndarray
    spec: TaskSpec

    def __post_init__(self):
        if self.samples.ndim != 4 or self.samples.shape[0] == 0:
            raise DatasetError(f"Domain {self.domain}: samples must be a non-empty [n, C, H, W] stack")
        if not np.isfinite(self.samples).all():
            raise DatasetError(f"Domain {self.domain}: non-finite samples")

    def __len__(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True)
class PairedEvalSet:
    """Index-aligned (clean, degraded) pairs never shown to a client."""
    clean: np.ndarray
    degraded: np.ndarray

    def __post_init__(self):
        if self.clean.shape != self.degraded.shape:
            raise DatasetError(f"Eval pairs misaligned: {self.clean.shape} vs {self.degraded.shape}")

    def __len__(self) -> int:
        return int(self.clean.shape[0])


@dataclass(frozen=True)
class TaskData:
    x: DomainDataset
    y: DomainDataset
    paired: Optional[PairedEvalSet] = None
    eval_x: Optional[DomainDataset] = None
    eval_y: Optional[DomainDataset] = None

    def domain(self, tag: str) -> DomainDataset:
        return self.x if tag == "X" else self.y


# ============================================================================
# Procedural images
# ============================================================================

def render_image(rng: np.random.Generator, size: int = 16) -> np.ndarray:
    """One [1, size, size] image."""
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    low = rng.uniform(0.0, 0.15)
    high = rng.uniform(low, 0.3)
    image = low + (high - low) * ramp

    pixel_y, pixel_x = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    for _ in range(rng.integers(1, 4)):
        intensity = rng.uniform(0.4, 1.0)
        if rng.random() < 0.5:
            h, w = rng.integers(3, max(size // 2, 4), size=2)
            top, left = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
            image[top:top + h, left:left + w] = intensity
        else:
            radius = rng.uniform(1.5, size / 4)
            cy, cx = rng.uniform(radius, size - radius, size=2)
            distance = np.sqrt((pixel_y - cy) ** 2 + (pixel_x - cx) ** 2)
            coverage = np.clip(radius + 0.5 - distance, 0.0, 1.0)
            image = image * (1 - coverage) + intensity * coverage

    return np.clip(image, 0.0, 1.0)[None].astype(np.float32)


def render_images(rng: np.random.Generator, n: int, size: int = 16) -> np.ndarray:
    return np.stack([render_image(rng, size) for _ in range(n)])


# ============================================================================
# Tasks
# ============================================================================

def make_denoise_task(n_train: int, n_eval: int, noise_sigma: float, seed: int, size: int = 16) -> TaskData:
    """
    Clean domain X, noisy domain Y and a paired evaluation set.

    X, Y and the evaluation images come from separate random streams, so the
    two training domains never share an underlying image.
    """
    if n_train < 1 or n_eval < 1:
        raise DatasetError(f"n_train and n_eval must be >= 1, got {n_train}, {n_eval}")
    if noise_sigma < 0:
        raise DatasetError(f"noise_sigma must be >= 0, got {noise_sigma}")
    spec = TaskSpec(name="denoise", n_train=n_train, n_eval=n_eval, noise_sigma=noise_sigma, seed=seed, image_size=size)
    rng_x, rng_y, rng_eval, rng_noise = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]

    clean_x = render_images(rng_x, n_train, size)
    base_y = render_images(rng_y, n_train, size)
    noisy_y = base_y + rng_noise.normal(0.0, noise_sigma, size=base_y.shape).astype(np.float32)
    eval_clean = render_images(rng_eval, n_eval, size)
    eval_noisy = eval_clean + rng_noise.normal(0.0, noise_sigma, size=eval_clean.shape).astype(np.float32)

    LOGGER.info(f"Generated denoise task: {n_train} per domain, {n_eval} eval pairs, sigma {noise_sigma}, seed {seed}")
    return TaskData(
        x=DomainDataset("X", clean_x, spec),
        y=DomainDataset("Y", noisy_y.astype(np.float32), spec),
        paired=PairedEvalSet(eval_clean, eval_noisy.astype(np.float32)),
    )


def to_style_x(base: np.ndarray) -> np.ndarray:
    return (0.2 + 0.3 * base).astype(np.float32)


def to_style_y(base: np.ndarray) -> np.ndarray:
    return (0.9 - 0.6 * base).astype(np.float32)


def make_style_task(n_per_domain: int, seed: int, n_eval: int = 16, size: int = 16) -> TaskData:
    """Two unpaired domains with different brightness and contrast, plus held-out samples of each."""
    if n_per_domain < 1:
        raise DatasetError(f"n_per_domain must be >= 1, got {n_per_domain}")
    spec = TaskSpec(name="style", n_train=n_per_domain, n_eval=max(n_eval, 1), noise_sigma=0.0, seed=seed, image_size=size)
    rng_x, rng_y, rng_eval_x, rng_eval_y = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]

    data = TaskData(
        x=DomainDataset("X", to_style_x(render_images(rng_x, n_per_domain, size)), spec),
        y=DomainDataset("Y", to_style_y(render_images(rng_y, n_per_domain, size)), spec),
        eval_x=DomainDataset("X", to_style_x(render_images(rng_eval_x, spec.n_eval, size)), spec),
        eval_y=DomainDataset("Y", to_style_y(render_images(rng_eval_y, spec.n_eval, size)), spec),
    )
    LOGGER.info(f"Generated style task: {n_per_domain} per domain, {spec.n_eval} held out, seed {seed}")
    return data


def build_task(spec: TaskSpec) -> TaskData:
    if spec.name == "denoise":
        return make_denoise_task(spec.n_train, spec.n_eval, spec.noise_sigma, spec.seed, spec.image_size)
    return make_style_task(spec.n_train, spec.seed, spec.n_eval, spec.image_size)


# ============================================================================
# Content hashes
# ============================================================================

def content_hashes(samples: np.ndarray) -> Set[str]:
    """SHA-256 of every sample's float32 bytes."""
    return {hashlib.sha256(np.ascontiguousarray(s, dtype="<f4").tobytes()).hexdigest() for s in samples}


def disjoint(*sample_sets: np.ndarray) -> bool:
    """True when no sample appears in two of the given stacks."""
    seen: Dict[str, int] = {}
    for index, samples in enumerate(sample_sets):
        for digest in content_hashes(samples):
            if seen.setdefault(digest, index) != index:
                return False
    return True
