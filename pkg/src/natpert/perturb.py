"""Natural image perturbations with per-image randomised parameters.

Images are float arrays shaped (C, H, W) with values in [0, 1]; batches add
a leading axis. Each kind is driven by a single master ``severity``:

=====  ================  ==============================================
code   kind              realised parameter at per-image severity ``s``
=====  ================  ==============================================
E      elastic           displacement intensity ``alpha = s`` (pixels)
O      occlusion         ring radius ``r = s * min(H, W) / 2``
N      gaussian_noise    noise std ``sigma = s``
W      wave              row-shift amplitude ``A = s * W / 10`` (pixels)
S      saturation        colour blend ``alpha = clip(1 - s, 0, 1)``
B      blur              Gaussian std ``sigma = s`` (pixels)
=====  ================  ==============================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

KINDS = ("E", "O", "N", "W", "S", "B")
KIND_NAMES = {
    "E": "elastic",
    "O": "occlusion",
    "N": "gaussian_noise",
    "W": "wave",
    "S": "saturation",
    "B": "blur",
}
_NAME_TO_CODE = {v: k for k, v in KIND_NAMES.items()}
LUMA = (0.299, 0.587, 0.114)


def kind_code(kind: str) -> str:
    """Normalise ``'elastic'``/``'E'``-style kind names to the one-letter code."""
    if kind in KIND_NAMES:
        return kind
    if kind in _NAME_TO_CODE:
        return _NAME_TO_CODE[kind]
    raise ValueError(f"unknown perturbation kind {kind!r}")


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    severity: float = 0.0
    jitter: float = 0.5
    elastic_sigma: float = 3.0
    occlusion_thickness: float = 3.0
    wave_frequency: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "kind", kind_code(self.kind))
        if self.severity < 0:
            raise ValueError("severity must be >= 0")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")
        if self.elastic_sigma <= 0 or self.wave_frequency <= 0 or self.occlusion_thickness < 0:
            raise ValueError("invalid base parameters")

    def with_severity(self, severity: float) -> "PerturbationSpec":
        return PerturbationSpec(self.kind, float(severity), self.jitter, self.elastic_sigma,
                                self.occlusion_thickness, self.wave_frequency)


@dataclass
class PerImageDraw:
    """Randomness for one image: its realised severity and a private stream."""

    base_seed: int
    index: int
    severity: float
    rng: np.random.Generator


def image_rng(base_seed: int, index: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), int(index), int(salt)]))


def draw(spec: PerturbationSpec, base_seed: int, index: int) -> PerImageDraw:
    """Realise the per-image severity ``s_i ~ U[s(1-j), s(1+j)]``."""
    rng = image_rng(base_seed, index, KINDS.index(spec.kind) + 1)
    u = rng.uniform()
    s = spec.severity * (1.0 - spec.jitter + 2.0 * spec.jitter * u)
    return PerImageDraw(base_seed, index, float(s), rng)


def apply(spec: PerturbationSpec, image: np.ndarray, d: PerImageDraw) -> np.ndarray:
    image = np.asarray(image)
    s = d.severity
    if s == 0:
        return image.copy()
    _, h, w = image.shape
    if spec.kind == "E":
        out = elastic(image, s, spec.elastic_sigma, d.rng)
    elif spec.kind == "O":
        center = (d.rng.uniform(0, h - 1), d.rng.uniform(0, w - 1))
        out = occlusion(image, center, s * min(h, w) / 2.0, spec.occlusion_thickness)
    elif spec.kind == "N":
        out = gaussian_noise(image, s, d.rng)
    elif spec.kind == "W":
        out = wave(image, spec.wave_frequency, s * w / 10.0)
    elif spec.kind == "S":
        out = saturation(image, min(max(1.0 - s, 0.0), 1.0))
    elif spec.kind == "B":
        out = blur(image, s)
    else:  # pragma: no cover - guarded by PerturbationSpec
        raise ValueError(f"unknown perturbation kind {spec.kind!r}")
    return out


def apply_batch(spec: PerturbationSpec, images: np.ndarray, base_seed: int,
                indices=None) -> np.ndarray:
    """Perturb every image of a batch with its own derived random stream.

    ``indices`` identifies images within the dataset (defaults to
    ``range(len(images))``) so the same image always receives the same draw.
    """
    images = np.asarray(images)
    if indices is None:
        indices = range(len(images))
    if spec.severity == 0:
        return images.copy()
    out = np.empty_like(images)
    for i, idx in enumerate(indices):
        out[i] = apply(spec, images[i], draw(spec, base_seed, idx))
    return out


def compose_batch(specs, images: np.ndarray, base_seed: int, indices=None) -> np.ndarray:
    """Apply every spec to each image in a per-image random order."""
    images = np.asarray(images)
    if indices is None:
        indices = range(len(images))
    out = np.empty_like(images)
    for i, idx in enumerate(indices):
        order = image_rng(base_seed, idx, 0).permutation(len(specs))
        img = images[i]
        for j in order:
            img = apply(specs[j], img, draw(specs[j], base_seed, idx))
        out[i] = img
    return out


# ---------------------------------------------------------------------------
# individual operators


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian, radius ``ceil(3 sigma)``, normalised to unit sum."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _smooth2d(field: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel1d(sigma)
    field = ndimage.correlate1d(field, k, axis=-2, mode="reflect")
    return ndimage.correlate1d(field, k, axis=-1, mode="reflect")


def elastic_displacement(shape, alpha: float, sigma: float, rng) -> tuple:
    """Smoothed U(-1, 1) row and column offsets, scaled by ``alpha``."""
    h, w = shape
    dy = _smooth2d(rng.uniform(-1.0, 1.0, (h, w)), sigma) * alpha
    dx = _smooth2d(rng.uniform(-1.0, 1.0, (h, w)), sigma) * alpha
    return dy, dx


def elastic(image: np.ndarray, alpha: float, sigma: float, rng) -> np.ndarray:
    """Bilinear resampling along a random smooth displacement field."""
    if alpha == 0:
        return image.copy()
    if sigma <= 0:
        raise ValueError("elastic smoothing sigma must be positive")
    c, h, w = image.shape
    dy, dx = elastic_displacement((h, w), alpha, sigma, rng)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([yy + dy, xx + dx])
    out = np.empty_like(image)
    for ch in range(c):
        out[ch] = ndimage.map_coordinates(image[ch].astype(np.float64), coords,
                                          order=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def ring_mask(shape, center, radius: float, thickness: float) -> np.ndarray:
    """Boolean mask of pixels whose distance to ``center`` is within
    ``thickness / 2`` of ``radius``."""
    h, w = shape
    if thickness <= 0:
        return np.zeros((h, w), dtype=bool)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d = np.hypot(yy - center[0], xx - center[1])
    return np.abs(d - radius) <= thickness / 2.0


def occlusion(image: np.ndarray, center, radius: float, thickness: float) -> np.ndarray:
    """Black circular ring: ``min(image, b)`` with ``b`` zero on the ring."""
    if radius < 0 or thickness < 0:
        raise ValueError("radius and thickness must be >= 0")
    mask = ring_mask(image.shape[-2:], center, radius, thickness)
    b = np.where(mask, 0.0, 1.0).astype(image.dtype)
    return np.minimum(image, b)


def gaussian_noise(image: np.ndarray, sigma: float, rng) -> np.ndarray:
    if sigma < 0:
        raise ValueError("noise std must be >= 0")
    if sigma == 0:
        return image.copy()
    noisy = image + rng.normal(0.0, sigma, image.shape)
    return np.clip(noisy, 0.0, 1.0).astype(image.dtype)


def wave_shifts(height: int, frequency: float, amplitude: float) -> np.ndarray:
    rows = np.arange(height)
    return np.rint(amplitude * np.sin(2.0 * np.pi * frequency * rows / height)).astype(int)


def wave(image: np.ndarray, frequency: float, amplitude: float) -> np.ndarray:
    """Cyclically shift each row horizontally by a sinusoid of its index."""
    if frequency <= 0 or amplitude < 0:
        raise ValueError("wave needs frequency > 0 and amplitude >= 0")
    out = image.copy()
    for i, shift in enumerate(wave_shifts(image.shape[-2], frequency, amplitude)):
        if shift:
            out[:, i, :] = np.roll(image[:, i, :], shift, axis=-1)
    return out


def grayscale(image: np.ndarray) -> np.ndarray:
    if image.shape[0] != 3:
        return image.copy()
    gray = LUMA[0] * image[0] + LUMA[1] * image[1] + LUMA[2] * image[2]
    return np.broadcast_to(gray, image.shape).astype(image.dtype)


def saturation(image: np.ndarray, alpha: float) -> np.ndarray:
    """Blend towards the luminance image: ``(1-alpha)*gray + alpha*image``."""
    if not 0 <= alpha <= 1:
        raise ValueError("saturation blend must lie in [0, 1]")
    if alpha == 1 or image.shape[0] != 3:
        return image.copy()
    out = (1.0 - alpha) * grayscale(image).astype(np.float64) + alpha * image
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma < 0:
        raise ValueError("blur sigma must be >= 0")
    if sigma == 0:
        return image.copy()
    out = _smooth2d(image.astype(np.float64), sigma)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def mse(clean: np.ndarray, perturbed: np.ndarray) -> float:
    """Mean squared difference on the 0-255 intensity scale."""
    clean = np.asarray(clean, dtype=np.float64)
    perturbed = np.asarray(perturbed, dtype=np.float64)
    if clean.shape != perturbed.shape:
        raise ValueError(f"mse: shape mismatch {clean.shape} vs {perturbed.shape}")
    return float(np.mean((255.0 * (clean - perturbed)) ** 2))
