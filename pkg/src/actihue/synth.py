"""Synthetic planted-angle datasets.

``synth_generate`` makes small RGB images for the training harness.
``synth_activations`` makes N-channel post-ReLU activation images for the
retrieval and geometry experiments.

In the image set, each class ``c`` is a Gaussian blob placed at radius ``r`` and angle
``theta_c`` (plus jitter) about the image center, over folded Gaussian
background noise. The blob is tinted with the RGB color whose hue angle is
also ``theta_c``, so the class is identifiable both from where the blob sits
and from its color. All values are non-negative.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import seeding
from .activation import ActivationImage, HuePlane, pixel_positions
from .errors import ConfigError


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 8
    height: int = 16
    width: int = 16
    channels: int = 3
    per_class: int = 100
    radius: float = 4.5
    blob_sigma: float = 1.5
    amplitude: float = 1.0
    noise: float = 0.15
    angle_jitter: float = 0.05
    angles: Optional[tuple] = None
    colored: bool = True

    def class_angles(self) -> np.ndarray:
        if self.angles is not None:
            return np.asarray(self.angles, dtype=np.float64)
        return 2 * np.pi * np.arange(self.classes) / self.classes

    def validate(self):
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.per_class < 1 or min(self.height, self.width, self.channels) < 1:
            raise ConfigError("sizes must be positive")
        theta = np.mod(self.class_angles(), 2 * np.pi)
        if theta.shape != (self.classes,):
            raise ConfigError("need one planted angle per class")
        if np.unique(np.round(theta, 12)).size != self.classes:
            raise ConfigError("planted angles must be distinct")
        if self.colored and self.channels != 3:
            raise ConfigError("colored blobs need 3 channels")


def hue_color(theta: float) -> np.ndarray:
    """Non-negative RGB color whose hue angle (RGB hue plane) is ``theta``."""
    plane = HuePlane.rgb()
    return 0.5 + 0.6 * (np.cos(theta) * plane.b1 + np.sin(theta) * plane.b2)


@dataclass(frozen=True, eq=False)
class SynthDataset:
    images: np.ndarray  # (n, H, W, C) float32
    labels: np.ndarray  # (n,) int64
    spec: SynthSpec = field(default_factory=SynthSpec)

    def __len__(self):
        return self.labels.shape[0]

    def activation_images(self):
        return [ActivationImage(im, post_relu=True) for im in self.images]

    def subset(self, idx):
        return SynthDataset(self.images[idx], self.labels[idx], self.spec)


def synth_generate(spec: SynthSpec = SynthSpec(), seed: int = 0) -> SynthDataset:
    spec.validate()
    rng = seeding.stream(seed, seeding.DATA)
    pos = pixel_positions(spec.width, spec.height).reshape(spec.height, spec.width, 2)
    theta = spec.class_angles()
    n = spec.classes * spec.per_class
    images = np.empty((n, spec.height, spec.width, spec.channels), dtype=np.float32)
    labels = np.repeat(np.arange(spec.classes), spec.per_class)
    for i, c in enumerate(labels):
        ang = theta[c] + spec.angle_jitter * rng.standard_normal()
        center = spec.radius * np.array([np.cos(ang), np.sin(ang)])
        d2 = ((pos - center) ** 2).sum(axis=-1)
        blob = spec.amplitude * np.exp(-d2 / (2 * spec.blob_sigma**2))
        color = hue_color(theta[c]) if spec.colored else np.ones(spec.channels)
        noise = np.abs(spec.noise * rng.standard_normal((spec.height, spec.width, spec.channels)))
        images[i] = blob[..., None] * color + noise
    return SynthDataset(images, labels.astype(np.int64), spec)


def mass_circular_mean(images) -> tuple:
    """Angle and resultant length of total pixel mass about the image center."""
    images = np.asarray(images, dtype=np.float64)
    h, w = images.shape[1:3]
    pos = pixel_positions(w, h)
    mass = images.sum(axis=(0, 3)).reshape(-1)
    ang = np.arctan2(pos[:, 1], pos[:, 0])
    c = (mass * np.cos(ang)).sum() / mass.sum()
    s = (mass * np.sin(ang)).sum() / mass.sum()
    return float(np.arctan2(s, c)), float(np.hypot(c, s))


@dataclass(frozen=True)
class ActivationSynthSpec:
    """Layout of a synthetic bottleneck-like activation dataset.

    Channels are split into a location code (smooth radial-basis responses to
    the pixel position, scaled by a centered energy envelope) and feature
    channels. Each class activates a sparse feature signature over a region at
    its planted angle: an angular wedge from the center outward (default) or a
    Gaussian blob at ``radius``. Classes ``c`` and ``c + classes // 2`` share a
    signature and differ only in where that region sits.
    """

    classes: int = 8
    height: int = 7
    width: int = 7
    location_channels: int = 16
    feature_channels: int = 16
    per_class: int = 40
    radius: float = 2.0
    blob_sigma: float = 0.7
    angle_jitter: float = 0.05
    noise: float = 0.05
    location_gain: float = 0.6
    feature_gain: float = 1.0
    envelope_sigma: float = 2.5
    location_width: float = 1.2
    signature_nonzeros: int = 4
    shape: str = "wedge"
    wedge_width: float = 0.45
    angles: Optional[tuple] = None
    structure_seed: int = 0

    @property
    def channels(self) -> int:
        return self.location_channels + self.feature_channels

    def class_angles(self) -> np.ndarray:
        if self.angles is not None:
            return np.asarray(self.angles, dtype=np.float64)
        return 2 * np.pi * np.arange(self.classes) / self.classes

    def validate(self):
        if self.classes < 2 or self.per_class < 1:
            raise ConfigError("need >= 2 classes and >= 1 sample per class")
        theta = np.mod(self.class_angles(), 2 * np.pi)
        if theta.shape != (self.classes,) or np.unique(np.round(theta, 12)).size != self.classes:
            raise ConfigError("need one distinct planted angle per class")
        side = int(np.ceil(np.sqrt(self.location_channels)))
        if side * side != self.location_channels:
            raise ConfigError("location_channels must be a perfect square")
        if not 1 <= self.signature_nonzeros <= self.feature_channels:
            raise ConfigError("signature_nonzeros out of range")
        if self.shape not in ("blob", "wedge"):
            raise ConfigError(f"unknown blob shape {self.shape!r}")


@dataclass(frozen=True, eq=False)
class ActivationDataset:
    images: list  # ActivationImage
    labels: np.ndarray
    image_ids: np.ndarray
    spec: ActivationSynthSpec

    def __len__(self):
        return len(self.images)

    def split(self, n_memory):
        """First ``n_memory`` images of every class vs the rest, as index arrays."""
        mem, qry = [], []
        for c in np.unique(self.labels):
            idx = np.flatnonzero(self.labels == c)
            mem.extend(idx[:n_memory].tolist())
            qry.extend(idx[n_memory:].tolist())
        return np.array(mem, dtype=np.int64), np.array(qry, dtype=np.int64)


def location_code(spec: ActivationSynthSpec) -> np.ndarray:
    """``(H*W, location_channels)`` smooth non-negative position code."""
    pos = pixel_positions(spec.width, spec.height)
    side = int(round(np.sqrt(spec.location_channels)))
    half_w = (spec.width - 1) / 2
    half_h = (spec.height - 1) / 2
    gx, gy = np.meshgrid(np.linspace(-half_w, half_w, side), np.linspace(-half_h, half_h, side))
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    d2 = ((pos[:, None, :] - centers[None]) ** 2).sum(axis=-1)
    return np.exp(-d2 / (2 * spec.location_width**2))


def class_signatures(spec: ActivationSynthSpec) -> np.ndarray:
    """One sparse unit signature per class; opposite classes share one.

    Drawn from ``spec.structure_seed`` so datasets sampled with different
    seeds describe the same classes.
    """
    rng = seeding.stream(spec.structure_seed, seeding.DATA, 1)
    groups = max(1, spec.classes // 2)
    sig = np.zeros((groups, spec.feature_channels))
    for g in range(groups):
        ch = rng.choice(spec.feature_channels, size=spec.signature_nonzeros, replace=False)
        sig[g, ch] = rng.uniform(0.5, 1.0, size=ch.size)
        sig[g] /= np.linalg.norm(sig[g])
    return sig[np.arange(spec.classes) % groups]


def synth_activations(spec: ActivationSynthSpec = ActivationSynthSpec(), seed: int = 0,
                      id_offset: int = 0) -> ActivationDataset:
    spec.validate()
    rng = seeding.stream(seed, seeding.DATA, 2)
    pos = pixel_positions(spec.width, spec.height)
    envelope = np.exp(-(pos**2).sum(axis=1) / (2 * spec.envelope_sigma**2))
    loc = spec.location_gain * envelope[:, None] * location_code(spec)
    sig = class_signatures(spec)
    theta = spec.class_angles()
    labels = np.repeat(np.arange(spec.classes), spec.per_class)
    images = []
    for c in labels:
        ang = theta[c] + spec.angle_jitter * rng.standard_normal()
        center = spec.radius * np.array([np.cos(ang), np.sin(ang)])
        if spec.shape == "wedge":
            dphi = np.angle(np.exp(1j * (np.arctan2(pos[:, 1], pos[:, 0]) - ang)))
            rad = np.hypot(pos[:, 0], pos[:, 1])
            blob = np.exp(-(dphi**2) / (2 * spec.wedge_width**2)) * (rad >= 0.5)
        else:
            blob = np.exp(-((pos - center) ** 2).sum(axis=1) / (2 * spec.blob_sigma**2))
        feat = spec.feature_gain * blob[:, None] * sig[c]
        data = np.concatenate([loc, feat], axis=1)
        data += np.abs(spec.noise * rng.standard_normal(data.shape))
        images.append(
            ActivationImage(data.reshape(spec.height, spec.width, spec.channels).astype(np.float32), post_relu=True)
        )
    ids = id_offset + np.arange(labels.shape[0], dtype=np.int64)
    return ActivationDataset(images, labels.astype(np.int64), ids, spec)
