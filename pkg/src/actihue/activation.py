"""Activation images, pixel vectors, energy maps, pooled descriptors and the
N-channel hue diagnostic.

Pixel coordinates are centered on the image: column ``c`` and row ``r`` map to
``x = c - (W - 1) / 2`` and ``y = (H - 1) / 2 - r`` (x right, y up).
"""

from dataclasses import dataclass, replace
from typing import Hashable, Optional

import numpy as np

from .errors import (
    DegeneratePlane,
    DegenerateSpectrum,
    InvalidActivation,
    InvalidDims,
    ZeroVector,
)

ZERO_NORM = 1e-12
PLANE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ActivationImage:
    """N-channel activation tensor stored channel-last as ``(H, W, N)`` float32."""

    data: np.ndarray
    post_relu: bool = False
    layer: Optional[int] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InvalidDims(f"activation data must be (H, W, N), got shape {data.shape}")
        if min(data.shape) < 1:
            raise InvalidDims(f"all dimensions must be positive, got shape {data.shape}")
        data = np.ascontiguousarray(data, dtype=np.float32)
        if not np.all(np.isfinite(data)):
            raise InvalidActivation("activation data contains non-finite values")
        if self.post_relu and np.any(data < 0):
            raise InvalidActivation("post_relu image contains negative values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def positions(self) -> np.ndarray:
        """Centered ``(x, y)`` of every pixel, row-major, shape ``(H*W, 2)``."""
        return pixel_positions(self.width, self.height)

    def pixel_matrix(self) -> np.ndarray:
        """Pixel vectors as a ``(H*W, N)`` view in row-major pixel order."""
        return self.data.reshape(-1, self.channels)


def pixel_positions(width: int, height: int) -> np.ndarray:
    rows, cols = np.divmod(np.arange(width * height), width)
    x = cols - (width - 1) / 2.0
    y = (height - 1) / 2.0 - rows
    return np.stack([x, y], axis=1).astype(np.float64)


@dataclass(frozen=True, eq=False)
class PixelVector:
    values: np.ndarray
    position: tuple = (0.0, 0.0)
    source_image: Optional[Hashable] = None
    class_id: Optional[int] = None


def normalize(v):
    """Scale to unit L2 norm in float64.

    Accepts a :class:`PixelVector` (position and labels are kept) or a plain
    array. Raises :class:`ZeroVector` when the norm is below 1e-12.
    """
    if isinstance(v, PixelVector):
        return replace(v, values=normalize(v.values))
    arr = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(arr)
    if not norm >= ZERO_NORM:
        raise ZeroVector(f"cannot normalize vector with norm {norm:.3g}")
    return arr / norm


def normalize_rows(mat):
    """Row-wise unit normalization, returning ``(unit_rows, keep_mask)``.

    Rows whose norm is below the zero threshold are dropped instead of raising;
    ``keep_mask`` marks the rows that survived.
    """
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    keep = norms >= ZERO_NORM
    return mat[keep] / norms[keep, None], keep


def energy_map(img: ActivationImage) -> np.ndarray:
    """Per-pixel squared L2 norm over channels, shape ``(H, W)``, float64."""
    d = img.data.astype(np.float64)
    return np.einsum("hwn,hwn->hw", d, d)


def pool_descriptor(img: ActivationImage, mode: str) -> np.ndarray:
    """Global descriptor of an image, unit-normalized.

    ``avg`` and ``max`` pool over pixels per channel; ``flatten`` concatenates
    the whole tensor in row-major (row, col, channel) order.
    """
    d = img.data.astype(np.float64)
    if mode == "avg":
        vec = d.mean(axis=(0, 1))
    elif mode == "max":
        vec = d.max(axis=(0, 1))
    elif mode == "flatten":
        vec = d.reshape(-1)
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    return normalize(vec)


@dataclass(frozen=True, eq=False)
class HuePlane:
    """Orthonormal basis ``(b1, b2)`` of a plane orthogonal to the uniform axis."""

    b1: np.ndarray
    b2: np.ndarray

    @property
    def dim(self) -> int:
        return self.b1.shape[0]

    @classmethod
    def rgb(cls):
        return cls(
            np.array([2.0, -1.0, -1.0]) / np.sqrt(6.0),
            np.array([0.0, 1.0, -1.0]) / np.sqrt(2.0),
        )

    def check(self):
        b1 = np.asarray(self.b1, dtype=np.float64)
        b2 = np.asarray(self.b2, dtype=np.float64)
        if b1.shape != b2.shape or b1.ndim != 1:
            raise DegeneratePlane("basis vectors must be 1-D with equal length")
        u = uniform_axis(b1.shape[0])
        gram = [b1 @ b1 - 1.0, b2 @ b2 - 1.0, b1 @ b2, b1 @ u, b2 @ u]
        if max(abs(g) for g in gram) > PLANE_TOL:
            raise DegeneratePlane("basis is not orthonormal and orthogonal to the uniform axis")


@dataclass(frozen=True)
class HueDiagnostic:
    uniform_component: float
    residual_norm: float
    hue_angle: Optional[float]
    saturation: float


def uniform_axis(n: int) -> np.ndarray:
    return np.full(n, 1.0 / np.sqrt(n))


def hue_diagnostic(v, plane: HuePlane) -> HueDiagnostic:
    values = v.values if isinstance(v, PixelVector) else v
    values = np.asarray(values, dtype=np.float64)
    plane.check()
    if values.shape != plane.b1.shape:
        raise InvalidDims(f"vector has {values.shape[0]} channels, plane has {plane.dim}")
    u = uniform_axis(values.shape[0])
    along = float(values @ u)
    residual = values - along * u
    residual_norm = float(np.linalg.norm(residual))
    p1 = float(residual @ plane.b1)
    p2 = float(residual @ plane.b2)
    angle = float(np.arctan2(p2, p1)) if np.hypot(p1, p2) >= ZERO_NORM else None
    if angle is not None and angle == -np.pi:
        angle = np.pi
    total = float(np.linalg.norm(values))
    saturation = min(residual_norm / total, 1.0) if total > 0 else 0.0
    return HueDiagnostic(along, residual_norm, angle, saturation)


def _sign_fix(b):
    nz = np.flatnonzero(np.abs(b) > PLANE_TOL)
    if nz.size and b[nz[0]] < 0:
        return -b
    return b


def fit_hue_plane(vectors) -> HuePlane:
    """Top-2 principal directions of the uniform-axis residuals.

    The second moment is taken about the origin (hue is an angle about the
    axis, so residuals are not re-centered). Each basis vector is flipped so
    its first non-negligible component is positive.
    """
    rows = [v.values if isinstance(v, PixelVector) else v for v in vectors]
    mat = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if mat.shape[0] < 2:
        raise DegenerateSpectrum("need at least two vectors to fit a hue plane")
    u = uniform_axis(mat.shape[1])
    resid = mat - np.outer(mat @ u, u)
    _, s, vt = np.linalg.svd(resid, full_matrices=False)
    eig = s**2
    if eig.shape[0] < 2 or eig[0] <= 0 or eig[1] < 1e-12 * eig[0]:
        raise DegenerateSpectrum("residuals do not span a plane")
    b1, b2 = vt[0], vt[1]
    # re-impose orthogonality to u and to each other against rounding
    b1 = b1 - (b1 @ u) * u
    b1 /= np.linalg.norm(b1)
    b2 = b2 - (b2 @ u) * u - (b2 @ b1) * b1
    b2 /= np.linalg.norm(b2)
    return HuePlane(_sign_fix(b1), _sign_fix(b2))
