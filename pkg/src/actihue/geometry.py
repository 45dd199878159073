"""Spatial statistics of nearest-neighbor matches.

Match records pair a query pixel with one of its K memory neighbors. From
those we compute where matches land in the image plane, their mean direction
about the image center, and how displacement variance splits into radial and
tangential parts relative to the query pixel.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .activation import normalize_rows
from .classifier import DEFAULT_EPSILON, kernel
from .errors import NoAngularData
from .memory import DEFAULT_K, MemoryStore

CENTER_TOL = 1e-12
FILTERS = ("same", "different", "all")


@dataclass(frozen=True)
class MatchRecord:
    query_position: tuple
    match_position: tuple
    same_class: bool
    kernel_value: float
    query_image: int
    match_image: int


@dataclass(frozen=True, eq=False)
class MatchTable:
    """Columnar collection of match records."""

    query_xy: np.ndarray
    match_xy: np.ndarray
    same_class: np.ndarray
    kernel_value: np.ndarray
    query_image: np.ndarray
    match_image: np.ndarray
    query_class: np.ndarray
    match_class: np.ndarray

    def __len__(self):
        return self.query_xy.shape[0]

    def __getitem__(self, i):
        return MatchRecord(
            tuple(self.query_xy[i].tolist()),
            tuple(self.match_xy[i].tolist()),
            bool(self.same_class[i]),
            float(self.kernel_value[i]),
            int(self.query_image[i]),
            int(self.match_image[i]),
        )

    @classmethod
    def from_arrays(cls, query_xy, match_xy, same_class=None, kernel_value=None,
                    query_image=None, match_image=None, query_class=None, match_class=None):
        query_xy = np.asarray(query_xy, dtype=np.float64).reshape(-1, 2)
        n = query_xy.shape[0]

        def col(v, default, dtype):
            return np.full(n, default, dtype=dtype) if v is None else np.asarray(v, dtype=dtype).reshape(n)

        return cls(
            query_xy,
            np.asarray(match_xy, dtype=np.float64).reshape(n, 2),
            col(same_class, True, bool),
            col(kernel_value, 1.0, np.float64),
            col(query_image, 0, np.int64),
            col(match_image, 0, np.int64),
            col(query_class, 0, np.int64),
            col(match_class, 0, np.int64),
        )

    def select(self, mask):
        return MatchTable(*(getattr(self, f)[mask] for f in self.__dataclass_fields__))

    def filtered(self, which="all"):
        if which == "all":
            return self
        if which == "same":
            return self.select(self.same_class)
        if which == "different":
            return self.select(~self.same_class)
        raise ValueError(f"unknown filter {which!r}")

    @classmethod
    def concat(cls, tables):
        tables = list(tables)
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in cls.__dataclass_fields__))


def collect_matches(queries, store: MemoryStore, k=DEFAULT_K, epsilon=DEFAULT_EPSILON,
                    leave_one_out=False, mode=None) -> MatchTable:
    """One record per (non-zero query pixel, neighbor) pair.

    ``queries`` yields ``(ActivationImage, class_id, image_id)``. With
    ``leave_one_out`` the query's own image is excluded from its neighbors.
    """
    tables = []
    for img, class_id, image_id in queries:
        unit, keep = normalize_rows(img.pixel_matrix())
        if unit.shape[0] == 0:
            continue
        qpos = img.positions()[keep]
        results = store.query_many(unit, k, mode=mode, exclude_image=image_id if leave_one_out else None)
        idx = np.concatenate([r.indices for r in results])
        kv = np.concatenate([kernel(r.distances, r.alpha, epsilon) for r in results])
        reps = np.array([len(r) for r in results])
        mcls = store.class_ids[idx].astype(np.int64)
        tables.append(
            MatchTable(
                query_xy=np.repeat(qpos, reps, axis=0),
                match_xy=store.positions[idx].astype(np.float64),
                same_class=mcls == class_id,
                kernel_value=kv,
                query_image=np.full(idx.shape[0], image_id, dtype=np.int64),
                match_image=store.image_ids[idx].astype(np.int64),
                query_class=np.full(idx.shape[0], class_id, dtype=np.int64),
                match_class=mcls,
            )
        )
    if not tables:
        return MatchTable.from_arrays(np.empty((0, 2)), np.empty((0, 2)))
    return MatchTable.concat(tables)


def location_histogram(records: MatchTable, width, height, which="all", bins=None) -> np.ndarray:
    """2-D counts of match positions over the image extent.

    Output is indexed ``[row, col]`` with row 0 at the top of the image, like
    the activation grid. ``bins`` defaults to the activation resolution and may
    be an int or a ``(bins_x, bins_y)`` pair.
    """
    rec = records.filtered(which)
    if bins is None:
        bins = (width, height)
    elif np.isscalar(bins):
        bins = (int(bins), int(bins))
    if min(bins) < 1:
        raise ValueError("bins must be >= 1")
    counts, _, _ = np.histogram2d(
        rec.match_xy[:, 0],
        rec.match_xy[:, 1],
        bins=bins,
        range=[[-width / 2, width / 2], [-height / 2, height / 2]],
    )
    # histogram2d gives [x_bin, y_bin] with y increasing; flip to image rows
    return counts.T[::-1].astype(np.int64)


@dataclass(frozen=True)
class CircularSummary:
    mean_angle: Optional[float]
    resultant_length: float
    count: int
    skipped_center: int = 0

    def to_dict(self):
        return {
            "mean_angle": self.mean_angle,
            "resultant_length": self.resultant_length,
            "count": self.count,
            "skipped_center": self.skipped_center,
        }


def circular_summary(angles, weights=None) -> CircularSummary:
    """Weighted mean direction and resultant length of a set of angles."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.size == 0:
        return CircularSummary(None, 0.0, 0)
    w = np.ones_like(angles) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    c = (w * np.cos(angles)).sum() / total
    s = (w * np.sin(angles)).sum() / total
    r = min(float(np.hypot(c, s)), 1.0)
    mean = None
    if r >= 1e-9:
        mean = float(np.arctan2(s, c))
        if mean == -np.pi:
            mean = np.pi
    return CircularSummary(mean, r, int(angles.size))


def circular_mean(records: MatchTable, weight="uniform", which="all", strict=True) -> CircularSummary:
    """Mean direction of match positions about the image center.

    Records matched exactly at the center carry no angle and are skipped and
    counted. Raises :class:`NoAngularData` if nothing is left, unless
    ``strict`` is false, in which case an empty summary is returned.
    """
    rec = records.filtered(which)
    xy = rec.match_xy
    off = np.hypot(xy[:, 0], xy[:, 1]) > CENTER_TOL
    skipped = int((~off).sum())
    if not off.any():
        if strict:
            raise NoAngularData("all match positions lie at the image center")
        return CircularSummary(None, 0.0, 0, skipped)
    angles = np.arctan2(xy[off, 1], xy[off, 0])
    if weight == "uniform":
        w = None
    elif weight == "kernel":
        w = rec.kernel_value[off]
    else:
        raise ValueError(f"unknown weighting {weight!r}")
    s = circular_summary(angles, w)
    return CircularSummary(s.mean_angle, s.resultant_length, s.count, skipped)


@dataclass(frozen=True)
class RadialTangentialVariance:
    """Mean squared displacement along / across the ray from center to query.

    Moments are taken about zero displacement (the query location), so
    ``sigma_r2 + sigma_t2`` equals the mean squared displacement exactly.
    """

    sigma_r2: float
    sigma_t2: float
    count: int
    skipped_center: int = 0

    @property
    def total(self) -> float:
        return self.sigma_r2 + self.sigma_t2

    def to_dict(self):
        return {
            "sigma_r2": self.sigma_r2,
            "sigma_t2": self.sigma_t2,
            "count": self.count,
            "skipped_center": self.skipped_center,
        }


def radial_tangential(records: MatchTable, which="all") -> RadialTangentialVariance:
    rec = records.filtered(which)
    q = rec.query_xy
    rad = np.hypot(q[:, 0], q[:, 1])
    ok = rad > CENTER_TOL
    skipped = int((~ok).sum())
    if not ok.any():
        return RadialTangentialVariance(0.0, 0.0, 0, skipped)
    r_hat = q[ok] / rad[ok, None]
    t_hat = np.stack([-r_hat[:, 1], r_hat[:, 0]], axis=1)
    delta = rec.match_xy[ok] - q[ok]
    pr = (delta * r_hat).sum(axis=1)
    pt = (delta * t_hat).sum(axis=1)
    return RadialTangentialVariance(float(np.mean(pr * pr)), float(np.mean(pt * pt)), int(ok.sum()), skipped)


def displacement_second_moment(records: MatchTable, which="all") -> np.ndarray:
    """2x2 second-moment matrix of displacements about zero (non-center queries)."""
    rec = records.filtered(which)
    ok = np.hypot(rec.query_xy[:, 0], rec.query_xy[:, 1]) > CENTER_TOL
    d = rec.match_xy[ok] - rec.query_xy[ok]
    return d.T @ d / max(1, d.shape[0])


@dataclass(frozen=True)
class ClassAngularBias:
    class_id: int
    same: CircularSummary
    different: CircularSummary

    @property
    def gap(self) -> float:
        return self.same.resultant_length - self.different.resultant_length

    def to_dict(self):
        return {
            "class_id": self.class_id,
            "same": self.same.to_dict(),
            "different": self.different.to_dict(),
            "gap": self.gap,
        }


def angular_bias_report(records: MatchTable, weight="uniform") -> dict:
    """Per query class: circular summary of same-class and different-class matches."""
    classes = np.unique(records.query_class)
    if classes.size < 1:
        raise NoAngularData("no match records")
    out = {}
    for c in classes.tolist():
        rc = records.select(records.query_class == c)
        out[c] = ClassAngularBias(
            c,
            circular_mean(rc, weight, "same", strict=False),
            circular_mean(rc, weight, "different", strict=False),
        )
    return out


def angular_bias(store: MemoryStore, queries, k=DEFAULT_K, epsilon=DEFAULT_EPSILON,
                 leave_one_out=False, weight="uniform", mode=None) -> dict:
    """Collect matches for ``queries`` against ``store`` and summarize per class.

    A single-class memory is accepted; its different-class summaries are empty.
    """
    records = collect_matches(queries, store, k, epsilon, leave_one_out, mode)
    return angular_bias_report(records, weight)
