"""Likelihood-contour reconstruction as a union of balls around live points.

The contour is approximated by everything within a radius of any live
point, measured in a standardised euclidean metric (coordinates divided
by the per-axis standard deviation of the live points). The radius is
the worst-case nearest-neighbour distance found by bootstrap
cross-validation, which makes the reconstruction conservative without
tuning parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

# floor for axes on which the live points have collapsed to one value
DEGENERATE_AXIS_SCALE = 1e-10

_MAX_SAMPLE_ATTEMPTS = 10_000_000


@dataclass
class Region:
    """Union of equal balls around `centers` in scaled coordinates.

    Distances are euclidean between coordinates divided by `axis_scales`.
    """

    centers: np.ndarray
    axis_scales: np.ndarray
    radius: float
    _scaled: np.ndarray = field(init=False, repr=False)
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.axis_scales = np.asarray(self.axis_scales, dtype=float)
        if np.any(self.axis_scales <= 0):
            raise ValueError("axis scales must be strictly positive")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        self._scaled = self.centers / self.axis_scales
        self._tree = cKDTree(self._scaled)

    @property
    def n_centers(self) -> int:
        return len(self.centers)


def fit_region(points, bootstrap_rounds: int = 10, rng=None) -> Region:
    """Build a region from live points by bootstrapped nearest-neighbour radii.

    Each round resamples the points with replacement; every point missed by
    the resample must be reachable from a kept point, and the radius is the
    largest such nearest-neighbour distance seen over all rounds. A round
    whose resample covers every point contributes radius 0; if all rounds
    do, the rounds are rerun once leaving a random point out each time so
    the radius is always defined by at least one held-out point.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if n < 2:
        raise ValueError(f"need at least 2 points to fit a region, got {n}")
    if bootstrap_rounds < 1:
        raise ValueError("bootstrap_rounds must be >= 1")
    if rng is None:
        rng = np.random.default_rng()

    scales = pts.std(axis=0)
    scales = np.where(scales > 0, scales, DEGENERATE_AXIS_SCALE)
    scaled = pts / scales

    radius = 0.0
    any_left_out = False
    for _ in range(bootstrap_rounds):
        drawn = rng.integers(0, n, size=n)
        kept = np.bincount(drawn, minlength=n) > 0
        if kept.all():
            continue
        any_left_out = True
        dist, _ = cKDTree(scaled[kept]).query(scaled[~kept])
        radius = max(radius, float(np.max(dist)))

    if not any_left_out:
        # forced leave-one-out keeps the radius defined
        for _ in range(bootstrap_rounds):
            out = int(rng.integers(0, n))
            kept = np.ones(n, dtype=bool)
            kept[out] = False
            dist, _ = cKDTree(scaled[kept]).query(scaled[out])
            radius = max(radius, float(dist))

    return Region(pts.copy(), scales, radius)


def contains(region: Region, u) -> bool:
    """True if `u` is within the region's radius of any center."""
    q = np.asarray(u, dtype=float) / region.axis_scales
    dist, _ = region._tree.query(q)
    return bool(dist <= region.radius)


def sample(region: Region, rng) -> np.ndarray:
    """Draw a point uniformly from the region clipped to the unit cube.

    A center is picked uniformly and a point drawn uniformly from its
    ball; accepting with probability 1/m, where m is the number of balls
    containing the candidate, removes the density excess where balls
    overlap. Draws outside the unit cube are rejected outright.
    """
    k = region.centers.shape[1]
    scaled_all = region._scaled
    tree = region._tree
    for _ in range(_MAX_SAMPLE_ATTEMPTS):
        i = int(rng.integers(0, region.n_centers))
        g = rng.standard_normal(k)
        norm = np.linalg.norm(g)
        if norm == 0.0:
            continue
        offset = g * (region.radius * rng.random() ** (1.0 / k) / norm)
        candidate_scaled = scaled_all[i] + offset
        candidate = candidate_scaled * region.axis_scales
        if np.any(candidate < 0.0) or np.any(candidate > 1.0):
            continue
        m = tree.query_ball_point(candidate_scaled, region.radius, return_length=True)
        if m <= 1 or rng.random() * m < 1.0:
            return candidate
    raise RuntimeError("region sampling failed to accept a point; region may be corrupt")
