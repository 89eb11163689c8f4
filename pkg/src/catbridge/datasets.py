"""Benchmark marginals and samplers on categorical grids.

The 1-D pair puts the uniform law at t = 0 and a linearly increasing law at
t = 1.  The 2-D pair discretizes a centered gaussian blob and a swiss-roll
curve onto an S x S grid over a square box; points are floored to cells and
out-of-box points are clamped to the boundary cells.  Both continuous laws
are also available as grid marginals: the gaussian one exactly through the
normal CDF, the swiss roll empirically from a large sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import CategoricalDistribution, StateSpace


class EmptyInput(ValueError):
    """An empirical estimate was requested from zero samples."""


@dataclass(frozen=True)
class GridSpec2D:
    """Square discretization box with S cells per axis."""

    num_categories: int = 50
    low: float = -2.2
    high: float = 2.2

    def __post_init__(self) -> None:
        if self.num_categories < 2:
            raise ValueError("need at least two cells per axis")
        if not self.high > self.low:
            raise ValueError("box must have positive extent")

    @property
    def space(self) -> StateSpace:
        return StateSpace(self.num_categories, 2)

    def discretize(self, points: np.ndarray) -> np.ndarray:
        """Map (m, 2) coordinates to (m, 2) cell indices, clamping to the box."""
        pts = np.asarray(points, dtype=np.float64)
        width = (self.high - self.low) / self.num_categories
        cells = np.floor((pts - self.low) / width).astype(np.int64)
        return np.clip(cells, 0, self.num_categories - 1)

    def centers(self) -> np.ndarray:
        """Cell-center coordinates per axis, shape (S,)."""
        width = (self.high - self.low) / self.num_categories
        return self.low + width * (np.arange(self.num_categories) + 0.5)


def marginals_linear(num_categories: int) -> tuple[CategoricalDistribution, CategoricalDistribution]:
    """Uniform source and linearly tilted target on a 1-D space.

    The target gives category k (zero-based) weight proportional to k + 1.
    """
    space = StateSpace(num_categories, 1)
    weights = np.arange(1, num_categories + 1, dtype=np.float64)
    return (
        CategoricalDistribution.uniform(space),
        CategoricalDistribution(space, weights / weights.sum()),
    )


def sample_gaussian_2d(spec: GridSpec2D, n: int, rng: np.random.Generator,
                       mean: tuple[float, float] = (0.0, 0.0),
                       std: float = 0.5) -> np.ndarray:
    """Draw n cells from an isotropic gaussian discretized onto the grid."""
    pts = rng.normal(loc=mean, scale=std, size=(n, 2))
    return spec.discretize(pts)


def _swiss_roll_points(spec: GridSpec2D, n: int, rng: np.random.Generator,
                       noise: float) -> np.ndarray:
    theta = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
    radius_max = 0.92 * 0.5 * (spec.high - spec.low)
    r = theta / (4.5 * np.pi) * radius_max
    pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return pts + rng.normal(scale=noise, size=(n, 2))


def sample_swiss_roll_2d(spec: GridSpec2D, n: int, rng: np.random.Generator,
                         noise: float = 0.05) -> np.ndarray:
    """Draw n cells from a noisy two-turn spiral discretized onto the grid."""
    return spec.discretize(_swiss_roll_points(spec, n, rng, noise))


def empirical_marginal(samples: np.ndarray, space: StateSpace) -> CategoricalDistribution:
    """Histogram of (m, D) state samples as a distribution over the space."""
    arr = np.asarray(samples, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0:
        raise EmptyInput("cannot build an empirical marginal from zero samples")
    flat = space.flatten(arr)
    counts = np.bincount(flat, minlength=space.num_states).astype(np.float64)
    return CategoricalDistribution(space, counts / counts.sum())


def gaussian_grid_marginal(spec: GridSpec2D, mean: tuple[float, float] = (0.0, 0.0),
                           std: float = 0.5) -> CategoricalDistribution:
    """Exact grid law of the clamped gaussian, via per-axis CDF differences."""
    edges = spec.low + (spec.high - spec.low) * np.arange(spec.num_categories + 1) / spec.num_categories
    per_axis = []
    for axis_mean in mean:
        cdf = norm.cdf(edges, loc=axis_mean, scale=std)
        mass = np.diff(cdf)
        mass[0] += cdf[0]          # everything left of the box lands in cell 0
        mass[-1] += 1.0 - cdf[-1]  # everything right of the box lands in the last cell
        per_axis.append(mass / mass.sum())
    joint = np.outer(per_axis[0], per_axis[1]).ravel()
    return CategoricalDistribution(spec.space, joint)


def swiss_roll_grid_marginal(spec: GridSpec2D, n: int, rng: np.random.Generator,
                             noise: float = 0.05) -> CategoricalDistribution:
    """Empirical grid law of the spiral from an n-point sample."""
    return empirical_marginal(sample_swiss_roll_2d(spec, n, rng, noise), spec.space)


def sampler_from_distribution(dist: CategoricalDistribution):
    """Exact sampler ``f(rng, size) -> (size, D)`` for a grid distribution."""
    space = dist.space
    cumulative = np.cumsum(dist.probs)

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        flat = np.searchsorted(cumulative, rng.random(size), side="right")
        return space.unflatten(np.minimum(flat, space.num_states - 1))

    return sample


def sampler_gaussian(spec: GridSpec2D, mean: tuple[float, float] = (0.0, 0.0),
                     std: float = 0.5):
    """Fresh-draw sampler of the discretized gaussian."""

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        return sample_gaussian_2d(spec, size, rng, mean, std)

    return sample


def sampler_swiss_roll(spec: GridSpec2D, noise: float = 0.05):
    """Fresh-draw sampler of the discretized spiral."""

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        return sample_swiss_roll_2d(spec, size, rng, noise)

    return sample


def samples_csv(samples: np.ndarray) -> str:
    """State samples as CSV text with one row per sample, one column per dimension."""
    arr = np.asarray(samples, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[:, None]
    header = ",".join(f"d{i}" for i in range(arr.shape[1]))
    lines = [header]
    lines.extend(",".join(str(v) for v in row) for row in arr)
    return "\n".join(lines) + "\n"


def write_samples_csv(samples: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(samples_csv(samples))


def read_samples_csv(path) -> np.ndarray:
    """Inverse of :func:`write_samples_csv`; returns an (m, D) int array."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 2:
        raise EmptyInput("sample file contains no rows")
    return np.array([[int(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.int64)
