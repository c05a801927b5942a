"""Gaussian summaries of RGB images and datasets, and distances between them.

A single image is summarized by the mean and unbiased sample variance of all
of its pixel values, with the three color channels pooled into one scalar
population. Dataset-level summaries are built bottom-up: a vehicle averages
the summaries of its images, and a server combines the summaries reported by
its children. Every summary is the three-element tuple ``(n, mu, var)`` --
the only statistics a node ever transmits upward.

Discrepancy between two summaries is measured by the Bhattacharyya distance
between the two implied normal densities. A numerically integrated version of
the underlying overlap coefficient is kept alongside the closed form as an
independent cross-check.

All functions are pure and thread-safe. Sums over children use compensated
summation (``math.fsum``), which makes the aggregation results independent of
input order down to the last bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImageTensor",
    "GaussianSummary",
    "IntegrationGrid",
    "estimate_image_gaussian",
    "aggregate_vehicle",
    "aggregate_children",
    "bhattacharyya",
    "bhattacharyya_coefficient_numeric",
]


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """An 8-bit RGB image stored row-major with interleaved channels."""

    pixels: np.ndarray  # shape (height, width, 3), dtype uint8

    def __post_init__(self) -> None:
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.ndim != 3 or p.shape[2] != 3:
            raise ValueError("pixels must be a (height, width, 3) array")
        if p.dtype != np.uint8:
            raise ValueError("pixels must have dtype uint8")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> int:
        return 3

    @property
    def data(self) -> np.ndarray:
        """Flat row-major, channel-interleaved pixel values."""
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class GaussianSummary:
    """Three-element dataset summary: image count, mean, variance.

    ``n`` is the number of images the summary describes (1 for a single
    image), ``mu`` the mean pixel value and ``var`` the variance, both on the
    raw 0-255 intensity scale.
    """

    n: int
    mu: float
    var: float

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be an integer >= 1")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")
        if not (math.isfinite(self.var) and self.var >= 0.0):
            raise ValueError("var must be finite and >= 0")


@dataclass(frozen=True)
class IntegrationGrid:
    """Trapezoid grid for the numeric overlap coefficient.

    The integration range is ``[min(mu) - span_sigmas * sigma_max,
    max(mu) + span_sigmas * sigma_max]`` split into ``intervals`` equal steps.
    """

    intervals: int = 1 << 16
    span_sigmas: float = 8.0

    def __post_init__(self) -> None:
        if self.intervals < 2:
            raise ValueError("intervals must be >= 2")
        if self.span_sigmas < 8.0:
            raise ValueError("integration range must cover at least 8 sigma")


def estimate_image_gaussian(img: ImageTensor) -> GaussianSummary:
    """Fit a single scalar Gaussian to all pixel values of one RGB image.

    All ``3 * width * height`` channel samples are pooled. The variance is
    the unbiased sample variance (denominator ``L - 1``). Pixel values are
    used on their raw 0-255 scale.
    """
    x = img.pixels.astype(np.float64).reshape(-1)
    n_samples = x.size
    if n_samples < 2:
        raise ValueError("image too small for variance estimation")
    mu = float(x.sum() / n_samples)
    var = float(((x - mu) ** 2).sum() / (n_samples - 1))
    return GaussianSummary(n=1, mu=mu, var=var)


def aggregate_vehicle(images: list[GaussianSummary]) -> GaussianSummary:
    """Combine per-image summaries (each with n=1) into one vehicle summary.

    The vehicle models its dataset as the average of the per-image Gaussians:
    the mean is the mean of the image means, and the variance is
    ``sum(var_i) / n**2`` -- the variance of that average.
    """
    if not images:
        raise ValueError("vehicle has no data")
    for s in images:
        if s.n != 1:
            raise ValueError("vehicle aggregation expects per-image summaries (n=1)")
    n = len(images)
    mu = math.fsum(s.mu for s in images) / n
    var = math.fsum(s.var for s in images) / (n * n)
    return GaussianSummary(n=n, mu=mu, var=var)


def aggregate_children(children: list[GaussianSummary]) -> GaussianSummary:
    """Combine child summaries into the parent server's summary.

    Used identically for an edge over its vehicles and for the cloud over its
    edges: counts add, means combine count-weighted, and variances combine
    with squared-count weights normalized by the squared total.
    """
    if not children:
        raise ValueError("server has no children")
    n = sum(c.n for c in children)
    mu = math.fsum(c.n * c.mu for c in children) / n
    var = math.fsum(c.n * c.n * c.var for c in children) / (n * n)
    return GaussianSummary(n=n, mu=mu, var=var)


def bhattacharyya(a: GaussianSummary, b: GaussianSummary) -> float:
    """Bhattacharyya distance (nats) between two Gaussian summaries.

    Closed form for two normals::

        D = (mu_a - mu_b)^2 / (4 (var_a + var_b))
            + 0.5 * ln((var_a + var_b) / (2 sqrt(var_a var_b)))

    The first term captures the separation of the means, the second the
    mismatch in dispersion. The ``n`` fields are ignored. Both variances must
    be strictly positive; callers that may hold degenerate summaries are
    expected to floor the variances first (see ``weighting``).
    """
    if a.var <= 0.0 or b.var <= 0.0:
        raise ValueError("degenerate distribution: variance must be > 0")
    if a.mu == b.mu and a.var == b.var:
        return 0.0
    s = a.var + b.var
    mean_term = 0.25 * (a.mu - b.mu) ** 2 / s
    disp_term = 0.5 * math.log(s / (2.0 * math.sqrt(a.var * b.var)))
    # Guard against sign noise in the log term for near-identical inputs.
    return max(mean_term + disp_term, 0.0)


def bhattacharyya_coefficient_numeric(
    a: GaussianSummary,
    b: GaussianSummary,
    grid: IntegrationGrid | None = None,
) -> float:
    """Overlap coefficient of the two Gaussian densities, by quadrature.

    Integrates ``sqrt(f_a(x) f_b(x))`` with the trapezoid rule on a uniform
    grid spanning both means plus ``span_sigmas`` of the larger standard
    deviation on either side. Returns a value in (0, 1]; its negative log is
    an independent check of :func:`bhattacharyya`.
    """
    if grid is None:
        grid = IntegrationGrid()
    if a.var <= 0.0 or b.var <= 0.0:
        raise ValueError("degenerate distribution: variance must be > 0")
    sd_a = math.sqrt(a.var)
    sd_b = math.sqrt(b.var)
    sd_max = max(sd_a, sd_b)
    lo = min(a.mu, b.mu) - grid.span_sigmas * sd_max
    hi = max(a.mu, b.mu) + grid.span_sigmas * sd_max
    xs = np.linspace(lo, hi, grid.intervals + 1)
    # Work in log space so the pointwise product cannot underflow.
    log_norm = -0.5 * math.log(2.0 * math.pi)
    log_fa = log_norm - math.log(sd_a) - 0.5 * ((xs - a.mu) / sd_a) ** 2
    log_fb = log_norm - math.log(sd_b) - 0.5 * ((xs - b.mu) / sd_b) ** 2
    integrand = np.exp(0.5 * (log_fa + log_fb))
    step = (hi - lo) / grid.intervals
    bc = float(step * (integrand.sum() - 0.5 * (integrand[0] + integrand[-1])))
    if not math.isfinite(bc) or bc <= 0.0:
        raise ValueError("overlap integral underflowed or did not converge")
    return bc
