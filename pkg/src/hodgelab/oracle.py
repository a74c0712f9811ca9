"""Closed-form spectra and heat kernels on model manifolds.

These are the ground-truth references for the discrete solvers: lattice
spectra of flat tori, spherical-harmonic levels on the round sphere, the
exact spectrum of the cycle-graph Laplacian and the wrapped Gaussian heat
kernel on a circle.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np

__all__ = [
    "AnalyticSpectrum",
    "torus_spectrum",
    "sphere_spectrum",
    "ring_laplacian_spectrum",
    "circle_heat_kernel",
    "lattice_norms",
]

# per-image cutoff for the wrapped Gaussian
IMAGE_TOL = 1e-16
MIN_IMAGES = 3


@dataclass(frozen=True)
class AnalyticSpectrum:
    """Distinct eigenvalue levels with multiplicities, ascending.

    Attributes
    ----------
    manifold : str
        Label such as ``"T2"`` or ``"S2"``.
    degree : int
        Form degree ``p``.
    levels : ndarray
        Distinct eigenvalues, strictly increasing.
    multiplicities : ndarray of int
        Positive multiplicity of each level.
    cutoff : float
        Every eigenvalue ``<= cutoff`` is listed.
    """

    manifold: str
    degree: int
    levels: np.ndarray
    multiplicities: np.ndarray
    cutoff: float

    def __post_init__(self):
        if len(self.levels) != len(self.multiplicities):
            raise ValueError("levels and multiplicities differ in length")
        if np.any(np.asarray(self.multiplicities) <= 0):
            raise ValueError("multiplicities must be positive")
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("levels must be strictly increasing")

    @property
    def total(self) -> int:
        return int(np.sum(self.multiplicities))

    def eigenvalues(self, count: int | None = None) -> np.ndarray:
        """Eigenvalues repeated by multiplicity, optionally the first ``count``."""
        vals = np.repeat(self.levels, self.multiplicities)
        if count is None:
            return vals
        if count > vals.size:
            raise ValueError(f"only {vals.size} eigenvalues available, {count} requested")
        return vals[:count]

    def level_slices(self) -> list[slice]:
        """Index ranges of each level in :meth:`eigenvalues` order."""
        ends = np.cumsum(self.multiplicities)
        starts = ends - self.multiplicities
        return [slice(int(a), int(b)) for a, b in zip(starts, ends)]

    def to_csv(self, path: str | Path | None = None) -> str:
        """Serialize as ``lambda,multiplicity`` rows; also writes ``path`` if given."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["lambda", "multiplicity"])
        for lam, mult in zip(self.levels, self.multiplicities):
            writer.writerow([repr(float(lam)), int(mult)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def lattice_norms(dim: int, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Squared norms of all ``m`` in ``Z^dim`` with ``|m|^2 <= radius^2``.

    Exact integer arithmetic over the bounding box ``[-radius, radius]^dim``.

    Returns
    -------
    norms, counts : ndarray of int
        Distinct values of ``|m|^2`` and how many lattice points attain each.
    """
    axis = np.arange(-radius, radius + 1, dtype=np.int64) ** 2
    sq = axis
    for _ in range(dim - 1):
        sq = (sq[:, None] + axis[None, :]).ravel()
    sq = sq[sq <= radius * radius]
    return np.unique(sq, return_counts=True)


def torus_spectrum(dim: int, period: float = 2 * np.pi, count: int = 50, p: int = 0) -> AnalyticSpectrum:
    """Spectrum of the Hodge Laplacian on the flat torus ``(R/period Z)^dim``.

    Eigenvalues are ``(2 pi / period)^2 |m|^2``. Forms of degree ``p`` act
    componentwise, so every scalar level is repeated ``C(dim, p)`` times
    (for ``p = 1`` on ``T^2``: exact plus coexact, and 2 harmonic forms).
    Whole levels are returned until at least ``count`` eigenvalues are covered.

    Examples
    --------
    >>> torus_spectrum(1, count=7).eigenvalues(7)
    array([0., 1., 1., 4., 4., 9., 9.])
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if not 0 <= p <= dim:
        raise ValueError(f"form degree {p} out of range for dim {dim}")
    if count < 1:
        raise ValueError("count must be positive")
    factor = comb(dim, p)
    radius = 1
    while True:
        norms, counts = lattice_norms(dim, radius)
        # levels up to radius^2 are complete; stop once they hold count entries
        if factor * counts.sum() >= count:
            break
        radius *= 2
    cum = np.cumsum(counts) * factor
    last = int(np.searchsorted(cum, count))
    norms, counts = norms[: last + 1], counts[: last + 1]
    scale = (2 * np.pi / period) ** 2
    return AnalyticSpectrum(
        manifold=f"T{dim}",
        degree=p,
        levels=scale * norms.astype(float),
        multiplicities=factor * counts,
        cutoff=float(scale * norms[-1]),
    )


def sphere_spectrum(count: int = 50, p: int = 0) -> AnalyticSpectrum:
    """Spectrum of the Hodge Laplacian on the unit round sphere ``S^2``.

    ``p = 0``: ``l(l+1)`` with multiplicity ``2l+1``. ``p = 1``: ``l(l+1)``
    with multiplicity ``2(2l+1)`` for ``l >= 1``. ``p = 2`` mirrors ``p = 0``.
    """
    if p not in (0, 1, 2):
        raise ValueError(f"form degree must be 0, 1 or 2, got {p}")
    if count < 1:
        raise ValueError("count must be positive")
    levels, mults = [], []
    total = 0
    l = 0 if p != 1 else 1
    while total < count:
        mult = (2 * l + 1) * (2 if p == 1 else 1)
        levels.append(float(l * (l + 1)))
        mults.append(mult)
        total += mult
        l += 1
    return AnalyticSpectrum("S2", p, np.array(levels), np.array(mults, dtype=np.int64), levels[-1])


def ring_laplacian_spectrum(N: int, h: float = 1.0) -> AnalyticSpectrum:
    """Exact spectrum of the cycle-graph Laplacian with edge length ``h``.

    Eigenvalues ``(2 - 2 cos(2 pi m / N)) / h^2`` for ``m = 0..N-1``; the
    modes ``m`` and ``N - m`` share a level.

    Examples
    --------
    >>> ring_laplacian_spectrum(4).eigenvalues()
    array([0., 2., 2., 4.])
    """
    if N < 3:
        raise ValueError(f"N must be at least 3, got {N}")
    if h <= 0:
        raise ValueError("h must be positive")
    m = np.arange(N // 2 + 1)
    levels = (2 - 2 * np.cos(2 * np.pi * m / N)) / h**2
    mults = np.full(m.size, 2, dtype=np.int64)
    mults[0] = 1
    if N % 2 == 0:
        mults[-1] = 1
    return AnalyticSpectrum(f"C{N}", 0, levels, mults, float(levels[-1]))


def _image_count(t: float, period: float) -> int:
    pref = 1.0 / math.sqrt(4 * math.pi * t)
    j = MIN_IMAGES
    # nearest point of image j lies at least (j - 1/2) * period away
    while pref * math.exp(-(((j - 0.5) * period) ** 2) / (4 * t)) >= IMAGE_TOL:
        j += 1
    return j


def circle_heat_kernel(x, y, t: float, period: float = 2 * np.pi):
    """Heat kernel of the circle of length ``period`` as a wrapped Gaussian.

    ``sum_j (4 pi t)^(-1/2) exp(-(x - y + j period)^2 / (4 t))``, with
    images dropped once they fall below ``1e-16``. Broadcasts over ``x`` and ``y``.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    d = d - period * np.round(d / period)
    jmax = _image_count(t, period)
    j = np.arange(-jmax, jmax + 1).reshape((-1,) + (1,) * d.ndim)
    terms = np.exp(-((d[None] + j * period) ** 2) / (4 * t))
    out = terms.sum(axis=0) / math.sqrt(4 * math.pi * t)
    return float(out) if out.ndim == 0 else out
