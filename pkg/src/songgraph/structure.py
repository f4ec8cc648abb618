"""Song-structure analysis over bar embeddings.

The self-similarity matrix rescales cosine similarity into [0, 1]; a
sign-checkerboard kernel smoothed by a radial Gaussian is correlated along
its diagonal to get the novelty curve, whose thresholded local maxima mark
section boundaries. Hu moment invariants of the velocity channel provide a
shape signature for homogeneity comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conlon import ConlonImage
from .errors import EmptyImageError


def compute_ssm(latents) -> np.ndarray:
    """N x N matrix of 1/2 + cos(z_i, z_j)/2; zero vectors use cos = 0.

    Exactly symmetric, diagonal forced to 1, clipped into [0, 1].
    """
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError("expected a non-empty (N, d) latent array")
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    unit = np.divide(z, norms, out=np.zeros_like(z), where=norms > 0)
    ssm = 0.5 + 0.5 * (unit @ unit.T)
    ssm = np.clip((ssm + ssm.T) / 2.0, 0.0, 1.0)
    np.fill_diagonal(ssm, 1.0)
    return ssm


def checkerboard_kernel(half_width: int, sigma: float) -> np.ndarray:
    """(2L+1)^2 kernel: sign(a) sign(b) exp(-(a^2+b^2) / (2 L sigma^2))."""
    if half_width < 1:
        raise ValueError("half_width must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    ax = np.arange(-half_width, half_width + 1, dtype=np.float64)
    taper = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * half_width * sigma**2))
    return np.sign(ax)[:, None] * np.sign(ax)[None, :] * taper


@dataclass(frozen=True)
class NoveltyCurve:
    values: np.ndarray
    half_width: int
    sigma: float


def novelty(ssm: np.ndarray, half_width: int, sigma: float) -> NoveltyCurve:
    """Correlate the checkerboard kernel along the SSM diagonal.

    Windows hanging over the matrix edge read the nearest valid row/column
    (edge replication), which keeps the curve exactly zero on constant
    matrices at every position, borders included.
    """
    n = ssm.shape[0]
    kernel = checkerboard_kernel(half_width, sigma)
    padded = np.pad(np.asarray(ssm, dtype=np.float64), half_width, mode="edge")
    size = 2 * half_width + 1
    values = np.empty(n)
    for m in range(n):
        values[m] = np.sum(padded[m : m + size, m : m + size] * kernel)
    return NoveltyCurve(values, half_width, sigma)


def default_novelty_threshold(curve: NoveltyCurve) -> float:
    v = curve.values
    return float(v.mean() + 0.5 * v.std())


def detect_boundaries(curve: NoveltyCurve | np.ndarray, threshold: float) -> list[int]:
    """Indices of above-threshold interior local maxima, plus index 0.

    A plateau contributes its leftmost index only; endpoints other than the
    forced 0 never qualify.
    """
    v = curve.values if isinstance(curve, NoveltyCurve) else np.asarray(curve)
    if v.size == 0:
        return []
    picks = {0}
    for i in range(1, v.size - 1):
        if v[i] > threshold and v[i] > v[i - 1] and v[i] >= v[i + 1]:
            picks.add(i)
    return sorted(picks)


def detect_repetitions(ssm: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Bar pairs (i, j), i < j, whose similarity strictly exceeds the threshold."""
    i_idx, j_idx = np.nonzero(np.triu(ssm, k=1) > threshold)
    return list(zip(i_idx.tolist(), j_idx.tolist()))


# -- Hu moment invariants ------------------------------------------------------

@dataclass(frozen=True)
class HuSignature:
    """The 7 Hu invariants of a grayscale mass distribution.

    `degenerate` marks images whose second central moments vanish (e.g. a
    single positive cell); such signatures carry no shape information and
    are excluded from homogeneity edges.
    """

    moments: np.ndarray
    degenerate: bool = False


def hu_signature(image: ConlonImage | np.ndarray) -> HuSignature:
    """Hu invariants of the velocity channel (columns are x, rows are y)."""
    gray = image.velocity if isinstance(image, ConlonImage) else np.asarray(image, dtype=np.float64)
    m00 = gray.sum()
    if m00 <= 0:
        raise EmptyImageError("cannot compute a shape signature of an empty image")

    ys, xs = np.mgrid[0 : gray.shape[0], 0 : gray.shape[1]]
    xbar = (xs * gray).sum() / m00
    ybar = (ys * gray).sum() / m00
    dx, dy = xs - xbar, ys - ybar

    def mu(p, q):
        return ((dx**p) * (dy**q) * gray).sum()

    mu20, mu02, mu11 = mu(2, 0), mu(0, 2), mu(1, 1)
    mu30, mu03, mu21, mu12 = mu(3, 0), mu(0, 3), mu(2, 1), mu(1, 2)
    if mu20 + mu02 <= 1e-12 * m00:
        return HuSignature(np.zeros(7), degenerate=True)

    def eta(value, p, q):
        return value / m00 ** (1 + (p + q) / 2.0)

    n20, n02, n11 = eta(mu20, 2, 0), eta(mu02, 0, 2), eta(mu11, 1, 1)
    n30, n03, n21, n12 = eta(mu30, 3, 0), eta(mu03, 0, 3), eta(mu21, 2, 1), eta(mu12, 1, 2)

    a = n30 + n12
    b = n21 + n03
    c = n30 - 3 * n12
    d = 3 * n21 - n03
    h = np.array(
        [
            n20 + n02,
            (n20 - n02) ** 2 + 4 * n11**2,
            c**2 + d**2,
            a**2 + b**2,
            c * a * (a**2 - 3 * b**2) + d * b * (3 * a**2 - b**2),
            (n20 - n02) * (a**2 - b**2) + 4 * n11 * a * b,
            d * a * (a**2 - 3 * b**2) - c * b * (3 * a**2 - b**2),
        ]
    )
    return HuSignature(h)


def hu_distance(a: HuSignature, b: HuSignature) -> float:
    """Sum of |1/m_i(a) - 1/m_i(b)| over the log-scaled invariants
    m_i = sign(h_i) log10|h_i|; terms where either side is 0 are skipped."""
    total = 0.0
    for ha, hb in zip(a.moments, b.moments):
        if ha == 0 or hb == 0:
            continue
        ma = np.sign(ha) * np.log10(abs(ha))
        mb = np.sign(hb) * np.log10(abs(hb))
        if ma == 0 or mb == 0:
            continue
        total += abs(1.0 / ma - 1.0 / mb)
    return float(total)
