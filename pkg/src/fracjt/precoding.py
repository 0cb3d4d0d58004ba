"""Zero-forcing precoder algebra for the 2x2 network-MIMO link."""

from __future__ import annotations

import math

import numpy as np

# |det H| below this fraction of the Frobenius-norm scale counts as singular.
SINGULARITY_RTOL = 1e-12


class SingularChannelError(ValueError):
    """Channel matrix cannot be inverted for zero-forcing."""


def _det2(h: np.ndarray) -> complex:
    return h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]


def is_invertible(h: np.ndarray) -> bool:
    """True when the 2x2 matrix passes the relative singularity guard."""
    scale = float(np.sum(np.abs(h) ** 2))
    return abs(_det2(h)) > SINGULARITY_RTOL * max(scale, 1e-300)


def zf_weights(h: np.ndarray) -> np.ndarray:
    """Exact 2x2 channel inverse; row k holds BS k's weights, column i the user.

    Raises SingularChannelError when |det H| falls below the relative guard.
    """
    det = _det2(h)
    scale = float(np.sum(np.abs(h) ** 2))
    if abs(det) <= SINGULARITY_RTOL * max(scale, 1e-300):
        raise SingularChannelError(
            f"|det H|={abs(det):.3e} below guard for scale {scale:.3e}"
        )
    return np.array([[h[1, 1], -h[0, 1]], [-h[1, 0], h[0, 0]]], dtype=complex) / det


def row_powers(w: np.ndarray) -> np.ndarray:
    """Squared magnitudes |w_ki|^2; entry (k, i) is BS k's power weight for user i."""
    return np.abs(w) ** 2


def zf_rate(p: float, noise: float) -> float:
    """Interference-free rate log2(1 + p / noise) in bits/s/Hz."""
    if p < 0:
        raise ValueError(f"negative power {p}")
    if noise <= 0:
        raise ValueError(f"noise variance must be positive, got {noise}")
    return math.log2(1.0 + p / noise)


def gram_eigenvalues(h: np.ndarray) -> tuple[float, float]:
    """Eigenvalues of H H^H, sorted descending.

    Closed form from trace/determinant of the 2x2 Hermitian Gram matrix.
    """
    tr = float(np.sum(np.abs(h) ** 2))
    det = abs(_det2(h)) ** 2
    disc = max(tr * tr - 4.0 * det, 0.0)
    root = math.sqrt(disc)
    return (0.5 * (tr + root), 0.5 * (tr - root))
