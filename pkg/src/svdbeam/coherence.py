"""Angular coherence diagnostics: covariance matrix, lag curves, triangle fit.

For speckle, the lag-averaged coherence of the per-angle images decays
linearly with angular lag (the van Cittert-Zernike triangle); aberration
collapses it, and the rank-1 filtered matrix saturates it at 1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FitError

TRIANGLE_FLOOR = 0.1


@dataclass
class CoherenceMatrix:
    """Hermitian angle-by-angle covariance of a patch matrix.

    When normalized, entry (i, j) is divided by sqrt(C_ii C_jj) so moduli
    read as correlation coefficients; rows and columns of zero-energy
    angles are masked with NaN.
    """

    values: np.ndarray
    normalized: bool
    angles: np.ndarray = None


def angular_coherence(r_patch, normalized=True, angles=None):
    """Covariance between transmit angles over the patch pixels.

    values = (conjugate transpose of R) @ R, optionally normalized per
    column energy.
    """
    r = np.asarray(r_patch, dtype=np.complex128)
    if not np.all(np.isfinite(r.view(float))):
        raise ConfigError("patch matrix has non-finite entries")
    cov = r.conj().T @ r
    if normalized:
        energy = np.real(np.diag(cov)).copy()
        dead = energy <= 0
        energy[dead] = 1.0
        scale = 1.0 / np.sqrt(energy)
        cov = cov * scale[:, None] * scale[None, :]
        if dead.any():
            cov[dead, :] = np.nan
            cov[:, dead] = np.nan
    return CoherenceMatrix(values=cov, normalized=normalized,
                           angles=None if angles is None else np.asarray(angles))


def coherence_factor_curve(c_matrix):
    """Mean modulus along each superdiagonal, indexed by angular lag."""
    if not c_matrix.normalized:
        raise ConfigError("coherence factor requires a normalized matrix")
    mag = np.abs(c_matrix.values)
    n = mag.shape[0]
    return np.array([np.nanmean(np.diagonal(mag, offset=k)) for k in range(n)])


@dataclass
class TriangleFit:
    slope: float
    intercept: float
    r2: float
    zero_lag_extrapolation: float
    lag_range: tuple


def triangle_fit(curve):
    """Least-squares line over the decaying part of a coherence curve.

    The fit runs over lags 1..L where L is the first lag at which the curve
    drops below 0.1, capped at half the angle count. The zero-lag
    extrapolation is the fitted intercept.
    """
    curve = np.asarray(curve, dtype=float)
    n = curve.size
    if n < 4:
        raise FitError("curve too short for a triangle fit")
    below = np.nonzero(curve < TRIANGLE_FLOOR)[0]
    l_end = below[0] if below.size else n - 1
    l_end = min(l_end, n // 2)
    lags = np.arange(1, l_end + 1)
    if lags.size < 2:
        raise FitError("fewer than 2 usable lags above the coherence floor")
    y = curve[lags]
    basis = np.column_stack([lags.astype(float), np.ones_like(lags, dtype=float)])
    (slope, intercept), *_ = np.linalg.lstsq(basis, y, rcond=None)
    pred = basis @ np.array([slope, intercept])
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum((y - pred) ** 2) / ss_tot
    return TriangleFit(slope=float(slope), intercept=float(intercept),
                       r2=float(r2), zero_lag_extrapolation=float(intercept),
                       lag_range=(1, int(l_end)))
