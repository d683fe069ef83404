"""Image-quality and law-agreement metrics.

Works on duck-typed images (anything with .grid and .pixels) so it stays
import-free of the beamforming module.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BoundaryError, ConfigError, DegenerateError, ShapeError

ANECHOIC_FLOOR_DB = -120.0


@dataclass(frozen=True)
class RegionMask:
    """Set of pixel indices over an ImagingGrid with a role tag."""

    indices: np.ndarray
    role: str  # "inside" or "outside"

    def __post_init__(self):
        object.__setattr__(self, "indices",
                           np.asarray(self.indices, dtype=np.intp).ravel())
        if self.indices.size == 0:
            raise ConfigError("region mask is empty")
        if self.role not in ("inside", "outside"):
            raise ConfigError("role must be 'inside' or 'outside'")


def disk_mask(grid, center_x, center_z, radius, role="inside"):
    px = np.repeat(grid.x_axis, grid.nz)
    pz = np.tile(grid.z_axis, grid.nx)
    sel = (px - center_x) ** 2 + (pz - center_z) ** 2 <= radius ** 2
    return RegionMask(np.nonzero(sel)[0], role)


def annulus_mask(grid, center_x, center_z, r_inner, r_outer, role="outside"):
    px = np.repeat(grid.x_axis, grid.nz)
    pz = np.tile(grid.z_axis, grid.nx)
    d2 = (px - center_x) ** 2 + (pz - center_z) ** 2
    sel = (d2 >= r_inner ** 2) & (d2 <= r_outer ** 2)
    return RegionMask(np.nonzero(sel)[0], role)


def cyst_masks(grid, center_x, center_z, radius):
    """Default evaluation masks for a cyst: disk at 0.8 r inside, annulus
    [1.2 r, 1.8 r] outside, both at the cyst depth."""
    inside = disk_mask(grid, center_x, center_z, 0.8 * radius, "inside")
    outside = annulus_mask(grid, center_x, center_z,
                           1.2 * radius, 1.8 * radius, "outside")
    return inside, outside


def contrast_db(image, inside, outside):
    """10 log10 of the mean-square-intensity ratio inside / outside.

    Negative for anechoic targets. A zero inside mean returns the floored
    sentinel -120 dB; a zero outside mean is degenerate and raises.
    """
    n_pix = image.pixels.size
    for mask in (inside, outside):
        if mask.indices.min() < 0 or mask.indices.max() >= n_pix:
            raise ConfigError("mask indices outside the grid")
    if np.intersect1d(inside.indices, outside.indices).size:
        raise ConfigError("inside and outside masks overlap")
    intensity = np.abs(image.pixels) ** 2
    mu_i = intensity[inside.indices].mean()
    mu_o = intensity[outside.indices].mean()
    if mu_o == 0:
        raise DegenerateError("outside region has zero energy")
    if mu_i == 0:
        return ANECHOIC_FLOOR_DB
    return float(10.0 * np.log10(mu_i / mu_o))


def _parabolic_peak(y_left, y_mid, y_right):
    """Sub-sample offset and refined value of a parabola through 3 samples."""
    denom = y_left - 2.0 * y_mid + y_right
    if denom == 0:
        return 0.0, y_mid
    delta = 0.5 * (y_left - y_right) / denom
    value = y_mid - 0.25 * (y_left - y_right) * delta
    return delta, value


def lateral_resolution(image, pin_xz, search_radius=2e-3):
    """FWHM (meters) of the lateral intensity profile through a pin peak.

    The peak is located within `search_radius` of pin_xz, refined laterally
    with a parabolic fit, and the half-maximum crossings on the peak's z row
    are found by linear interpolation on both sides.
    """
    grid = image.grid
    intensity = np.abs(image.pixels.reshape(grid.nx, grid.nz)) ** 2
    x_axis = grid.x_axis
    z_axis = grid.z_axis
    in_x = np.abs(x_axis - pin_xz[0]) <= search_radius
    in_z = np.abs(z_axis - pin_xz[1]) <= search_radius
    if not in_x.any() or not in_z.any():
        raise ConfigError("search window contains no grid pixels")
    sub = intensity[np.ix_(in_x, in_z)]
    k = int(np.argmax(sub))
    ix = np.nonzero(in_x)[0][k // sub.shape[1]]
    iz = np.nonzero(in_z)[0][k % sub.shape[1]]
    if ix in (0, grid.nx - 1) or iz in (0, grid.nz - 1):
        raise BoundaryError("pin peak lies on the grid boundary")

    profile = intensity[:, iz]
    delta, peak_val = _parabolic_peak(profile[ix - 1], profile[ix], profile[ix + 1])
    x_peak = x_axis[ix] + delta * grid.dx
    half = 0.5 * peak_val

    def cross(direction):
        i = ix
        while 0 <= i + direction < grid.nx:
            j = i + direction
            if profile[j] < half:
                frac = (profile[i] - half) / (profile[i] - profile[j])
                return x_axis[i] + frac * (x_axis[j] - x_axis[i])
            i = j
        raise BoundaryError("half-maximum crossing beyond the grid edge")

    x_right = cross(+1)
    x_left = cross(-1)
    del x_peak  # crossings are measured on the sampled profile
    return float(x_right - x_left)


def phase_law_r2(estimated, truth, alignment="offset"):
    """Coefficient of determination between an extracted and a true phase law.

    The truth delays are converted to phase with 2 pi f0 (f0 taken from the
    extracted law). Both laws are unwrapped. `alignment` removes nothing
    ("none"), the gauge constant ("offset"), or a constant plus linear tilt
    ("affine") from the residual before scoring. A constant truth law has no
    variance to explain and yields the NaN sentinel. Masked angles are
    excluded.
    """
    if alignment not in ("none", "offset", "affine"):
        raise ConfigError("alignment must be 'none', 'offset' or 'affine'")
    if estimated.angles.shape != truth.angles.shape or \
            not np.allclose(estimated.angles, truth.angles):
        raise ShapeError("estimated and truth laws use different angle grids")
    valid = getattr(estimated, "mask", None)
    if valid is None:
        valid = np.ones(estimated.angles.size, bool)
    angles = estimated.angles[valid]
    est = np.unwrap(np.asarray(estimated.phase)[valid])
    target = np.unwrap(2.0 * np.pi * estimated.center_frequency
                       * truth.delays[valid])
    ss_tot = np.sum((target - target.mean()) ** 2)
    if ss_tot == 0:
        return float("nan")
    resid = est - target
    if alignment == "offset":
        resid = resid - resid.mean()
    elif alignment == "affine":
        basis = np.column_stack([np.ones_like(angles), angles])
        coef, *_ = np.linalg.lstsq(basis, resid, rcond=None)
        resid = resid - basis @ coef
    return float(1.0 - np.sum(resid ** 2) / ss_tot)
