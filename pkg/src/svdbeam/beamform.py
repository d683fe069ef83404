"""Receive beamforming per steered transmit and the pixel-by-angle matrix.

The central object is the compound matrix: one complex column per transmit
angle, one row per image pixel (column-major, z fastest), with the transmit
travel path compensated per angle so the angle sum is the compounded image.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels, metrics
from .arraysim import RFDataSet, ScattererField, simulate_rf
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ImagingGrid:
    """Cartesian pixel grid: first pixel (x0, z0), spacing (dx, dz).

    Pixel p maps to (ix, iz) = (p // nz, p % nz): column-major with z
    fastest. Default spacing is dx = wavelength, dz = wavelength / 2.
    """

    x0: float
    z0: float
    nx: int
    nz: int
    dx: float
    dz: float

    def __post_init__(self):
        if self.dx <= 0 or self.dz <= 0:
            raise ConfigError("grid spacing must be positive")
        if self.nx < 1 or self.nz < 1:
            raise ConfigError("grid must contain at least one pixel")

    @classmethod
    def from_extent(cls, x_min, x_max, z_min, z_max, wavelength,
                    dx=None, dz=None):
        dx = wavelength if dx is None else dx
        dz = wavelength / 2.0 if dz is None else dz
        nx = int(np.floor((x_max - x_min) / dx)) + 1
        nz = int(np.floor((z_max - z_min) / dz)) + 1
        return cls(x0=x_min, z0=z_min, nx=nx, nz=nz, dx=dx, dz=dz)

    @property
    def n_pixels(self):
        return self.nx * self.nz

    @property
    def x_axis(self):
        return self.x0 + np.arange(self.nx) * self.dx

    @property
    def z_axis(self):
        return self.z0 + np.arange(self.nz) * self.dz

    def pixel_coords(self):
        """Per-pixel (x, z) arrays in pixel order."""
        px = np.repeat(self.x_axis, self.nz)
        pz = np.tile(self.z_axis, self.nx)
        return px, pz

    def pixel_index(self, ix, iz):
        return ix * self.nz + iz

    def nearest_pixel(self, x, z):
        ix = int(round((x - self.x0) / self.dx))
        iz = int(round((z - self.z0) / self.dz))
        return min(max(ix, 0), self.nx - 1), min(max(iz, 0), self.nz - 1)


class UltrafastCompoundMatrix:
    """Per-angle beamformed pixels: complex [n_pixels, n_angles]."""

    def __init__(self, grid, angles, data, center_frequency, sound_speed,
                 out_of_window=0):
        angles = np.asarray(angles, dtype=float)
        data = np.asarray(data, dtype=np.complex128)
        if data.shape != (grid.n_pixels, angles.size):
            raise ShapeError("matrix shape must be [n_pixels, n_angles]")
        if not np.all(np.isfinite(data.view(float))):
            raise ConfigError("matrix entries must be finite")
        self.grid = grid
        self.angles = angles
        self.data = data
        self.center_frequency = float(center_frequency)
        self.sound_speed = float(sound_speed)
        self.out_of_window = int(out_of_window)

    @property
    def n_angles(self):
        return self.angles.size

    def copy(self):
        return UltrafastCompoundMatrix(
            self.grid, self.angles.copy(), self.data.copy(),
            self.center_frequency, self.sound_speed, self.out_of_window)

    def patch_rows(self, ix0, ix1, iz0, iz1):
        """Row indices of the rectangle [ix0, ix1) x [iz0, iz1) in pixel order."""
        ix = np.arange(ix0, ix1)
        iz = np.arange(iz0, iz1)
        return (ix[:, None] * self.grid.nz + iz[None, :]).ravel()


class ComplexImage:
    """Complex image on an ImagingGrid, pixels in grid pixel order."""

    def __init__(self, grid, pixels):
        pixels = np.asarray(pixels, dtype=np.complex128)
        if pixels.size != grid.n_pixels:
            raise ShapeError("pixel count must equal nx * nz")
        self.grid = grid
        self.pixels = pixels.ravel()

    def as_grid(self):
        """Magnitude-preserving 2-D view, rows = z, columns = x."""
        return self.pixels.reshape(self.grid.nx, self.grid.nz).T


def das_beamform(rf, grid, f_number=1.0, sound_speed=None,
                 tx_extra_delays=None, rx_extra_delays=None):
    """Delay-and-sum the channel data onto the grid, per transmit angle.

    For pixel p and angle theta:
    R[p, theta] = sum over elements j with |x_j - x_p| <= z_p / (2 f_number)
    of the complex trace sampled at tau_tx(p, theta) + tau_rx(p, j), with
    tau_tx = (z cos + x sin) / c and tau_rx = dist / c (rectangular
    apodization). The complex envelope is linearly interpolated in time with
    the carrier rephased exactly at the requested delay. Samples requested
    beyond a trace contribute zero and increment the matrix's out_of_window
    counter.

    `sound_speed` overrides the array's beamforming reference.
    `tx_extra_delays` (per angle) and `rx_extra_delays` (per element) are
    added to the respective sampling delays; rebeamform_corrected uses them.
    """
    if f_number <= 0:
        raise ConfigError("f_number must be positive")
    c = rf.array.sound_speed if sound_speed is None else float(sound_speed)
    angles = rf.angles
    tx_extra = np.zeros(angles.size) if tx_extra_delays is None \
        else np.asarray(tx_extra_delays, dtype=float)
    rx_extra = np.zeros(rf.array.n_elements) if rx_extra_delays is None \
        else np.asarray(rx_extra_delays, dtype=float)
    if tx_extra.size != angles.size:
        raise ShapeError("tx_extra_delays must have one entry per angle")
    if rx_extra.size != rf.array.n_elements:
        raise ShapeError("rx_extra_delays must have one entry per element")

    px, pz = grid.pixel_coords()
    r_out = np.zeros((grid.n_pixels, angles.size), np.complex128)
    oow = np.zeros(grid.n_pixels, np.int64)
    omega_dt = 2.0 * np.pi * rf.array.center_frequency / rf.sampling_frequency
    _kernels.das_sum(
        np.ascontiguousarray(rf.data), rf.t0, rf.sampling_frequency, omega_dt,
        rf.array.element_x, np.sin(angles), np.cos(angles),
        px, pz, c, 1.0 / (2.0 * f_number), tx_extra, rx_extra, r_out, oow)
    return UltrafastCompoundMatrix(
        grid, angles, r_out, rf.array.center_frequency, c,
        out_of_window=int(oow.sum()))


def compound(r_matrix):
    """Coherent sum over angles: pixels[p] = sum_theta R[p, theta]."""
    return ComplexImage(r_matrix.grid, r_matrix.data.sum(axis=1))


def angular_law_vector(law, f0):
    """Complex per-angle factors amp * exp(-i 2 pi f0 delay)."""
    return law.amplitudes * np.exp(-2j * np.pi * f0 * law.delays)


def apply_angular_law(r_matrix, law, direction="forward"):
    """Post-multiply by the diagonal angular law or its conjugate phase.

    forward: column theta is scaled by amp_theta * exp(-i 2 pi f0 d_theta);
    conjugate: by exp(+i 2 pi f0 d_theta) only (phase-only correction).
    """
    if law.angles.shape != r_matrix.angles.shape or \
            not np.allclose(law.angles, r_matrix.angles):
        raise ShapeError("law angle set does not match the matrix")
    f0 = r_matrix.center_frequency
    if direction == "forward":
        factors = angular_law_vector(law, f0)
    elif direction == "conjugate":
        factors = np.exp(2j * np.pi * f0 * law.delays)
    else:
        raise ConfigError("direction must be 'forward' or 'conjugate'")
    return UltrafastCompoundMatrix(
        r_matrix.grid, r_matrix.angles.copy(), r_matrix.data * factors[None, :],
        f0, r_matrix.sound_speed, r_matrix.out_of_window)


def rebeamform_corrected(rf, law, grid, f_number=1.0, correct_receive=False,
                         sound_speed=None):
    """Beamform with the angular aberration delays folded into the transmit path.

    Identical to das_beamform except each angle's transmit delay is advanced
    by law.delays[theta], so traces that the aberrator delayed are sampled at
    the true echo time. With correct_receive, per-element delays projected
    from the angular law (see angular_to_element_delays; experimental) are
    added on the receive side as well. Law amplitudes are not applied here.
    """
    if law.angles.shape != rf.angles.shape or not np.allclose(law.angles, rf.angles):
        raise ShapeError("law angle set does not match the data set")
    rx_extra = None
    if correct_receive:
        x_ref = grid.x0 + (grid.nx - 1) * grid.dx / 2.0
        z_ref = grid.z0 + (grid.nz - 1) * grid.dz / 2.0
        rx_extra = angular_to_element_delays(law, rf.array, (x_ref, z_ref))
    return das_beamform(rf, grid, f_number=f_number, sound_speed=sound_speed,
                        tx_extra_delays=law.delays, rx_extra_delays=rx_extra)


def angular_to_element_delays(law, array, reference_point):
    """Least-squares near-field screen whose plane-wave projections match the law.

    The transmit wavefront reaching the reference point for angle theta
    leaves the aperture at x = x_ref - z_ref tan(theta); a screen s(x) seen
    through that mapping produces the angular delays A s with A the linear
    interpolation matrix. Returns the minimum-norm least-squares s at the
    element positions. Experimental: transmit-only correction is the default
    everywhere else.
    """
    x_ref, z_ref = reference_point
    origins = x_ref - z_ref * np.tan(law.angles)
    ex = array.element_x
    a_mat = np.zeros((law.angles.size, array.n_elements))
    idx = np.clip(np.searchsorted(ex, origins) - 1, 0, array.n_elements - 2)
    frac = np.clip((origins - ex[idx]) / (ex[idx + 1] - ex[idx]), 0.0, 1.0)
    rows = np.arange(law.angles.size)
    a_mat[rows, idx] = 1.0 - frac
    a_mat[rows, idx + 1] += frac
    sol, *_ = np.linalg.lstsq(a_mat, law.delays, rcond=None)
    return sol


@dataclass
class PsfMeasurement:
    image: ComplexImage
    lateral_fwhm: float


def measure_psf(array, pulse, point, grid, angles, f_number=1.0):
    """Point-spread measurement: simulate a unit scatterer, beamform, compound.

    Returns the compounded image and the lateral full width at half maximum
    of the intensity profile through the (sub-pixel refined) peak row.
    Raises BoundaryError if the peak or a half-maximum crossing is not
    interior to the grid.
    """
    field = ScattererField([point], [1.0])
    rf = simulate_rf(array, pulse, field, angles)
    image = compound(das_beamform(rf, grid, f_number=f_number))
    fwhm = metrics.lateral_resolution(image, point)
    return PsfMeasurement(image=image, lateral_fwhm=fwhm)
