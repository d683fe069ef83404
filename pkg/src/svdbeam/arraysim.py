"""Phantom generation and plane-wave channel-data synthesis.

The simulator works directly on the complex analytic signal: the transmit
pulse is a Gaussian-enveloped complex exponential, each scatterer echo is a
delayed copy weighted by reflectivity and 1/r receive decay, and there is no
Hilbert-transform stage downstream. Single scattering only.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, ShapeError, WindowError

PULSE_SUPPORT_SIGMAS = 8.0
FWHM_SIGMAS = 2.355  # Gaussian full width at half maximum, in sigmas


@dataclass(frozen=True)
class TransducerArray:
    """Linear array geometry plus the acquisition constants tied to it.

    Element centers lie on z = 0, spaced by `pitch` and centered on x = 0.
    `sound_speed` is the beamforming reference speed c0.
    """

    n_elements: int
    pitch: float
    center_frequency: float
    sampling_frequency: float
    sound_speed: float

    def __post_init__(self):
        if self.n_elements < 2:
            raise ConfigError("n_elements must be >= 2")
        if self.pitch <= 0:
            raise ConfigError("pitch must be positive")
        if self.sampling_frequency < 4 * self.center_frequency:
            raise ConfigError("sampling_frequency must be >= 4 * center_frequency")
        if self.sound_speed <= 0:
            raise ConfigError("sound_speed must be positive")

    @property
    def element_x(self):
        n = self.n_elements
        return (np.arange(n) - (n - 1) / 2.0) * self.pitch

    @property
    def wavelength(self):
        return self.sound_speed / self.center_frequency

    @property
    def aperture(self):
        return (self.n_elements - 1) * self.pitch


@dataclass(frozen=True)
class PulseModel:
    """Transmit pulse: g(t) = exp(-t^2 / (2 sigma^2)) * exp(i 2 pi f0 t).

    `n_cycles` is the envelope full width at half maximum measured in
    carrier periods, so sigma = n_cycles / (2.355 * f0) and |g(0)| = 1.
    """

    center_frequency: float
    n_cycles: float = 2.0

    def __post_init__(self):
        if self.n_cycles <= 0:
            raise ConfigError("n_cycles must be positive")
        if self.center_frequency <= 0:
            raise ConfigError("center_frequency must be positive")

    @property
    def sigma(self):
        return self.n_cycles / (FWHM_SIGMAS * self.center_frequency)

    @property
    def half_support(self):
        return PULSE_SUPPORT_SIGMAS * self.sigma

    def sample(self, t):
        """Evaluate the analytic pulse at times t (seconds)."""
        t = np.asarray(t, dtype=float)
        env = np.exp(-t * t / (2.0 * self.sigma ** 2))
        return env * np.exp(2j * np.pi * self.center_frequency * t)


class ScattererField:
    """Point scatterers at (x, z > 0) with real reflectivities."""

    def __init__(self, positions, reflectivities):
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        reflectivities = np.asarray(reflectivities, dtype=float).ravel()
        if positions.shape[0] != reflectivities.shape[0]:
            raise ConfigError("positions and reflectivities lengths differ")
        if positions.size and positions.shape[1] != 2:
            raise ConfigError("positions must be (x, z) pairs")
        if positions.size and np.any(positions[:, 1] <= 0):
            raise ConfigError("all scatterer depths must satisfy z > 0")
        self.positions = positions.reshape(-1, 2)
        self.reflectivities = reflectivities

    def __len__(self):
        return self.positions.shape[0]

    def union(self, other):
        """Concatenate two fields (self first; order is part of the contract)."""
        return ScattererField(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.reflectivities, other.reflectivities]),
        )


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a speckle phantom with optional pins and cysts.

    `speckle_density` is scatterers per squared wavelength; `wavelength`
    converts it to a count over the extent. Cysts are
    (center_x, center_z, radius, echogenicity_factor) with factor 0 meaning
    anechoic; pins are (x, z, amplitude).
    """

    extent: tuple  # (x_min, x_max, z_min, z_max) meters
    speckle_density: float = 0.0
    wavelength: float = 1540.0 / 6.25e6
    pins: tuple = ()
    cysts: tuple = ()
    seed: int = 0

    def __post_init__(self):
        x_min, x_max, z_min, z_max = self.extent
        if not (x_max > x_min and z_max > z_min):
            raise ConfigError("phantom extent is empty")
        if z_min <= 0:
            raise ConfigError("phantom extent must satisfy z > 0")
        if self.speckle_density < 0:
            raise ConfigError("speckle_density must be >= 0")
        if self.wavelength <= 0:
            raise ConfigError("wavelength must be positive")
        for cyst in self.cysts:
            if cyst[2] < 0:
                raise ConfigError("cyst radius must be >= 0")
            if cyst[3] < 0:
                raise ConfigError("cyst echogenicity_factor must be >= 0")


def build_phantom(spec):
    """Realize a PhantomSpec into a ScattererField.

    Speckle scatterers are uniform over the extent with standard-normal
    reflectivities; inside each cyst the reflectivity is multiplied by that
    cyst's echogenicity factor; pins are appended last with their given
    amplitudes. Deterministic for a given seed.
    """
    x_min, x_max, z_min, z_max = spec.extent
    rng = np.random.default_rng(spec.seed)
    area = (x_max - x_min) * (z_max - z_min)
    count = int(round(spec.speckle_density * area / spec.wavelength ** 2))
    xs = rng.uniform(x_min, x_max, count)
    zs = rng.uniform(z_min, z_max, count)
    refl = rng.standard_normal(count)
    for cx, cz, radius, factor in spec.cysts:
        inside = (xs - cx) ** 2 + (zs - cz) ** 2 <= radius ** 2
        refl[inside] *= factor
    positions = np.column_stack([xs, zs])
    if spec.pins:
        pin_arr = np.asarray(spec.pins, dtype=float).reshape(-1, 3)
        positions = np.vstack([positions, pin_arr[:, :2]])
        refl = np.concatenate([refl, pin_arr[:, 2]])
    return ScattererField(positions, refl)


@dataclass
class AngularAberration:
    """Per-transmit-angle delay (seconds) and amplitude factors."""

    angles: np.ndarray
    delays: np.ndarray
    amplitudes: np.ndarray = None

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.delays = np.asarray(self.delays, dtype=float)
        if self.amplitudes is None:
            self.amplitudes = np.ones_like(self.angles)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if not (self.angles.shape == self.delays.shape == self.amplitudes.shape):
            raise ShapeError("angles, delays and amplitudes must have equal length")
        if np.any(self.amplitudes < 0):
            raise ConfigError("aberration amplitudes must be >= 0")

    def phase(self, f0):
        """Narrowband phase law 2 pi f0 * delays (radians)."""
        return 2.0 * np.pi * f0 * self.delays


@dataclass
class ElementScreen:
    """Near-field phase/amplitude screen sampled at the element positions."""

    delays: np.ndarray
    amplitudes: np.ndarray = None
    correlation_length: float = 0.0

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        if self.amplitudes is None:
            self.amplitudes = np.ones_like(self.delays)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.delays.shape != self.amplitudes.shape:
            raise ShapeError("screen delays and amplitudes must have equal length")
        if np.any(self.amplitudes < 0):
            raise ConfigError("screen amplitudes must be >= 0")


def sample_correlated_screen(array, rms_delay=1e-7, correlation_length=2e-3, seed=0):
    """Draw a Gaussian-process element screen with Gaussian covariance.

    Covariance between elements at lag dx is
    rms_delay^2 * exp(-dx^2 / (2 correlation_length^2)), realized through an
    eigendecomposition of the covariance matrix (tiny negative eigenvalues
    from roundoff are clipped). Deterministic per seed; amplitudes are 1.
    """
    if rms_delay < 0:
        raise ConfigError("rms_delay must be >= 0")
    if correlation_length <= 0:
        raise ConfigError("correlation_length must be positive")
    x = array.element_x
    dx = x[:, None] - x[None, :]
    cov = rms_delay ** 2 * np.exp(-dx ** 2 / (2.0 * correlation_length ** 2))
    w, v = np.linalg.eigh(cov)
    w = np.clip(w, 0.0, None)
    rng = np.random.default_rng(seed)
    delays = (v * np.sqrt(w)) @ rng.standard_normal(array.n_elements)
    return ElementScreen(delays=delays, correlation_length=correlation_length)


def sample_smooth_angular_law(angles, peak_to_peak_phase, f0, seed=0, n_modes=3):
    """Draw a smooth random angular delay law with a target phase span.

    The phase is a random low-order Fourier series over the angle span,
    rescaled so max(phase) - min(phase) equals peak_to_peak_phase, then
    converted to delays through delay = phase / (2 pi f0).
    """
    angles = np.asarray(angles, dtype=float)
    if angles.size < 2:
        raise ConfigError("need at least two angles")
    rng = np.random.default_rng(seed)
    span = angles[-1] - angles[0]
    u = (angles - angles[0]) / span
    phase = np.zeros_like(angles)
    for k in range(1, n_modes + 1):
        amp = rng.standard_normal() / k
        pha = rng.uniform(0, 2 * np.pi)
        phase += amp * np.sin(np.pi * k * u + pha)
    ptp = phase.max() - phase.min()
    if ptp == 0:
        phase = u.copy()
        ptp = 1.0
    phase *= peak_to_peak_phase / ptp
    delays = phase / (2.0 * np.pi * f0)
    return AngularAberration(angles=angles, delays=delays)


class RFDataSet:
    """Complex analytic channel data indexed [angle, element, time]."""

    def __init__(self, data, t0, sampling_frequency, angles, array):
        data = np.asarray(data, dtype=np.complex128)
        if data.ndim != 3:
            raise ShapeError("data must be [angle, element, time]")
        angles = np.asarray(angles, dtype=float)
        if data.shape[0] != angles.size or data.shape[1] != array.n_elements:
            raise ShapeError("data dims do not match angles / array")
        self.data = data
        self.t0 = float(t0)
        self.sampling_frequency = float(sampling_frequency)
        self.angles = angles
        self.array = array

    @property
    def n_samples(self):
        return self.data.shape[2]

    def times(self):
        return self.t0 + np.arange(self.n_samples) / self.sampling_frequency

    def copy(self):
        return RFDataSet(self.data.copy(), self.t0, self.sampling_frequency,
                         self.angles.copy(), self.array)


def _transmit_base_delays(field, angles, sound_speed):
    """Plane-wave transmit delays, zero at the array center (x=0, z=0)."""
    sx = field.positions[:, 0]
    sz = field.positions[:, 1]
    return (sz[None, :] * np.cos(angles)[:, None]
            + sx[None, :] * np.sin(angles)[:, None]) / sound_speed


def _screen_launch_delays(field, angles, array, screen):
    """Screen delay seen by the transmit wavefront, interpolated where the
    ray through each scatterer crosses z = 0 (clamped to the aperture)."""
    sx = field.positions[:, 0]
    sz = field.positions[:, 1]
    origin = sx[None, :] - sz[None, :] * np.tan(angles)[:, None]
    return np.interp(origin, array.element_x, screen.delays)


def simulate_rf(array, pulse, field, angles, screen=None, screen_mode="both",
                t0=0.0, n_samples=None):
    """Synthesize channel data for steered plane-wave transmits.

    For angle theta and element j the trace is
    sum_k refl_k / r_kj * g(t - tau_tx(k, theta) - tau_rx(k, j)) where
    tau_tx = (z_k cos theta + x_k sin theta) / c plus any screen launch
    delay interpolated at the wavefront origin, and
    tau_rx = r_kj / c plus the screen's per-element delay. Screen
    amplitudes multiply traces element-wise on receive. `screen_mode`
    restricts the screen to "tx" or "rx" (default "both").

    With n_samples=None the window is sized to cover every echo plus the
    pulse support. An explicit window that clips an echo raises
    WindowError naming the scatterer.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if angles.size == 0:
        raise ConfigError("angles must be nonempty")
    if screen is not None and screen.delays.size != array.n_elements:
        raise ShapeError("screen length does not match element count")
    if screen_mode not in ("both", "tx", "rx"):
        raise ConfigError("screen_mode must be 'both', 'tx' or 'rx'")
    if pulse.center_frequency != array.center_frequency:
        raise ConfigError("pulse center frequency must mirror the array")

    c = array.sound_speed
    fs = array.sampling_frequency
    n_scat = len(field)

    tx_base = _transmit_base_delays(field, angles, c)
    tx_extra = np.zeros_like(tx_base)
    rx_delay = np.zeros(array.n_elements)
    rx_amp = np.ones(array.n_elements)
    if screen is not None:
        if screen_mode in ("both", "tx"):
            tx_extra = _screen_launch_delays(field, angles, array, screen)
        if screen_mode in ("both", "rx"):
            rx_delay = screen.delays.astype(float)
            rx_amp = screen.amplitudes.astype(float)

    if n_scat:
        sx = np.ascontiguousarray(field.positions[:, 0])
        sz = np.ascontiguousarray(field.positions[:, 1])
        dx = sx[:, None] - array.element_x[None, :]
        rx_tau = np.sqrt(dx ** 2 + sz[:, None] ** 2) / c + rx_delay[None, :]
        # Per-scatterer arrival bounds; transmit and receive extrema are
        # independent, so the separable maxima are exact.
        tx_tau = tx_base + tx_extra
        late = tx_tau.max(axis=0) + rx_tau.max(axis=1) + pulse.half_support
        early = tx_tau.min(axis=0) + rx_tau.min(axis=1) - pulse.half_support
    else:
        sx = np.zeros(0)
        sz = np.zeros(0)
        late = np.array([t0])
        early = np.array([t0])

    if n_samples is None:
        n_samples = max(int(math.ceil((late.max() - t0) * fs)) + 2, 16)
    elif n_scat:
        t_end = t0 + (n_samples - 1) / fs
        bad = np.nonzero((late > t_end) | (early < t0))[0]
        if bad.size:
            raise WindowError(
                f"scatterer {bad[0]} falls outside the temporal window "
                f"[{t0}, {t_end}]")

    out = np.zeros((angles.size, array.n_elements, n_samples), np.complex128)
    if n_scat:
        _kernels.synth_traces(
            out, float(t0), float(fs), pulse.sigma, pulse.center_frequency,
            sx, sz, np.ascontiguousarray(field.reflectivities),
            array.element_x, c,
            np.ascontiguousarray(tx_base), np.ascontiguousarray(tx_extra),
            rx_delay, rx_amp, PULSE_SUPPORT_SIGMAS)
    return RFDataSet(out, t0, fs, angles, array)


def apply_angular_delay(rf, law):
    """Delay and scale each angle's traces by the angular law.

    Uses an exact frequency-domain phase ramp on the analytic signal,
    then multiplies by the per-angle amplitude.
    """
    if law.angles.shape != rf.angles.shape or not np.allclose(law.angles, rf.angles):
        raise ShapeError("law angle set does not match the data set")
    n_t = rf.n_samples
    freqs = np.fft.fftfreq(n_t, d=1.0 / rf.sampling_frequency)
    spec = np.fft.fft(rf.data, axis=2)
    ramp = np.exp(-2j * np.pi * freqs[None, :] * law.delays[:, None])
    spec *= ramp[:, None, :]
    data = np.fft.ifft(spec, axis=2)
    data *= law.amplitudes[:, None, None]
    return RFDataSet(data, rf.t0, rf.sampling_frequency, rf.angles.copy(), rf.array)
