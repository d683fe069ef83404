"""Experiment configuration: a flat INI file (one level of key = value
sections) mapped onto a dataclass, with exact round-tripping."""

import configparser
import io
from dataclasses import dataclass, fields, replace

import numpy as np

from .arraysim import (AngularAberration, PhantomSpec, PulseModel,
                       TransducerArray, sample_correlated_screen,
                       sample_smooth_angular_law)
from .beamform import ImagingGrid
from .errors import ConfigError
from .svdcore import PatchGrid


@dataclass
class ExperimentConfig:
    """Everything one pipeline run needs.

    Defaults follow the reference acquisition (angles span -18 to +18
    degrees, 100 transmits); `desk_scale_config` trims the angle count and
    adds a phantom sized for seconds-scale runs.
    """

    # array
    n_elements: int = 64
    pitch: float = 0.2e-3
    center_frequency: float = 6.25e6
    sampling_frequency: float = 25e6
    sound_speed: float = 1540.0
    # pulse
    n_cycles: float = 2.0
    # phantom
    phantom_extent: tuple = (-12.8e-3, 12.8e-3, 2e-3, 24e-3)
    speckle_density: float = 2.0
    pins: tuple = ()
    cysts: tuple = ()
    # angles
    n_angles: int = 100
    span_deg: float = 36.0
    # grid
    grid_extent: tuple = (-11.8e-3, 11.8e-3, 4e-3, 19.5e-3)
    grid_dx: float = 0.0  # 0 means one wavelength
    grid_dz: float = 0.0  # 0 means half a wavelength
    # beamform
    f_number: float = 1.0
    beamform_sound_speed: float = 0.0  # 0 means the array reference
    # aberration
    aberration_kind: str = "none"  # none | angular | screen
    aberration_file: str = ""
    law_peak_to_peak_phase: float = 0.0
    law_seed: int = 0
    screen_rms_delay: float = 1e-7
    screen_correlation_length: float = 2e-3
    screen_seed: int = 0
    # patches
    patch_lateral_lambdas: float = 70.0
    patch_axial_lambdas: float = 10.0
    patch_overlap: float = 0.5
    correction_mode: str = "phase_conjugate"
    # run
    seed: int = 0
    out_dir: str = "out"
    threads: int = 0  # 0 means leave the runtime default
    dynamic_range_db: float = 60.0

    @property
    def wavelength(self):
        return self.sound_speed / self.center_frequency


def desk_scale_config(**overrides):
    """CI-sized configuration: 64 elements, 32 angles, cyst plus pin
    phantom, fine lateral grid for stable width estimates."""
    cfg = ExperimentConfig(
        n_angles=32,
        pins=((-6e-3, 8e-3, 30.0), (6e-3, 16e-3, 30.0)),
        cysts=((0.0, 12e-3, 2.5e-3, 0.0),),
        grid_dx=0.5,  # in wavelengths, see make_grid
    )
    return replace(cfg, **overrides)


_SECTIONS = {
    "array": ("n_elements", "pitch", "center_frequency",
              "sampling_frequency", "sound_speed"),
    "pulse": ("n_cycles",),
    "phantom": ("phantom_extent", "speckle_density", "pins", "cysts"),
    "angles": ("n_angles", "span_deg"),
    "grid": ("grid_extent", "grid_dx", "grid_dz"),
    "beamform": ("f_number", "beamform_sound_speed"),
    "aberration": ("aberration_kind", "aberration_file",
                   "law_peak_to_peak_phase", "law_seed", "screen_rms_delay",
                   "screen_correlation_length", "screen_seed"),
    "patches": ("patch_lateral_lambdas", "patch_axial_lambdas",
                "patch_overlap", "correction_mode"),
    "run": ("seed", "out_dir", "threads", "dynamic_range_db"),
}


def _format_value(value):
    if isinstance(value, tuple):
        return "; ".join(" ".join(repr(float(v)) for v in item)
                         if isinstance(item, (tuple, list))
                         else repr(float(item))
                         for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_tuple(text, inner_len=None):
    text = text.strip()
    if not text:
        return ()
    items = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        values = tuple(float(tok) for tok in chunk.split())
        if inner_len is not None and len(values) != inner_len:
            raise ConfigError(f"expected {inner_len} numbers per entry: {chunk!r}")
        items.append(values if inner_len else values[0])
    return tuple(items)


def serialize_config(cfg):
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser[section] = {key: _format_value(getattr(cfg, key)) for key in keys}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text):
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = ExperimentConfig()
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in keys:
            if not parser.has_option(section, key):
                continue
            raw = parser.get(section, key)
            try:
                values[key] = _convert(key, raw, getattr(cfg, key))
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return replace(cfg, **values)


def _convert(key, raw, default):
    if key == "phantom_extent" or key == "grid_extent":
        vals = tuple(float(tok) for tok in raw.replace(";", " ").split())
        if len(vals) != 4:
            raise ConfigError("extent needs 4 numbers")
        return vals
    if key == "pins":
        return _parse_tuple(raw, inner_len=3)
    if key == "cysts":
        return _parse_tuple(raw, inner_len=4)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))


def validate_config(cfg):
    if cfg.aberration_kind not in ("none", "angular", "screen"):
        raise ConfigError("aberration_kind must be none, angular or screen")
    if cfg.correction_mode not in ("rank1", "phase_conjugate"):
        raise ConfigError("correction_mode must be rank1 or phase_conjugate")
    if cfg.n_angles < 1:
        raise ConfigError("need at least one transmit angle")
    if cfg.dynamic_range_db <= 0:
        raise ConfigError("dynamic_range_db must be positive")
    if cfg.speckle_density > 0:
        x_min, x_max, z_min, z_max = cfg.phantom_extent
        area = (x_max - x_min) * (z_max - z_min)
        count = int(round(cfg.speckle_density * area / cfg.wavelength ** 2))
        if count < 10 * cfg.n_elements:
            raise ConfigError(
                f"speckle count {count} below 10 x n_elements; raise the density")
    return cfg


def make_array(cfg):
    return TransducerArray(
        n_elements=cfg.n_elements, pitch=cfg.pitch,
        center_frequency=cfg.center_frequency,
        sampling_frequency=cfg.sampling_frequency,
        sound_speed=cfg.sound_speed)


def make_pulse(cfg):
    return PulseModel(center_frequency=cfg.center_frequency,
                      n_cycles=cfg.n_cycles)


def make_phantom_spec(cfg):
    return PhantomSpec(extent=cfg.phantom_extent,
                       speckle_density=cfg.speckle_density,
                       wavelength=cfg.wavelength,
                       pins=cfg.pins, cysts=cfg.cysts, seed=cfg.seed)


def make_angles(cfg):
    half = np.radians(cfg.span_deg) / 2.0
    return np.linspace(-half, half, cfg.n_angles)


def make_grid(cfg):
    """Grid over cfg.grid_extent. grid_dx / grid_dz are in wavelengths
    (0 picks the defaults of one and half a wavelength)."""
    lam = cfg.wavelength
    dx = lam * cfg.grid_dx if cfg.grid_dx > 0 else None
    dz = lam * cfg.grid_dz if cfg.grid_dz > 0 else None
    x_min, x_max, z_min, z_max = cfg.grid_extent
    return ImagingGrid.from_extent(x_min, x_max, z_min, z_max, lam,
                                   dx=dx, dz=dz)


def make_patch_grid(cfg, grid):
    return PatchGrid.from_wavelengths(
        grid, cfg.wavelength,
        lateral_lambdas=cfg.patch_lateral_lambdas,
        axial_lambdas=cfg.patch_axial_lambdas,
        overlap_fraction=cfg.patch_overlap)


def make_aberration(cfg, angles):
    """Returns (angular_law or None, screen or None) per the config."""
    if cfg.aberration_kind == "none":
        return None, None
    if cfg.aberration_kind == "screen":
        array = make_array(cfg)
        screen = sample_correlated_screen(
            array, rms_delay=cfg.screen_rms_delay,
            correlation_length=cfg.screen_correlation_length,
            seed=cfg.screen_seed)
        return None, screen
    if cfg.aberration_file:
        from .fileio import read_delay_law_csv
        file_angles, delays, amps = read_delay_law_csv(cfg.aberration_file)
        if file_angles.size != angles.size or \
                not np.allclose(file_angles, angles, atol=1e-9):
            raise ConfigError("aberration file angles do not match the config")
        return AngularAberration(angles=angles, delays=delays,
                                 amplitudes=amps), None
    if cfg.law_peak_to_peak_phase <= 0:
        raise ConfigError("angular aberration needs a file or a peak-to-peak phase")
    law = sample_smooth_angular_law(angles, cfg.law_peak_to_peak_phase,
                                    cfg.center_frequency, seed=cfg.law_seed)
    return law, None
