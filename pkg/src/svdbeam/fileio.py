"""File formats: channel-data and compound-matrix binaries, PGM/CSV exports,
plain-text sidecars and the hashed output manifest.

All writers are deterministic (no timestamps, fixed float formatting) so a
re-run with identical inputs reproduces every byte.
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

from .arraysim import RFDataSet, TransducerArray
from .beamform import ImagingGrid, UltrafastCompoundMatrix
from .errors import ConfigError

RF_MAGIC = b"UFRF"
UCM_MAGIC = b"UFCM"
FORMAT_VERSION = 1


def _meta_path(path):
    return Path(str(path) + ".meta")


def write_key_values(path, mapping):
    lines = [f"{key} = {value}" for key, value in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_key_values(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def save_rf(rf, path, extra_meta=None):
    """Write channel data: magic, version, dims, t0, fs, angles, then
    little-endian float32 (re, im) pairs with time fastest varying. A
    plain-text sidecar records the array geometry and any extra metadata."""
    path = Path(path)
    n_a, n_e, n_t = rf.data.shape
    with open(path, "wb") as fh:
        fh.write(RF_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, n_a, n_e, n_t))
        fh.write(struct.pack("<dd", rf.t0, rf.sampling_frequency))
        fh.write(rf.angles.astype("<f8").tobytes())
        inter = np.empty((n_a, n_e, n_t, 2), dtype="<f4")
        inter[..., 0] = rf.data.real
        inter[..., 1] = rf.data.imag
        fh.write(inter.tobytes())
    meta = {
        "n_elements": rf.array.n_elements,
        "pitch": repr(rf.array.pitch),
        "center_frequency": repr(rf.array.center_frequency),
        "sampling_frequency": repr(rf.array.sampling_frequency),
        "sound_speed": repr(rf.array.sound_speed),
    }
    if extra_meta:
        meta.update(extra_meta)
    write_key_values(_meta_path(path), meta)


def load_rf(path):
    path = Path(path)
    meta = read_key_values(_meta_path(path))
    with open(path, "rb") as fh:
        if fh.read(4) != RF_MAGIC:
            raise ConfigError(f"{path} is not a channel-data file")
        version, n_a, n_e, n_t = struct.unpack("<IIII", fh.read(16))
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported format version {version}")
        t0, fs = struct.unpack("<dd", fh.read(16))
        angles = np.frombuffer(fh.read(8 * n_a), dtype="<f8").copy()
        raw = np.frombuffer(fh.read(n_a * n_e * n_t * 8), dtype="<f4")
    raw = raw.reshape(n_a, n_e, n_t, 2).astype(np.float64)
    data = raw[..., 0] + 1j * raw[..., 1]
    array = TransducerArray(
        n_elements=int(meta["n_elements"]),
        pitch=float(meta["pitch"]),
        center_frequency=float(meta["center_frequency"]),
        sampling_frequency=float(meta["sampling_frequency"]),
        sound_speed=float(meta["sound_speed"]))
    return RFDataSet(data, t0, fs, angles, array)


def save_ucm(r_matrix, path):
    """Write a compound matrix: magic, version, dims, counters, grid and
    beam parameters, angles, then float32 complex pairs in pixel-major
    order (all angles of pixel 0, then pixel 1, ...)."""
    grid = r_matrix.grid
    with open(path, "wb") as fh:
        fh.write(UCM_MAGIC)
        fh.write(struct.pack("<IIIII", FORMAT_VERSION, grid.nx, grid.nz,
                             r_matrix.n_angles, r_matrix.out_of_window))
        fh.write(struct.pack("<dddddd", grid.x0, grid.z0, grid.dx, grid.dz,
                             r_matrix.center_frequency, r_matrix.sound_speed))
        fh.write(r_matrix.angles.astype("<f8").tobytes())
        inter = np.empty((grid.n_pixels, r_matrix.n_angles, 2), dtype="<f4")
        inter[..., 0] = r_matrix.data.real
        inter[..., 1] = r_matrix.data.imag
        fh.write(inter.tobytes())


def load_ucm(path):
    with open(path, "rb") as fh:
        if fh.read(4) != UCM_MAGIC:
            raise ConfigError(f"{path} is not a compound-matrix file")
        version, nx, nz, n_angles, oow = struct.unpack("<IIIII", fh.read(20))
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported format version {version}")
        x0, z0, dx, dz, f0, c = struct.unpack("<dddddd", fh.read(48))
        angles = np.frombuffer(fh.read(8 * n_angles), dtype="<f8").copy()
        raw = np.frombuffer(fh.read(nx * nz * n_angles * 8), dtype="<f4")
    grid = ImagingGrid(x0=x0, z0=z0, nx=nx, nz=nz, dx=dx, dz=dz)
    raw = raw.reshape(nx * nz, n_angles, 2).astype(np.float64)
    data = raw[..., 0] + 1j * raw[..., 1]
    return UltrafastCompoundMatrix(grid, angles, data, f0, c, out_of_window=oow)


def log_compress_u8(magnitude, dynamic_range_db):
    """8-bit log compression clipped to [max - DR, max] dB."""
    if dynamic_range_db <= 0:
        raise ConfigError("dynamic_range_db must be positive")
    mag = np.abs(magnitude)
    peak = mag.max()
    if peak == 0:
        return np.zeros(mag.shape, np.uint8)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    db = np.clip(db, -dynamic_range_db, 0.0)
    return np.round((db + dynamic_range_db) / dynamic_range_db * 255.0).astype(np.uint8)


def write_pgm(array_2d_u8, path):
    h, w = array_2d_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(array_2d_u8).tobytes())


def write_matrix_csv(matrix, path):
    """Rows of %.17g values; reads back to float64 exactly."""
    with open(path, "w") as fh:
        for row in np.atleast_2d(matrix):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix_csv(path):
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            rows.append([float(tok) for tok in line.split(",")])
    return np.asarray(rows)


def write_scatterers_csv(field, path):
    with open(path, "w") as fh:
        fh.write("x_m,z_m,reflectivity\n")
        for (x, z), r in zip(field.positions, field.reflectivities):
            fh.write(f"{x:.17g},{z:.17g},{r:.17g}\n")


def write_laws_csv(laws, path):
    """One row per (patch, angle): patch_index, angle_deg, phase_rad,
    amplitude, delay_s. Masked angles are written with empty phase/delay."""
    with open(path, "w") as fh:
        fh.write("patch_index,angle_deg,phase_rad,amplitude,delay_s\n")
        for p_idx, law in enumerate(laws):
            for k, angle in enumerate(law.angles):
                deg = np.degrees(angle)
                if law.mask[k]:
                    fh.write(f"{p_idx},{deg:.17g},{law.phase[k]:.17g},"
                             f"{law.amplitude[k]:.17g},{law.delays[k]:.17g}\n")
                else:
                    fh.write(f"{p_idx},{deg:.17g},,{law.amplitude[k]:.17g},\n")


def write_delay_law_csv(law, path):
    with open(path, "w") as fh:
        fh.write("angle_deg,delay_s,amplitude\n")
        for angle, delay, amp in zip(law.angles, law.delays, law.amplitudes):
            fh.write(f"{np.degrees(angle):.17g},{delay:.17g},{amp:.17g}\n")


def read_delay_law_csv(path):
    """Returns (angles_rad, delays_s, amplitudes)."""
    angles, delays, amps = [], [], []
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        angles.append(np.radians(float(parts[0])))
        delays.append(float(parts[1]))
        amps.append(float(parts[2]) if len(parts) > 2 and parts[2] else 1.0)
    return np.asarray(angles), np.asarray(delays), np.asarray(amps)


def write_curve_csv(lags_deg, curve, path):
    with open(path, "w") as fh:
        fh.write("lag_deg,coherence\n")
        for lag, value in zip(lags_deg, curve):
            fh.write(f"{lag:.17g},{value:.17g}\n")


def sha256_of(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, status="complete", failed_stage=None):
    """Hash every file in out_dir (except the manifest itself), sorted by
    relative path, and record completeness."""
    out_dir = Path(out_dir)
    lines = [f"status = {status}"]
    if failed_stage is not None:
        lines.append(f"failed_stage = {failed_stage}")
    lines.append("")
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "MANIFEST":
            rel = path.relative_to(out_dir).as_posix()
            lines.append(f"{sha256_of(path)}  {rel}")
    (out_dir / "MANIFEST").write_text("\n".join(lines) + "\n")
    return out_dir / "MANIFEST"
