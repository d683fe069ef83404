"""End-to-end experiment pipeline, image export and the timing harness."""

import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import coherence as coh
from . import config as cfgmod
from . import fileio, metrics, svdcore
from .arraysim import apply_angular_delay, build_phantom, simulate_rf
from .beamform import compound, das_beamform
from .errors import ConfigError, FitError, PipelineStageError, SvdBeamError


def set_threads(n):
    """Clamp and apply the numba thread count; returns the effective value."""
    import numba
    if n <= 0:
        return numba.get_num_threads()
    n_eff = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n_eff)
    return n_eff


def export_image(image, path, fmt="pgm", dynamic_range_db=60.0):
    """Write an image as 8-bit log-compressed PGM or as a CSV of |pixel|."""
    mag = np.abs(image.as_grid())
    if fmt == "pgm":
        fileio.write_pgm(fileio.log_compress_u8(mag, dynamic_range_db), path)
    elif fmt == "csv":
        fileio.write_matrix_csv(mag, path)
    else:
        raise ConfigError("format must be 'pgm' or 'csv'")
    return Path(path)


@dataclass
class PipelineResult:
    out_dir: Path
    report: dict
    corrected: object
    uncorrected: object
    laws: list


def run_pipeline(cfg):
    """phantom -> simulate -> (aberrate) -> beamform -> correct -> metrics
    -> coherence, writing every intermediate product plus a hashed MANIFEST.

    Fully deterministic for fixed seeds and thread count. On a stage
    failure the partial outputs stay on disk, the MANIFEST records the
    failed stage, and a PipelineStageError propagates the cause.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage = "setup"
    report = {}
    try:
        cfgmod.validate_config(cfg)
        if cfg.threads:
            set_threads(cfg.threads)
        cfgmod.save_config(cfg, out / "config.ini")
        array = cfgmod.make_array(cfg)
        pulse = cfgmod.make_pulse(cfg)
        angles = cfgmod.make_angles(cfg)
        grid = cfgmod.make_grid(cfg)
        law, screen = cfgmod.make_aberration(cfg, angles)

        stage = "phantom"
        field = build_phantom(cfgmod.make_phantom_spec(cfg))
        fileio.write_scatterers_csv(field, out / "phantom.csv")

        stage = "simulate"
        rf = simulate_rf(array, pulse, field, angles, screen=screen)
        sim_meta = {"phantom_seed": cfg.seed, "pulse_n_cycles": repr(cfg.n_cycles)}
        if screen is not None:
            sim_meta.update(screen_rms_delay=repr(cfg.screen_rms_delay),
                            screen_correlation_length=repr(cfg.screen_correlation_length),
                            screen_seed=cfg.screen_seed)
        fileio.save_rf(rf, out / "rf.ufrf", extra_meta=sim_meta)

        stage = "aberrate"
        if law is not None:
            fileio.write_delay_law_csv(law, out / "truth_law.csv")
            rf = apply_angular_delay(rf, law)
            fileio.save_rf(rf, out / "rf_aberrated.ufrf", extra_meta=sim_meta)

        stage = "beamform"
        c_bf = cfg.beamform_sound_speed if cfg.beamform_sound_speed > 0 else None
        r_matrix = das_beamform(rf, grid, f_number=cfg.f_number, sound_speed=c_bf)
        fileio.save_ucm(r_matrix, out / "r.ufcm")
        uncorrected = compound(r_matrix)
        export_image(uncorrected, out / "uncorrected.pgm", "pgm", cfg.dynamic_range_db)
        export_image(uncorrected, out / "uncorrected.csv", "csv")
        report["out_of_window_samples"] = r_matrix.out_of_window

        stage = "correct"
        patch_grid = cfgmod.make_patch_grid(cfg, grid)
        result = svdcore.svd_beamform(r_matrix, patch_grid, mode=cfg.correction_mode)
        export_image(result.image, out / "corrected.pgm", "pgm", cfg.dynamic_range_db)
        export_image(result.image, out / "corrected.csv", "csv")
        fileio.write_laws_csv(result.laws, out / "laws.csv")
        report["n_patches"] = len(patch_grid.patches)

        stage = "metrics"
        if cfg.cysts:
            cx, cz, radius, _ = cfg.cysts[0]
            inside, outside = metrics.cyst_masks(grid, cx, cz, radius)
            before = metrics.contrast_db(uncorrected, inside, outside)
            after = metrics.contrast_db(result.image, inside, outside)
            report["contrast_uncorrected_db"] = before
            report["contrast_corrected_db"] = after
            report["contrast_improvement_db"] = before - after
        if cfg.pins:
            pin = cfg.pins[0][:2]
            report["resolution_uncorrected_m"] = metrics.lateral_resolution(
                uncorrected, pin)
            report["resolution_corrected_m"] = metrics.lateral_resolution(
                result.image, pin)
        if law is not None:
            phases = svdcore.consensus_phase(result.laws)
            pseudo = svdcore.ExtractedAberration(
                angles=angles, phase=phases,
                amplitude=np.ones_like(phases),
                mask=np.isfinite(phases), s_ratio=float("nan"),
                center_frequency=cfg.center_frequency)
            for alignment in ("none", "offset", "affine"):
                report[f"law_r2_{alignment}"] = metrics.phase_law_r2(
                    pseudo, law, alignment)
        fileio.write_key_values(out / "metrics.txt", report)

        stage = "coherence"
        rect = _central_patch(patch_grid, grid)
        rows = r_matrix.patch_rows(*rect)
        cmat = coh.angular_coherence(r_matrix.data[rows], normalized=True,
                                     angles=angles)
        fileio.write_matrix_csv(np.abs(cmat.values), out / "coherence.csv")
        fileio.write_pgm(fileio.log_compress_u8(np.abs(cmat.values), 40.0),
                         out / "coherence.pgm")
        curve = coh.coherence_factor_curve(cmat)
        lag_deg = np.degrees(angles[1] - angles[0]) if angles.size > 1 else 1.0
        fileio.write_curve_csv(np.arange(curve.size) * lag_deg, curve,
                               out / "coherence_curve.csv")
        try:
            fit = coh.triangle_fit(curve)
            fit_report = {
                "slope": repr(fit.slope), "intercept": repr(fit.intercept),
                "r2": repr(fit.r2),
                "zero_lag_extrapolation": repr(fit.zero_lag_extrapolation),
                "lag_range": f"{fit.lag_range[0]}..{fit.lag_range[1]}"}
        except FitError as exc:
            # Heavily aberrated data can decorrelate below the floor at lag 1.
            fit_report = {"fit": f"unavailable ({exc})"}
        fileio.write_key_values(out / "coherence.txt", fit_report)

        stage = "manifest"
        fileio.write_manifest(out, status="complete")
    except SvdBeamError as exc:
        fileio.write_manifest(out, status="incomplete", failed_stage=stage)
        raise PipelineStageError(stage, exc) from exc
    return PipelineResult(out_dir=out, report=report, corrected=result.image,
                          uncorrected=uncorrected, laws=result.laws)


def _central_patch(patch_grid, grid):
    cx, cz = grid.nx // 2, grid.nz // 2
    best, best_d = None, None
    for rect in patch_grid.patches:
        ix0, ix1, iz0, iz1 = rect
        d = abs((ix0 + ix1) / 2 - cx) + abs((iz0 + iz1) / 2 - cz)
        if best is None or d < best_d:
            best, best_d = rect, d
    return best


@dataclass
class BenchRow:
    n_patches: int
    patch_nx: int
    patch_nz: int
    n_angles: int
    beamform_seconds: float
    svd_seconds: float
    repetitions: int


@dataclass
class BenchReport:
    rows: list
    machine: str
    threads: int

    def as_text(self):
        lines = [f"machine = {self.machine}", f"threads = {self.threads}",
                 "n_patches,patch_nx,patch_nz,n_angles,"
                 "beamform_seconds,svd_seconds,repetitions"]
        for r in self.rows:
            lines.append(f"{r.n_patches},{r.patch_nx},{r.patch_nz},{r.n_angles},"
                         f"{r.beamform_seconds:.6g},{r.svd_seconds:.6g},"
                         f"{r.repetitions}")
        return "\n".join(lines) + "\n"


def _square_tiling(grid, count):
    k = int(round(count ** 0.5))
    pnx = -(-grid.nx // k)
    pnz = -(-grid.nz // k)
    pg = svdcore.PatchGrid.cover(grid, pnx, pnz, overlap_fraction=0.0)
    return pg


def _median_time(fn, repetitions):
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def bench(r_matrix, rf=None, patch_counts=(1, 9, 25, 100),
          angle_counts=(5, 10, 100), repetitions=5, mode="phase_conjugate",
          f_number=1.0):
    """Median wall-clock times of the SVD-correction stage on a fixed
    pre-beamformed matrix, over a patch-count by angle-count grid.

    Angle subsets are evenly spaced columns of the given matrix. When `rf`
    is provided the receive beamforming for each angle count is timed as
    well. One warm-up run precedes each timed configuration; absolute
    numbers are machine dependent and never asserted against references.
    """
    if repetitions < 5:
        raise ConfigError("repetitions must be >= 5")
    grid = r_matrix.grid
    rows = []
    for m in angle_counts:
        m = min(m, r_matrix.n_angles)
        idx = np.unique(np.round(np.linspace(0, r_matrix.n_angles - 1, m)).astype(int))
        sub = type(r_matrix)(grid, r_matrix.angles[idx], r_matrix.data[:, idx],
                             r_matrix.center_frequency, r_matrix.sound_speed)
        bf_time = float("nan")
        if rf is not None:
            from .arraysim import RFDataSet
            rf_sub = RFDataSet(rf.data[idx], rf.t0, rf.sampling_frequency,
                               rf.angles[idx], rf.array)
            das_beamform(rf_sub, grid, f_number=f_number)  # warm-up
            bf_time = _median_time(
                lambda: das_beamform(rf_sub, grid, f_number=f_number),
                repetitions)
        for count in patch_counts:
            pg = _square_tiling(grid, count)
            svdcore.svd_beamform(sub, pg, mode=mode)  # warm-up
            svd_time = _median_time(
                lambda: svdcore.svd_beamform(sub, pg, mode=mode), repetitions)
            rows.append(BenchRow(
                n_patches=len(pg.patches), patch_nx=pg.patch_nx,
                patch_nz=pg.patch_nz, n_angles=int(idx.size),
                beamform_seconds=bf_time, svd_seconds=svd_time,
                repetitions=repetitions))
    import numba
    machine = f"{platform.machine()} {platform.system()} python{platform.python_version()}"
    return BenchReport(rows=rows, machine=machine,
                       threads=numba.get_num_threads())
