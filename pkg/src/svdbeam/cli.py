"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical or degenerate
error, 4 I/O error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import coherence as coh
from . import config as cfgmod
from . import fileio, metrics, pipeline, svdcore
from .arraysim import build_phantom, simulate_rf
from .beamform import compound, das_beamform
from .errors import ConfigError, PipelineStageError, SvdBeamError


def _load_cfg(args):
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.threads:
        pipeline.set_threads(cfg.threads)
    return out


def _cmd_phantom(args):
    cfg = cfgmod.validate_config(_load_cfg(args))
    out = _out_dir(cfg)
    field = build_phantom(cfgmod.make_phantom_spec(cfg))
    fileio.write_scatterers_csv(field, out / "phantom.csv")
    print(f"wrote {out / 'phantom.csv'} ({len(field)} scatterers)")


def _cmd_simulate(args):
    cfg = cfgmod.validate_config(_load_cfg(args))
    out = _out_dir(cfg)
    angles = cfgmod.make_angles(cfg)
    _, screen = cfgmod.make_aberration(cfg, angles)
    field = build_phantom(cfgmod.make_phantom_spec(cfg))
    rf = simulate_rf(cfgmod.make_array(cfg), cfgmod.make_pulse(cfg), field,
                     angles, screen=screen)
    fileio.save_rf(rf, out / "rf.ufrf", extra_meta={"phantom_seed": cfg.seed})
    print(f"wrote {out / 'rf.ufrf'} {rf.data.shape}")


def _cmd_beamform(args):
    cfg = cfgmod.validate_config(_load_cfg(args))
    out = _out_dir(cfg)
    rf = fileio.load_rf(args.rf or out / "rf.ufrf")
    c_bf = cfg.beamform_sound_speed if cfg.beamform_sound_speed > 0 else None
    r_matrix = das_beamform(rf, cfgmod.make_grid(cfg), f_number=cfg.f_number,
                            sound_speed=c_bf)
    fileio.save_ucm(r_matrix, out / "r.ufcm")
    pipeline.export_image(compound(r_matrix), out / f"compound.{args.format}",
                          args.format, cfg.dynamic_range_db)
    print(f"wrote {out / 'r.ufcm'} ({r_matrix.out_of_window} out-of-window samples)")


def _cmd_correct(args):
    cfg = cfgmod.validate_config(_load_cfg(args))
    out = _out_dir(cfg)
    r_matrix = fileio.load_ucm(args.ucm or out / "r.ufcm")
    patch_grid = cfgmod.make_patch_grid(cfg, r_matrix.grid)
    result = svdcore.svd_beamform(r_matrix, patch_grid, mode=cfg.correction_mode)
    pipeline.export_image(result.image, out / f"corrected.{args.format}",
                          args.format, cfg.dynamic_range_db)
    fileio.write_laws_csv(result.laws, out / "laws.csv")
    print(f"wrote corrected image and {len(result.laws)} patch laws")


def _cmd_coherence(args):
    cfg = cfgmod.validate_config(_load_cfg(args))
    out = _out_dir(cfg)
    r_matrix = fileio.load_ucm(args.ucm or out / "r.ufcm")
    patch_grid = cfgmod.make_patch_grid(cfg, r_matrix.grid)
    rect = pipeline._central_patch(patch_grid, r_matrix.grid)
    rows = r_matrix.patch_rows(*rect)
    cmat = coh.angular_coherence(r_matrix.data[rows], normalized=True)
    fileio.write_matrix_csv(np.abs(cmat.values), out / "coherence.csv")
    curve = coh.coherence_factor_curve(cmat)
    step = r_matrix.angles[1] - r_matrix.angles[0] if r_matrix.n_angles > 1 else 1.0
    fileio.write_curve_csv(np.degrees(step) * np.arange(curve.size), curve,
                           out / "coherence_curve.csv")
    print(f"wrote coherence matrix and curve for patch {rect}")


def _cmd_metrics(args):
    cfg = cfgmod.validate_config(_load_cfg(args))
    out = _out_dir(cfg)
    report = {}
    grid = cfgmod.make_grid(cfg)

    class _Image:
        def __init__(self, grid, mag2d):
            self.grid = grid
            self.pixels = mag2d.T.ravel().astype(complex)

    for name in ("uncorrected", "corrected"):
        path = out / f"{name}.csv"
        if not path.exists():
            continue
        img = _Image(grid, fileio.read_matrix_csv(path))
        if cfg.cysts:
            cx, cz, radius, _ = cfg.cysts[0]
            inside, outside = metrics.cyst_masks(grid, cx, cz, radius)
            report[f"contrast_{name}_db"] = metrics.contrast_db(img, inside, outside)
        if cfg.pins:
            report[f"resolution_{name}_m"] = metrics.lateral_resolution(
                img, cfg.pins[0][:2])
    fileio.write_key_values(out / "metrics.txt", report)
    for key, value in report.items():
        print(f"{key} = {value}")


def _cmd_sweep_patch(args):
    cfg = cfgmod.validate_config(_load_cfg(args))
    out = _out_dir(cfg)
    r_matrix = fileio.load_ucm(args.ucm or out / "r.ufcm")
    center = (r_matrix.grid.nx // 2, r_matrix.grid.nz // 2)
    if args.center:
        center = tuple(int(v) for v in args.center.split(","))
    sizes = [tuple(int(v) for v in chunk.split("x"))
             for chunk in args.sizes.split(",")]
    sweep = svdcore.patch_size_sweep(r_matrix, center, sizes)
    with open(out / "patch_sweep.csv", "w") as fh:
        fh.write("patch_nx,patch_nz,s1,s2,s_ratio,r2_vs_median\n")
        for entry in sweep.entries:
            s = entry.singular_values
            fh.write(f"{entry.size[0]},{entry.size[1]},{s[0]:.17g},"
                     f"{s[1] if s.size > 1 else 0:.17g},"
                     f"{entry.s_ratio:.17g},{entry.r2_vs_median:.17g}\n")
    print(f"wrote {out / 'patch_sweep.csv'}")


def _cmd_bench(args):
    cfg = cfgmod.validate_config(_load_cfg(args))
    out = _out_dir(cfg)
    angles = cfgmod.make_angles(cfg)
    field = build_phantom(cfgmod.make_phantom_spec(cfg))
    rf = simulate_rf(cfgmod.make_array(cfg), cfgmod.make_pulse(cfg), field, angles)
    r_matrix = das_beamform(rf, cfgmod.make_grid(cfg), f_number=cfg.f_number)
    report = pipeline.bench(r_matrix, rf=rf, repetitions=args.repetitions)
    (out / "bench.txt").write_text(report.as_text())
    print(report.as_text())


def _cmd_pipeline(args):
    cfg = _load_cfg(args)
    result = pipeline.run_pipeline(cfg)
    for key, value in result.report.items():
        print(f"{key} = {value}")
    print(f"bundle written to {result.out_dir}")


def build_parser():
    parser = argparse.ArgumentParser(prog="svdbeam")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "phantom": _cmd_phantom,
        "simulate": _cmd_simulate,
        "beamform": _cmd_beamform,
        "correct": _cmd_correct,
        "coherence": _cmd_coherence,
        "metrics": _cmd_metrics,
        "sweep-patch": _cmd_sweep_patch,
        "bench": _cmd_bench,
        "pipeline": _cmd_pipeline,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--format", choices=("pgm", "csv"), default="pgm")
        if name in ("beamform",):
            p.add_argument("--rf", default=None)
        if name in ("correct", "coherence", "sweep-patch"):
            p.add_argument("--ucm", default=None)
        if name == "sweep-patch":
            p.add_argument("--center", default=None)
            p.add_argument("--sizes", default="16x8,32x16,48x24")
        if name == "bench":
            p.add_argument("--repetitions", type=int, default=5)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except PipelineStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, ConfigError) else \
            4 if isinstance(exc.cause, OSError) else 3
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SvdBeamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
