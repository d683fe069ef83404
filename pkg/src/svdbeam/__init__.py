"""svdbeam: plane-wave ultrasound simulation and adaptive SVD beamforming.

Synthesizes aberrated channel data for steered plane-wave transmits, builds
the pixel-by-angle compound matrix, and corrects phase/amplitude aberrations
patch by patch through the matrix's leading singular triplet.
"""

from .arraysim import (AngularAberration, ElementScreen, PhantomSpec,
                       PulseModel, RFDataSet, ScattererField, TransducerArray,
                       apply_angular_delay, build_phantom,
                       sample_correlated_screen, sample_smooth_angular_law,
                       simulate_rf)
from .beamform import (ComplexImage, ImagingGrid, UltrafastCompoundMatrix,
                       angular_to_element_delays, apply_angular_law, compound,
                       das_beamform, measure_psf, rebeamform_corrected)
from .coherence import (CoherenceMatrix, angular_coherence,
                        coherence_factor_curve, triangle_fit)
from .config import ExperimentConfig, desk_scale_config, load_config, save_config
from .errors import (BoundaryError, ConfigError, DegenerateError, FitError,
                     PatchTooSmallError, PipelineStageError, ShapeError,
                     SvdBeamError, WindowError)
from .metrics import (RegionMask, annulus_mask, contrast_db, cyst_masks,
                      disk_mask, lateral_resolution, phase_law_r2)
from .pipeline import bench, export_image, run_pipeline, set_threads
from .svdcore import (ExtractedAberration, PatchGrid, PatchSVD, correct_patch,
                      detect_speed_mismatch, extract_aberration, patch_svd,
                      patch_size_sweep, svd_beamform)

__version__ = "0.1.0"
