"""Patch-wise singular value decomposition of the compound matrix.

The factorization runs on the small Hermitian Gram matrix (angles x angles)
rather than the tall pixel-by-angle matrix: with far more pixels than
angles that is the cheap side, and the spatial vectors follow as R v / s.
The first right singular vector is the phase conjugate of the per-angle
aberration law; the first left vector is the rephased patch image.
"""

from dataclasses import dataclass, field

import numpy as np

from .arraysim import AngularAberration
from .beamform import ComplexImage
from .errors import (ConfigError, DegenerateError, FitError,
                     PatchTooSmallError, ShapeError)

DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class GaugeRecord:
    """Phase fixing applied to the singular vectors.

    reference_index is the angle column nearest 0 degrees; phases[i] was
    multiplied onto both vectors of triplet i to make the angular entry at
    the reference real and non-negative.
    """

    reference_index: int
    phases: np.ndarray


@dataclass
class PatchSVD:
    """Full singular system of one patch, gauge fixed, descending order."""

    singular_values: np.ndarray
    spatial_vectors: np.ndarray   # [n_pixels, n_triplets]
    angular_vectors: np.ndarray   # [n_angles, n_triplets]
    gauge: GaugeRecord
    degenerate: bool
    angles: np.ndarray = None

    @property
    def spatial_vector(self):
        return self.spatial_vectors[:, 0]

    @property
    def angular_vector(self):
        return self.angular_vectors[:, 0]

    @property
    def s_ratio(self):
        s = self.singular_values
        if s.size < 2 or s[1] == 0:
            return float("inf")
        return float(s[0] / s[1])


def _lex_key(vec):
    return tuple(np.column_stack([vec.real, vec.imag]).ravel())


def patch_svd(r_patch, angles=None):
    """Singular triplets of a [n_pixels x n_angles] patch matrix.

    Computed through the eigendecomposition of the Hermitian Gram matrix;
    spatial vectors are recovered as R v_i / s_i for s_i > 0. The gauge
    makes each angular vector real and non-negative at the angle nearest
    0 degrees (the center column when no angles are given). A near-tie
    between the two leading singular values (within 1e-9 relative) sets the
    degenerate flag and orders the tied pair lexicographically so the
    choice, while arbitrary, is deterministic.
    """
    r = np.asarray(r_patch, dtype=np.complex128)
    if r.ndim != 2:
        raise ShapeError("patch matrix must be 2-D")
    n_pix, n_ang = r.shape
    if n_pix < n_ang:
        raise PatchTooSmallError(
            f"patch has {n_pix} pixels for {n_ang} angles; "
            "the angular law is unresolvable")
    if not np.all(np.isfinite(r.view(float))):
        raise ConfigError("patch matrix has non-finite entries")
    if angles is not None:
        angles = np.asarray(angles, dtype=float)
        if angles.size != n_ang:
            raise ShapeError("angles length does not match patch columns")
        ref = int(np.argmin(np.abs(angles)))
    else:
        ref = n_ang // 2

    gram = r.conj().T @ r
    w, v = np.linalg.eigh(gram)
    order = np.argsort(w)[::-1]
    s = np.sqrt(np.clip(w[order], 0.0, None))
    angular = v[:, order]
    if s[0] == 0:
        raise DegenerateError("patch has zero energy")

    spatial = r @ angular
    positive = s > 0
    spatial[:, positive] /= s[positive]
    spatial[:, ~positive] = 0.0

    phases = np.zeros(n_ang)
    for i in range(n_ang):
        entry = angular[ref, i]
        if entry != 0:
            phases[i] = -np.angle(entry)
    rot = np.exp(1j * phases)
    angular = angular * rot[None, :]
    spatial = spatial * rot[None, :]

    degenerate = n_ang >= 2 and (s[0] - s[1]) < DEGENERACY_RTOL * s[0]
    if degenerate and _lex_key(angular[:, 1]) < _lex_key(angular[:, 0]):
        for arr in (angular, spatial):
            arr[:, [0, 1]] = arr[:, [1, 0]]
        s[[0, 1]] = s[[1, 0]]

    return PatchSVD(singular_values=s, spatial_vectors=spatial,
                    angular_vectors=angular,
                    gauge=GaugeRecord(reference_index=ref, phases=phases),
                    degenerate=degenerate,
                    angles=None if angles is None else angles)


@dataclass
class ExtractedAberration:
    """Per-angle phase and amplitude law recovered from a patch SVD.

    phase uses the convention phase = 2 pi f0 * delay of the aberrating
    layer, so `delays` feeds straight into the corrected re-beamforming.
    Angles where the angular vector vanished are masked out.
    """

    angles: np.ndarray
    phase: np.ndarray
    amplitude: np.ndarray
    mask: np.ndarray
    s_ratio: float
    center_frequency: float
    source_patch: tuple = None

    @property
    def delays(self):
        return self.phase / (2.0 * np.pi * self.center_frequency)

    def as_delay_law(self):
        return AngularAberration(angles=self.angles.copy(),
                                 delays=self.delays,
                                 amplitudes=self.amplitude.copy())


def extract_aberration(svd, f0, source_patch=None):
    """Read the aberration law off the first angular singular vector.

    The vector is the conjugate of the normalized aberration, so its angle
    is the aberration's phase lag 2 pi f0 * delay; magnitudes are rescaled
    to unit mean. Zero-magnitude entries have no defined phase and are
    masked.
    """
    if svd.angles is None:
        raise ConfigError("patch SVD carries no angle axis")
    v1 = svd.angular_vector
    mag = np.abs(v1)
    mask = mag > 0
    phase = np.zeros_like(mag)
    phase[mask] = np.angle(v1[mask])
    amplitude = np.zeros_like(mag)
    if mask.any():
        amplitude[mask] = mag[mask] / mag[mask].mean()
    return ExtractedAberration(
        angles=svd.angles.copy(), phase=phase, amplitude=amplitude,
        mask=mask, s_ratio=svd.s_ratio, center_frequency=float(f0),
        source_patch=source_patch)


def _corrected_patch_image(r_patch, svd, mode):
    v1 = svd.angular_vector
    mag = np.abs(v1)
    if mode == "rank1":
        # Compound of the rank-1 matrix after per-column phase alignment.
        return svd.singular_values[0] * svd.spatial_vector * mag.sum()
    if mode == "phase_conjugate":
        unit = np.zeros_like(v1)
        nz = mag > 0
        unit[nz] = v1[nz] / mag[nz]
        return r_patch @ unit
    raise ConfigError("mode must be 'rank1' or 'phase_conjugate'")


def correct_patch(r_patch, mode="rank1", angles=None):
    """Aberration-corrected compound image of one patch.

    rank1 keeps only the leading singular image, scaled to match compound
    amplitudes; phase_conjugate rephases every column with the unit-modulus
    conjugate law, preserving per-angle amplitude content.
    """
    svd = patch_svd(r_patch, angles=angles)
    return _corrected_patch_image(np.asarray(r_patch, np.complex128), svd, mode)


@dataclass
class PatchGrid:
    """Rectangular patch tiling of an imaging grid (pixel-index rectangles)."""

    patch_nx: int
    patch_nz: int
    overlap_fraction: float
    patches: list  # (ix0, ix1, iz0, iz1), half open

    @staticmethod
    def _starts(n, p, stride):
        starts = list(range(0, n - p + 1, stride))
        if starts[-1] != n - p:
            starts.append(n - p)
        return starts

    @classmethod
    def cover(cls, grid, patch_nx, patch_nz, overlap_fraction=0.5):
        if not 0 <= overlap_fraction < 1:
            raise ConfigError("overlap_fraction must lie in [0, 1)")
        if patch_nx > grid.nx or patch_nz > grid.nz:
            raise ConfigError("patch exceeds the grid")
        if patch_nx < 1 or patch_nz < 1:
            raise ConfigError("patch dims must be >= 1")
        sx = max(1, int(round(patch_nx * (1 - overlap_fraction))))
        sz = max(1, int(round(patch_nz * (1 - overlap_fraction))))
        patches = [(ix, ix + patch_nx, iz, iz + patch_nz)
                   for ix in cls._starts(grid.nx, patch_nx, sx)
                   for iz in cls._starts(grid.nz, patch_nz, sz)]
        return cls(patch_nx=patch_nx, patch_nz=patch_nz,
                   overlap_fraction=overlap_fraction, patches=patches)

    @classmethod
    def from_wavelengths(cls, grid, wavelength, lateral_lambdas=70,
                         axial_lambdas=10, overlap_fraction=0.5):
        """Patch dims from physical sizes (default 10 lambda axial by
        70 lambda lateral), clamped to the grid."""
        pnx = min(grid.nx, max(1, int(round(lateral_lambdas * wavelength / grid.dx))))
        pnz = min(grid.nz, max(1, int(round(axial_lambdas * wavelength / grid.dz))))
        return cls.cover(grid, pnx, pnz, overlap_fraction)


@dataclass
class CorrectionResult:
    image: ComplexImage
    laws: list


def svd_beamform(r_matrix, patch_grid, mode="phase_conjugate"):
    """Correct every patch independently and stitch by per-pixel averaging.

    Each pixel of the output is the mean of its corrected values over all
    covering patches; accumulation runs in the fixed patch order. The
    per-patch extracted laws are returned for inspection.
    """
    grid = r_matrix.grid
    acc = np.zeros(grid.n_pixels, np.complex128)
    cnt = np.zeros(grid.n_pixels, np.int64)
    laws = []
    for rect in patch_grid.patches:
        ix0, ix1, iz0, iz1 = rect
        rows = r_matrix.patch_rows(ix0, ix1, iz0, iz1)
        r_p = r_matrix.data[rows]
        try:
            svd = patch_svd(r_p, angles=r_matrix.angles)
        except PatchTooSmallError as exc:
            raise PatchTooSmallError(f"patch {rect}: {exc}") from exc
        acc[rows] += _corrected_patch_image(r_p, svd, mode)
        cnt[rows] += 1
        laws.append(extract_aberration(svd, r_matrix.center_frequency,
                                       source_patch=rect))
    if np.any(cnt == 0):
        raise ConfigError("patch grid does not cover every pixel")
    return CorrectionResult(image=ComplexImage(grid, acc / cnt), laws=laws)


def consensus_phase(laws):
    """Per-angle median of the laws' phases over the valid angles."""
    phases = np.stack([law.phase for law in laws])
    masks = np.stack([law.mask for law in laws])
    out = np.zeros(phases.shape[1])
    for k in range(phases.shape[1]):
        col = phases[masks[:, k], k]
        out[k] = np.median(col) if col.size else np.nan
    return out


def _offset_r2(a, b):
    resid = a - b
    resid = resid - resid.mean()
    ss_tot = np.sum((b - b.mean()) ** 2)
    if ss_tot == 0:
        return float("nan")
    return float(1.0 - np.sum(resid ** 2) / ss_tot)


@dataclass
class SweepEntry:
    size: tuple
    law: ExtractedAberration
    singular_values: np.ndarray
    s_ratio: float
    r2_vs_median: float = None


@dataclass
class PatchSweepResult:
    entries: list
    median_phase: np.ndarray


def patch_size_sweep(r_matrix, center_pixel, sizes):
    """Run patch_svd on concentric patches and compare the extracted laws.

    `center_pixel` is (ix, iz); every requested size must fit inside the
    grid. Each entry reports the law, the singular spectrum, s1/s2, and the
    offset-aligned r-squared of its phase against the per-angle median
    phase across all sizes.
    """
    grid = r_matrix.grid
    cx, cz = center_pixel
    entries = []
    for size in sizes:
        snx, snz = size
        ix0 = cx - snx // 2
        iz0 = cz - snz // 2
        if ix0 < 0 or iz0 < 0 or ix0 + snx > grid.nx or iz0 + snz > grid.nz:
            raise ConfigError(f"sweep patch {size} exceeds the grid")
        rows = r_matrix.patch_rows(ix0, ix0 + snx, iz0, iz0 + snz)
        svd = patch_svd(r_matrix.data[rows], angles=r_matrix.angles)
        law = extract_aberration(svd, r_matrix.center_frequency,
                                 source_patch=(ix0, ix0 + snx, iz0, iz0 + snz))
        entries.append(SweepEntry(size=tuple(size), law=law,
                                  singular_values=svd.singular_values,
                                  s_ratio=svd.s_ratio))
    median = consensus_phase([e.law for e in entries])
    for entry in entries:
        valid = entry.law.mask & np.isfinite(median)
        entry.r2_vs_median = _offset_r2(np.unwrap(entry.law.phase[valid]),
                                        np.unwrap(median[valid]))
    return PatchSweepResult(entries=entries, median_phase=median)


@dataclass
class SpeedMismatch:
    quadratic_coeff: float
    curvature_sign: int


def detect_speed_mismatch(law):
    """Quadratic trend of the extracted phase over angle.

    Fits phase(theta) = c0 + c1 theta + c2 theta^2 by least squares and
    returns c2 with its sign. Sign convention (calibrated on simulation):
    beamforming faster than the medium (c_bf > c_true) gives c2 < 0, a
    concave phase; beamforming slower gives c2 > 0.
    """
    valid = law.mask
    if valid.sum() < 5:
        raise FitError("need at least 5 usable angles for the quadratic fit")
    theta = law.angles[valid]
    phase = np.unwrap(law.phase[valid])
    basis = np.column_stack([np.ones_like(theta), theta, theta ** 2])
    coef, _, rank, _ = np.linalg.lstsq(basis, phase, rcond=None)
    if rank < 3:
        raise FitError("quadratic fit is rank deficient")
    c2 = float(coef[2])
    return SpeedMismatch(quadratic_coeff=c2, curvature_sign=int(np.sign(c2)))
