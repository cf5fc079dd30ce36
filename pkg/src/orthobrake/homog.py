"""Ground-plane homography: robust estimation, projection, warping, registry.

The projective map is defined up to scale, so Homography stores a canonical
representative: Frobenius norm 1 with h33 >= 0 (first nonzero element >= 0
when h33 is exactly zero). Canonicalization first reduces the matrix by an
exact rational element ratio, which makes exactly-proportional inputs
canonicalize to bit-identical floats; projection is then scale-invariant
not just mathematically but bit-for-bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from fnmatch import fnmatch
from fractions import Fraction

import numpy as np

from .correspond import CameraPoint, CorrespondencePair, OrthoPoint
from .errors import (
    ConfigError,
    EstimationError,
    EstimationFailure,
    HorizonError,
    ValidationError,
)

# |w| below this counts as a horizon crossing (w_i = 0 is undefined)
W_EPS = 1e-12

# |cross product| below this marks 3 points as collinear in a minimal sample
COLLINEAR_EPS = 1e-9

# 0.99 quantile of the chi-square distribution with 4 degrees of freedom is
# 13.276704135987622; the truncation radius for a noise scale sigma is
# sqrt of that times sigma. 4 dof because the symmetric transfer residual
# accumulates squared noise in 4 coordinates (2 forward + 2 backward).
CHI2_99_4DOF_SQRT = 3.6437211935036444


def _canonical_matrix(m: np.ndarray) -> np.ndarray:
    """Return the canonical scale/sign representative of a 3x3 matrix.

    Step 1 divides by the largest-magnitude element using exact rational
    arithmetic, so any two inputs that are exact scalar multiples of each
    other reduce to the same floats. Step 2 applies the ordinary float
    Frobenius normalization and the sign rule to that shared reduction.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValidationError(f"homography matrix must be 3x3, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("homography matrix has non-finite elements")
    flat = m.ravel()
    pivot_idx = int(np.argmax(np.abs(flat)))
    pivot = flat[pivot_idx]
    if pivot == 0.0:
        raise ValidationError("homography matrix is all zeros")
    pivot_frac = Fraction(float(pivot))
    reduced = np.array(
        [float(Fraction(float(v)) / pivot_frac) for v in flat], dtype=np.float64
    ).reshape(3, 3)

    canon = reduced / np.linalg.norm(reduced)
    sign = canon[2, 2]
    if sign == 0.0:
        nonzero = canon.ravel()[np.nonzero(canon.ravel())[0]]
        sign = nonzero[0]
    if sign < 0:
        canon = -canon
    return canon


@dataclass(frozen=True, eq=False)
class Homography:
    """Canonical 3x3 projective map from camera pixels to ortho pixels."""

    h: np.ndarray

    def __post_init__(self):
        canon = _canonical_matrix(self.h)
        if abs(np.linalg.det(canon)) <= 1e-12:
            raise ValidationError(
                "homography is rank-deficient (|det| <= 1e-12 after normalization)"
            )
        canon.setflags(write=False)
        object.__setattr__(self, "h", canon)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Homography":
        return cls(h=np.asarray(m, dtype=np.float64))

    @classmethod
    def identity(cls) -> "Homography":
        return cls(h=np.eye(3))

    def inverse_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.h)

    def to_list(self) -> list[float]:
        """Row-major 9-element list for JSON serialization."""
        return [float(v) for v in self.h.ravel()]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Homography):
            return NotImplemented
        return bool(np.array_equal(self.h, other.h))


@dataclass(frozen=True)
class HomogeneousPoint:
    xt: float
    yt: float
    w: float

    def __post_init__(self):
        if self.xt == 0.0 and self.yt == 0.0 and self.w == 0.0:
            raise ValidationError("homogeneous point cannot be all zeros")


def _apply(m: np.ndarray, u: float, v: float) -> HomogeneousPoint:
    return HomogeneousPoint(
        xt=m[0, 0] * u + m[0, 1] * v + m[0, 2],
        yt=m[1, 0] * u + m[1, 1] * v + m[1, 2],
        w=m[2, 0] * u + m[2, 1] * v + m[2, 2],
    )


def dehomogenize(hp: HomogeneousPoint) -> tuple[float, float]:
    if abs(hp.w) < W_EPS:
        raise HorizonError(f"w = {hp.w} is below {W_EPS}; point is at the horizon")
    return (hp.xt / hp.w, hp.yt / hp.w)


def project(h: Homography, p: CameraPoint) -> OrthoPoint:
    """Map a camera point to the ortho frame: (xt, yt, w) = H*(u, v, 1)."""
    x, y = dehomogenize(_apply(h.h, p.u, p.v))
    return OrthoPoint(x, y)


def project_inverse(h: Homography, p: OrthoPoint) -> CameraPoint:
    """Map an ortho point back through H^-1 with the same w contract."""
    u, v = dehomogenize(_apply(h.inverse_matrix(), p.x, p.y))
    return CameraPoint(u, v)


def frame_corner_status(h: Homography, width: int, height: int) -> list[OrthoPoint | None]:
    """Project the 4 camera-frame corners; None marks a horizon crossing."""
    out: list[OrthoPoint | None] = []
    for u, v in ((0, 0), (width - 1, 0), (width - 1, height - 1), (0, height - 1)):
        try:
            out.append(project(h, CameraPoint(float(u), float(v))))
        except HorizonError:
            out.append(None)
    return out


def symmetric_transfer_error(h: Homography, pair: CorrespondencePair) -> float:
    """Squared transfer residual in both directions, px^2; inf at horizon."""
    errs = _transfer_errors(h.h, np.array([[pair.cam.u, pair.cam.v]]),
                            np.array([[pair.ortho.x, pair.ortho.y]]))
    return float(errs[0])


def _transfer_errors(m: np.ndarray, cam: np.ndarray, ortho: np.ndarray) -> np.ndarray:
    """Vectorized symmetric transfer error for row-stacked point arrays.

    Points whose forward or backward projection hits the horizon get inf,
    which downstream scoring treats as a certain outlier.
    """
    try:
        m_inv = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        return np.full(len(cam), np.inf)

    ones = np.ones((len(cam), 1))
    cam_h = np.hstack([cam, ones])
    ortho_h = np.hstack([ortho, ones])

    fwd = cam_h @ m.T
    bwd = ortho_h @ m_inv.T
    errs = np.full(len(cam), np.inf)
    ok = (np.abs(fwd[:, 2]) >= W_EPS) & (np.abs(bwd[:, 2]) >= W_EPS)
    if np.any(ok):
        fxy = fwd[ok, :2] / fwd[ok, 2:3]
        bxy = bwd[ok, :2] / bwd[ok, 2:3]
        errs[ok] = ((fxy - ortho[ok]) ** 2).sum(axis=1) + ((bxy - cam[ok]) ** 2).sum(axis=1)
    return errs


def _hartley_normalization(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate centroid to origin and scale mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    dists = np.sqrt(((pts - centroid) ** 2).sum(axis=1))
    mean_dist = dists.mean()
    if mean_dist < 1e-12:
        raise EstimationError("all points coincide; cannot normalize")
    s = math.sqrt(2.0) / mean_dist
    T = np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return (pts - centroid) * s, T


def _collinear_triple_exists(pts: np.ndarray) -> bool:
    n = len(pts)
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            for k in range(j + 1, n):
                ab = pts[j] - pts[i]
                ac = pts[k] - pts[i]
                if abs(ab[0] * ac[1] - ab[1] * ac[0]) < COLLINEAR_EPS:
                    return True
    return False


def _dlt_matrix(cam: np.ndarray, ortho: np.ndarray) -> np.ndarray:
    """Hartley-normalized direct linear transform; raw 3x3, not canonical."""
    n = len(cam)
    if n < 4:
        raise ValidationError(f"homography needs at least 4 pairs, got {n}")
    if n == 4 and (_collinear_triple_exists(cam) or _collinear_triple_exists(ortho)):
        raise EstimationError("3 points of a minimal sample are collinear")

    cam_n, t_cam = _hartley_normalization(cam)
    ortho_n, t_ortho = _hartley_normalization(ortho)

    a = np.zeros((2 * n, 9))
    u, v = cam_n[:, 0], cam_n[:, 1]
    x, y = ortho_n[:, 0], ortho_n[:, 1]
    a[0::2, 3] = -u
    a[0::2, 4] = -v
    a[0::2, 5] = -1.0
    a[0::2, 6] = y * u
    a[0::2, 7] = y * v
    a[0::2, 8] = y
    a[1::2, 0] = u
    a[1::2, 1] = v
    a[1::2, 2] = 1.0
    a[1::2, 6] = -x * u
    a[1::2, 7] = -x * v
    a[1::2, 8] = -x

    _, s, vt = np.linalg.svd(a)
    # a unique nullspace direction requires the 8th singular value to be
    # healthy; index 7 is the smallest for n=4 and second-smallest otherwise
    if s[7] <= 1e-10 * s[0]:
        raise EstimationError(
            "degenerate configuration: homography is not uniquely determined"
        )
    h_norm = vt[-1].reshape(3, 3)
    return np.linalg.inv(t_ortho) @ h_norm @ t_cam


def _pairs_to_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    cam = np.array([[p.cam.u, p.cam.v] for p in pairs], dtype=np.float64)
    ortho = np.array([[p.ortho.x, p.ortho.y] for p in pairs], dtype=np.float64)
    return cam, ortho


def estimate_dlt(pairs: "list[CorrespondencePair]") -> Homography:
    """Least-squares homography from all pairs (no outlier handling).

    Exact to machine-epsilon scale when the pairs are noise-free and
    consistent; use estimate_robust for contaminated sets.
    """
    cam, ortho = _pairs_to_arrays(pairs)
    return Homography.from_matrix(_dlt_matrix(cam, ortho))


@dataclass(frozen=True)
class RobustParams:
    max_iterations: int = 10000
    inlier_threshold: float = 3.0  # px on sqrt(symmetric transfer error)
    scoring: str = "sigma_marginalized"  # or "msac"
    sigma_max: float = 10.0  # px, sigma_marginalized only
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.inlier_threshold <= 0:
            raise ValidationError(f"inlier_threshold must be > 0, got {self.inlier_threshold}")
        if not (0.0 < self.confidence < 1.0):
            raise ValidationError(f"confidence must be in (0,1), got {self.confidence}")
        if self.scoring not in ("msac", "sigma_marginalized"):
            raise ValidationError(f"unknown scoring {self.scoring!r}")
        if self.scoring == "sigma_marginalized" and self.sigma_max <= 0:
            raise ValidationError(f"sigma_max must be > 0, got {self.sigma_max}")


@dataclass(frozen=True)
class EstimateResult:
    homography: Homography
    inlier_mask: np.ndarray  # bool per pair
    score: float  # lower is better
    iterations_run: int
    mean_inlier_error: float  # px


def sigma_marginalized_loss(residuals: np.ndarray, sigma_max: float) -> np.ndarray:
    """Per-point robust loss marginalized over the noise scale.

    At a fixed noise scale sigma the loss is the truncated quadratic
    min(r^2, (k*sigma)^2) with k the 0.99 chi-square quantile radius for
    4 degrees of freedom. Averaging over sigma uniform on (0, sigma_max]
    gives, with tau = k*sigma_max:

        L(r) = r^2 * (1 - 2r / (3*tau))   for r <= tau
        L(r) = tau^2 / 3                  for r >  tau

    which is continuous, monotone, and saturates for gross outliers.
    """
    tau = CHI2_99_4DOF_SQRT * sigma_max
    r = np.minimum(np.abs(residuals), tau)
    loss = r * r * (1.0 - 2.0 * r / (3.0 * tau))
    return np.where(np.abs(residuals) > tau, tau * tau / 3.0, loss)


def msac_loss(residuals: np.ndarray, threshold: float) -> np.ndarray:
    """Truncated squared residual: min(r^2, threshold^2)."""
    r2 = residuals * residuals
    return np.minimum(r2, threshold * threshold)


def _score(residuals: np.ndarray, params: RobustParams) -> float:
    # both losses saturate, so infinite residuals contribute the cap value
    if params.scoring == "msac":
        return float(msac_loss(residuals, params.inlier_threshold).sum())
    return float(sigma_marginalized_loss(residuals, params.sigma_max).sum())


def _sample_indices(seed: int, iteration: int, n: int) -> np.ndarray:
    """Minimal sample for hypothesis k, drawn from the k-th PRNG substream.

    A counter-based generator keyed by the seed with the iteration in the
    high counter words gives each hypothesis an independent substream, so a
    parallel evaluation order would reproduce the sequential result.
    """
    bit_gen = np.random.Philox(key=seed, counter=iteration << 128)
    rng = np.random.Generator(bit_gen)
    return rng.choice(n, size=4, replace=False)


def _degenerate_sample(cam: np.ndarray, ortho: np.ndarray) -> bool:
    return _collinear_triple_exists(cam) or _collinear_triple_exists(ortho)


def estimate_robust(
    pairs: "list[CorrespondencePair]", params: RobustParams = RobustParams()
) -> EstimateResult:
    """Hypothesize-and-verify robust fit over contaminated correspondences.

    Minimal 4-pair samples are fit with the direct linear transform and
    scored over all pairs on the sqrt of the symmetric transfer error.
    The iteration budget adapts to the observed inlier ratio, and the best
    model gets one final least-squares refit over its inlier set.
    """
    cam, ortho = _pairs_to_arrays(pairs)
    n = len(cam)
    if n < 4:
        raise ValidationError(f"robust estimation needs at least 4 pairs, got {n}")

    best_matrix: np.ndarray | None = None
    best_score = np.inf
    best_inliers: np.ndarray | None = None
    needed = params.max_iterations
    iterations = 0

    while iterations < min(needed, params.max_iterations):
        sample = _sample_indices(params.seed, iterations, n)
        iterations += 1
        if _degenerate_sample(cam[sample], ortho[sample]):
            continue
        try:
            m = _dlt_matrix(cam[sample], ortho[sample])
        except EstimationError:
            continue
        residuals = np.sqrt(_transfer_errors(m, cam, ortho))
        score = _score(residuals, params)
        if score < best_score:
            best_score = score
            best_matrix = m
            best_inliers = residuals <= params.inlier_threshold
            ratio = best_inliers.sum() / n
            if ratio > 0:
                miss = 1.0 - ratio**4
                if miss <= 0:
                    needed = iterations
                else:
                    # k samples all-contaminated with prob miss^k; stop when
                    # that drops below 1 - confidence
                    needed = math.ceil(
                        math.log(1.0 - params.confidence) / math.log(miss)
                    )

    if best_matrix is None or best_inliers is None or best_inliers.sum() < 4:
        found = 0 if best_inliers is None else int(best_inliers.sum())
        raise EstimationFailure(
            f"no hypothesis reached 4 inliers in {iterations} iterations "
            f"(best had {found}); data may be inconsistent"
        )

    # local optimization: refit on the consensus set, keep if it scores better
    idx = np.nonzero(best_inliers)[0]
    try:
        refit = _dlt_matrix(cam[idx], ortho[idx])
        refit_res = np.sqrt(_transfer_errors(refit, cam, ortho))
        refit_score = _score(refit_res, params)
        if refit_score <= best_score:
            best_matrix = refit
            best_score = refit_score
            best_inliers = refit_res <= params.inlier_threshold
    except EstimationError:
        pass

    final_res = np.sqrt(_transfer_errors(best_matrix, cam, ortho))
    mean_err = float(final_res[best_inliers].mean()) if best_inliers.any() else np.inf
    return EstimateResult(
        homography=Homography.from_matrix(best_matrix),
        inlier_mask=best_inliers.copy(),
        score=best_score,
        iterations_run=iterations,
        mean_inlier_error=mean_err,
    )


def warp_image(
    h: Homography, camera_frame: np.ndarray, target: tuple[int, int]
) -> np.ndarray:
    """Warp a camera frame into the ortho frame by inverse mapping.

    camera_frame is (rows, cols, 3) uint8; target is (width, height).
    Each target pixel samples the camera frame at its project_inverse
    location with bilinear interpolation; samples outside the camera frame
    are transparent. Returns (height, width, 4) uint8 RGBA.
    """
    frame = np.asarray(camera_frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValidationError(f"camera frame must be (h, w, 3), got {frame.shape}")
    width, height = target
    if width <= 0 or height <= 0:
        raise ValidationError(f"target size must be positive, got {target}")

    m_inv = h.inverse_matrix()
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    w = m_inv[2, 0] * xs + m_inv[2, 1] * ys + m_inv[2, 2]
    valid = np.abs(w) >= W_EPS
    w_safe = np.where(valid, w, 1.0)
    su = (m_inv[0, 0] * xs + m_inv[0, 1] * ys + m_inv[0, 2]) / w_safe
    sv = (m_inv[1, 0] * xs + m_inv[1, 1] * ys + m_inv[1, 2]) / w_safe

    rows, cols = frame.shape[:2]
    u0 = np.floor(su).astype(np.int64)
    v0 = np.floor(sv).astype(np.int64)
    in_frame = valid & (su >= 0) & (sv >= 0) & (su <= cols - 1) & (sv <= rows - 1)

    u0c = np.clip(u0, 0, cols - 2) if cols > 1 else np.zeros_like(u0)
    v0c = np.clip(v0, 0, rows - 2) if rows > 1 else np.zeros_like(v0)
    fu = np.where(in_frame, su - u0c, 0.0)[..., None]
    fv = np.where(in_frame, sv - v0c, 0.0)[..., None]

    u1c = np.minimum(u0c + 1, cols - 1)
    v1c = np.minimum(v0c + 1, rows - 1)
    p00 = frame[v0c, u0c].astype(np.float64)
    p01 = frame[v0c, u1c].astype(np.float64)
    p10 = frame[v1c, u0c].astype(np.float64)
    p11 = frame[v1c, u1c].astype(np.float64)
    blend = (p00 * (1 - fu) * (1 - fv) + p01 * fu * (1 - fv)
             + p10 * (1 - fu) * fv + p11 * fu * fv)

    out = np.zeros((height, width, 4), dtype=np.uint8)
    out[..., :3] = np.where(in_frame[..., None], np.rint(blend), 0).astype(np.uint8)
    out[..., 3] = np.where(in_frame, 255, 0).astype(np.uint8)
    return out


@dataclass(frozen=True)
class HomographyRecord:
    """Registry entry: a homography plus the conditions it applies under.

    valid_from/valid_to are "HH:MM" local times of day; a window wrapping
    midnight has valid_from > valid_to. filename_pattern is a glob tested
    against the video filename. Absent constraints mean "applies always".
    """

    homography: Homography
    valid_from: str | None = None
    valid_to: str | None = None
    filename_pattern: str | None = None
    site_id: str = ""
    created_at: str = ""  # ISO-8601, informational
    source_pairs_sha256: str = ""
    label: str = ""

    def __post_init__(self):
        for v in (self.valid_from, self.valid_to):
            if v is not None:
                _parse_hhmm(v)
        if (self.valid_from is None) != (self.valid_to is None):
            raise ValidationError("valid_from and valid_to must be set together")


def _parse_hhmm(text: str) -> int:
    try:
        hh, mm = text.split(":")
        minutes = int(hh) * 60 + int(mm)
    except (ValueError, AttributeError) as exc:
        raise ValidationError(f"time of day must be HH:MM, got {text!r}") from exc
    if not (0 <= int(hh) < 24 and 0 <= int(mm) < 60):
        raise ValidationError(f"time of day out of range: {text!r}")
    return minutes


def _window_contains(rec: HomographyRecord, minute_of_day: int) -> bool:
    if rec.valid_from is None:
        return True
    lo = _parse_hhmm(rec.valid_from)
    hi = _parse_hhmm(rec.valid_to)
    if lo <= hi:
        return lo <= minute_of_day < hi
    return minute_of_day >= lo or minute_of_day < hi  # wraps midnight


def _specificity(rec: HomographyRecord) -> int:
    has_window = rec.valid_from is not None
    has_pattern = rec.filename_pattern is not None
    if has_window and has_pattern:
        return 3
    if has_window:
        return 2
    if has_pattern:
        return 1
    return 0


def select_homography(
    registry: "list[HomographyRecord]",
    start_time: float,
    filename: str,
    utc_offset_hours: float = 0.0,
) -> Homography:
    """Pick the registry entry that covers a video's start conditions.

    start_time is epoch seconds; the time of day is taken in UTC shifted by
    utc_offset_hours (the site's civil offset). Candidates are ranked by
    specificity: pattern+window beats window-only beats pattern-only beats
    the unconstrained default; ties keep the earliest registry entry.
    """
    if not registry:
        raise ConfigError("homography registry is empty")
    local = datetime.fromtimestamp(start_time, tz=timezone.utc) + timedelta(
        hours=utc_offset_hours
    )
    minute_of_day = local.hour * 60 + local.minute

    candidates = []
    for order, rec in enumerate(registry):
        if not _window_contains(rec, minute_of_day):
            continue
        if rec.filename_pattern is not None and not fnmatch(
            filename, rec.filename_pattern
        ):
            continue
        candidates.append((_specificity(rec), order, rec))
    if not candidates:
        raise ConfigError(
            f"no homography matches video start {local.isoformat()} "
            f"filename {filename!r} and the registry has no default entry"
        )
    # highest specificity wins; registry order breaks ties
    candidates.sort(key=lambda c: (-c[0], c[1]))
    return candidates[0][2].homography
