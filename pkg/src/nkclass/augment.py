"""Physics-based data augmentation via the two-pole Sellmeier dispersion model.

For a transparent medium away from resonances,

    n^2(lam) = A + B1*lam^2/(lam^2 - C1) + B2*lam^2/(lam^2 - C2)

with one pole below and one above the fitted wavelength window (lam in um,
C in um^2). Per-compound curves are fitted on the n^2 residual by a damped
Gauss-Newton (Levenberg-Marquardt) iteration started from a small fixed grid
of initializations; the pole positions are kept outside the data window by
construction, via the reparameterization

    C1 = lam_min^2 * sigmoid(u1),      C2 = lam_max^2 + exp(u2),

so every iterate is a smooth interpolant. Fitted models generate synthetic
records (k = 0, the medium is treated as transparent) on a uniform grid in
the UV-VIS-NIR window, appended to the dataset to balance the sparse bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvariantError, ParameterError
from .ingest import CompoundId, Dataset, SpectralRecord

# fits use only the transparency window below this wavelength (um)
FIT_LAMBDA_MAX_UM = 1.5
GENERATION_LAMBDA_MIN_UM = 0.2
DEFAULT_GRID_POINTS = 3000
DEFAULT_MIN_POINTS = 8
SYNTHETIC_PAGE = "sellmeier-synthetic"

_MAX_ITER = 200
_REL_TOL = 1e-12

# (B1, C1) x (B2, C2) starting grid: a UV pole and an IR pole
_STARTS_UV = ((0.5, 0.01), (1.0, 0.03))
_STARTS_IR = ((0.1, 100.0), (1.0, 400.0))


class FitSkipped(Exception):
    """A compound could not be fitted; .reason says why."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class SellmeierModel:
    a: float
    b1: float
    c1: float        # um^2, below fit_domain[0]^2
    b2: float
    c2: float        # um^2, above fit_domain[1]^2
    fit_domain: Tuple[float, float]   # [lam_min, lam_max] um
    rms_residual: float               # on n (not n^2)
    compound: str

    def n_squared(self, lam_um) -> np.ndarray:
        lam2 = np.asarray(lam_um, dtype=np.float64) ** 2
        return (self.a + self.b1 * lam2 / (lam2 - self.c1)
                + self.b2 * lam2 / (lam2 - self.c2))


def eval_sellmeier(m: SellmeierModel, lam_um):
    """Refractive index n(lam) of a fitted model, inside its fit domain."""
    lam = np.asarray(lam_um, dtype=np.float64)
    lo, hi = m.fit_domain
    if np.any(lam < lo) or np.any(lam > hi):
        raise ParameterError(f"wavelength outside fit domain [{lo}, {hi}] um")
    n2 = m.n_squared(lam)
    if np.any(n2 <= 0):
        raise InvariantError(
            f"model for {m.compound!r} yields nonpositive n^2 inside its domain")
    n = np.sqrt(n2)
    return float(n) if np.isscalar(lam_um) else n


def _sigmoid(u):
    # tanh form: overflow-free for any finite u
    return 0.5 * (1.0 + math.tanh(0.5 * u))


def residual_jacobian(theta: np.ndarray, lam2: np.ndarray, n2: np.ndarray,
                      c1_scale: float, c2_floor: float):
    """Residuals r = n2_model - n2 and the Jacobian dr/dtheta.

    theta = (A, B1, u1, B2, u2) in the transformed space with
    C1 = c1_scale * sigmoid(u1) and C2 = c2_floor + exp(u2). This is the
    exact Jacobian the fitter iterates with.
    """
    a, b1, u1, b2, u2 = theta
    s1 = _sigmoid(u1)
    c1 = c1_scale * s1
    c2 = c2_floor + math.exp(u2)
    d1 = lam2 - c1
    d2 = lam2 - c2
    t1 = lam2 / d1
    t2 = lam2 / d2
    r = a + b1 * t1 + b2 * t2 - n2
    J = np.empty((lam2.shape[0], 5))
    J[:, 0] = 1.0
    J[:, 1] = t1
    J[:, 2] = b1 * lam2 / (d1 * d1) * (c1_scale * s1 * (1.0 - s1))
    J[:, 3] = t2
    J[:, 4] = b2 * lam2 / (d2 * d2) * (c2 - c2_floor)
    return r, J


def _levenberg_marquardt(theta0, lam2, n2, c1_scale, c2_floor):
    """Minimize sum(r^2) by damped Gauss-Newton steps with a gain-ratio update.

    Returns (theta, sse), or None when even the starting point is unusable.
    The damping follows Nielsen's rule: shrink proportionally to how well the
    quadratic model predicted the decrease, grow geometrically on rejection.
    """
    theta = np.asarray(theta0, dtype=np.float64)
    with np.errstate(all="ignore"):
        r, J = residual_jacobian(theta, lam2, n2, c1_scale, c2_floor)
    sse = float(r @ r)
    if not math.isfinite(sse):
        return None
    damp = 1e-3 * float(np.max(np.sum(J * J, axis=0)))
    if not math.isfinite(damp) or damp <= 0:
        damp = 1e-3
    nu = 2.0
    eye = np.eye(theta.shape[0])
    for _ in range(_MAX_ITER):
        g = J.T @ r
        h = J.T @ J
        try:
            step = np.linalg.solve(h + damp * eye, -g)
        except np.linalg.LinAlgError:
            damp *= nu
            nu *= 2.0
            continue
        cand = theta + step
        if not np.all(np.isfinite(cand)):
            damp *= nu
            nu *= 2.0
            continue
        # keep both poles strictly off the domain edges and exp() finite
        cand[2] = min(max(cand[2], -200.0), 30.0)
        cand[4] = min(max(cand[4], -30.0), 500.0)
        with np.errstate(all="ignore"):
            r_new, J_new = residual_jacobian(cand, lam2, n2, c1_scale, c2_floor)
        sse_new = float(r_new @ r_new)
        predicted = float(step @ (damp * step - g))
        if math.isfinite(sse_new) and sse_new < sse and predicted > 0:
            improvement = sse - sse_new
            rho = improvement / predicted
            theta, r, J, sse = cand, r_new, J_new, sse_new
            damp *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if improvement < _REL_TOL * max(sse, 1e-30):
                break
        else:
            damp *= nu
            nu *= 2.0
            if damp > 1e250:
                break
    return theta, sse


def fit_sellmeier(curve: Sequence[SpectralRecord],
                  min_points: int = DEFAULT_MIN_POINTS,
                  compound: Optional[str] = None) -> SellmeierModel:
    """Fit the dispersion model to one compound's measured curve.

    Only records with lam <= 1.5 um and a present n enter the fit (the
    two-pole model is an interpolant for the transparency window). Raises
    FitSkipped when the curve has too few points, no start converges, or the
    converged model violates an invariant. Deterministic: no randomness, a
    fixed multi-start list.
    """
    if compound is None:
        compound = curve[0].compound.book if len(curve) else ""
    lam = np.asarray([r.wavelength_um for r in curve], dtype=np.float64)
    n = np.asarray([math.nan if r.n is None else r.n for r in curve],
                   dtype=np.float64)
    return fit_sellmeier_arrays(lam, n, compound, min_points=min_points)


def fit_sellmeier_arrays(lam: np.ndarray, n: np.ndarray, compound: str,
                         min_points: int = DEFAULT_MIN_POINTS) -> SellmeierModel:
    """Array-input core of fit_sellmeier; lam in um, NaN n values ignored."""
    lam = np.asarray(lam, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    keep = (lam > 0) & (lam <= FIT_LAMBDA_MAX_UM) & np.isfinite(n)
    lam = lam[keep]
    n = n[keep]
    if lam.shape[0] < min_points:
        raise FitSkipped(
            f"insufficient data: {lam.shape[0]} usable points below "
            f"{FIT_LAMBDA_MAX_UM} um (need {min_points})")
    order = np.argsort(lam, kind="stable")
    lam = lam[order]
    n = n[order]
    lam2 = lam ** 2
    n2 = n ** 2
    lam_min = float(lam[0])
    lam_max = float(lam[-1])
    c1_scale = lam_min ** 2
    c2_floor = lam_max ** 2

    a0 = float(np.mean(n2))
    best = None
    for b1, c1 in _STARTS_UV:
        for b2, c2 in _STARTS_IR:
            c1 = min(c1, 0.5 * c1_scale)            # keep the start feasible
            u1 = math.log(c1 / (c1_scale - c1))
            u2 = math.log(max(c2 - c2_floor, 1.0))
            out = _levenberg_marquardt((a0, b1, u1, b2, u2), lam2, n2,
                                       c1_scale, c2_floor)
            if out is not None and (best is None or out[1] < best[1]):
                best = out
    if best is None:
        raise FitSkipped("no start converged")
    theta, _ = best
    a, b1, u1, b2, u2 = theta
    c1 = c1_scale * _sigmoid(u1)
    c2 = c2_floor + math.exp(u2)
    model = SellmeierModel(a=float(a), b1=float(b1), c1=float(c1),
                           b2=float(b2), c2=float(c2),
                           fit_domain=(lam_min, lam_max),
                           rms_residual=0.0, compound=compound)
    # invariant check: n^2 positive across the whole domain, not just the data
    grid = np.linspace(lam_min, lam_max, 513)
    if np.any(model.n_squared(grid) <= 0.0):
        raise FitSkipped("converged model has nonpositive n^2 inside the domain")
    n_fit = np.sqrt(model.n_squared(lam))
    rms = float(np.sqrt(np.mean((n_fit - n) ** 2)))
    return SellmeierModel(a=model.a, b1=model.b1, c1=model.c1, b2=model.b2,
                          c2=model.c2, fit_domain=model.fit_domain,
                          rms_residual=rms, compound=compound)


def default_generation_window(m: SellmeierModel) -> Tuple[float, float]:
    lo = max(GENERATION_LAMBDA_MIN_UM, m.fit_domain[0])
    hi = min(FIT_LAMBDA_MAX_UM, m.fit_domain[1])
    return lo, hi


def generate_arrays(m: SellmeierModel, grid_points: int = DEFAULT_GRID_POINTS,
                    lam_lo: Optional[float] = None,
                    lam_hi: Optional[float] = None):
    """Synthetic (lam, n) arrays on a uniform grid inside the fit window."""
    if grid_points < 1:
        raise ParameterError(f"grid_points must be >= 1, got {grid_points}")
    lo_default, hi_default = default_generation_window(m)
    lo = lo_default if lam_lo is None else float(lam_lo)
    hi = hi_default if lam_hi is None else float(lam_hi)
    if not (m.fit_domain[0] <= lo <= hi <= min(m.fit_domain[1], FIT_LAMBDA_MAX_UM)):
        raise ParameterError(
            f"generation range [{lo}, {hi}] not inside fit domain "
            f"{m.fit_domain} clipped to {FIT_LAMBDA_MAX_UM} um")
    lam = np.linspace(lo, hi, grid_points) if grid_points > 1 else np.array([lo])
    return lam, eval_sellmeier(m, lam)


def generate(m: SellmeierModel, grid_points: int = DEFAULT_GRID_POINTS,
             lam_lo: Optional[float] = None,
             lam_hi: Optional[float] = None) -> List[SpectralRecord]:
    """Synthetic records for one fitted compound: k = 0, synthetic = True."""
    lam, n = generate_arrays(m, grid_points, lam_lo, lam_hi)
    cid = CompoundId(shelf="organic", book=m.compound, page=SYNTHETIC_PAGE)
    return [SpectralRecord(compound=cid, wavelength_um=float(l), n=float(v),
                           k=0.0, synthetic=True) for l, v in zip(lam, n)]


@dataclass
class AugmentationReport:
    fitted: list = field(default_factory=list)    # (compound, SellmeierModel)
    skipped: list = field(default_factory=list)   # (compound, reason)
    generated_count: int = 0


def fit_all(d: Dataset, min_points: int = DEFAULT_MIN_POINTS) -> AugmentationReport:
    """Fit every compound in the dataset, partitioning them into fitted/skipped."""
    report = AugmentationReport()
    codes = d.label_codes
    measured = ~d.synthetic
    for li, compound in enumerate(d.labels):
        sel = (codes == li) & measured
        try:
            model = fit_sellmeier_arrays(d.wavelength_um[sel], d.n[sel],
                                         compound, min_points=min_points)
        except FitSkipped as skip:
            report.skipped.append((compound, skip.reason))
            continue
        report.fitted.append((compound, model))
    return report


def augment_dataset(d: Dataset, grid_points: int = DEFAULT_GRID_POINTS,
                    min_points: int = DEFAULT_MIN_POINTS,
                    lam_lo: Optional[float] = None,
                    lam_hi: Optional[float] = None):
    """Append synthetic UV-VIS-NIR records for every fittable compound.

    Original records are untouched; per-compound failures are reported, not
    fatal. Returns (augmented dataset, AugmentationReport).
    """
    report = fit_all(d, min_points=min_points)
    pages: list[CompoundId] = []
    page_index: list[np.ndarray] = []
    lam_parts: list[np.ndarray] = []
    n_parts: list[np.ndarray] = []
    shelf_of = {}
    for cid in d.pages:
        shelf_of.setdefault(cid.book, cid.shelf)
    for compound, model in report.fitted:
        try:
            lam, n = generate_arrays(model, grid_points, lam_lo, lam_hi)
        except ParameterError as e:
            report.skipped.append((compound, f"generation failed: {e}"))
            continue
        cid = CompoundId(shelf_of.get(compound, "organic"), compound, SYNTHETIC_PAGE)
        page_index.append(np.full(lam.shape[0], len(pages), dtype=np.int32))
        pages.append(cid)
        lam_parts.append(lam)
        n_parts.append(n)
    report.fitted = [(c, m) for c, m in report.fitted
                     if all(c != sc for sc, _ in report.skipped)]
    if not lam_parts:
        return d, report
    lam = np.concatenate(lam_parts)
    synth = Dataset(pages, np.concatenate(page_index), lam,
                    np.concatenate(n_parts), np.zeros_like(lam),
                    np.ones(lam.shape[0], dtype=bool))
    report.generated_count = len(synth)
    return d.concat(synth), report
