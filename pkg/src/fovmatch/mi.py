"""Mutual information with Parzen-window density estimation, and its
maximization over affine parameters.

The joint histogram spreads each valid pixel pair over bins with a linear
kernel on the fixed-image axis and a cubic B-spline on the moving-image
axis, which makes the estimate continuously differentiable in the warp
parameters. The optimizer is a damped quasi-Newton ascent (BFGS-updated
curvature, backtracking line search that only accepts MI increases).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateIntensity, DivergedError, NoValidPixels, DimensionMismatch, SingularTransform
from .image import AffineTransform, RasterImage, sample_bilinear, sample_bilinear_grad, SINGULAR_EPS

_RANGE_EPS = 1e-9


def _bspline3(t: np.ndarray) -> np.ndarray:
    """Cubic B-spline kernel, support |t| < 2, unit integral."""
    at = np.abs(t)
    out = np.zeros_like(at)
    inner = at < 1
    outer = (at >= 1) & (at < 2)
    ai = at[inner]
    out[inner] = (4.0 - 6.0 * ai * ai + 3.0 * ai ** 3) / 6.0
    ao = at[outer]
    out[outer] = (2.0 - ao) ** 3 / 6.0
    return out


def _bspline3_deriv(t: np.ndarray) -> np.ndarray:
    at = np.abs(t)
    s = np.sign(t)
    out = np.zeros_like(at)
    inner = at < 1
    outer = (at >= 1) & (at < 2)
    ai = at[inner]
    out[inner] = s[inner] * (1.5 * ai * ai - 2.0 * ai)
    ao = at[outer]
    out[outer] = -s[outer] * 0.5 * (2.0 - ao) ** 2
    return out


@dataclass(frozen=True)
class JointHistogram:
    bins: int
    mass: np.ndarray        # bins x bins, sums to 1
    marginal_a: np.ndarray  # row sums
    marginal_b: np.ndarray  # column sums


def _bin_coords(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    """Map intensities to continuous bin coordinates in [1, bins-3].

    The margin keeps the 4-tap B-spline support inside the grid.
    """
    if hi - lo < _RANGE_EPS:
        raise DegenerateIntensity(f"intensity range [{lo}, {hi}] collapsed")
    c = 1.0 + (values - lo) * ((bins - 4) / (hi - lo))
    return np.clip(c, 1.0, float(bins - 3))


def _histogram_grid(ca: np.ndarray, cb: np.ndarray, bins: int) -> np.ndarray:
    ia = np.clip(np.floor(ca).astype(np.intp), 1, bins - 3)
    fa = ca - ia
    jb = np.clip(np.floor(cb).astype(np.intp), 1, bins - 3)
    tb = cb - jb
    grid = np.zeros(bins * bins)
    for di, wa in ((0, 1.0 - fa), (1, fa)):
        base = (ia + di) * bins + jb
        for dj in (-1, 0, 1, 2):
            w = wa * _bspline3(dj - tb)
            grid += np.bincount(base + dj, weights=w, minlength=bins * bins)
    return grid.reshape(bins, bins)


def joint_histogram(
    a: RasterImage,
    b: RasterImage,
    mask: np.ndarray | None = None,
    bins: int = 32,
    range_a: tuple[float, float] | None = None,
    range_b: tuple[float, float] | None = None,
) -> JointHistogram:
    """Parzen joint histogram of two same-sized images over a validity mask.

    Intensities are mapped to bin space using the min/max of the valid
    pixels of each image unless an explicit range is supplied.
    """
    if bins < 8:
        raise ValueError("need at least 8 bins for the spline support")
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    av = a.pixels[mask]
    bv = b.pixels[mask]
    if av.size == 0:
        raise NoValidPixels("empty validity mask")
    lo_a, hi_a = range_a if range_a is not None else (av.min(), av.max())
    lo_b, hi_b = range_b if range_b is not None else (bv.min(), bv.max())
    grid = _histogram_grid(
        _bin_coords(av, lo_a, hi_a, bins), _bin_coords(bv, lo_b, hi_b, bins), bins
    )
    mass = grid / grid.sum()
    return JointHistogram(
        bins=bins,
        mass=mass,
        marginal_a=mass.sum(axis=1),
        marginal_b=mass.sum(axis=0),
    )


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def mutual_information(h: JointHistogram) -> float:
    """Sum of p * log(p / (pa * pb)) over nonzero cells, in nats."""
    p = h.mass
    outer = h.marginal_a[:, None] * h.marginal_b[None, :]
    nz = p > 0
    return float((p[nz] * (np.log(p[nz]) - np.log(outer[nz]))).sum())


def normalized_mutual_information(h: JointHistogram) -> float:
    """(H(a) + H(b)) / H(a, b); diagnostic readout only."""
    return (_entropy(h.marginal_a) + _entropy(h.marginal_b)) / _entropy(h.mass.ravel())


class _FixedTargetContext:
    """Per-registration precomputation: target bin weights and pixel grid."""

    def __init__(self, template: RasterImage, target: RasterImage, bins: int):
        if bins < 8:
            raise ValueError("need at least 8 bins for the spline support")
        self.bins = bins
        self.template = template.pixels
        self.target = target.pixels
        h, w = target.shape
        # Fixed full-image ranges keep the objective smooth across warps
        # (warped samples never leave the source range).
        self.lo_b, self.hi_b = float(self.template.min()), float(self.template.max())
        lo_a, hi_a = float(self.target.min()), float(self.target.max())
        ca = _bin_coords(self.target.ravel(), lo_a, hi_a, bins)
        if self.hi_b - self.lo_b < _RANGE_EPS:
            raise DegenerateIntensity("template intensity range collapsed")
        self.ia = np.clip(np.floor(ca).astype(np.intp), 1, bins - 3)
        self.fa = ca - self.ia
        self.scale_b = (bins - 4) / (self.hi_b - self.lo_b)
        ys, xs = np.mgrid[0:h, 0:w]
        self.xs = xs.ravel().astype(np.float64)
        self.ys = ys.ravel().astype(np.float64)

    def sample(self, params: np.ndarray):
        a11, a12, a21, a22, tx, ty = params
        sx = a11 * self.xs + a12 * self.ys + tx
        sy = a21 * self.xs + a22 * self.ys + ty
        vals, valid = sample_bilinear(self.template, sx, sy)
        if not valid.any():
            raise NoValidPixels("warped template does not overlap the target")
        return sx, sy, vals, valid

    def evaluate(self, params: np.ndarray, need_grad: bool):
        bins = self.bins
        sx, sy, vals, valid = self.sample(params)
        n = int(valid.sum())
        cb = 1.0 + (vals[valid] - self.lo_b) * self.scale_b
        jb = np.clip(np.floor(cb).astype(np.intp), 1, bins - 3)
        tb = cb - jb
        ia = self.ia[valid]
        fa = self.fa[valid]

        grid = np.zeros(bins * bins)
        for di, wa in ((0, 1.0 - fa), (1, fa)):
            base = (ia + di) * bins + jb
            for dj in (-1, 0, 1, 2):
                grid += np.bincount(
                    base + dj, weights=wa * _bspline3(dj - tb), minlength=bins * bins
                )
        p = (grid / grid.sum()).reshape(bins, bins)
        pa = p.sum(axis=1)
        pb = p.sum(axis=0)
        nz = p > 0
        log_table = np.zeros_like(p)
        log_table[nz] = np.log(p[nz]) - np.log((pa[:, None] * pb[None, :])[nz])
        mi = float((p[nz] * log_table[nz]).sum())
        if not need_grad:
            return mi, None

        # dMI/dtheta = sum over pixels of q(x) * db/dtheta(x), with q the
        # spline-derivative-weighted log-ratio gathered at the touched cells.
        q = np.zeros(n)
        for di, wa in ((0, 1.0 - fa), (1, fa)):
            rows = ia + di
            for dj in (-1, 0, 1, 2):
                q += wa * _bspline3_deriv(dj - tb) * log_table[rows, jb + dj]
        gx, gy = sample_bilinear_grad(self.template, sx, sy)
        gxv = gx[valid] * q
        gyv = gy[valid] * q
        xs = self.xs[valid]
        ys = self.ys[valid]
        scale = -self.scale_b / n
        grad = scale * np.array(
            [
                (gxv * xs).sum(),
                (gxv * ys).sum(),
                (gyv * xs).sum(),
                (gyv * ys).sum(),
                gxv.sum(),
                gyv.sum(),
            ]
        )
        return mi, grad


def mi_objective(
    template: RasterImage,
    target: RasterImage,
    u: AffineTransform,
    bins: int = 32,
) -> tuple[float, np.ndarray]:
    """MI between the template warped by `u` and the target, with its
    analytic gradient over the six affine parameters.

    `u` maps target coordinates to template coordinates (the sampling
    direction of the warp). Parameter order of the gradient matches
    AffineTransform.as_params(): (a11, a12, a21, a22, tx, ty).
    """
    if abs(u.det) < SINGULAR_EPS:
        raise SingularTransform(f"determinant {u.det:.3e} below {SINGULAR_EPS:.0e}")
    ctx = _FixedTargetContext(template, target, bins)
    return ctx.evaluate(u.as_params(), need_grad=True)


@dataclass
class RegistrationSettings:
    bins: int = 32
    max_iters: int = 100
    step_tol: float = 1e-4      # px-equivalent parameter step
    grad_tol: float = 1e-6
    backtrack: float = 0.5
    max_backtracks: int = 25
    max_fail: int = 10          # consecutive failed ascent attempts
    max_step: float | None = None  # px cap per step; default half target width


@dataclass
class RegistrationResult:
    transform: AffineTransform  # maps target coordinates to template coordinates
    final_mi: float
    iterations: int
    converged: bool
    mi_trace: list[float] = field(default_factory=list)


def register(
    template: RasterImage,
    target: RasterImage,
    init: AffineTransform | None = None,
    settings: RegistrationSettings | None = None,
) -> RegistrationResult:
    """Maximize MI over the affine warp of `template` onto `target`.

    The initial transform must already be near alignment (the coarse
    locator provides that); the returned transform is the best seen.
    """
    cfg = settings or RegistrationSettings()
    u0 = init or AffineTransform.identity()
    ctx = _FixedTargetContext(template, target, cfg.bins)
    if float(ctx.target.max()) - float(ctx.target.min()) < _RANGE_EPS:
        raise DegenerateIntensity("target intensity range collapsed")

    # Work in pixel-equivalent coordinates: linear entries scaled by the
    # target half-width so one step norm is meaningful across parameters.
    s = max(target.width, target.height) / 2.0
    pscale = np.array([s, s, s, s, 1.0, 1.0])
    max_step = cfg.max_step if cfg.max_step is not None else s

    def to_theta(phi):
        return phi / pscale

    def to_phi(theta):
        return theta * pscale

    theta = u0.as_params()
    phi = to_phi(theta)
    mi, grad_theta = ctx.evaluate(theta, need_grad=True)
    gphi = grad_theta / pscale

    trace = [mi]
    best_mi, best_theta = mi, theta.copy()
    H = np.eye(6)
    converged = False
    fails = 0
    iters = 0

    for iters in range(1, cfg.max_iters + 1):
        gnorm = float(np.linalg.norm(gphi))
        if gnorm < cfg.grad_tol:
            converged = True
            iters -= 1
            break
        step = H @ gphi
        snorm = float(np.linalg.norm(step))
        if snorm > max_step:
            step *= max_step / snorm
        alpha = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            cand_phi = phi + alpha * step
            try:
                cand_mi, _ = ctx.evaluate(to_theta(cand_phi), need_grad=False)
            except NoValidPixels:
                cand_mi = -np.inf
            if cand_mi > mi:
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted:
            if gnorm < 1e-3:
                converged = True  # numerically stationary
                break
            fails += 1
            if fails >= cfg.max_fail:
                raise DivergedError(
                    f"no ascent step found in {fails} consecutive attempts (MI={mi:.4f})"
                )
            H = np.eye(6)
            continue

        fails = 0
        new_phi = phi + alpha * step
        new_theta = to_theta(new_phi)
        new_mi, new_grad_theta = ctx.evaluate(new_theta, need_grad=True)
        new_gphi = new_grad_theta / pscale

        # BFGS update on the negated objective (minimization convention).
        sk = new_phi - phi
        yk = -(new_gphi - gphi)
        sy = float(sk @ yk)
        if sy > 1e-12:
            rho = 1.0 / sy
            V = np.eye(6) - rho * np.outer(sk, yk)
            H = V @ H @ V.T + rho * np.outer(sk, sk)

        step_norm = float(np.linalg.norm(sk))
        phi, theta, mi, gphi = new_phi, new_theta, new_mi, new_gphi
        trace.append(mi)
        if mi > best_mi:
            best_mi, best_theta = mi, theta.copy()
        if step_norm < cfg.step_tol:
            converged = True
            break

    return RegistrationResult(
        transform=AffineTransform.from_params(best_theta),
        final_mi=best_mi,
        iterations=iters,
        converged=converged,
        mi_trace=trace,
    )
