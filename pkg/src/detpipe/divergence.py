"""Gaussian modeling of bounding-box offsets and the loss mathematics.

Each box coordinate (cx, cy, w, h) is modeled as a univariate Gaussian whose
mean is the coordinate and whose standard deviation is a fraction of the box
size. Divergences between predicted and target boxes are computed coordinate
by coordinate and summed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .errors import OptimizationError, ValidationError
from .model import BoundingBox

LN2 = math.log(2.0)

# Densities below this floor are treated as exact zeros inside the
# quadrature integrand (0 * log 0 = 0 convention).
_DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class CoordinateGaussian:
    """Univariate normal N(mu, sigma^2) over one normalized coordinate."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class GaussianBox:
    x: CoordinateGaussian
    y: CoordinateGaussian
    w: CoordinateGaussian
    h: CoordinateGaussian

    @property
    def coords(self) -> tuple[CoordinateGaussian, ...]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class SigmaRule:
    """sigma = k * max(box width, box height), shared by all coordinates."""

    k: float = 0.1

    def __post_init__(self):
        if not self.k > 0.0:
            raise ValidationError(f"k must be > 0, got {self.k}")


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValidationError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.gamma < 0.0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class QuadratureConfig:
    """Simpson-rule grid: `nodes` points over +/- `half_width` sigma units."""

    half_width: float = 8.0
    nodes: int = 4097

    def __post_init__(self):
        if self.nodes < 3 or self.nodes % 2 == 0:
            raise ValidationError(
                f"nodes must be odd and >= 3, got {self.nodes}")
        if not self.half_width > 0.0:
            raise ValidationError(
                f"half_width must be > 0, got {self.half_width}")


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 1e-3
    max_steps: int = 5000
    tolerance: float = 1e-6
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise ValidationError("learning_rate must be > 0")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be >= 1")
        if not self.tolerance > 0.0:
            raise ValidationError("tolerance must be > 0")


@dataclass(frozen=True)
class FitResult:
    theta_star: tuple[float, float, float, float, float]  # mux,muy,muw,muh,k
    final_loss: float
    steps_used: int
    trace: tuple[float, ...] = ()


def sigma_for(box: BoundingBox, rule: SigmaRule) -> float:
    """Standard deviation assigned to every coordinate of `box`."""
    return rule.k * max(box.w, box.h)


def gaussianize(box: BoundingBox, rule: SigmaRule) -> GaussianBox:
    """Lift a box to per-coordinate Gaussians under the sigma rule."""
    s = sigma_for(box, rule)
    return GaussianBox(
        CoordinateGaussian(box.cx, s), CoordinateGaussian(box.cy, s),
        CoordinateGaussian(box.w, s), CoordinateGaussian(box.h, s))


_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def log_pdf(x, g: CoordinateGaussian):
    """Exact log of the normal density; immune to tail underflow."""
    z = (np.asarray(x, dtype=float) - g.mu) / g.sigma
    out = -0.5 * z * z - math.log(g.sigma) - _LOG_SQRT_2PI
    return float(out) if np.isscalar(x) else out


def pdf(x, g: CoordinateGaussian):
    """Normal density of `g` at `x` (scalar or ndarray)."""
    out = np.exp(log_pdf(np.asarray(x, dtype=float), g))
    return float(out) if np.isscalar(x) else out


def kl_closed(p: CoordinateGaussian, q: CoordinateGaussian) -> float:
    """KL(p || q) between two univariate Gaussians, closed form."""
    var_ratio = (p.sigma / q.sigma) ** 2
    mean_term = ((p.mu - q.mu) / q.sigma) ** 2
    return math.log(q.sigma / p.sigma) + 0.5 * (var_ratio + mean_term) - 0.5


def kl_closed_grad_mu_p(p: CoordinateGaussian, q: CoordinateGaussian) -> float:
    """d KL(p || q) / d mu_p of the closed form."""
    return (p.mu - q.mu) / q.sigma ** 2


def _grid(p: CoordinateGaussian, q: CoordinateGaussian,
          cfg: QuadratureConfig) -> np.ndarray:
    s = max(p.sigma, q.sigma)
    lo = min(p.mu, q.mu) - cfg.half_width * s
    hi = max(p.mu, q.mu) + cfg.half_width * s
    return np.linspace(lo, hi, cfg.nodes)


def _kl_integrand(log_p: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    # densities in log space so the log-ratio survives tail underflow;
    # points where P itself underflows contribute 0
    P = np.exp(log_p)
    return np.where(P >= _DENSITY_FLOOR, P * (log_p - log_q), 0.0)


def kl_quadrature(p: CoordinateGaussian, q: CoordinateGaussian,
                  cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """KL(p || q) by Simpson quadrature; test oracle for kl_closed."""
    x = _grid(p, q, cfg)
    return float(simpson(_kl_integrand(log_pdf(x, p), log_pdf(x, q)), x=x))


def jsd(p: CoordinateGaussian, q: CoordinateGaussian,
        cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """Jensen-Shannon divergence, in [0, ln 2].

    The equal-weight mixture is not Gaussian, so both KL terms are evaluated
    by quadrature on one shared grid; sharing the grid makes jsd(p, q) and
    jsd(q, p) bit-identical.
    """
    x = _grid(p, q, cfg)
    log_p, log_q = log_pdf(x, p), log_pdf(x, q)
    log_m = np.logaddexp(log_p, log_q) - LN2
    kl_pm = float(simpson(_kl_integrand(log_p, log_m), x=x))
    kl_qm = float(simpson(_kl_integrand(log_q, log_m), x=x))
    return 0.5 * kl_pm + 0.5 * kl_qm


def box_divergence(pred: GaussianBox, gt: GaussianBox, kind: str = "jsd",
                   cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """Sum of per-coordinate divergences between two Gaussian boxes.

    kind: "jsd" (symmetric, bounded) or "kld" (closed-form KL(pred || gt)).
    """
    if kind == "jsd":
        return sum(jsd(pc, gc, cfg) for pc, gc in zip(pred.coords, gt.coords))
    if kind == "kld":
        return sum(kl_closed(pc, gc)
                   for pc, gc in zip(pred.coords, gt.coords))
    raise ValidationError(f"unknown divergence kind: {kind!r}")


def focal_loss(p_t: float, params: FocalParams = FocalParams()) -> float:
    """Focal loss -alpha * (1 - p_t)^gamma * ln(p_t) for p_t in (0, 1]."""
    if not (0.0 < p_t <= 1.0):
        raise ValidationError(f"p_t must be in (0, 1], got {p_t}")
    return -params.alpha * (1.0 - p_t) ** params.gamma * math.log(p_t)


def overall_loss(focal_total: float, divergence_total: float) -> float:
    """Unweighted sum of the classification and localization losses."""
    if not (math.isfinite(focal_total) and math.isfinite(divergence_total)):
        raise ValidationError("loss terms must be finite")
    if focal_total < 0.0 or divergence_total < 0.0:
        raise ValidationError("loss terms must be >= 0")
    return focal_total + divergence_total


# ---------------------------------------------------------------------------
# Fitting the box parameters theta = (mu_x, mu_y, mu_w, mu_h, k)
# ---------------------------------------------------------------------------

def _theta_loss(theta, gt: GaussianBox, kind: str,
                cfg: QuadratureConfig) -> float:
    mux, muy, muw, muh, k = theta
    s = k * max(muw, muh)
    if s <= 0.0:
        return math.inf
    pred = GaussianBox(
        CoordinateGaussian(mux, s), CoordinateGaussian(muy, s),
        CoordinateGaussian(muw, s), CoordinateGaussian(muh, s))
    return box_divergence(pred, gt, kind, cfg)


def box_divergence_gradient(theta, gt: GaussianBox, kind: str = "jsd",
                            cfg: QuadratureConfig = QuadratureConfig()
                            ) -> np.ndarray:
    """Central finite-difference gradient of the box loss w.r.t. theta.

    theta = (mu_x, mu_y, mu_w, mu_h, k); step per parameter is
    max(1e-6, 1e-4 * |theta_i|).
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.empty(5)
    for i in range(5):
        h = max(1e-6, 1e-4 * abs(theta[i]))
        hi, lo = theta.copy(), theta.copy()
        hi[i] += h
        lo[i] -= h
        f_hi = _theta_loss(hi, gt, kind, cfg)
        f_lo = _theta_loss(lo, gt, kind, cfg)
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise OptimizationError(
                f"non-finite loss at perturbed theta (component {i})")
        grad[i] = (f_hi - f_lo) / (2.0 * h)
    return grad


def fit_box(init_theta, gt: GaussianBox, kind: str = "jsd",
            fit_cfg: FitConfig = FitConfig()) -> FitResult:
    """Gradient descent on theta = (mu_x, mu_y, mu_w, mu_h, k).

    Each step halves the learning rate (up to 20 times) until the proposed
    step decreases the loss, so the loss trace is non-increasing. Stops when
    the loss drops below `tolerance` or `max_steps` is reached.
    """
    theta = np.asarray(init_theta, dtype=float)
    cfg = fit_cfg.quadrature
    loss = _theta_loss(theta, gt, kind, cfg)
    trace = [loss]
    steps = 0
    while loss >= fit_cfg.tolerance and steps < fit_cfg.max_steps:
        grad = box_divergence_gradient(theta, gt, kind, cfg)
        lr = fit_cfg.learning_rate
        for _ in range(21):
            candidate = theta - lr * grad
            cand_loss = _theta_loss(candidate, gt, kind, cfg)
            if math.isfinite(cand_loss) and cand_loss <= loss:
                break
            lr *= 0.5
        else:
            raise OptimizationError(
                "step size collapsed after 20 halvings without a decrease",
                trace=trace)
        theta, loss = candidate, cand_loss
        trace.append(loss)
        steps += 1
        if cand_loss == trace[-2]:  # flat step: converged numerically
            break
    return FitResult(tuple(theta), loss, steps, tuple(trace))
