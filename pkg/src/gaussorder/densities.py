"""Diagonal Gaussian densities and closed-form divergences with analytic gradients.

Every node of a hierarchy is represented by a diagonal Gaussian
``N(mean, diag(exp(log_var)))``.  Divergences between two such densities
factor into per-dimension sums, so all kernels below operate on
``(..., d)`` arrays and reduce over the last axis.  Variances are
parameterized as log-variances and optimized unconstrained; gradients are
returned with respect to means and log-variances directly.

Supported divergences:

* ``kl``        -- D_KL(f || g) = 0.5 * sum_i [ log(s_g/s_f) - 1 + s_f/s_g
                   + (mu_f - mu_g)^2 / s_g ]
* ``reversekl`` -- D_KL(g || f)
* ``renyi``     -- alpha-divergence (alpha outside {0, 1}):
                   0.5 * sum_i [ log(v) - (1-a) log(s_f) - a log(s_g) ] / (a(1-a))
                   + 0.5 * sum_i (mu_f - mu_g)^2 / v,   v = a s_g + (1-a) s_f
* ``elk``       -- negated log expected-likelihood kernel:
                   sum_i [ log(s_f + s_g) + log(2 pi) + (mu_f - mu_g)^2 / (s_f + s_g) ]

``kl``, ``reversekl`` and ``renyi`` vanish iff f == g; ``elk`` is a negated
log-kernel, symmetric but strictly positive even at f == g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# Floor applied when exponentiating log-variances; guards underflow at
# log-variances far below anything reachable by training.
VAR_FLOOR = 1e-38

_LOG_2PI = math.log(2.0 * math.pi)

_TAGS = ("kl", "reversekl", "renyi", "elk")


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    """One embedding: mean vector and per-dimension log-variances, both length d."""

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        log_var = np.asarray(self.log_var, dtype=np.float64)
        if mean.ndim != 1 or log_var.ndim != 1:
            raise ValueError("mean and log_var must be 1-d vectors")
        if mean.shape != log_var.shape:
            raise ValueError(
                f"mean has length {mean.size} but log_var has length {log_var.size}"
            )
        if mean.size < 1:
            raise ValueError("dimension must be at least 1")
        if not (np.isfinite(mean).all() and np.isfinite(log_var).all()):
            raise ValueError("mean and log_var entries must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", log_var)

    @property
    def d(self) -> int:
        return self.mean.size

    @property
    def var(self) -> np.ndarray:
        return np.maximum(np.exp(self.log_var), VAR_FLOOR)


@dataclass(frozen=True)
class DivergenceKind:
    """Divergence selector; ``alpha`` is set only for the ``renyi`` tag."""

    tag: str
    alpha: float | None = None

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ValueError(f"unknown divergence tag {self.tag!r}; expected one of {_TAGS}")
        if self.tag == "renyi":
            if self.alpha is None:
                raise ValueError("renyi divergence requires alpha")
            if not math.isfinite(self.alpha) or self.alpha in (0.0, 1.0):
                raise ValueError("renyi alpha must be finite and outside {0, 1}")
        elif self.alpha is not None:
            raise ValueError(f"divergence {self.tag!r} takes no alpha")

    def __str__(self) -> str:
        if self.tag == "renyi":
            return f"renyi:{self.alpha!r}"
        return self.tag

    @classmethod
    def parse(cls, text: str) -> "DivergenceKind":
        """Parse tokens like ``kl``, ``reversekl``, ``elk``, ``renyi:0.5``."""
        text = text.strip()
        if text.startswith("renyi:"):
            return cls("renyi", float(text.split(":", 1)[1]))
        return cls(text)


KL = DivergenceKind("kl")
REVERSE_KL = DivergenceKind("reversekl")
ELK = DivergenceKind("elk")


def renyi_kind(alpha: float) -> DivergenceKind:
    return DivergenceKind("renyi", float(alpha))


@dataclass(frozen=True)
class PenaltyConfig:
    """Thresholded order-violation penalty: max(0, D(f || g) - gamma)."""

    kind: DivergenceKind
    gamma: float

    def __post_init__(self):
        if not math.isfinite(self.gamma) or self.gamma < 0.0:
            raise ValueError("gamma must be finite and >= 0")


@dataclass(frozen=True, eq=False)
class GradPair:
    """Divergence value plus partials w.r.t. both means and both log-variances."""

    value: float
    d_mean_f: np.ndarray
    d_logvar_f: np.ndarray
    d_mean_g: np.ndarray
    d_logvar_g: np.ndarray


def _variances(log_var: np.ndarray) -> np.ndarray:
    return np.maximum(np.exp(log_var), VAR_FLOOR)


def _check_dims(mf, lf, mg, lg) -> None:
    if not (mf.shape[-1] == lf.shape[-1] == mg.shape[-1] == lg.shape[-1]):
        raise ValueError(
            "dimension mismatch: "
            f"{mf.shape[-1]}/{lf.shape[-1]} vs {mg.shape[-1]}/{lg.shape[-1]}"
        )


# ---------------------------------------------------------------------------
# Batched kernels.  Inputs are (..., d) arrays; values reduce over the last
# axis, gradients keep the input shape.  These are the single source of truth
# for the formulas; the scalar API below wraps them.
# ---------------------------------------------------------------------------

def _kl_parts(mf, lf, mg, lg):
    sf = _variances(lf)
    sg = _variances(lg)
    diff = mf - mg
    inv_sg = 1.0 / sg
    ratio = sf * inv_sg
    quad = diff * diff * inv_sg
    value = 0.5 * np.sum(lg - lf - 1.0 + ratio + quad, axis=-1)
    d_mf = diff * inv_sg
    d_lf = 0.5 * (ratio - 1.0)
    d_lg = 0.5 * (1.0 - ratio - quad)
    return value, d_mf, d_lf, -d_mf, d_lg


def _renyi_parts(alpha, mf, lf, mg, lg):
    sf = _variances(lf)
    sg = _variances(lg)
    diff = mf - mg
    mix = alpha * sg + (1.0 - alpha) * sf
    if np.any(mix <= 0.0):
        raise DomainError(
            f"renyi mixture variance not strictly positive for alpha={alpha}"
        )
    inv_mix = 1.0 / mix
    c = -1.0 / (alpha * (alpha - 1.0))
    quad = diff * diff * inv_mix
    value = 0.5 * np.sum(
        c * (np.log(mix) - (1.0 - alpha) * lf - alpha * lg) + quad, axis=-1
    )
    d_mf = diff * inv_mix
    d_lf = 0.5 * (1.0 - alpha) * (c * (sf * inv_mix - 1.0) - sf * quad * inv_mix)
    d_lg = 0.5 * alpha * (c * (sg * inv_mix - 1.0) - sg * quad * inv_mix)
    return value, d_mf, d_lf, -d_mf, d_lg


def _elk_parts(mf, lf, mg, lg):
    sf = _variances(lf)
    sg = _variances(lg)
    diff = mf - mg
    total = sf + sg
    inv_total = 1.0 / total
    quad = diff * diff * inv_total
    value = np.sum(np.log(total) + _LOG_2PI + quad, axis=-1)
    d_mf = 2.0 * diff * inv_total
    common = inv_total - quad * inv_total
    d_lf = sf * common
    d_lg = sg * common
    return value, d_mf, d_lf, -d_mf, d_lg


def divergence_batch(kind: DivergenceKind, mf, lf, mg, lg) -> np.ndarray:
    """Divergence values for batches of diagonal Gaussians, shape (...,)."""
    mf, lf, mg, lg = (np.asarray(a, dtype=np.float64) for a in (mf, lf, mg, lg))
    _check_dims(mf, lf, mg, lg)
    if kind.tag == "kl":
        return _kl_parts(mf, lf, mg, lg)[0]
    if kind.tag == "reversekl":
        return _kl_parts(mg, lg, mf, lf)[0]
    if kind.tag == "renyi":
        return _renyi_parts(kind.alpha, mf, lf, mg, lg)[0]
    return _elk_parts(mf, lf, mg, lg)[0]


def divergence_batch_with_grad(kind: DivergenceKind, mf, lf, mg, lg):
    """Returns (value, d_mf, d_lf, d_mg, d_lg) for batched inputs."""
    mf, lf, mg, lg = (np.asarray(a, dtype=np.float64) for a in (mf, lf, mg, lg))
    _check_dims(mf, lf, mg, lg)
    if kind.tag == "kl":
        return _kl_parts(mf, lf, mg, lg)
    if kind.tag == "reversekl":
        value, d_mg, d_lg, d_mf, d_lf = _kl_parts(mg, lg, mf, lf)
        return value, d_mf, d_lf, d_mg, d_lg
    if kind.tag == "renyi":
        return _renyi_parts(kind.alpha, mf, lf, mg, lg)
    return _elk_parts(mf, lf, mg, lg)


# ---------------------------------------------------------------------------
# Scalar API.
# ---------------------------------------------------------------------------

def kl(f: DiagGaussian, g: DiagGaussian) -> float:
    """D_KL(f || g); nonnegative, zero iff f == g."""
    return float(divergence_batch(KL, f.mean, f.log_var, g.mean, g.log_var))


def renyi(alpha: float, f: DiagGaussian, g: DiagGaussian) -> float:
    """Renyi alpha-divergence D_alpha(f || g); alpha must lie outside {0, 1}.

    For alpha outside [0, 1] the mixture variance alpha*s_g + (1-alpha)*s_f
    must stay strictly positive in every dimension, else ``DomainError``.
    """
    kind = renyi_kind(alpha)
    return float(divergence_batch(kind, f.mean, f.log_var, g.mean, g.log_var))


def neg_log_elk(f: DiagGaussian, g: DiagGaussian) -> float:
    """-2 log <f, g>: the negated log expected-likelihood kernel, symmetric in (f, g)."""
    return float(divergence_batch(ELK, f.mean, f.log_var, g.mean, g.log_var))


def divergence(kind: DivergenceKind, f: DiagGaussian, g: DiagGaussian) -> float:
    """Dispatch on ``kind``; ``reversekl`` computes kl(g, f)."""
    return float(divergence_batch(kind, f.mean, f.log_var, g.mean, g.log_var))


def divergence_with_grad(kind: DivergenceKind, f: DiagGaussian, g: DiagGaussian) -> GradPair:
    """Divergence value plus analytic gradients w.r.t. means and log-variances."""
    value, d_mf, d_lf, d_mg, d_lg = divergence_batch_with_grad(
        kind, f.mean, f.log_var, g.mean, g.log_var
    )
    return GradPair(float(value), d_mf, d_lf, d_mg, d_lg)


def penalty(cfg: PenaltyConfig, f: DiagGaussian, g: DiagGaussian) -> float:
    """Thresholded violation penalty max(0, D(f || g) - gamma).

    The subgradient at D == gamma is taken to be 0: no update flows when
    the divergence sits exactly at the threshold.
    """
    return max(0.0, divergence(cfg.kind, f, g) - cfg.gamma)


def log_det_volume(f: DiagGaussian) -> float:
    """log det of the covariance: the sum of log-variances; large means broad."""
    return float(np.sum(f.log_var))
