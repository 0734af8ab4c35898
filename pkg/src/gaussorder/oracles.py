"""Independent verification oracles.

Everything here recomputes quantities from first principles (sampling,
quadrature, finite differences, exhaustive search) without touching the
closed-form or graph code it is used to check.  The test suite and the
``inspect --verify`` battery are the consumers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .densities import DiagGaussian
from .errors import CycleError, OracleError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    samples: int

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.std_error < 0.0:
            raise ValueError("std_error must be >= 0")


def _log_pdf(x: np.ndarray, mean: np.ndarray, log_var: np.ndarray) -> np.ndarray:
    # independent of densities.py on purpose
    var = np.exp(log_var)
    return -0.5 * np.sum(_LOG_2PI + log_var + (x - mean) ** 2 / var, axis=-1)


def mc_kl(
    f: DiagGaussian,
    g: DiagGaussian,
    n_samples: int,
    rng: np.random.Generator,
) -> McEstimate:
    """Monte-Carlo estimate of KL(f || g): mean of log f(X) - log g(X), X ~ f."""
    if n_samples < 1000:
        raise ValueError("mc_kl needs at least 1000 samples")
    std = np.exp(0.5 * f.log_var)
    x = f.mean + std * rng.standard_normal((n_samples, f.d))
    terms = _log_pdf(x, f.mean, f.log_var) - _log_pdf(x, g.mean, g.log_var)
    mean = float(np.mean(terms))
    std_error = float(np.std(terms, ddof=1) / math.sqrt(n_samples))
    return McEstimate(mean, std_error, n_samples)


def _pooled_grid(f: DiagGaussian, g: DiagGaussian, n_points: int, half_width: float):
    pooled = math.sqrt(float(np.exp(f.log_var[0]) + np.exp(g.log_var[0])))
    lo = min(float(f.mean[0]), float(g.mean[0])) - half_width * pooled
    hi = max(float(f.mean[0]), float(g.mean[0])) + half_width * pooled
    return np.linspace(lo, hi, n_points)


def quad_elk_1d(f: DiagGaussian, g: DiagGaussian, grid: int = 200_001) -> float:
    """-2 log of the trapezoidal estimate of the 1-d overlap integral of f*g.

    The grid spans 10 pooled standard deviations past both means; the result
    must be stable under doubling the resolution or ``OracleError`` is raised.
    """
    if f.d != 1 or g.d != 1:
        raise ValueError("quad_elk_1d is one-dimensional only")

    def estimate(n_points: int) -> float:
        x = _pooled_grid(f, g, n_points, 10.0)[:, None]
        fg = np.exp(_log_pdf(x, f.mean, f.log_var) + _log_pdf(x, g.mean, g.log_var))
        return -2.0 * math.log(float(np.trapezoid(fg, x[:, 0])))

    coarse = estimate(grid)
    fine = estimate(2 * grid - 1)
    if abs(fine - coarse) > 1e-7:
        raise OracleError(
            f"elk quadrature unstable: {coarse!r} vs {fine!r} at {grid} points"
        )
    return fine


def quad_renyi_1d(alpha: float, f: DiagGaussian, g: DiagGaussian, grid: int = 200_001) -> float:
    """Trapezoidal 1-d estimate of the alpha-divergence integral for alpha in (0, 1)."""
    if f.d != 1 or g.d != 1:
        raise ValueError("quad_renyi_1d is one-dimensional only")
    if not 0.0 < alpha < 1.0:
        raise ValueError("quadrature oracle supports alpha in (0, 1) only")

    def estimate(n_points: int) -> float:
        x = _pooled_grid(f, g, n_points, 10.0)[:, None]
        integrand = np.exp(
            alpha * _log_pdf(x, f.mean, f.log_var)
            + (1.0 - alpha) * _log_pdf(x, g.mean, g.log_var)
        )
        total = float(np.trapezoid(integrand, x[:, 0]))
        return math.log(total) / (alpha * (alpha - 1.0))

    coarse = estimate(grid)
    fine = estimate(2 * grid - 1)
    if abs(fine - coarse) > 1e-7:
        raise OracleError(
            f"renyi quadrature unstable: {coarse!r} vs {fine!r} at {grid} points"
        )
    return fine


def fd_grad(
    loss_fn: Callable[[np.ndarray], float],
    params: np.ndarray,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("step size h must lie in [1e-7, 1e-3]")
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    flat = params.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = loss_fn(params)
        flat[i] = orig - h
        lo = loss_fn(params)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * h)
    return grad


def brute_closure(edges: list[tuple[int, int]], n: int) -> set[tuple[int, int]]:
    """Reachability pairs (u, v), u != v, by DFS from every node over (child, parent) edges."""
    parents: list[list[int]] = [[] for _ in range(n)]
    for child, parent in edges:
        parents[child].append(parent)

    # cycle check: DFS colors
    color = [0] * n  # 0 unseen, 1 on stack, 2 done
    def visit(w: int):
        color[w] = 1
        for p in parents[w]:
            if color[p] == 1:
                raise CycleError(f"cycle detected at node {p}")
            if color[p] == 0:
                visit(p)
        color[w] = 2

    for w in range(n):
        if color[w] == 0:
            visit(w)

    pairs: set[tuple[int, int]] = set()
    for start in range(n):
        stack = list(parents[start])
        seen = set()
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            pairs.add((start, v))
            stack.extend(parents[v])
    return pairs


def _descendant_map(closure: set[tuple[int, int]], n: int) -> list[set[int]]:
    desc = [{w} for w in range(n)]
    for u, v in closure:
        desc[v].add(u)
    return desc


def enumerate_sampler_support(
    edges: list[tuple[int, int]],
    n: int,
    method: str,
    pos: tuple[int, int] | None = None,
    fixed_wu: tuple[int, int] | None = None,
) -> dict[tuple[int, int], float]:
    """Exact support and per-outcome probability of a negative-sample method.

    Works from its own brute-force closure.  ``pos`` is required for s1/s2;
    ``fixed_wu`` conditions s3/s4 on a given (w, u) draw.
    """
    closure = brute_closure(edges, n)
    desc = _descendant_map(closure, n)

    if method == "s1":
        if pos is None:
            raise ValueError("s1 requires pos")
        u, v = pos
        raw: dict[tuple[int, int], float] = {}
        for r in range(n):
            for cand in ((r, v), (u, r)):
                if cand == pos or cand[0] == cand[1] or cand in closure:
                    continue
                raw[cand] = raw.get(cand, 0.0) + 0.5 / n
        total = sum(raw.values())
        return {pair: p / total for pair, p in raw.items()} if total else {}

    if method == "s2":
        if pos is None:
            raise ValueError("s2 requires pos")
        return {(pos[1], pos[0]): 1.0}

    if method not in ("s3", "s4"):
        raise ValueError(f"unknown method {method!r}")

    eligible = [w for w in range(n) if len(desc[w]) - 1 >= 2]
    if fixed_wu is not None:
        wu_weights = {fixed_wu: 1.0}
    else:
        wu_weights = {}
        for w in eligible:
            options = [u for u in desc[w] if u != w]
            for u in options:
                wu_weights[(w, u)] = 1.0 / (len(eligible) * len(options))

    raw = {}
    kept = 0.0
    for (w, u), p_wu in wu_weights.items():
        vset = desc[w] - desc[u]
        if method == "s4":
            vset = vset - {w}
        if not vset:
            continue  # s4 redraws; s3 never hits this (w is always available)
        kept += p_wu
        for v in vset:
            raw[(v, u)] = raw.get((v, u), 0.0) + p_wu / len(vset)
    if kept == 0.0:
        return {}
    return {pair: p / kept for pair, p in raw.items()}


@dataclass(frozen=True)
class EncapsulationResult:
    contained: bool
    vacuous: bool


def strict_encapsulation_check(
    f: DiagGaussian,
    g: DiagGaussian,
    eta: float,
    grid: int = 801,
) -> EncapsulationResult:
    """Grid test of {x : f(x) > eta} being a subset of {x : g(x) > eta}.

    Supports d <= 2; the grid spans 8 pooled standard deviations around both
    means in each dimension.  When eta exceeds the maximum of f on the grid
    the containment is vacuously true and flagged as such.
    """
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    if f.d != g.d or f.d > 2:
        raise ValueError("strict_encapsulation_check supports matching d <= 2")

    axes = []
    for i in range(f.d):
        pooled = math.sqrt(float(np.exp(f.log_var[i]) + np.exp(g.log_var[i])))
        lo = min(float(f.mean[i]), float(g.mean[i])) - 8.0 * pooled
        hi = max(float(f.mean[i]), float(g.mean[i])) + 8.0 * pooled
        axes.append(np.linspace(lo, hi, grid))
    if f.d == 1:
        points = axes[0][:, None]
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        points = np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)

    f_vals = np.exp(_log_pdf(points, f.mean, f.log_var))
    g_vals = np.exp(_log_pdf(points, g.mean, g.log_var))
    inside_f = f_vals > eta
    if not inside_f.any():
        return EncapsulationResult(contained=True, vacuous=True)
    contained = bool(np.all(g_vals[inside_f] > eta))
    return EncapsulationResult(contained=contained, vacuous=False)
