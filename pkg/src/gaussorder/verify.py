"""Self-check battery: closed forms vs oracles, samplers vs enumeration,
closure vs brute force, checkpoint round trips.

Each check returns a ``CheckResult``; the CLI prints one line per check and
fails the process if any check fails.  The same battery backs the
acceptance-level property suite in the tests.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import oracles
from .densities import (
    ELK,
    KL,
    REVERSE_KL,
    DiagGaussian,
    DivergenceKind,
    divergence,
    divergence_with_grad,
    kl,
    log_det_volume,
    neg_log_elk,
    renyi,
    renyi_kind,
)
from .dataio import load_checkpoint, save_checkpoint
from .hierarchy import (
    NegSpec,
    build_graph,
    sample_s1,
    sample_s3,
    sample_s4,
    transitive_closure,
)
from .training import EmbeddingTable, TrainConfig, train


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _random_gaussian(rng: np.random.Generator, d: int) -> DiagGaussian:
    return DiagGaussian(
        rng.normal(0.0, 1.5, d), rng.uniform(-1.5, 1.0, d)
    )


def _rel_close(a: np.ndarray, b: np.ndarray, rtol: float, atol: float = 1e-8) -> bool:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return bool(np.all(np.abs(a - b) <= atol + rtol * np.maximum(np.abs(a), np.abs(b))))


def check_kl_vs_monte_carlo(seed: int, instances: int = 100, samples: int = 200_000):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        f = _random_gaussian(rng, int(rng.integers(1, 4)))
        g = DiagGaussian(rng.normal(0.0, 1.5, f.d), rng.uniform(-1.5, 1.0, f.d))
        est = oracles.mc_kl(f, g, samples, rng)
        sigma = max(est.std_error, 1e-12)
        worst = max(worst, abs(kl(f, g) - est.mean) / sigma)
    return CheckResult(
        "kl matches monte-carlo within 3 standard errors",
        worst <= 3.0,
        f"worst z-score {worst:.2f} over {instances} instances",
    )


def check_reverse_kl_vs_monte_carlo(seed: int, instances: int = 100, samples: int = 200_000):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        f = _random_gaussian(rng, int(rng.integers(1, 4)))
        g = DiagGaussian(rng.normal(0.0, 1.5, f.d), rng.uniform(-1.5, 1.0, f.d))
        est = oracles.mc_kl(g, f, samples, rng)  # sample from g for KL(g || f)
        sigma = max(est.std_error, 1e-12)
        value = divergence(REVERSE_KL, f, g)
        worst = max(worst, abs(value - est.mean) / sigma)
    return CheckResult(
        "reverse kl matches monte-carlo within 3 standard errors",
        worst <= 3.0,
        f"worst z-score {worst:.2f} over {instances} instances",
    )


def check_elk_vs_quadrature(seed: int, instances: int = 100):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(1, 4))
        f = _random_gaussian(rng, d)
        g = _random_gaussian(rng, d)
        expected = sum(
            oracles.quad_elk_1d(
                DiagGaussian(f.mean[i : i + 1], f.log_var[i : i + 1]),
                DiagGaussian(g.mean[i : i + 1], g.log_var[i : i + 1]),
                grid=50_001,
            )
            for i in range(d)
        )
        worst = max(worst, abs(neg_log_elk(f, g) - expected))
    return CheckResult(
        "elk penalty matches per-dimension quadrature within 1e-6",
        worst <= 1e-6,
        f"worst abs error {worst:.2e} over {instances} instances",
    )


def check_renyi_vs_quadrature(seed: int, instances: int = 100):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        alpha = float(rng.uniform(0.05, 0.95))
        d = int(rng.integers(1, 4))
        f = _random_gaussian(rng, d)
        g = _random_gaussian(rng, d)
        expected = sum(
            oracles.quad_renyi_1d(
                alpha,
                DiagGaussian(f.mean[i : i + 1], f.log_var[i : i + 1]),
                DiagGaussian(g.mean[i : i + 1], g.log_var[i : i + 1]),
                grid=50_001,
            )
            for i in range(d)
        )
        worst = max(worst, abs(renyi(alpha, f, g) - expected))
    return CheckResult(
        "renyi divergence matches per-dimension quadrature within 1e-6",
        worst <= 1e-6,
        f"worst abs error {worst:.2e} over {instances} instances",
    )


def check_renyi_kl_limit(seed: int, instances: int = 100):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(1, 6))
        f = _random_gaussian(rng, d)
        g = _random_gaussian(rng, d)
        worst = max(worst, abs(renyi(1.0 - 1e-3, f, g) - kl(f, g)))
    return CheckResult(
        "renyi at alpha = 1 - 1e-3 approximates kl within 1e-2",
        worst <= 1e-2,
        f"worst abs gap {worst:.2e} over {instances} instances",
    )


def check_symmetries(seed: int, instances: int = 100):
    rng = np.random.default_rng(seed)
    ok = True
    detail = ""
    for _ in range(instances):
        d = int(rng.integers(1, 6))
        f = _random_gaussian(rng, d)
        g = _random_gaussian(rng, d)
        if neg_log_elk(f, g) != neg_log_elk(g, f):
            ok, detail = False, "elk symmetry broken"
            break
        a = renyi(0.5, f, g)
        b = renyi(0.5, g, f)
        if not _rel_close(a, b, rtol=1e-10, atol=1e-12):
            ok, detail = False, f"renyi(0.5) asymmetric: {a!r} vs {b!r}"
            break
    return CheckResult(
        "elk symmetric bit-for-bit and renyi(0.5) symmetric to 1e-10",
        ok,
        detail,
    )


def check_gradients(seed: int, instances_per_kind: int = 100):
    rng = np.random.default_rng(seed)
    kinds = [KL, REVERSE_KL, ELK, renyi_kind(0.5), renyi_kind(0.3), renyi_kind(0.8)]
    worst = 0.0
    for kind in kinds:
        for _ in range(instances_per_kind):
            d = 5
            f = _random_gaussian(rng, d)
            g = _random_gaussian(rng, d)
            got = divergence_with_grad(kind, f, g)
            packed = np.concatenate([f.mean, f.log_var, g.mean, g.log_var])

            def loss_fn(p):
                ff = DiagGaussian(p[:d], p[d : 2 * d])
                gg = DiagGaussian(p[2 * d : 3 * d], p[3 * d :])
                return divergence(kind, ff, gg)

            fd = oracles.fd_grad(loss_fn, packed, h=1e-5)
            analytic = np.concatenate(
                [got.d_mean_f, got.d_logvar_f, got.d_mean_g, got.d_logvar_g]
            )
            err = np.max(
                np.abs(analytic - fd)
                / np.maximum(1e-4, np.maximum(np.abs(analytic), np.abs(fd)))
            )
            worst = max(worst, float(err))
    return CheckResult(
        "analytic gradients match central differences (rel tol 1e-4, every kind)",
        worst <= 1e-4,
        f"worst relative error {worst:.2e}",
    )


def _random_dag(rng: np.random.Generator, n: int, p: float):
    edges = []
    for child in range(1, n):
        for parent in range(child):
            if rng.random() < p:
                edges.append((f"n{child}", f"n{parent}"))
    if not edges:
        edges.append(("n1", "n0"))
    return edges


def check_closure_vs_brute_force(seed: int, instances: int = 25):
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        n = int(rng.integers(2, 51))
        edges = _random_dag(rng, n, float(rng.uniform(0.03, 0.25)))
        g = transitive_closure(build_graph(edges))
        id_edges = [(g.node_id(c), g.node_id(p)) for c, p in edges]
        expected = oracles.brute_closure(id_edges, g.n)
        if g.closure_edge_set() != expected:
            return CheckResult(
                "transitive closure equals brute-force reachability",
                False,
                f"mismatch on a {n}-node dag",
            )
    return CheckResult(
        "transitive closure equals brute-force reachability",
        True,
        f"{instances} random dags up to 50 nodes",
    )


def _five_node_tree():
    return [("a", "r"), ("b", "r"), ("c", "a"), ("d", "a")]


def check_sampler_supports(seed: int, draws: int = 4000):
    rng = np.random.default_rng(seed)
    for edges in (_five_node_tree(), _random_dag(np.random.default_rng(seed + 1), 8, 0.3)):
        g = transitive_closure(build_graph(edges))
        id_edges = [(g.node_id(c), g.node_id(p)) for c, p in edges]
        closure = sorted(g.closure_edge_set())

        pos = closure[int(rng.integers(len(closure)))]
        expected = set(
            oracles.enumerate_sampler_support(id_edges, g.n, "s1", pos=pos)
        )
        observed = {sample_s1(g, pos, rng) for _ in range(draws)}
        if observed != expected:
            return CheckResult(
                "sampler supports equal exhaustive enumeration",
                False,
                f"s1 support mismatch on pos={pos}",
            )

        for method, sampler in (("s3", sample_s3), ("s4", sample_s4)):
            expected = set(oracles.enumerate_sampler_support(id_edges, g.n, method))
            observed = {sampler(g, rng) for _ in range(draws)}
            if observed != expected:
                return CheckResult(
                    "sampler supports equal exhaustive enumeration",
                    False,
                    f"{method} support mismatch",
                )
    return CheckResult(
        "sampler supports equal exhaustive enumeration",
        True,
        f"s1/s3/s4 on a tree and a random dag, {draws} draws each",
    )


def check_checkpoint_round_trip(seed: int):
    rng = np.random.default_rng(seed)
    n, d = 17, 3
    table = EmbeddingTable(rng.normal(size=(n, d)), rng.normal(size=(n, d)))
    names = [f"node.{i:02d}" for i in range(n)]
    fd_, path = tempfile.mkstemp(suffix=".ckpt")
    os.close(fd_)
    try:
        save_checkpoint(table, names, renyi_kind(0.37), 12.5, seed, path)
        loaded = load_checkpoint(path)
        ok = (
            loaded.names == names
            and loaded.kind == renyi_kind(0.37)
            and loaded.gamma == 12.5
            and loaded.seed == seed
            and np.array_equal(loaded.table.means, table.means)
            and np.array_equal(loaded.table.log_vars, table.log_vars)
        )
    finally:
        os.unlink(path)
    return CheckResult("checkpoint round trip is bitwise exact", ok)


def _superlevel_interval(mu: float, var: float, eta: float):
    peak = 1.0 / math.sqrt(2.0 * math.pi * var)
    if eta >= peak:
        return None
    half = math.sqrt(2.0 * var * math.log(peak / eta))
    return (mu - half, mu + half)


def check_strict_encapsulation(seed: int, instances: int = 60):
    rng = np.random.default_rng(seed)
    checked = 0
    for _ in range(instances):
        f = DiagGaussian([rng.normal(0, 2)], [rng.uniform(-2, 1)])
        g = DiagGaussian([rng.normal(0, 2)], [rng.uniform(-2, 1)])
        eta = float(rng.uniform(0.01, 0.3))
        fi = _superlevel_interval(float(f.mean[0]), float(np.exp(f.log_var[0])), eta)
        gi = _superlevel_interval(float(g.mean[0]), float(np.exp(g.log_var[0])), eta)
        grid = 4001
        pooled = math.sqrt(float(np.exp(f.log_var[0]) + np.exp(g.log_var[0])))
        span = abs(float(f.mean[0]) - float(g.mean[0])) + 16.0 * pooled
        cell = span / (grid - 1)
        if fi is None:
            expected = True
        elif gi is None:
            expected = False
        else:
            margin = min(fi[0] - gi[0], gi[1] - fi[1])
            if abs(margin) < 2.0 * cell:
                continue  # below grid resolution; the grid test may go either way
            expected = margin > 0.0
        got = oracles.strict_encapsulation_check(f, g, eta, grid=grid)
        if got.vacuous:
            continue
        checked += 1
        if got.contained != expected:
            return CheckResult(
                "strict encapsulation grid test matches analytic intervals (d=1)",
                False,
                f"f={f.mean[0]:.3f}/{np.exp(f.log_var[0]):.3f} "
                f"g={g.mean[0]:.3f}/{np.exp(g.log_var[0]):.3f} eta={eta:.3f}",
            )
    return CheckResult(
        "strict encapsulation grid test matches analytic intervals (d=1)",
        checked > instances // 2,
        f"{checked} decisive instances of {instances}",
    )


def check_toy_tree_convergence(seed: int):
    g = transitive_closure(build_graph(_five_node_tree()))
    cfg = TrainConfig(
        margin=10.0,
        init_var=0.05,
        gamma=1.0,
        dim=2,
        neg=NegSpec(s1=1.0, s2=1.0),
        batch_size=6,
        epochs=200,
        learning_rate=0.05,
        seed=seed,
    )
    table = train(g, cfg)
    root = g.node_id("r")
    leaves = [g.node_id(x) for x in ("b", "c", "d")]
    root_vol = log_det_volume(table.gaussian(root))
    ok = all(root_vol > log_det_volume(table.gaussian(l)) for l in leaves)
    pens = [
        max(0.0, divergence(cfg.kind, table.gaussian(u), table.gaussian(v)) - cfg.gamma)
        for u, v in g.closure_edge_set()
    ]
    ok = ok and max(pens) == 0.0
    return CheckResult(
        "toy tree training: true-pair penalties reach 0, root volume largest",
        ok,
        f"max true-pair penalty {max(pens):.3f}, root volume {root_vol:.2f}",
    )


def run_battery(seed: int = 0) -> list[CheckResult]:
    return [
        check_kl_vs_monte_carlo(seed),
        check_reverse_kl_vs_monte_carlo(seed + 1),
        check_elk_vs_quadrature(seed + 2),
        check_renyi_vs_quadrature(seed + 3),
        check_renyi_kl_limit(seed + 4),
        check_symmetries(seed + 5),
        check_gradients(seed + 6),
        check_closure_vs_brute_force(seed + 7),
        check_sampler_supports(seed + 8),
        check_checkpoint_round_trip(seed + 9),
        check_strict_encapsulation(seed + 10),
        check_toy_tree_convergence(seed + 11),
    ]
