"""Experiment harness: network generation, the root-sum-square error metric,
and batch runs emitting machine-readable CSV rows."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from angleloc import blp, graphkit, sdp
from angleloc.core import (
    Bounded,
    Exact,
    Framework,
    Gaussian,
    Graph,
    Regime,
    SensorNetwork,
    cross2,
    load_network,
    make_network,
    _rng,
)

CSV_HEADER = ["run", "method", "n", "n_a", "error", "metric", "time_ms", "verdict"]
RETRIES_PER_VERTEX = 10000


class GenerationFailed(RuntimeError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    generator: str  # "acute_triangulated", "bilateration", "from_file"
    n: int
    n_a: int
    regime: Regime = Exact()
    methods: tuple[str, ...] = ("sdp",)  # sdp, sdp_decomposed, blp
    seed: int = 0
    repetitions: int = 1
    path: str | None = None  # for from_file
    tol: float = sdp.DEFAULT_TOL
    extra_edges: int = 0  # acute generator only: acute-preserving chords

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        for m in self.methods:
            if m not in ("sdp", "sdp_decomposed", "blp"):
                raise ValueError(f"unknown method {m!r}")


@dataclass
class ResultRow:
    run: int
    method: str
    n: int
    n_a: int
    error: float
    metric: float  # rounds (blp) or solver/outer iterations (sdp)
    time_ms: float
    verdict: str


# ---------------------------------------------------------------------------
# generation


def _acute(p, q, r, eps=graphkit.ACUTE_EPS) -> bool:
    for (a, b, c) in ((p, q, r), (q, p, r), (r, p, q)):
        u, v = b - a, c - a
        nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
        if nu < 1e-9 or nv < 1e-9:
            return False
        cos = float(u @ v) / (nu * nv)
        if not (eps < cos < 1.0 - eps):
            return False
    return True


def densify_acute(net: SensorNetwork, seed: int, max_extra: int | None = None) -> SensorNetwork:
    """Add chords that keep every 3-clique acute, in seeded random order.

    Extra edges tighten the angle-constraint feasible set (which is what
    gives the centralized solver its accuracy under bounded disturbances)
    while preserving the acute-triangulated property.
    """
    g = net.framework.graph
    fw = net.framework
    rng = _rng(seed ^ 0x5EED)
    edges = set(g.edges)
    cand = [(i, j) for i in range(1, g.n + 1) for j in range(i + 1, g.n + 1)
            if (i, j) not in edges]
    rng.shuffle(cand)
    added = 0
    adj = {v: set(g.neighbors(v)) for v in g.vertices()}
    for (i, j) in cand:
        ok = True
        for k in adj[i] & adj[j]:
            if not _acute(fw.pos(i), fw.pos(j), fw.pos(k)):
                ok = False
                break
        if not ok:
            continue
        edges.add((i, j))
        adj[i].add(j)
        adj[j].add(i)
        added += 1
        if max_extra is not None and added >= max_extra:
            break
    fw2 = Framework(Graph(g.n, frozenset(edges)), fw.config)
    return make_network(fw2, net.n_anchors, frames=net.frames, offsets=net.offsets)


def generate_network(kind: str, n: int, n_a: int, seed: int,
                     frame_seed: int | None = None, extra_edges: int = 0) -> SensorNetwork:
    """Rejection-sampled growth in the unit box.

    ``acute_triangulated``: seed acute anchor triangle, then each vertex
    attaches to both endpoints of an existing edge, rejecting placements
    that create a non-acute triangle.  ``bilateration``: each vertex
    attaches to two placed vertices (preferring a non-adjacent pair, so the
    result usually is not triangulated), rejecting collinear attachments.
    """
    if kind not in ("acute_triangulated", "bilateration"):
        raise ValueError(f"unknown generator kind {kind!r}")
    if not (n >= n_a >= 3):
        raise ValueError("need n >= n_a >= 3")
    rng = _rng(seed)
    pts = np.zeros((n, 2))
    fail_counts: dict[str, int] = {}

    def bump(reason):
        fail_counts[reason] = fail_counts.get(reason, 0) + 1

    # seed triangle (vertices 1..3 = first three anchors)
    for _ in range(RETRIES_PER_VERTEX):
        cand = rng.uniform(0.0, 1.0, size=(3, 2))
        area = 0.5 * abs(cross2(cand[1] - cand[0], cand[2] - cand[0]))
        if area <= 1e-3:
            bump("seed_degenerate")
            continue
        if kind == "acute_triangulated" and not _acute(*cand):
            bump("seed_not_acute")
            continue
        pts[:3] = cand
        break
    else:
        worst = max(fail_counts, key=fail_counts.get)
        raise GenerationFailed(f"seed triangle: retries exhausted ({worst})")

    edges = [(1, 2), (1, 3), (2, 3)]
    edge_set = {e for e in edges}
    for v in range(4, n + 1):
        placed = v - 1
        ok = False
        for _ in range(RETRIES_PER_VERTEX):
            if kind == "acute_triangulated":
                a, b = edges[int(rng.integers(len(edges)))]
            else:
                a = int(rng.integers(1, placed + 1))
                b = int(rng.integers(1, placed + 1))
                if a == b:
                    bump("same_parent")
                    continue
                a, b = min(a, b), max(a, b)
                # prefer non-adjacent parents: resample adjacent pairs usually
                if (a, b) in edge_set and rng.random() < 0.9 and placed > 3:
                    bump("adjacent_parents")
                    continue
            p = rng.uniform(0.0, 1.0, size=2)
            if kind == "acute_triangulated":
                if not _acute(p, pts[a - 1], pts[b - 1]):
                    bump("triangle_not_acute")
                    continue
            else:
                d1, d2 = pts[a - 1] - p, pts[b - 1] - p
                if (np.linalg.norm(d1) < 1e-3 or np.linalg.norm(d2) < 1e-3
                        or abs(cross2(d1, d2)) <= 1e-3):
                    bump("collinear_attachment")
                    continue
            pts[v - 1] = p
            edges += [(a, v), (b, v)]
            edge_set |= {(a, v), (b, v)}
            ok = True
            break
        if not ok:
            worst = max(fail_counts, key=fail_counts.get)
            raise GenerationFailed(f"vertex {v}: retries exhausted ({worst})")

    g = Graph.from_edges(n, edges)
    fw = Framework(g, pts)
    net = make_network(fw, n_a, frame_seed=seed if frame_seed is None else frame_seed)
    if extra_edges > 0:
        if kind != "acute_triangulated":
            raise ValueError("extra_edges is only supported for the acute generator")
        net = densify_acute(net, seed, max_extra=extra_edges)
    return net


# ---------------------------------------------------------------------------
# evaluation


def evaluate(true_positions, estimated_positions) -> float:
    """Root-sum-square error over the unknown sensors."""
    t = np.asarray(true_positions, dtype=float)
    e = np.asarray(estimated_positions, dtype=float)
    if t.shape != e.shape:
        raise LengthMismatch(f"shapes {t.shape} vs {e.shape}")
    return float(np.sqrt(np.sum((t - e) ** 2)))


# ---------------------------------------------------------------------------
# batch driver


def _solve_sdp(net: SensorNetwork, regime: Regime, seed: int, decomposed: bool,
               tol: float) -> tuple[float, float, str]:
    from angleloc.core import synthesize_measurements

    data = synthesize_measurements(net, regime, seed=seed)
    if isinstance(regime, Exact):
        prog = sdp.build_exact_program(net, data)
    elif isinstance(regime, Bounded):
        prog = sdp.build_disturbed_program(net, data)
    else:
        prog = sdp.build_noisy_program(net, data)
    if decomposed:
        prog = sdp.decompose_program(prog, net)
    if prog.rank_targets:
        sol = sdp.iterative_rank_minimization(prog, tol=tol)
        metric = float(len(sol.rank_trace or []))
    else:
        sol = sdp.solve(prog, tol=tol)
        metric = float(sol.iterations)
    est, diag = sdp.extract_positions(sol, net, prog)
    truth = net.framework.config[net.n_anchors:]
    return evaluate(truth, est), metric, diag.verdict


def _solve_blp(net: SensorNetwork, regime: Regime, seed: int) -> tuple[float, float, str]:
    world = blp.build_world(net, regime, seed=seed)
    result = blp.run_blp(world)
    if len(result.localized) != net.n:
        return float("nan"), float(result.logs[-1].round if result.logs else 0), "incomplete"
    return (blp.localization_error(result, net),
            float(result.converged_round or 0), "converged")


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    """One row per repetition x method; failures are recorded, never raised."""
    rows = []
    for rep in range(spec.repetitions):
        rep_seed = spec.seed + 7919 * rep  # derived per-repetition stream
        if spec.generator == "from_file":
            net = load_network(spec.path)
        else:
            net = generate_network(spec.generator, spec.n, spec.n_a, rep_seed,
                                   extra_edges=spec.extra_edges)
        for method in spec.methods:
            t0 = time.perf_counter()
            try:
                if method == "blp":
                    error, metric, verdict = _solve_blp(net, spec.regime, rep_seed)
                else:
                    error, metric, verdict = _solve_sdp(
                        net, spec.regime, rep_seed, method == "sdp_decomposed", spec.tol)
            except (sdp.NotDecomposable, sdp.NumericalFailure, sdp.NoConvergence,
                    blp.Stalled, GenerationFailed) as exc:
                error, metric, verdict = float("nan"), 0.0, f"error:{type(exc).__name__}"
            dt = (time.perf_counter() - t0) * 1000.0
            rows.append(ResultRow(rep, method, net.n, net.n_anchors, error, metric, dt, verdict))
    rows.sort(key=lambda r: (r.run, r.method))
    return rows


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.run, r.method, r.n, r.n_a, f"{r.error:.12e}",
                    f"{r.metric:g}", f"{r.time_ms:.3f}", r.verdict])
    return buf.getvalue()
