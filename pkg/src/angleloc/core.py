"""Geometry, graph and network model; synthesis of angle measurements.

Vertex ids are 1-based throughout the public API.  Configurations are
stored as (n, 2) float arrays; row ``i - 1`` holds the position of vertex
``i``.  All types are immutable after construction and all operations are
pure, so values can be shared freely across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

COINCIDENCE_TOL = 1e-12


class CoincidentPoints(ValueError):
    """Two sensors occupy (numerically) the same position."""


class NetworkFormatError(ValueError):
    """A network file violates the schema or a type invariant."""


# ---------------------------------------------------------------------------
# graph and framework types


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on vertices 1..n."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        for e in self.edges:
            i, j = e
            if not (1 <= i < j <= self.n):
                raise ValueError(f"bad edge {e} for n={self.n}")

    @staticmethod
    def from_edges(n: int, edges) -> "Graph":
        canon = set()
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            canon.add((min(i, j), max(i, j)))
        return Graph(n, frozenset(canon))

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def neighbors(self, i: int) -> list[int]:
        out = [b for a, b in self.edges if a == i] + [a for a, b in self.edges if b == i]
        return sorted(out)

    def degree(self, i: int) -> int:
        return sum(1 for e in self.edges if i in e)

    def edge_list(self) -> list[tuple[int, int]]:
        """Edges in canonical (lexicographic) order."""
        return sorted(self.edges)

    def vertices(self) -> range:
        return range(1, self.n + 1)


@dataclass(frozen=True)
class Framework:
    """A graph embedded in the plane."""

    graph: Graph
    config: np.ndarray  # (n, 2)

    def __post_init__(self):
        cfg = np.asarray(self.config, dtype=float)
        if cfg.shape != (self.graph.n, 2):
            raise ValueError(f"config shape {cfg.shape} != ({self.graph.n}, 2)")
        if not np.all(np.isfinite(cfg)):
            raise ValueError("non-finite coordinates in configuration")
        cfg = cfg.copy()
        cfg.setflags(write=False)
        object.__setattr__(self, "config", cfg)

    def pos(self, i: int) -> np.ndarray:
        return self.config[i - 1]


@dataclass(frozen=True)
class SensorNetwork:
    """A framework with an anchor/unknown split, grounded graph and local frames.

    Anchors are vertices 1..n_a; the grounded graph adds the complete graph
    on the anchors to the sensing graph.  ``frames[i-1]`` is the orthogonal
    matrix R_i of sensor i's local coordinate frame; ``offsets[i-1]`` its
    translation (the offset never affects bearings, it is kept for fidelity
    of the local-coordinate model).
    """

    framework: Framework
    n_anchors: int
    grounded: Graph
    frames: np.ndarray  # (n, 2, 2)
    offsets: np.ndarray  # (n, 2)

    def __post_init__(self):
        n = self.framework.graph.n
        if not (0 <= self.n_anchors <= n):
            raise ValueError("anchor count out of range")
        if self.grounded.n != n:
            raise ValueError("grounded graph vertex count mismatch")
        if not self.framework.graph.edges <= self.grounded.edges:
            raise ValueError("grounded graph must contain the sensing graph")
        for i in range(1, self.n_anchors + 1):
            for j in range(i + 1, self.n_anchors + 1):
                if not self.grounded.has_edge(i, j):
                    raise ValueError("anchor subgraph of grounded graph must be complete")
        fr = np.asarray(self.frames, dtype=float)
        off = np.asarray(self.offsets, dtype=float)
        if fr.shape != (n, 2, 2) or off.shape != (n, 2):
            raise ValueError("frame array shape mismatch")
        for i, R in enumerate(fr):
            if np.max(np.abs(R.T @ R - np.eye(2))) > 1e-12:
                raise ValueError(f"frame of sensor {i + 1} is not orthogonal")
        fr = fr.copy()
        off = off.copy()
        fr.setflags(write=False)
        off.setflags(write=False)
        object.__setattr__(self, "frames", fr)
        object.__setattr__(self, "offsets", off)

    @property
    def n(self) -> int:
        return self.framework.graph.n

    @property
    def anchors(self) -> range:
        return range(1, self.n_anchors + 1)

    @property
    def unknowns(self) -> range:
        return range(self.n_anchors + 1, self.n + 1)

    @property
    def n_unknowns(self) -> int:
        return self.n - self.n_anchors

    def grounded_framework(self) -> Framework:
        return Framework(self.grounded, self.framework.config)


# ---------------------------------------------------------------------------
# measurement regimes


@dataclass(frozen=True)
class Exact:
    """Noise-free angle measurements."""


@dataclass(frozen=True)
class Gaussian:
    """Additive zero-mean Gaussian noise on each angle cosine."""

    sigma: float = 0.005


@dataclass(frozen=True)
class Bounded:
    """Bounded disturbance on each local bearing vector.

    Each local bearing is perturbed by a vector of norm <= tau_max; each
    angle cosine then lies within 2*tau_max + tau_max**2 of its measured
    value, which is the half-width attached to the reported intervals.
    """

    tau_max: float = 0.01

    @property
    def half_width(self) -> float:
        return 2.0 * self.tau_max + self.tau_max**2


Regime = Exact | Gaussian | Bounded


@dataclass(frozen=True)
class AngleData:
    """Angle measurements over the triples of the grounded graph.

    ``values[t]`` is the (possibly perturbed) cosine for ``triples[t]``;
    ``edge_index`` maps each grounded edge to its 1-based index l_ij.
    For Gaussian data ``sigmas`` holds the per-triple standard deviation;
    for bounded data ``intervals`` holds (lo, hi) arrays per triple.
    """

    triples: tuple[tuple[int, int, int], ...]
    values: np.ndarray
    edge_index: dict[tuple[int, int], int]
    regime: Regime
    sigmas: np.ndarray | None = None
    intervals: tuple[np.ndarray, np.ndarray] | None = None
    true_values: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.values) != len(self.triples):
            raise ValueError("values/triples length mismatch")
        for (i, j, k) in self.triples:
            if not (j < k):
                raise ValueError(f"triple {(i, j, k)} violates j < k")
        if isinstance(self.regime, Exact):
            if np.any(np.abs(self.values) > 1.0 + 1e-12):
                raise ValueError("exact angle cosine outside [-1, 1]")
        if self.intervals is not None:
            lo, hi = self.intervals
            if np.any(self.values < lo - 1e-15) or np.any(self.values > hi + 1e-15):
                raise ValueError("interval does not contain measured value")

    @property
    def m(self) -> int:
        return len(self.edge_index)


# ---------------------------------------------------------------------------
# elementary geometry


def cross2(a, b) -> float:
    """Scalar cross product of two planar vectors."""
    return float(a[0] * b[1] - a[1] * b[0])


def bearing(p_i, p_j) -> np.ndarray:
    """Unit vector (p_i - p_j) / ||p_i - p_j||."""
    d = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
    nrm = float(np.linalg.norm(d))
    if nrm < COINCIDENCE_TOL:
        raise CoincidentPoints(f"points {p_i} and {p_j} coincide")
    return d / nrm


def angle_cosine(p_i, p_j, p_k) -> float:
    """Cosine of the angle at p_i between rays to p_j and p_k, clamped to [-1, 1]."""
    g_ij = bearing(p_i, p_j)
    g_ik = bearing(p_i, p_k)
    return float(np.clip(g_ij @ g_ik, -1.0, 1.0))


def angle_index_set(g: Graph) -> list[tuple[int, int, int]]:
    """All angle triples (i, j, k) with (i,j),(i,k) edges and j < k, in lex order."""
    triples = []
    for i in g.vertices():
        nbrs = g.neighbors(i)
        for a in range(len(nbrs)):
            for b in range(a + 1, len(nbrs)):
                triples.append((i, nbrs[a], nbrs[b]))
    triples.sort()
    return triples


def grounded_graph(g: Graph, anchors) -> Graph:
    """Sensing graph plus the complete graph on the anchor set."""
    anchors = sorted(set(anchors))
    for a in anchors:
        if not (1 <= a <= g.n):
            raise ValueError(f"anchor {a} not a vertex")
    extra = {(anchors[x], anchors[y]) for x in range(len(anchors)) for y in range(x + 1, len(anchors))}
    return Graph(g.n, frozenset(set(g.edges) | extra))


def edge_index_map(g: Graph) -> dict[tuple[int, int], int]:
    """Canonical 1-based edge numbering l_ij over the lexicographic edge list."""
    return {e: l for l, e in enumerate(g.edge_list(), start=1)}


# ---------------------------------------------------------------------------
# networks and local frames


def _rng(seed: int) -> np.random.Generator:
    # counter-based generator: streams are reproducible and cheap to derive
    return np.random.Generator(np.random.Philox(seed))


def random_frames(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample per-sensor frames uniformly from O(2), reflections included."""
    rng = _rng(seed)
    frames = np.empty((n, 2, 2))
    for i in range(n):
        th = rng.uniform(0.0, 2.0 * math.pi)
        c, s = math.cos(th), math.sin(th)
        R = np.array([[c, -s], [s, c]])
        if rng.random() < 0.5:
            R = R @ np.array([[1.0, 0.0], [0.0, -1.0]])
        frames[i] = R
    offsets = rng.uniform(-1.0, 1.0, size=(n, 2))
    return frames, offsets


def make_network(framework: Framework, n_anchors: int, frames: np.ndarray | None = None,
                 offsets: np.ndarray | None = None, frame_seed: int = 0) -> SensorNetwork:
    """Assemble a sensor network, sampling local frames when none are given."""
    if frames is None:
        frames, sampled_off = random_frames(framework.graph.n, frame_seed)
        if offsets is None:
            offsets = sampled_off
    elif offsets is None:
        offsets = np.zeros((framework.graph.n, 2))
    hat = grounded_graph(framework.graph, range(1, n_anchors + 1))
    return SensorNetwork(framework, n_anchors, hat, frames, offsets)


def local_bearing(net: SensorNetwork, i: int, j: int) -> np.ndarray:
    """Bearing from i to j expressed in sensor i's local frame (R_i g_ij)."""
    if not (net.grounded.has_edge(i, j) or (i in net.anchors and j in net.anchors)):
        raise ValueError(f"({i},{j}) is not a grounded edge")
    g = bearing(net.framework.pos(i), net.framework.pos(j))
    return net.frames[i - 1] @ g


def sample_bearing_disturbances(net: SensorNetwork, tau_max: float, seed: int) -> dict[tuple[int, int], np.ndarray]:
    """Disturbance vector tau_ij (norm <= tau_max) per directed grounded edge.

    The sampling order is fixed (directed edges sorted) so the same seed
    yields the same disturbance field for the SDP and protocol pipelines.
    """
    rng = _rng(seed)
    taus = {}
    directed = sorted([(i, j) for (i, j) in net.grounded.edges] + [(j, i) for (i, j) in net.grounded.edges])
    for (i, j) in directed:
        th = rng.uniform(0.0, 2.0 * math.pi)
        r = tau_max * math.sqrt(rng.random())
        taus[(i, j)] = np.array([r * math.cos(th), r * math.sin(th)])
    return taus


def sample_gaussian_bearing_noise(net: SensorNetwork, sigma: float, seed: int) -> dict[tuple[int, int], np.ndarray]:
    """Gaussian perturbation per directed grounded edge (protocol noise model)."""
    rng = _rng(seed)
    noise = {}
    directed = sorted([(i, j) for (i, j) in net.grounded.edges] + [(j, i) for (i, j) in net.grounded.edges])
    for (i, j) in directed:
        noise[(i, j)] = rng.normal(0.0, sigma, size=2)
    return noise


def synthesize_measurements(net: SensorNetwork, regime: Regime = Exact(), seed: int = 0) -> AngleData:
    """Generate angle data over the grounded graph under the given regime."""
    hat = net.grounded
    triples = tuple(angle_index_set(hat))
    cfg = net.framework
    true_vals = np.array([angle_cosine(cfg.pos(i), cfg.pos(j), cfg.pos(k)) for (i, j, k) in triples])
    eidx = edge_index_map(hat)

    if isinstance(regime, Exact):
        return AngleData(triples, true_vals, eidx, regime, true_values=true_vals)

    if isinstance(regime, Gaussian):
        rng = _rng(seed)
        noise = rng.normal(0.0, regime.sigma, size=len(triples))
        sigmas = np.full(len(triples), regime.sigma)
        return AngleData(triples, true_vals + noise, eidx, regime, sigmas=sigmas, true_values=true_vals)

    if isinstance(regime, Bounded):
        taus = sample_bearing_disturbances(net, regime.tau_max, seed)
        vals = np.empty(len(triples))
        for t, (i, j, k) in enumerate(triples):
            g_ij = bearing(cfg.pos(i), cfg.pos(j))
            g_ik = bearing(cfg.pos(i), cfg.pos(k))
            # disturbed local bearings, dotted without renormalization
            vals[t] = (g_ij + net.frames[i - 1].T @ taus[(i, j)]) @ (g_ik + net.frames[i - 1].T @ taus[(i, k)])
        hw = regime.half_width
        return AngleData(triples, vals, eidx, regime,
                         intervals=(vals - hw, vals + hw), true_values=true_vals)

    raise TypeError(f"unknown regime {regime!r}")


# ---------------------------------------------------------------------------
# network file format (JSON)


def save_network(net: SensorNetwork, path) -> None:
    doc = {
        "dim": 2,
        "anchors": [{"id": i, "pos": list(map(float, net.framework.pos(i)))} for i in net.anchors],
        "unknowns": [{"id": i, "pos": list(map(float, net.framework.pos(i)))} for i in net.unknowns],
        "edges": [[i, j] for (i, j) in net.framework.graph.edge_list()],
        "frames": {str(i): [list(map(float, row)) for row in net.frames[i - 1]] for i in range(1, net.n + 1)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_network(path, frame_seed: int = 0) -> SensorNetwork:
    """Load a network file, rejecting schema or invariant violations."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc

    def fail(field_name, msg):
        raise NetworkFormatError(f"{path}: field '{field_name}': {msg}")

    if doc.get("dim") != 2:
        fail("dim", f"must be 2, got {doc.get('dim')!r}")
    for key in ("anchors", "unknowns", "edges"):
        if key not in doc or not isinstance(doc[key], list):
            fail(key, "missing or not a list")

    entries = []
    for kind in ("anchors", "unknowns"):
        for rec in doc[kind]:
            if not isinstance(rec, dict) or "id" not in rec or "pos" not in rec:
                fail(kind, f"entry {rec!r} must have 'id' and 'pos'")
            pos = rec["pos"]
            if not (isinstance(pos, list) and len(pos) == 2 and all(isinstance(v, (int, float)) for v in pos)):
                fail(kind, f"id {rec['id']}: pos must be [x, y]")
            if not all(math.isfinite(v) for v in pos):
                fail(kind, f"id {rec['id']}: non-finite position")
            entries.append((rec["id"], kind, pos))

    n_a = len(doc["anchors"])
    n = len(entries)
    ids = [e[0] for e in entries]
    if sorted(ids) != list(range(1, n + 1)):
        fail("anchors/unknowns", f"ids must be exactly 1..{n}, got {sorted(ids)}")
    for (vid, kind, _) in entries:
        if kind == "anchors" and vid > n_a:
            fail("anchors", f"anchor id {vid} must precede all unknown ids")
        if kind == "unknowns" and vid <= n_a:
            fail("unknowns", f"unknown id {vid} collides with the anchor range 1..{n_a}")

    config = np.zeros((n, 2))
    for (vid, _, pos) in entries:
        config[vid - 1] = pos

    edges = set()
    for e in doc["edges"]:
        if not (isinstance(e, list) and len(e) == 2):
            fail("edges", f"entry {e!r} must be a pair")
        i, j = e
        if not (isinstance(i, int) and isinstance(j, int) and 1 <= i <= n and 1 <= j <= n):
            fail("edges", f"entry {e!r} has ids outside 1..{n}")
        if i == j:
            fail("edges", f"self-loop at {i}")
        key = (min(i, j), max(i, j))
        if key in edges:
            fail("edges", f"duplicate edge {list(key)}")
        edges.add(key)

    frames = None
    if "frames" in doc:
        raw = doc["frames"]
        if not isinstance(raw, dict):
            fail("frames", "must map id -> 2x2 matrix")
        frames = np.empty((n, 2, 2))
        default, _ = random_frames(n, frame_seed)
        frames[:] = default
        for key, mat in raw.items():
            try:
                vid = int(key)
            except ValueError:
                fail("frames", f"key {key!r} is not an id")
            if not (1 <= vid <= n):
                fail("frames", f"id {vid} outside 1..{n}")
            M = np.asarray(mat, dtype=float)
            if M.shape != (2, 2):
                fail("frames", f"id {vid}: matrix must be 2x2")
            if np.max(np.abs(M.T @ M - np.eye(2))) > 1e-9:
                fail("frames", f"id {vid}: matrix is not orthogonal")
            # re-orthogonalize to machine precision via polar factor
            u, _, vt = np.linalg.svd(M)
            frames[vid - 1] = u @ vt

    graph = Graph(n, frozenset(edges))
    fw = Framework(graph, config)
    try:
        return make_network(fw, n_a, frames=frames, frame_seed=frame_seed)
    except ValueError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc
