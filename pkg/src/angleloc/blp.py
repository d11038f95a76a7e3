"""Distributed Bilateration Localization Protocol over a simulated
synchronous message-passing network.

Each sensor is a state machine holding only its own frame, its measured
local bearings to sensing-graph neighbors, and whatever messages it has
received; rounds are synchronous and double-buffered, so per-round updates
read only the previous round's state and the simulation is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from angleloc import graphkit, rigidity
from angleloc.core import (
    Bounded,
    Exact,
    Gaussian,
    Regime,
    SensorNetwork,
    bearing,
    cross2,
    local_bearing,
    sample_bearing_disturbances,
    sample_gaussian_bearing_noise,
)

COLLINEAR_TOL = 1e-10


class CollinearBasis(ValueError):
    """The two reference bearings are (numerically) parallel."""


class CollinearRays(ValueError):
    """The two sight lines are (numerically) parallel: no unique intersection."""


class Stalled(RuntimeError):
    """A round made no progress while unlocalized sensors remain."""

    def __init__(self, logs, unlocalized):
        super().__init__(f"no progress with {sorted(unlocalized)} still unlocalized")
        self.logs = logs
        self.unlocalized = sorted(unlocalized)


# ---------------------------------------------------------------------------
# the two local solvers


def fg_solve(g_ii1: np.ndarray, g_ii2: np.ndarray, b1: float, b2: float,
             tol: float = COLLINEAR_TOL) -> np.ndarray:
    """Recover the global bearing g_ik from two known global bearings and the
    locally measured dot products b1 = g_ii1 . g_ik, b2 = g_ii2 . g_ik."""
    A = np.array([g_ii1, g_ii2], dtype=float)
    if abs(float(np.linalg.det(A))) <= tol:
        raise CollinearBasis("reference bearings are collinear")
    g = np.linalg.solve(A, np.array([b1, b2], dtype=float))
    nrm = float(np.linalg.norm(g))
    if nrm == 0.0:
        raise CollinearBasis("degenerate bearing solution")
    return g / nrm  # renormalize: noise perturbs the norm


def fx_solve(x_i: np.ndarray, x_j: np.ndarray, g_ik: np.ndarray, g_jk: np.ndarray,
             tol: float = COLLINEAR_TOL) -> np.ndarray:
    """Intersect the lines {x_i - t g_ik} and {x_j - s g_jk}."""
    A = np.array([[-g_ik[0], g_jk[0]], [-g_ik[1], g_jk[1]]], dtype=float)
    if abs(float(np.linalg.det(A))) <= tol:
        raise CollinearRays("sight lines are parallel")
    ts = np.linalg.solve(A, np.asarray(x_j, dtype=float) - np.asarray(x_i, dtype=float))
    return np.asarray(x_i, dtype=float) - ts[0] * np.asarray(g_ik, dtype=float)


# ---------------------------------------------------------------------------
# world state


@dataclass
class Message:
    sender: int
    to: int
    kind: str  # "position" or "position_and_bearing"
    round: int
    position: np.ndarray
    bearing: np.ndarray | None = None


@dataclass
class SensorState:
    id: int
    mode: str  # "localized" or "unlocalized"
    position: np.ndarray | None
    local_bearings: dict[int, np.ndarray]  # neighbor -> measured bearing in own frame
    known_positions: dict[int, np.ndarray] = field(default_factory=dict)
    inbox: list[Message] = field(default_factory=list)


@dataclass
class RoundLog:
    round: int
    newly_localized: tuple[int, ...]
    messages_sent: int
    cumulative_error: float  # RSS over localized unknowns vs ground truth


@dataclass
class BlpWorld:
    net: SensorNetwork
    states: dict[int, SensorState]
    round: int = 0
    logs: list[RoundLog] = field(default_factory=list)
    collinear_tol: float = COLLINEAR_TOL


@dataclass
class BlpResult:
    logs: list[RoundLog]
    positions: np.ndarray  # (n, 2); NaN rows for sensors never localized
    converged_round: int | None
    localized: tuple[int, ...]


def build_world(net: SensorNetwork, regime: Regime = Exact(), seed: int = 0,
                collinear_tol: float = COLLINEAR_TOL) -> BlpWorld:
    """Initialize sensor states: anchors localized at their true positions and
    aware of anchor neighbors' positions a priori; everyone measures (possibly
    perturbed) local bearings along sensing-graph edges only."""
    g = net.framework.graph
    perturb: dict[tuple[int, int], np.ndarray] = {}
    if isinstance(regime, Bounded):
        perturb = sample_bearing_disturbances(net, regime.tau_max, seed)
    elif isinstance(regime, Gaussian):
        perturb = sample_gaussian_bearing_noise(net, regime.sigma, seed)

    states = {}
    for i in g.vertices():
        bearings = {}
        for j in g.neighbors(i):
            b = local_bearing(net, i, j)
            if (i, j) in perturb:
                b = b + perturb[(i, j)]  # used directly, no renormalization
            bearings[j] = b
        is_anchor = i in net.anchors
        st = SensorState(
            id=i,
            mode="localized" if is_anchor else "unlocalized",
            position=net.framework.pos(i).copy() if is_anchor else None,
            local_bearings=bearings,
        )
        if is_anchor:
            for j in g.neighbors(i):
                if j in net.anchors:
                    st.known_positions[j] = net.framework.pos(j).copy()
        states[i] = st
    return BlpWorld(net, states, collinear_tol=collinear_tol)


def _reference_pair(st: SensorState, tol: float):
    """Lowest-id pair of localized neighbors with non-collinear global bearings."""
    cands = sorted(st.known_positions)
    for a in range(len(cands)):
        for b in range(a + 1, len(cands)):
            i1, i2 = cands[a], cands[b]
            g1 = bearing(st.position, st.known_positions[i1])
            g2 = bearing(st.position, st.known_positions[i2])
            if abs(cross2(g1, g2)) > tol:
                return i1, i2, g1, g2
    return None


def step_round(world: BlpWorld) -> RoundLog:
    """One synchronous round: all localized sensors send, then all receive."""
    net = world.net
    g = net.framework.graph
    tol = world.collinear_tol
    world.round += 1
    outbox: list[Message] = []

    # send phase: reads only pre-round state
    for i in sorted(world.states):
        st = world.states[i]
        if st.mode != "localized":
            continue
        for j in g.neighbors(i):
            outbox.append(Message(i, j, "position", world.round, st.position.copy()))
        ref = _reference_pair(st, tol)
        if ref is None:
            continue  # not in L*(t): cannot serve bearings this round
        i1, i2, g1, g2 = ref
        for k in g.neighbors(i):
            if world.states[k].mode == "localized":
                continue
            b1 = float(st.local_bearings[i1] @ st.local_bearings[k])
            b2 = float(st.local_bearings[i2] @ st.local_bearings[k])
            try:
                g_ik = fg_solve(g1, g2, b1, b2, tol)
            except CollinearBasis:
                continue
            outbox.append(Message(i, k, "position_and_bearing", world.round,
                                  st.position.copy(), g_ik))

    # receive phase: deliver, then update modes double-buffered
    for msg in outbox:
        world.states[msg.to].inbox.append(msg)

    newly = []
    for k in sorted(world.states):
        st = world.states[k]
        offers = {}
        for msg in st.inbox:
            if msg.round != world.round:
                continue
            st.known_positions[msg.sender] = msg.position
            if msg.kind == "position_and_bearing" and st.mode == "unlocalized":
                offers[msg.sender] = msg
        if st.mode == "localized" or len(offers) < 2:
            st.inbox.clear()
            continue
        senders = sorted(offers)
        placed = None
        for a in range(len(senders)):
            for b in range(a + 1, len(senders)):
                mi, mj = offers[senders[a]], offers[senders[b]]
                try:
                    placed = fx_solve(mi.position, mj.position, mi.bearing, mj.bearing, tol)
                except CollinearRays:
                    continue
                break
            if placed is not None:
                break
        if placed is not None:
            st.mode = "localized"
            st.position = placed
            newly.append(k)
        st.inbox.clear()

    err2 = 0.0
    for i in net.unknowns:
        st = world.states[i]
        if st.mode == "localized":
            err2 += float(np.sum((st.position - net.framework.pos(i)) ** 2))
    log = RoundLog(world.round, tuple(newly), len(outbox), float(np.sqrt(err2)))
    world.logs.append(log)
    return log


def run_blp(world: BlpWorld, max_rounds: int | None = None) -> BlpResult:
    """Run rounds until everyone is localized, a round stalls, or the budget
    (default n_s, per the convergence bound) is exhausted."""
    if max_rounds is None:
        max_rounds = max(world.net.n_unknowns, 1)
    while world.round < max_rounds:
        unloc_before = {i for i, st in world.states.items() if st.mode == "unlocalized"}
        if not unloc_before:
            break
        log = step_round(world)
        if not log.newly_localized:
            raise Stalled(world.logs, unloc_before)
    positions = np.full((world.net.n, 2), np.nan)
    localized = []
    for i, st in sorted(world.states.items()):
        if st.mode == "localized":
            positions[i - 1] = st.position
            localized.append(i)
    converged = world.logs[-1].round if len(localized) == world.net.n and world.logs else None
    if len(localized) == world.net.n and not world.logs:
        converged = 0  # nothing to localize
    return BlpResult(world.logs, positions, converged, tuple(localized))


def check_blp_preconditions(net: SensorNetwork) -> tuple[bool, str]:
    """The sensing-graph framework must admit a non-degenerate bilateration
    ordering, and so must the anchor-induced subframework of the sensing graph."""
    if net.n_anchors < 3:
        return False, "fewer_than_3_anchors"
    g = net.framework.graph
    if graphkit.find_nondegenerate_ordering(net.framework) is None:
        return False, "sensing_graph_not_bilateration"

    anchors = list(net.anchors)
    sub_edges = [(i, j) for (i, j) in g.edge_list() if i in net.anchors and j in net.anchors]
    remap = {v: idx + 1 for idx, v in enumerate(anchors)}
    from angleloc.core import Framework, Graph
    sub_g = Graph.from_edges(len(anchors), [(remap[i], remap[j]) for (i, j) in sub_edges])
    sub_fw = Framework(sub_g, np.stack([net.framework.pos(v) for v in anchors]))
    if len(anchors) == 3:
        ok = all(sub_g.has_edge(1, 2) for _ in (0,)) and len(sub_edges) == 3
        if not ok:
            return False, "anchor_subgraph_not_bilateration"
        a, b, c = (sub_fw.pos(v) for v in (1, 2, 3))
        if abs(cross2(b - a, c - a)) <= graphkit.CROSS_TOL:
            return False, "anchor_seed_collinear"
        return True, "ok"
    if graphkit.find_nondegenerate_ordering(sub_fw) is None:
        return False, "anchor_subgraph_not_bilateration"
    return True, "ok"


def localization_error(result: BlpResult, net: SensorNetwork) -> float:
    """Root-sum-square position error over the unknowns (NaN if any missing)."""
    diffs = result.positions[net.n_anchors:] - net.framework.config[net.n_anchors:]
    return float(np.sqrt(np.sum(diffs**2)))
