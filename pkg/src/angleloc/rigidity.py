"""Angle rigidity function, Jacobian, rank test, fixability and localizability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from angleloc import graphkit
from angleloc.core import (
    CoincidentPoints,
    COINCIDENCE_TOL,
    Framework,
    SensorNetwork,
    angle_index_set,
    cross2,
)

RANK_TOL = 1e-8
COLLINEAR_AREA_TOL = 1e-10

FIXABLE = "fixable_certified"
NOT_FIXABLE = "not_fixable"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class RigidityReport:
    jacobian_rank: int
    required_rank: int
    infinitesimally_rigid: bool
    singular_values: np.ndarray
    tolerance_used: float


@dataclass(frozen=True)
class FixabilityCertificate:
    status: str
    ordering: graphkit.BilaterationOrdering | None
    reason: str


def rigidity_function(fw: Framework) -> np.ndarray:
    """Vector of angle cosines g_ij . g_ik over the triple set, in index order."""
    triples = angle_index_set(fw.graph)
    out = np.empty(len(triples))
    for t, (i, j, k) in enumerate(triples):
        g_ij = _bearing(fw, i, j)
        g_ik = _bearing(fw, i, k)
        out[t] = g_ij @ g_ik
    return out


def _bearing(fw: Framework, i: int, j: int) -> np.ndarray:
    d = fw.pos(i) - fw.pos(j)
    nrm = float(np.linalg.norm(d))
    if nrm < COINCIDENCE_TOL:
        raise CoincidentPoints(f"vertices {i} and {j} coincide")
    return d / nrm


def rigidity_jacobian(fw: Framework) -> np.ndarray:
    """Analytic Jacobian of the rigidity function, |T_G| x 2n.

    Row for triple (i,j,k):
        d(g_ij.g_ik)/dp_i =  P_ij g_ik / d_ij + P_ik g_ij / d_ik
        d(g_ij.g_ik)/dp_j = -P_ij g_ik / d_ij
        d(g_ij.g_ik)/dp_k = -P_ik g_ij / d_ik
    with P_v = I - g_v g_v^T the projection off the bearing direction.
    """
    n = fw.graph.n
    triples = angle_index_set(fw.graph)
    J = np.zeros((len(triples), 2 * n))
    for t, (i, j, k) in enumerate(triples):
        dij = fw.pos(i) - fw.pos(j)
        dik = fw.pos(i) - fw.pos(k)
        nij = float(np.linalg.norm(dij))
        nik = float(np.linalg.norm(dik))
        if nij < COINCIDENCE_TOL or nik < COINCIDENCE_TOL:
            raise CoincidentPoints(f"degenerate triple {(i, j, k)}")
        g_ij = dij / nij
        g_ik = dik / nik
        u = (g_ik - (g_ij @ g_ik) * g_ij) / nij  # P_ij g_ik / d_ij
        v = (g_ij - (g_ij @ g_ik) * g_ik) / nik  # P_ik g_ij / d_ik
        J[t, 2 * i - 2: 2 * i] = u + v
        J[t, 2 * j - 2: 2 * j] = -u
        J[t, 2 * k - 2: 2 * k] = -v
    return J


def is_infinitesimally_angle_rigid(fw: Framework, tol: float = RANK_TOL) -> RigidityReport:
    """Rank test: rigid iff rank of the Jacobian equals 2n - 4."""
    if fw.graph.n < 3:
        raise ValueError("need at least 3 vertices")
    J = rigidity_jacobian(fw)
    if J.size == 0:
        sv = np.zeros(0)
        rank = 0
    else:
        sv = np.linalg.svd(J, compute_uv=False)
        # absolute floor: a numerically zero jacobian (e.g. all vertices
        # collinear) must not pass the relative test with full rank
        cutoff = tol * max(float(sv[0]), 1.0)
        rank = int(np.sum(sv > cutoff))
    required = 2 * fw.graph.n - 4
    return RigidityReport(rank, required, rank == required, sv, tol)


def trivial_motion_basis(fw: Framework) -> np.ndarray:
    """The 4 trivial infinitesimal motions: 2 translations, rotation, scaling."""
    n = fw.graph.n
    basis = np.zeros((4, 2 * n))
    basis[0, 0::2] = 1.0
    basis[1, 1::2] = 1.0
    for i in range(n):
        x, y = fw.config[i]
        basis[2, 2 * i] = -y
        basis[2, 2 * i + 1] = x
    basis[3] = fw.config.reshape(-1)
    return basis


def certify_angle_fixability(fw: Framework) -> FixabilityCertificate:
    """Sufficient condition via non-degenerate bilateration ordering; necessary
    condition via the infinitesimal rank test; otherwise inconclusive."""
    if fw.graph.n < 3:
        raise ValueError("need at least 3 vertices")
    ordering = graphkit.find_nondegenerate_ordering(fw)
    if ordering is not None:
        return FixabilityCertificate(FIXABLE, ordering, "non-degenerate bilateration ordering found")
    try:
        report = is_infinitesimally_angle_rigid(fw)
    except CoincidentPoints:
        return FixabilityCertificate(NOT_FIXABLE, None, "coincident adjacent vertices")
    if not report.infinitesimally_rigid:
        return FixabilityCertificate(
            NOT_FIXABLE, None,
            f"jacobian rank {report.jacobian_rank} < {report.required_rank}")
    return FixabilityCertificate(
        INCONCLUSIVE, None,
        "rank test passes but no non-degenerate bilateration ordering was found")


def anchors_noncollinear(net: SensorNetwork, tol: float = COLLINEAR_AREA_TOL) -> bool:
    """True when some anchor triple spans a triangle of area above tol."""
    if net.n_anchors < 3:
        return False
    pts = [net.framework.pos(i) for i in net.anchors]
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            for c in range(b + 1, len(pts)):
                area = 0.5 * abs(cross2(pts[b] - pts[a], pts[c] - pts[a]))
                if area > tol:
                    return True
    return False


def is_angle_localizable(net: SensorNetwork) -> tuple[bool, str]:
    """Angle localizable iff the grounded framework is certified fixable and
    the anchors are not all collinear."""
    if net.n_anchors < 1:
        raise ValueError("need at least one anchor")
    if not anchors_noncollinear(net):
        return False, "anchors_collinear"
    cert = certify_angle_fixability(net.grounded_framework())
    if cert.status == FIXABLE:
        return True, "ok"
    if cert.status == NOT_FIXABLE:
        return False, "not_angle_fixable"
    return False, "fixability_inconclusive"
