"""Angle-based planar sensor network localization toolkit.

Localizes planar sensor networks from inter-edge angle measurements taken
in each sensor's local coordinate frame.  Provides rigidity/fixability
analysis, centralized semidefinite-programming solvers (exact, chordally
decomposed, noisy maximum-likelihood, bounded-disturbance), and a simulator
for the distributed bilateration localization protocol.
"""

from angleloc.core import (
    AngleData,
    Bounded,
    CoincidentPoints,
    Exact,
    Framework,
    Gaussian,
    Graph,
    NetworkFormatError,
    SensorNetwork,
    angle_cosine,
    angle_index_set,
    bearing,
    grounded_graph,
    load_network,
    local_bearing,
    make_network,
    save_network,
    synthesize_measurements,
)

__all__ = [
    "AngleData",
    "Bounded",
    "CoincidentPoints",
    "Exact",
    "Framework",
    "Gaussian",
    "Graph",
    "NetworkFormatError",
    "SensorNetwork",
    "angle_cosine",
    "angle_index_set",
    "bearing",
    "grounded_graph",
    "load_network",
    "local_bearing",
    "make_network",
    "save_network",
    "synthesize_measurements",
]

__version__ = "0.1.0"
