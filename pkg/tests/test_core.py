import json

import numpy as np
import pytest

import angleloc as al
from angleloc import core


def triangle_framework():
    g = al.Graph.from_edges(3, [(1, 2), (1, 3), (2, 3)])
    side = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    return al.Framework(g, side)


def small_network(frame_seed=3):
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.8], [1.1, 0.9], [0.4, 1.6]])
    g = al.Graph.from_edges(5, [(1, 2), (1, 3), (2, 3), (2, 4), (3, 4), (3, 5), (4, 5)])
    return al.make_network(al.Framework(g, pos), 3, frame_seed=frame_seed)


class TestGraph:
    def test_rejects_bad_edges(self):
        with pytest.raises(ValueError):
            al.Graph(3, frozenset({(3, 1)}))
        with pytest.raises(ValueError):
            al.Graph.from_edges(3, [(1, 1)])

    def test_canonicalizes(self):
        g = al.Graph.from_edges(3, [(2, 1), (3, 1)])
        assert g.has_edge(1, 2) and g.has_edge(2, 1)
        assert g.neighbors(1) == [2, 3]
        assert g.edge_list() == [(1, 2), (1, 3)]
        assert g.degree(1) == 2 and g.degree(2) == 1


class TestFramework:
    def test_shape_checked(self):
        g = al.Graph.from_edges(2, [(1, 2)])
        with pytest.raises(ValueError):
            al.Framework(g, np.zeros((3, 2)))
        with pytest.raises(ValueError):
            al.Framework(g, np.array([[0.0, 0.0], [np.inf, 0.0]]))

    def test_config_immutable(self):
        fw = triangle_framework()
        with pytest.raises(ValueError):
            fw.config[0, 0] = 5.0


class TestBearingsAndAngles:
    def test_bearing_unit(self):
        b = al.bearing([2.0, 0.0], [0.0, 0.0])
        assert np.allclose(b, [1.0, 0.0])

    def test_bearing_coincident(self):
        with pytest.raises(al.CoincidentPoints):
            al.bearing([1.0, 1.0], [1.0, 1.0])

    def test_angle_cosine_right_angle(self):
        assert al.angle_cosine([0, 0], [1, 0], [0, 1]) == pytest.approx(0.0)

    def test_angle_cosine_clamped(self):
        # nearly parallel rays may produce dot products epsilon above 1
        c = al.angle_cosine([0, 0], [1, 1e-300 + 1e-16], [1, 0])
        assert -1.0 <= c <= 1.0

    def test_triple_set_lex_order_and_j_less_k(self):
        g = al.Graph.from_edges(4, [(1, 2), (1, 3), (1, 4), (2, 3)])
        triples = al.angle_index_set(g)
        assert triples == sorted(triples)
        assert all(j < k for (_, j, k) in triples)
        # vertex 1 has degree 3 -> C(3,2)=3 triples at 1
        assert sum(1 for t in triples if t[0] == 1) == 3

    def test_grounded_graph_adds_anchor_clique(self):
        g = al.Graph.from_edges(4, [(1, 4), (2, 4), (3, 4)])
        hat = al.grounded_graph(g, [1, 2, 3])
        assert hat.has_edge(1, 2) and hat.has_edge(1, 3) and hat.has_edge(2, 3)
        assert hat.has_edge(1, 4)

    def test_edge_index_map_is_canonical(self):
        g = al.Graph.from_edges(3, [(2, 3), (1, 2)])
        assert core.edge_index_map(g) == {(1, 2): 1, (2, 3): 2}


class TestSensorNetwork:
    def test_anchor_subgraph_must_be_complete(self):
        g = al.Graph.from_edges(3, [(1, 3), (2, 3)])
        fw = al.Framework(g, np.array([[0, 0], [1, 0], [0, 1]], dtype=float))
        frames = np.stack([np.eye(2)] * 3)
        with pytest.raises(ValueError):
            al.SensorNetwork(fw, 2, g, frames, np.zeros((3, 2)))

    def test_frames_orthogonal_checked(self):
        net = small_network()
        bad = net.frames.copy()
        bad[0] = [[1.0, 0.1], [0.0, 1.0]]
        with pytest.raises(ValueError):
            al.SensorNetwork(net.framework, net.n_anchors, net.grounded, bad, net.offsets)

    def test_partition(self):
        net = small_network()
        assert list(net.anchors) == [1, 2, 3]
        assert list(net.unknowns) == [4, 5]
        assert net.n_unknowns == 2

    def test_local_bearing_frame_invariance(self):
        # inter-edge cosines are invariant under each sensor's O(2) frame
        a = small_network(frame_seed=1)
        b = small_network(frame_seed=99)
        for (i, j, k) in al.angle_index_set(a.grounded):
            va = al.local_bearing(a, i, j) @ al.local_bearing(a, i, k)
            vb = al.local_bearing(b, i, j) @ al.local_bearing(b, i, k)
            assert va == pytest.approx(vb, abs=1e-12)


class TestSynthesis:
    def test_exact_matches_geometry(self):
        net = small_network()
        data = al.synthesize_measurements(net, al.Exact())
        for t, (i, j, k) in enumerate(data.triples):
            expected = al.angle_cosine(net.framework.pos(i), net.framework.pos(j),
                                       net.framework.pos(k))
            assert data.values[t] == pytest.approx(expected, abs=1e-14)

    def test_gaussian_reproducible_and_annotated(self):
        net = small_network()
        d1 = al.synthesize_measurements(net, al.Gaussian(0.005), seed=5)
        d2 = al.synthesize_measurements(net, al.Gaussian(0.005), seed=5)
        d3 = al.synthesize_measurements(net, al.Gaussian(0.005), seed=6)
        assert np.array_equal(d1.values, d2.values)
        assert not np.array_equal(d1.values, d3.values)
        assert np.all(d1.sigmas == 0.005)

    def test_bounded_intervals_contain_truth(self):
        net = small_network()
        regime = al.Bounded(0.01)
        assert regime.half_width == pytest.approx(0.0201)
        data = al.synthesize_measurements(net, regime, seed=2)
        lo, hi = data.intervals
        assert np.all(lo <= data.true_values) and np.all(data.true_values <= hi)
        assert np.max(np.abs(data.values - data.true_values)) <= regime.half_width

    def test_bounded_deviation_respects_half_width_across_seeds(self):
        net = small_network()
        for seed in range(20):
            data = al.synthesize_measurements(net, al.Bounded(0.01), seed=seed)
            assert np.max(np.abs(data.values - data.true_values)) <= 0.0201

    def test_shared_disturbance_field(self):
        net = small_network()
        a = core.sample_bearing_disturbances(net, 0.01, seed=9)
        b = core.sample_bearing_disturbances(net, 0.01, seed=9)
        for key in a:
            assert np.array_equal(a[key], b[key])
            assert np.linalg.norm(a[key]) <= 0.01


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        net = small_network()
        path = tmp_path / "net.json"
        al.save_network(net, path)
        loaded = al.load_network(path)
        assert loaded.n == net.n and loaded.n_anchors == net.n_anchors
        assert np.allclose(loaded.framework.config, net.framework.config)
        assert loaded.framework.graph.edges == net.framework.graph.edges
        assert np.allclose(loaded.frames, net.frames, atol=1e-12)

    def test_invalid_json_diagnostic(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(al.NetworkFormatError, match="invalid JSON"):
            al.load_network(path)

    def test_field_level_diagnostics(self, tmp_path):
        net = small_network()
        path = tmp_path / "net.json"
        al.save_network(net, path)
        doc = json.loads(path.read_text())
        doc["edges"].append(doc["edges"][0])
        path.write_text(json.dumps(doc))
        with pytest.raises(al.NetworkFormatError, match="duplicate edge"):
            al.load_network(path)

    def test_id_gap_rejected(self, tmp_path):
        net = small_network()
        path = tmp_path / "net.json"
        al.save_network(net, path)
        doc = json.loads(path.read_text())
        doc["unknowns"][0]["id"] = 9
        path.write_text(json.dumps(doc))
        with pytest.raises(al.NetworkFormatError, match="ids must be exactly"):
            al.load_network(path)

    def test_non_orthogonal_frame_rejected(self, tmp_path):
        net = small_network()
        path = tmp_path / "net.json"
        al.save_network(net, path)
        doc = json.loads(path.read_text())
        doc["frames"]["1"] = [[1.0, 0.5], [0.0, 1.0]]
        path.write_text(json.dumps(doc))
        with pytest.raises(al.NetworkFormatError, match="not orthogonal"):
            al.load_network(path)
