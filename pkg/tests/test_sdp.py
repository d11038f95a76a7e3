import dataclasses

import numpy as np
import pytest
from scipy.optimize import least_squares

import angleloc as al
from angleloc import experiment, sdp
from angleloc.core import synthesize_measurements


def one_unknown_network():
    """3 anchors and 1 unknown adjacent to all of them."""
    g = al.Graph.from_edges(4, [(1, 2), (1, 3), (2, 3), (1, 4), (2, 4), (3, 4)])
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.45, 0.85], [0.5, 0.3]])
    return al.make_network(al.Framework(g, pos), 3)


def acute_net(n=6, seed=0):
    return experiment.generate_network("acute_triangulated", n, 3, seed)


def tiny_program(rhs=5.0):
    return sdp.ConicProgram(
        blocks={"Y": 1},
        couplings=(sdp.Coupling({"Y": np.array([[1.0]])}, "eq", rhs),),
        fixed=(),
        cones={"Y": sdp.ConeSpec("psd")},
    )


class TestBuilders:
    def test_exact_dimensions(self):
        net = one_unknown_network()
        data = synthesize_measurements(net)
        prog = sdp.build_exact_program(net, data)
        assert prog.blocks == {"Y": 3, "D": 6}  # n_s + 2 and m
        # one row per triple plus one per edge
        assert len(prog.couplings) == len(data.triples) + 6
        assert all(c.sense == "eq" for c in prog.couplings)
        assert len(prog.fixed) == 4
        assert prog.rank_targets == {}

    def test_exact_requires_anchor(self):
        net = one_unknown_network()
        bare = al.SensorNetwork(net.framework, 0, net.framework.graph,
                                net.frames, net.offsets)
        with pytest.raises(sdp.EmptyAnchorSet):
            sdp.build_exact_program(bare, synthesize_measurements(bare))

    def test_exact_rejects_wrong_regime(self):
        net = one_unknown_network()
        data = synthesize_measurements(net, al.Gaussian(0.01), seed=1)
        with pytest.raises(ValueError):
            sdp.build_exact_program(net, data)

    def test_coupling_matrices_symmetric(self):
        net = acute_net()
        prog = sdp.build_exact_program(net, synthesize_measurements(net))
        for c in prog.couplings:
            for K in c.coeffs.values():
                assert np.array_equal(K, K.T)

    def test_disturbed_rows_and_target(self):
        net = one_unknown_network()
        data = synthesize_measurements(net, al.Bounded(0.01), seed=3)
        prog = sdp.build_disturbed_program(net, data)
        senses = [c.sense for c in prog.couplings]
        assert senses.count("ge") == len(data.triples)
        assert senses.count("le") == len(data.triples)
        assert senses.count("eq") == data.m
        assert prog.rank_targets == {"D": 1}

    def test_noisy_blocks_and_row_count(self):
        net = one_unknown_network()
        data = synthesize_measurements(net, al.Gaussian(0.005), seed=2)
        prog = sdp.build_noisy_program(net, data)
        n_t = len(data.triples)
        assert len(prog.blocks) == 2 + n_t
        assert all(prog.blocks[f"L{t}"] == 3 for t in range(n_t))
        # the builder enforces 2|T| + m + 4 rows internally; recheck here
        assert len(prog.couplings) + 4 == 2 * n_t + data.m + 4
        assert set(prog.objective) == {f"L{t}" for t in range(n_t)}
        assert prog.rank_targets["D"] == 1
        assert all(prog.rank_targets[f"L{t}"] == 1 for t in range(n_t))

    def test_apply_rank_mode(self):
        net = one_unknown_network()
        data = synthesize_measurements(net, al.Gaussian(0.005), seed=2)
        prog = sdp.build_noisy_program(net, data)
        assert sdp.apply_rank_mode(prog, "none").rank_targets == {}
        assert sdp.apply_rank_mode(prog, "d").rank_targets == {"D": 1}
        lam = sdp.apply_rank_mode(prog, "lambda").rank_targets
        assert "D" not in lam and all(k.startswith("L") for k in lam)
        assert sdp.apply_rank_mode(prog, "all").rank_targets == prog.rank_targets
        with pytest.raises(ValueError):
            sdp.apply_rank_mode(prog, "bogus")

    def test_asymmetric_coefficient_rejected(self):
        K = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(sdp.ProgramBuildError):
            sdp.ConicProgram(blocks={"Y": 2},
                             couplings=(sdp.Coupling({"Y": K}, "eq"),),
                             fixed=(), cones={"Y": sdp.ConeSpec("psd")})


class TestTruthWitness:
    @pytest.mark.parametrize("seed", range(5))
    def test_exact_program_feasible_at_truth(self, seed):
        net = acute_net(7, seed)
        data = synthesize_measurements(net)
        prog = sdp.build_exact_program(net, data)
        Y, D = sdp.assemble_truth(net, data)
        residual = sdp._primal_residual(prog, {"Y": Y, "D": D}, {})
        assert residual <= 1e-10

    def test_disturbed_program_feasible_at_truth(self):
        net = acute_net(7, 1)
        data = synthesize_measurements(net, al.Bounded(0.01), seed=4)
        prog = sdp.build_disturbed_program(net, data)
        Y, D = sdp.assemble_truth(net, data)
        residual = sdp._primal_residual(prog, {"Y": Y, "D": D}, {})
        assert residual <= 1e-10


class TestSolve:
    def test_scalar_equality(self):
        sol = sdp.solve(tiny_program(5.0))
        assert sol.status == "optimal"
        assert sol.blocks["Y"][0, 0] == pytest.approx(5.0, abs=1e-6)
        assert sol.primal_residual <= 1e-6

    def test_infeasible_detected(self):
        prog = sdp.ConicProgram(
            blocks={"Y": 1},
            couplings=(sdp.Coupling({"Y": np.array([[1.0]])}, "eq", 2.0),),
            fixed=(("Y", (0, 0), 1.0),),
            cones={"Y": sdp.ConeSpec("psd")},
        )
        sol = sdp.solve(prog)
        assert sol.status == "infeasible"
        with pytest.raises(ValueError):
            sdp.extract_positions(sol, one_unknown_network())

    def test_backends_agree(self):
        net = one_unknown_network()
        prog = sdp.build_exact_program(net, synthesize_measurements(net))
        a = sdp.solve(prog, solver="CLARABEL")
        b = sdp.solve(prog, solver="SCS", tol=1e-9)
        assert np.allclose(a.blocks["Y"], b.blocks["Y"], atol=1e-5)

    @pytest.mark.parametrize("seed", range(4))
    def test_exact_recovery(self, seed):
        net = acute_net(7, seed)
        data = synthesize_measurements(net)
        prog = sdp.build_exact_program(net, data)
        sol = sdp.solve(prog)
        est, diag = sdp.extract_positions(sol, net, prog)
        truth = net.framework.config[3:]
        assert diag.verdict == sdp.VERDICT_EXACT
        assert experiment.evaluate(truth, est) <= 1e-5
        assert diag.rank_y == 2 and diag.rank_d == 1
        assert diag.rank_z >= 3
        assert diag.gram_residual <= 1e-6


class TestDecomposition:
    def test_requires_yd_blocks(self):
        with pytest.raises(sdp.NotDecomposable):
            sdp.decompose_program(tiny_program(), one_unknown_network())

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_full_solution(self, seed):
        net = acute_net(8, seed)
        data = synthesize_measurements(net)
        prog = sdp.build_exact_program(net, data)
        dec = sdp.decompose_program(prog, net)
        assert dec.meta["decomposed"]
        assert dec.cones["Y"].kind == "cliques"
        assert dec.cones["D"].kind == "cliques"  # acute-triangulated input
        full_est, full_diag = sdp.extract_positions(sdp.solve(prog), net, prog)
        dec_sol = sdp.solve(dec)
        dec_est, dec_diag = sdp.extract_positions(dec_sol, net, dec)
        assert np.max(np.abs(full_est - dec_est)) <= 1e-6
        assert dec_diag.verdict == sdp.VERDICT_EXACT
        assert dec_diag.clique_ranks is not None
        assert all(r == 1 for r in dec_diag.clique_ranks["D"])

    def test_clique_cover_spans_all_indices(self):
        net = acute_net(9, 5)
        prog = sdp.build_exact_program(net, synthesize_measurements(net))
        dec = sdp.decompose_program(prog, net)
        covered = set()
        for cl in dec.cones["Y"].cliques:
            covered |= set(cl)
        assert covered == set(range(prog.blocks["Y"]))


class TestRankMinimization:
    def test_noop_when_already_low_rank(self):
        net = acute_net(6, 2)
        data = synthesize_measurements(net, al.Bounded(0.0001), seed=1)
        prog = sdp.build_disturbed_program(net, data)
        sol = sdp.iterative_rank_minimization(prog)
        assert sol.rank_trace is not None
        assert sol.rank_trace[-1] < 1e-6

    def test_disturbed_improves_over_relaxation(self):
        net = acute_net(6, 3)
        data = synthesize_measurements(net, al.Bounded(0.01), seed=7)
        prog = sdp.build_disturbed_program(net, data)
        truth = net.framework.config[3:]
        relaxed = sdp.solve(dataclasses.replace(prog, rank_targets={}))
        base_est, _ = sdp.extract_positions(relaxed, net, prog)
        sol = sdp.iterative_rank_minimization(prog)
        est, diag = sdp.extract_positions(sol, net, prog)
        assert diag.rank_d == 1
        assert experiment.evaluate(truth, est) <= experiment.evaluate(truth, base_est) + 1e-9

    def test_noisy_zero_noise_recovers_truth(self):
        net = acute_net(6, 4)
        data = synthesize_measurements(net, al.Gaussian(0.005), seed=0)
        clean = dataclasses.replace(data, values=data.true_values)
        prog = sdp.build_noisy_program(net, clean)
        sol = sdp.iterative_rank_minimization(prog)
        est, _ = sdp.extract_positions(sol, net, prog)
        assert experiment.evaluate(net.framework.config[3:], est) <= 1e-5

    def test_no_convergence_carries_trace(self):
        net = acute_net(6, 3)
        data = synthesize_measurements(net, al.Bounded(0.01), seed=7)
        prog = sdp.build_disturbed_program(net, data)
        with pytest.raises(sdp.NoConvergence) as info:
            sdp.iterative_rank_minimization(prog, max_outer=1, eps=1e-300)
        assert len(info.value.trace) >= 1
        assert info.value.last_solution is not None


class TestOracleAgreement:
    def test_matches_nonlinear_least_squares(self):
        net = one_unknown_network()
        data = synthesize_measurements(net)
        prog = sdp.build_exact_program(net, data)
        est, diag = sdp.extract_positions(sdp.solve(prog), net, prog)
        assert diag.verdict == sdp.VERDICT_EXACT

        def residuals(x):
            cfg = net.framework.config.copy()
            cfg[3] = x
            return np.array([
                al.angle_cosine(cfg[i - 1], cfg[j - 1], cfg[k - 1]) - data.values[t]
                for t, (i, j, k) in enumerate(data.triples)])

        best = None
        rng = np.random.default_rng(0)
        for _ in range(10):
            fit = least_squares(residuals, rng.uniform(0.0, 1.0, 2))
            if best is None or fit.cost < best.cost:
                best = fit
        assert np.max(np.abs(best.x - est[0])) <= 1e-5


class TestZMatrix:
    def test_block_diagonal_view(self):
        net = one_unknown_network()
        prog = sdp.build_exact_program(net, synthesize_measurements(net))
        sol = sdp.solve(prog)
        Z = sdp.z_matrix(sol)
        assert Z.shape == (3 + 6, 3 + 6)
        assert np.array_equal(Z[:3, :3], sol.blocks["Y"])
        assert np.array_equal(Z[3:, 3:], sol.blocks["D"])
        assert np.all(Z[:3, 3:] == 0.0)


class TestRank1Completion:
    def test_completes_missing_entry(self):
        v = np.array([1.0, 2.0, 3.0])
        M = np.outer(v, v)
        M[1, 2] = M[2, 1] = np.nan
        out = sdp.complete_rank1_psd_3x3(M)
        assert out[1, 2] == pytest.approx(6.0)
        assert np.linalg.matrix_rank(out, tol=1e-9) == 1

    def test_requires_exactly_one_missing(self):
        M = np.outer([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            sdp.complete_rank1_psd_3x3(M)
        M[0, 1] = M[0, 2] = np.nan
        with pytest.raises(ValueError):
            sdp.complete_rank1_psd_3x3(M)

    def test_rejects_rank2_block(self):
        M = np.diag([1.0, 1.0, 1.0])
        M[1, 2] = M[2, 1] = np.nan
        with pytest.raises(sdp.PreconditionViolated):
            sdp.complete_rank1_psd_3x3(M)

    def test_rejects_indefinite_block(self):
        v = np.array([1.0, 2.0, 3.0])
        M = np.outer(v, v)
        M[0, 1] = M[1, 0] = -10.0  # the known 2x2 block through row 0 turns indefinite
        M[1, 2] = M[2, 1] = np.nan
        with pytest.raises(sdp.PreconditionViolated):
            sdp.complete_rank1_psd_3x3(M)

    def test_rejects_bad_diagonal(self):
        M = np.outer([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        M[1, 2] = M[2, 1] = np.nan
        M[0, 0] = -1.0
        with pytest.raises(sdp.PreconditionViolated):
            sdp.complete_rank1_psd_3x3(M)
