import math

import numpy as np
import pytest

from dsmfg.errors import RefusalError
from dsmfg.lattice import (CommonStateIndex, GridSpec, branch_weights,
                           enumerate_tree, martingale_rep)
from oracles import martingale_rep_dense


def grid_for(kappa, n_steps=4, dt=0.5):
    return GridSpec(n_steps=n_steps, dt=dt, kappa=kappa)


class TestGridSpec:
    def test_from_horizon(self):
        g = GridSpec.from_horizon(2.0, 96, 2.0)
        assert g.dt == 2.0 / 96
        assert g.n_steps * g.dt == pytest.approx(2.0, abs=1e-15)
        assert g.kappa == pytest.approx(math.exp(-2.0 * 2.0 / 96))

    def test_kappa_one_iff_no_jumps(self):
        assert GridSpec.from_horizon(1.0, 10, 0.0).kappa == 1.0
        assert GridSpec.from_horizon(1.0, 10, 0.5).kappa < 1.0

    @pytest.mark.parametrize("kwargs", [
        dict(n_steps=0, dt=0.1, kappa=0.9),
        dict(n_steps=4, dt=0.0, kappa=0.9),
        dict(n_steps=4, dt=0.1, kappa=0.0),
        dict(n_steps=4, dt=0.1, kappa=1.5),
    ])
    def test_rejects_bad_fields(self, kwargs):
        with pytest.raises(ValueError):
            GridSpec(**kwargs)

    def test_branch_increments_order(self):
        g = grid_for(0.96)
        incs = g.branch_increments()
        assert [i.eps for i in incs] == [1, -1, 1, -1]
        assert [i.is_jump for i in incs] == [False, False, True, True]
        assert incs[0].eta == pytest.approx(-0.04)
        assert incs[2].eta == pytest.approx(0.96)


class TestBranchWeights:
    def test_degenerate_kappa_one(self):
        assert np.allclose(branch_weights(grid_for(1.0)), [0.5, 0.5, 0.0, 0.0])

    def test_kappa_096(self):
        assert np.allclose(branch_weights(grid_for(0.96)), [0.48, 0.48, 0.02, 0.02])

    @pytest.mark.parametrize("kappa", [0.2, 0.5, 0.9591, 1.0])
    def test_total_probability(self, kappa):
        assert branch_weights(grid_for(kappa)).sum() == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("kappa", [0.3, 0.77, 0.96])
    def test_orthogonality_by_enumeration(self, kappa):
        g = grid_for(kappa)
        w = branch_weights(g)
        eps = np.array([i.eps for i in g.branch_increments()], dtype=float)
        eta = np.array([i.eta for i in g.branch_increments()])
        mu = eps * eta
        for x in (eps, eta, mu, eps * eta, eps * mu, eta * mu):
            assert abs(w @ x) < 1e-14 or x is None
        assert w @ (eps * eps) == pytest.approx(1.0)
        assert w @ (eta * eta) == pytest.approx(kappa * (1 - kappa), abs=1e-14)


class TestMartingaleRep:
    def test_constant(self):
        rep = martingale_rep([3.5] * 4, grid_for(0.9))
        assert (rep.mean, rep.z, rep.u, rep.v) == (3.5, 0.0, 0.0, 0.0)

    def test_eps_basis(self):
        g = grid_for(0.9, n_steps=16)
        rep = martingale_rep([1.0, -1.0, 1.0, -1.0], g)
        assert rep.mean == pytest.approx(0.0, abs=1e-14)
        assert rep.z == pytest.approx(4.0)
        assert rep.u == pytest.approx(0.0, abs=1e-14)
        assert rep.v == pytest.approx(0.0, abs=1e-14)

    def test_eta_basis(self):
        g = grid_for(0.9)
        k = g.kappa
        rep = martingale_rep([k - 1, k - 1, k, k], g)
        assert rep.mean == pytest.approx(0.0, abs=1e-14)
        assert rep.u == pytest.approx(1.0)
        assert rep.z == pytest.approx(0.0, abs=1e-14)
        assert rep.v == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_solve_and_reconstructs(self, seed):
        rng = np.random.default_rng(seed)
        g = grid_for(0.8 + 0.04 * seed, n_steps=7)
        values = rng.normal(size=4) * 10
        rep = martingale_rep(values, g)
        dense = martingale_rep_dense(values, g)
        assert np.allclose([rep.mean, rep.z, rep.u, rep.v], dense, rtol=1e-12)
        back = rep.branch_values(g)
        scale = np.maximum(np.abs(values), 1.0)
        assert np.all(np.abs(back - values) <= 1e-12 * scale)

    def test_mean_is_weighted_expectation(self):
        g = grid_for(0.85)
        values = [2.0, -1.0, 5.0, 0.5]
        rep = martingale_rep(values, g)
        assert rep.mean == pytest.approx(branch_weights(g) @ values)

    def test_rejects_non_finite_naming_branch(self):
        with pytest.raises(ValueError, match="branch 2"):
            martingale_rep([1.0, 2.0, float("nan"), 4.0], grid_for(0.9))


class TestEnumerateTree:
    def test_single_step(self):
        g = grid_for(0.9)
        paths = list(enumerate_tree(g, 1))
        assert len(paths) == 4
        assert np.allclose(sorted(p.prob for p in paths),
                           sorted(branch_weights(g)))

    def test_kappa_one_prunes_jumps(self):
        g = grid_for(1.0)
        paths = list(enumerate_tree(g, 2))
        assert len(paths) == 4
        assert all(p.prob == pytest.approx(0.25) for p in paths)
        assert not any(any(p.jumps) for p in paths)

    def test_three_steps_probability_sum(self):
        g = grid_for(0.93)
        paths = list(enumerate_tree(g, 3))
        assert len(paths) == 64
        assert sum(p.prob for p in paths) == pytest.approx(1.0, abs=1e-12)

    def test_player_branches(self):
        g = grid_for(0.9)
        paths = list(enumerate_tree(g, 2, include_player=True))
        assert len(paths) == 64  # 8 branches per step
        assert sum(p.prob for p in paths) == pytest.approx(1.0, abs=1e-12)

    def test_cap_refusal(self):
        with pytest.raises(RefusalError, match="10"):
            list(enumerate_tree(grid_for(0.9), 11))


class TestCommonStateIndex:
    def test_r_index_encoding(self):
        assert CommonStateIndex(k=3, m=1, r=None).r_index == 0
        assert CommonStateIndex(k=3, m=1, r=0).r_index == 1
        assert CommonStateIndex(k=5, m=2, r=4).r_index == 5
