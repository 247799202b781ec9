import math
from collections import defaultdict

import numpy as np
import pytest

from dsmfg.dynamics import (ModelParams, jump_age_update, mean_q_curve,
                            simulate_common_batch, simulate_common_path,
                            simulate_player_path, write_common_csv)
from dsmfg.errors import RefusalError
from dsmfg.plotting import read_table


def base_params(**over):
    kw = dict(A=150.0, C=80.0, K=50.0, theta=0.125, T=2.0, lambda0=2.0,
              sigma=0.56, sigma0=0.31, sigma_st=0.31, q0=0.5, q0_st=0.5, s0=-0.5)
    kw.update(over)
    return ModelParams(**kw)


class TestModelParams:
    @pytest.mark.parametrize("over", [
        dict(A=0.0), dict(C=-1.0), dict(K=-1.0), dict(p1=-0.1), dict(f1=-2.0),
        dict(h2=-1.0), dict(pi=1.2), dict(theta=3.0), dict(lambda0=-1.0),
        dict(sigma=-0.1),
    ])
    def test_validation(self, over):
        with pytest.raises(ValueError):
            base_params(**over)

    def test_s0_distribution(self):
        p = base_params(s0=((-1.0, 0.25), (1.0, 0.75)))
        assert p.s0_mean() == pytest.approx(0.5)
        assert p.s0_second_moment() == pytest.approx(1.0)
        rng = np.random.default_rng(0)
        draws = p.sample_s0(rng, size=4000)
        assert set(np.unique(draws)) == {-1.0, 1.0}
        assert np.mean(draws) == pytest.approx(0.5, abs=0.06)

    def test_s0_bad_weights(self):
        with pytest.raises(ValueError):
            base_params(s0=((0.0, 0.4), (1.0, 0.4)))


class TestCommonPath:
    def test_degenerate_walk_is_constant(self):
        p = base_params(sigma0=0.0, mu=0.0)
        c = simulate_common_path(p, p.grid(16), seed=1)
        assert np.all(c.q_hat == p.q0)

    def test_no_jumps_when_lambda0_zero(self):
        p = base_params(lambda0=0.0)
        g = p.grid(16)
        c = simulate_common_path(p, g, seed=2)
        assert np.allclose(c.R, 2 * p.theta + np.arange(17) * g.dt)
        assert not c.J.any()

    def test_huge_intensity_forces_immediate_jump(self):
        # kappa ~ 1e-9: the one-step jump probability is 1 - kappa
        p = base_params(lambda0=9.0 * 48 * math.log(10))
        g = p.grid(16)
        for seed in range(60):
            c = simulate_common_path(p, g, seed=seed)
            assert c.is_jump[0] and c.R[1] == 0.0 and c.J[1] == 1

    def test_activation_flag_matches_age(self):
        p = base_params()
        for seed in range(10):
            c = simulate_common_path(p, p.grid(48), seed=seed)
            assert np.array_equal(c.J == 1, c.R <= p.theta)

    def test_activation_window_length(self):
        # theta = 3h, dt = 0.5h: ages 0, 0.5, ..., 3.0 stay active: 7 steps
        p = base_params(theta=3.0, T=48.0, lambda0=2.0 / 24.0)
        g = p.grid(96)
        streak = np.zeros(97, dtype=int)
        r = 2 * p.theta
        streak[0] = r <= p.theta
        r = jump_age_update(r, True, g)
        count = int(r <= p.theta)
        for _ in range(12):
            r = jump_age_update(r, False, g)
            count += int(r <= p.theta)
        assert count == 7

    def test_jump_age_update_examples(self):
        g = base_params(T=48.0, theta=3.0).grid(96)
        assert jump_age_update(5.0, True, g) == 0.0
        assert jump_age_update(5.0, False, g) == 5.5
        with pytest.raises(ValueError):
            jump_age_update(-1.0, False, g)

    def test_refuses_coarse_grid(self):
        p = base_params(sigma0=5.0)
        with pytest.raises(RefusalError, match="refine"):
            simulate_common_path(p, p.grid(4), seed=0)

    def test_recombination_exact(self):
        p = base_params()
        g = p.grid(6)
        groups = defaultdict(set)
        for seed in range(200):
            c = simulate_common_path(p, g, seed=seed)
            groups[int(c.m_count[6])].add(float(c.q_hat[6]))
        collisions = [vals for vals in groups.values() if len(vals) >= 1]
        assert any(len(v) == 1 for v in collisions)
        for vals in groups.values():
            assert len(vals) == 1  # equal up-move counts give identical values

    def test_mean_consistency(self):
        p = base_params(mu=0.3)
        g = p.grid(24)
        b = simulate_common_batch(p, g, seed=3, n_paths=10000)
        for k in (6, 12, 24):
            se = np.std(b.q_hat[:, k], ddof=1) / math.sqrt(b.n_paths)
            assert abs(np.mean(b.q_hat[:, k]) - b.mean_q[k]) <= 3 * se
        assert np.allclose(b.mean_q, mean_q_curve(p, g))

    def test_batch_matches_shapes(self):
        p = base_params()
        g = p.grid(12)
        b = simulate_common_batch(p, g, seed=5, n_paths=7)
        assert b.q_hat.shape == (7, 13)
        assert np.array_equal(b.J == 1, b.R <= p.theta)


class TestPlayerPath:
    def test_no_idiosyncratic_noise_tracks_projection(self):
        p = base_params(sigma=0.0)
        g = p.grid(20)
        c = simulate_common_path(p, g, seed=4)
        pl = simulate_player_path(c, p, g, seed=11)
        assert np.allclose(pl.q, c.q_hat, rtol=1e-14)

    def test_fully_degenerate_constant(self):
        p = base_params(sigma=0.0, sigma0=0.0, mu=0.0)
        g = p.grid(20)
        c = simulate_common_path(p, g, seed=4)
        pl = simulate_player_path(c, p, g, seed=11)
        assert np.all(pl.q == p.q0)

    def test_grid_mismatch_refusal(self):
        p = base_params()
        c = simulate_common_path(p, p.grid(10), seed=0)
        with pytest.raises(RefusalError, match="grid"):
            simulate_player_path(c, p, p.grid(20), seed=0)

    def test_player_mean_matches_projection(self):
        # propagation-of-chaos sanity: average of q over many players at a
        # fixed common path matches q_hat within 3 standard errors
        p = base_params()
        g = p.grid(8)
        c = simulate_common_path(p, g, seed=9)
        qs = np.array([simulate_player_path(c, p, g, seed=9, player_index=i).q
                       for i in range(10000)])
        for k in (4, 8):
            se = np.std(qs[:, k], ddof=1) / math.sqrt(qs.shape[0])
            assert abs(np.mean(qs[:, k]) - c.q_hat[k]) <= 3 * se

    def test_exchangeability_under_seed_swap(self):
        p = base_params()
        g = p.grid(16)
        c = simulate_common_path(p, g, seed=21)
        a = [simulate_player_path(c, p, g, seed=100, player_index=i).q[-1] for i in range(3000)]
        b = [simulate_player_path(c, p, g, seed=101, player_index=i).q[-1] for i in range(3000)]
        se = math.hypot(np.std(a, ddof=1), np.std(b, ddof=1)) / math.sqrt(3000)
        assert abs(np.mean(a) - np.mean(b)) <= 4 * se

    def test_determinism_per_index(self):
        p = base_params()
        g = p.grid(16)
        c = simulate_common_path(p, g, seed=21)
        p1 = simulate_player_path(c, p, g, seed=5, player_index=3)
        p2 = simulate_player_path(c, p, g, seed=5, player_index=3)
        assert np.array_equal(p1.q, p2.q) and p1.s0 == p2.s0


class TestSerialization:
    def test_common_csv_round_trip(self, tmp_path):
        p = base_params()
        g = p.grid(12)
        c = simulate_common_path(p, g, seed=8)
        path = tmp_path / "common.csv"
        with open(path, "w", newline="") as f:
            write_common_csv(c, f)
        table = read_table(path)
        assert list(table) == ["k", "t", "eps", "eta", "q_hat", "q_st", "R", "J", "mean_q"]
        assert np.array_equal(table["q_hat"], c.q_hat)
        assert np.array_equal(table["R"], c.R)
        assert np.array_equal(table["eps"][1:], c.eps.astype(float))
