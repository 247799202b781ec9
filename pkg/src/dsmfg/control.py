"""Equilibrium assembly.

forward_common_control runs the feedback recursion for (S_hat, alpha_hat)
along a simulated common path; forward_player_control does the same for an
individual consumer's (S_star, alpha_star) given the F0-part b of psi;
nplayer_profile applies the strategy to n exchangeable players sharing one
common path.  alpha_hat is defined as the exact root of the projected coupling
relation, which keeps the projected residual at machine zero on the grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import bsde, riccati
from .dynamics import simulate_player_path
from .errors import RefusalError
from .riccati import PriceSpec, feedback_uv, individual_field_terms

TRAJECTORY_COLUMNS = (
    "k", "t", "q_hat", "q_st", "R", "J", "alpha_hat", "s_hat", "price",
    "q_i", "alpha_star_i", "s_star_i",
)


@dataclass
class EquilibriumTables:
    """Everything solved for one (params, grid, pricing mode)."""

    params: object
    grid: object
    price: PriceSpec
    phi: object
    phibar: object
    psibar: object
    a_coef: np.ndarray
    gamma: np.ndarray
    btables: object
    mode: str
    agg_double_f: bool = True

    def psi_affine(self, m_inner=256):
        return bsde.PsiAffine(a=self.a_coef, gamma=self.gamma, m_inner=m_inner)


def solve_equilibrium(params, grid, mode="MFG", agg_double_f=True,
                      phibar_method="quadratic"):
    price = PriceSpec.for_mode(params, mode, agg_double_f=agg_double_f)
    phi = riccati.solve_phi_ode(params, grid)
    phibar = riccati.solve_phibar(params, grid, price, method=phibar_method)
    psibar = bsde.solve_psibar(params, grid, price, phibar)
    a_coef = bsde.solve_a_coefficient(params, grid, phi)
    gamma = bsde.gamma_curve(params, grid, phi)
    btables = bsde.solve_b_tables(params, grid, price, phi, phibar, psibar)
    return EquilibriumTables(params=params, grid=grid, price=price, phi=phi,
                             phibar=phibar, psibar=psibar, a_coef=a_coef,
                             gamma=gamma, btables=btables, mode=mode,
                             agg_double_f=agg_double_f)


@dataclass
class ControlTrajectory:
    """One player's equilibrium trajectory on one common path."""

    alpha_hat: np.ndarray
    s_hat: np.ndarray
    alpha_star: np.ndarray
    s_star: np.ndarray
    psi_vals: np.ndarray
    k_theta: np.ndarray
    q_i: np.ndarray


def _table_lookups(common, tables):
    n = common.grid.n_steps
    phib = np.empty(n + 1)
    psib = np.empty(n + 1)
    for k in range(n + 1):
        phib[k] = tables.phibar.values[k][common.r_idx[k]]
        psib[k] = tables.psibar.values[k][common.m_count[k], common.r_idx[k]]
    return phib, psib


def forward_common_control(common, tables):
    """Fill (s_hat, alpha_hat) along the common path:
    alpha_hat_k is the root of the projected coupling relation at the node,
    S_hat advances by forward Euler from S_hat_0 = E[s0]."""
    if not common.grid.matches(tables.grid):
        raise RefusalError("common path and tables live on different grids")
    params, grid, price = tables.params, tables.grid, tables.price
    n, dt = grid.n_steps, grid.dt
    phib, psib = _table_lookups(common, tables)
    j = common.J.astype(float)
    u, v = feedback_uv(params, price, phib, psib, common.q_hat, common.q_st,
                       common.mean_q, j)
    s = np.empty(n + 1)
    s[0] = params.s0_mean()
    for k in range(n):
        s[k + 1] = s[k] + dt * (u[k] + v[k] * s[k])
    common.s_hat = s
    common.alpha_hat = u + v * s
    common.phibar_on_path = phib
    common.psibar_on_path = psib
    return common


def forward_common_batch(batch, tables):
    """Vectorized forward_common_control over a CommonBatch."""
    params, grid, price = tables.params, tables.grid, tables.price
    n, dt = grid.n_steps, grid.dt
    p = batch.n_paths
    u = np.empty((p, n + 1))
    v = np.empty((p, n + 1))
    for k in range(n + 1):
        phib = tables.phibar.values[k][batch.r_idx[:, k]]
        psib = tables.psibar.values[k][batch.m_count[:, k], batch.r_idx[:, k]]
        j = batch.J[:, k].astype(float)
        u[:, k], v[:, k] = feedback_uv(params, price, phib, psib,
                                       batch.q_hat[:, k], batch.q_st[:, k],
                                       batch.mean_q[k], j)
    s = np.empty((p, n + 1))
    s[:, 0] = params.s0_mean()
    for k in range(n):
        s[:, k + 1] = s[:, k] + dt * (u[:, k] + v[:, k] * s[:, k])
    batch.s_hat = s
    batch.alpha_hat = u + v * s
    return batch


def forward_player_control(player, common, tables, b_estimates):
    """Fill (psi, alpha_star, s_star) for one player.

    psi_k = a_k * q_k + b_k; alpha_star_k is the root of the individual
    coupling relation; S_star advances by forward Euler from the player's s0
    sample."""
    if common.alpha_hat is None:
        raise RefusalError("run forward_common_control first")
    if b_estimates is None:
        raise RefusalError("b estimates are required (lattice, nested MC, or tree)")
    params, grid, price = tables.params, tables.grid, tables.price
    n, dt = grid.n_steps, grid.dt
    b = np.asarray(b_estimates, dtype=float)
    if b.shape != (n + 1,):
        raise RefusalError(f"need one b estimate per grid time, got shape {b.shape}")
    psi = tables.a_coef * player.q + b
    j = common.J.astype(float)
    g0 = individual_field_terms(params, price, common.q_hat, common.q_st,
                                common.mean_q, j, common.alpha_hat)
    ak = params.A + params.K
    base = -(params.K * player.q + g0 + psi) / ak
    slope = -tables.phi.values / ak
    s = np.empty(n + 1)
    s[0] = player.s0
    for k in range(n):
        s[k + 1] = s[k] + dt * (base[k] + slope[k] * s[k])
    alpha = base + slope * s
    player.psi_on_path = psi
    player.alpha_star = alpha
    player.s_star = s
    return ControlTrajectory(alpha_hat=common.alpha_hat, s_hat=common.s_hat,
                             alpha_star=alpha, s_star=s, psi_vals=psi,
                             k_theta=price.k_theta(params, j), q_i=player.q)


def nplayer_profile(n_players, common, tables, b_estimates, seed):
    """Apply the equilibrium strategy to n exchangeable players sharing one
    common path; returns one ControlTrajectory per player."""
    out = []
    for i in range(n_players):
        player = simulate_player_path(common, tables.params, tables.grid, seed,
                                      player_index=i)
        out.append(forward_player_control(player, common, tables, b_estimates))
    return out


def projected_coupling_residual(common, tables):
    """A*ah + K*(qh+ah) + a0 + a_st*q_st + a1*(qh+ah) + (phibar*S_hat+psibar)
    + J*(f0 + f1*(qh - mean + ah - alpha_bar)); zero by construction."""
    if common.alpha_hat is None:
        raise RefusalError("run forward_common_control first")
    params, price = tables.params, tables.price
    ah = common.alpha_hat
    j = common.J.astype(float)
    return (params.A * ah + params.K * (common.q_hat + ah)
            + price.a0 + price.a_st * common.q_st + price.a1 * (common.q_hat + ah)
            + common.phibar_on_path * common.s_hat + common.psibar_on_path
            + j * (price.f0_eff + price.f1_eff * (common.q_hat - common.mean_q + ah - params.alpha_bar)))


def individual_coupling_residual(player, common, tables, psi=None):
    """Same relation for the individual control; psi defaults to the values
    stored on the player (pass an independently estimated psi to measure the
    b-estimator error)."""
    if player.alpha_star is None:
        raise RefusalError("run forward_player_control first")
    params, price = tables.params, tables.price
    if psi is None:
        psi = player.psi_on_path
    a = player.alpha_star
    j = common.J.astype(float)
    g0 = individual_field_terms(params, price, common.q_hat, common.q_st,
                                common.mean_q, j, common.alpha_hat)
    return (params.A * a + params.K * (player.q + a) + g0
            + tables.phi.values * player.s_star + psi)


def tree_fixed_point_residual(tables, cap=bsde.TREE_CAP):
    """Max over tree nodes of |E_idio[alpha_star] - alpha_hat|: the discrete
    projection/fixed-point residual.  The continuous-time identity
    alpha_hat = E[alpha_star | F0] holds only up to O(dt) for this first-order
    scheme, so the residual shrinks linearly with dt instead of vanishing."""
    tree = bsde.solve_psi_tree(tables, cap=cap)
    worst = 0.0
    for k in range(tables.grid.n_steps + 1):
        proj = tree.idio_average(tree.alpha_star[k], k)
        worst = max(worst, float(np.max(np.abs(proj - tree.c_alphahat[k]))))
    return worst


def price_on_path(common, tables):
    """Market price p0 + p1*(pi*q_st + (1-pi)*(q_hat + alpha_hat)) with the
    original coefficients, whatever mode produced the control."""
    params = tables.params
    return params.p0 + params.p1 * (params.pi * common.q_st
                                    + (1 - params.pi) * (common.q_hat + common.alpha_hat))


def write_trajectory_csv(common, traj, tables, fileobj):
    """Serialize one (common path, player) trajectory."""
    if traj.alpha_star is None:
        raise RefusalError("trajectory is missing the player side")
    w = csv.writer(fileobj)
    w.writerow(TRAJECTORY_COLUMNS)
    price = price_on_path(common, tables)
    grid = common.grid
    for k in range(grid.n_steps + 1):
        w.writerow([
            k, "%.17g" % (k * grid.dt),
            "%.17g" % common.q_hat[k], "%.17g" % common.q_st[k],
            "%.17g" % common.R[k], int(common.J[k]),
            "%.17g" % common.alpha_hat[k], "%.17g" % common.s_hat[k],
            "%.17g" % price[k], "%.17g" % traj.q_i[k],
            "%.17g" % traj.alpha_star[k], "%.17g" % traj.s_star[k],
        ])
