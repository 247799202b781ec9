"""Linear BSDE layer.

psibar lives on the (k, m, r) lattice and is solved by backward induction with
the same four-branch conditional expectation as the Riccati table; the node
value solves the scalar linear implicit equation
psi * (1 + dt*c) = E[psi'] - dt*c*G with c = phibar(k, r) / Ktheta(k, r).

The individual psi is reduced to the exact affine split psi = a * q + b:

* a is deterministic and satisfies the backward recursion obtained by matching
  the q-coefficient of the implicit discrete recursion,
      a_k = (a_{k+1} * (1 + dt*mu) - dt*c_k*K) / (1 + dt*c_k),
  c_k = phi_k / (A + K);
* b is the F0-part, a conditional expectation of a path functional of the
  common noise.  Three interchangeable routes compute it: nested Monte Carlo
  (estimate_b), exhaustive enumeration of the remaining common tree (exact_b),
  and an exact lattice representation b = beta0(k, m, r) + betaS(k, r) * S_hat
  obtained by unrolling the affine dependence of the driver on S_hat
  (solve_b_tables); the last is what the batch cost evaluators use.

solve_psi_tree performs exact backward induction of the individual equation on
the unrecombined 8-branch tree and is used only as a small-n oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import lattice_level, mean_q_curve, step_factors
from .errors import RefusalError
from .lattice import BRANCH_EPS, BRANCH_JUMP, branch_weights
from .riccati import feedback_uv, individual_field_terms, j_flags
from .seeding import stream

TREE_CAP = 8
ENUM_CAP = 10


@dataclass
class PsiBarTable:
    """psibar on the (k, m, r) lattice: values[k][m, r_index]."""

    params: object
    grid: object
    price: object
    values: list

    def value(self, k, m, r_index):
        return self.values[k][m, r_index]

    def iter_rows(self):
        """Yield (k, m, r, value) with r = -1 encoding the never-jumped state."""
        for k, mat in enumerate(self.values):
            for m in range(mat.shape[0]):
                for idx in range(mat.shape[1]):
                    yield k, m, idx - 1, mat[m, idx]

    def successor_rep(self, k, m, r_index):
        """Martingale integrands of the one-step-ahead values at node
        (k, m, r), in canonical branch order."""
        from .lattice import martingale_rep

        succ = self.values[k + 1]
        adv = _advance_index(k)[r_index]
        branch_vals = [succ[m + 1, adv], succ[m, adv], succ[m + 1, 1], succ[m, 1]]
        return martingale_rep(branch_vals, self.grid)


def _advance_index(k):
    return np.concatenate(([0], np.arange(2, k + 2)))


def _branch_expectation(succ, k, kappa):
    """Four-branch conditional expectation of a (m, r)-indexed successor array."""
    adv = _advance_index(k)
    up = succ[1:, :]
    dn = succ[:-1, :]
    no_jump = 0.5 * (up[:, adv] + dn[:, adv])
    jump = 0.5 * (up[:, 1] + dn[:, 1])[:, None]
    return kappa * no_jump + (1.0 - kappa) * jump


def driver_g_lattice(params, grid, price, k):
    """G(k, m, r) = a0 + a_st*q_st + (a1 + K)*q_hat
    + J*(f0 + f1*(q_hat - mean_q - alpha_bar)) on the step-k lattice slice."""
    q_hat, q_st = lattice_level(params, grid, k)
    mean_k = mean_q_curve(params, grid)[k]
    jrow = j_flags(params, grid, k).astype(float)
    return (price.a0 + price.a_st * q_st[:, None]
            + (price.a1 + params.K) * q_hat[:, None]
            + jrow[None, :] * (price.f0_eff + price.f1_eff * (q_hat[:, None] - mean_k - params.alpha_bar)))


def solve_psibar(params, grid, price, phibar):
    """Backward induction for psibar over (k, m, r)."""
    if not grid.matches(phibar.grid):
        raise RefusalError("phibar was solved on a different grid")
    n, dt, kappa = grid.n_steps, grid.dt, grid.kappa
    values = [None] * (n + 1)
    values[n] = np.full((n + 1, n + 1), float(params.h1))
    for k in range(n - 1, -1, -1):
        expected = _branch_expectation(values[k + 1], k, kappa)
        jrow = j_flags(params, grid, k).astype(float)
        c = phibar.row(k) / price.k_theta(params, jrow)
        denom = 1.0 + dt * c
        if np.min(denom) <= 0.0:
            raise RefusalError(f"implicit step not solvable at k={k}: 1 + dt*c <= 0")
        g = driver_g_lattice(params, grid, price, k)
        values[k] = (expected - dt * c[None, :] * g) / denom[None, :]
    return PsiBarTable(params=params, grid=grid, price=price, values=values)


def solve_a_coefficient(params, grid, phi):
    """Deterministic q-coefficient of psi = a*q + b; a_n = 0."""
    n, dt = grid.n_steps, grid.dt
    c = phi.values / (params.A + params.K)
    a = np.zeros(n + 1)
    for k in range(n - 1, -1, -1):
        a[k] = (a[k + 1] * (1.0 + dt * params.mu) - dt * c[k] * params.K) / (1.0 + dt * c[k])
    return a


def gamma_curve(params, grid, phi):
    """Exact discrete discount of the implicit recursion:
    Gamma_0 = 1, Gamma_{k+1} = Gamma_k / (1 + dt * phi_k / (A + K))."""
    n, dt = grid.n_steps, grid.dt
    c = phi.values / (params.A + params.K)
    gamma = np.empty(n + 1)
    gamma[0] = 1.0
    for k in range(n):
        gamma[k + 1] = gamma[k] / (1.0 + dt * c[k])
    return gamma


@dataclass
class PsiAffine:
    """Affine reduction psi = a * q + b with its discount curve and the
    inner-sampler configuration."""

    a: np.ndarray
    gamma: np.ndarray
    m_inner: int = 256


@dataclass
class BTables:
    """Exact lattice representation of the F0-part:
    b_k = beta0[k][m, r] + betaS[k][r] * S_hat_k."""

    params: object
    grid: object
    price: object
    beta0: list
    betaS: list


def solve_b_tables(params, grid, price, phi, phibar, psibar):
    """Backward sweep for (beta0, betaS).

    The driver's dependence on alpha_hat = u(k, m, r) + v(k, r) * S_hat and the
    one-step update S_hat' = S_hat * (1 + dt*v) + dt*u keep b affine in S_hat
    with an r-only slope, which this solver propagates exactly."""
    n, dt, kappa = grid.n_steps, grid.dt, grid.kappa
    c = phi.values / (params.A + params.K)
    mean = mean_q_curve(params, grid)
    beta0 = [None] * (n + 1)
    betaS = [None] * (n + 1)
    beta0[n] = np.full((n + 1, n + 1), float(params.h1))
    betaS[n] = np.zeros(n + 1)
    for k in range(n - 1, -1, -1):
        adv = _advance_index(k)
        bs_succ = betaS[k + 1]
        bs_bar = kappa * bs_succ[adv] + (1.0 - kappa) * bs_succ[1]
        b0_bar = _branch_expectation(beta0[k + 1], k, kappa)
        jrow = j_flags(params, grid, k).astype(float)
        q_hat, q_st = lattice_level(params, grid, k)
        u, v = feedback_uv(params, price, phibar.row(k)[None, :], psibar.values[k],
                           q_hat[:, None], q_st[:, None], mean[k], jrow[None, :])
        w = price.a1 + price.f1_eff * jrow
        g0 = (price.a0 + price.a_st * q_st[:, None] + price.a1 * q_hat[:, None]
              + jrow[None, :] * (price.f0_eff + price.f1_eff * (q_hat[:, None] - mean[k] - params.alpha_bar)))
        vrow = v[0]
        denom = 1.0 + dt * c[k]
        betaS[k] = (bs_bar * (1.0 + dt * vrow) - dt * c[k] * w * vrow) / denom
        beta0[k] = (b0_bar + dt * bs_bar[None, :] * u - dt * c[k] * (g0 + w[None, :] * u)) / denom
    return BTables(params=params, grid=grid, price=price, beta0=beta0, betaS=betaS)


def b_on_path(common, tables):
    """Exact b along a path with filled S_hat; b_n = h1."""
    if common.s_hat is None:
        raise RefusalError("run forward_common_control before querying b on a path")
    n = common.grid.n_steps
    bt = tables.btables
    out = np.empty(n + 1)
    for k in range(n + 1):
        m, r = common.m_count[k], common.r_idx[k]
        out[k] = bt.beta0[k][m, r] + bt.betaS[k][r] * common.s_hat[k]
    return out


def _j_flag_inner(params, grid, step, r_idx):
    """Activation flag for inner-simulation states (vectorized over r_idx)."""
    age = np.where(r_idx == 0, 2.0 * params.theta + step * grid.dt, (r_idx - 1) * grid.dt)
    return (age <= params.theta).astype(float)


def estimate_b(common, k, tables, m_inner, seed, path_index=0):
    """Nested Monte Carlo estimate of b_k: simulate m_inner common-noise
    continuations from step k (continuing q_hat, q_st, R, S_hat, alpha_hat
    with fresh increments) and average the discounted driver sum

        b = Gamma_n/Gamma_k * h1
            - sum_{s>=k} Gamma_{s+1}/Gamma_k * dt * c_s * G0_s,

    with G0 the F0-part of the individual driver.  Returns (mean, std error).
    Draw order per inner step: signs, then jump uniforms."""
    if m_inner < 2:
        raise RefusalError("m_inner must be >= 2 to report a standard error")
    if common.s_hat is None:
        raise RefusalError("run forward_common_control before estimate_b")
    params, grid, price = tables.params, tables.grid, tables.price
    rng = stream(seed, "b-inner", *(np.atleast_1d(path_index).tolist()), k)
    n, dt, kappa = grid.n_steps, grid.dt, grid.kappa
    u0, d0, ust, dst = step_factors(params, grid)
    gamma = tables.gamma
    c = tables.phi.values / (params.A + params.K)
    mean = common.mean_q
    qh = np.full(m_inner, common.q_hat[k])
    qs = np.full(m_inner, common.q_st[k])
    m_idx = np.full(m_inner, common.m_count[k], dtype=np.int64)
    r_idx = np.full(m_inner, common.r_idx[k], dtype=np.int64)
    sh = np.full(m_inner, common.s_hat[k])
    acc = np.zeros(m_inner)
    sq = math.sqrt(dt)
    for s in range(k, n):
        j = _j_flag_inner(params, grid, s, r_idx)
        phib = tables.phibar.row(s)[r_idx]
        psib = tables.psibar.values[s][m_idx, r_idx]
        u, v = feedback_uv(params, price, phib, psib, qh, qs, mean[s], j)
        ah = u + v * sh
        g0 = individual_field_terms(params, price, qh, qs, mean[s], j, ah)
        acc -= (gamma[s + 1] / gamma[k]) * dt * c[s] * g0
        eps = rng.integers(0, 2, size=m_inner).astype(np.int64) * 2 - 1
        jump = rng.random(m_inner) < (1.0 - kappa)
        qh = qh * (1.0 + dt * params.mu + sq * params.sigma0 * eps)
        qs = qs * (1.0 + dt * params.mu_st + sq * params.sigma_st * eps)
        m_idx = m_idx + (eps > 0)
        r_idx = np.where(jump, 1, np.where(r_idx == 0, 0, r_idx + 1))
        sh = sh + dt * ah
    acc += (gamma[n] / gamma[k]) * params.h1
    return float(np.mean(acc)), float(np.std(acc, ddof=1) / math.sqrt(m_inner))


def estimate_b_path(common, tables, m_inner, seed, path_index=0):
    """b and its standard error at every step of a path (b_n = h1 exactly)."""
    n = common.grid.n_steps
    b = np.empty(n + 1)
    se = np.zeros(n + 1)
    for k in range(n):
        b[k], se[k] = estimate_b(common, k, tables, m_inner, seed, path_index)
    b[n] = tables.params.h1
    return b, se


def exact_b_node(tables, k, q_hat, q_st, m, r_idx, s_hat, cap=ENUM_CAP):
    """b at an arbitrary common node by exhaustive enumeration of the remaining
    common tree (the M_inner -> infinity limit of estimate_b)."""
    params, grid, price = tables.params, tables.grid, tables.price
    n, dt, kappa = grid.n_steps, grid.dt, grid.kappa
    if n - k > cap:
        raise RefusalError(f"exhaustive b enumeration limited to {cap} steps, got {n - k}")
    u0, d0, ust, dst = step_factors(params, grid)
    c = tables.phi.values / (params.A + params.K)
    mean = mean_q_curve(params, grid)
    weights = branch_weights(grid)

    def rec(s, qh, qs, mm, ri, sh):
        if s == n:
            return params.h1
        j = float(_j_flag_inner(params, grid, s, np.array([ri]))[0])
        phib = tables.phibar.row(s)[ri]
        psib = tables.psibar.values[s][mm, ri]
        u, v = feedback_uv(params, price, phib, psib, qh, qs, mean[s], j)
        ah = u + v * sh
        g0 = individual_field_terms(params, price, qh, qs, mean[s], j, ah)
        sh_next = sh + dt * ah
        exp = 0.0
        for b_i in range(4):
            w = weights[b_i]
            if w == 0.0:
                continue
            up = BRANCH_EPS[b_i] > 0
            qh_n = qh * (u0 if up else d0)
            qs_n = qs * (ust if up else dst)
            mm_n = mm + (1 if up else 0)
            ri_n = 1 if BRANCH_JUMP[b_i] else (0 if ri == 0 else ri + 1)
            exp += w * rec(s + 1, qh_n, qs_n, mm_n, ri_n, sh_next)
        return (exp - dt * c[s] * g0) / (1.0 + dt * c[s])

    return rec(k, float(q_hat), float(q_st), int(m), int(r_idx), float(s_hat))


def exact_b(common, k, tables, cap=ENUM_CAP):
    if common.s_hat is None:
        raise RefusalError("run forward_common_control before exact_b")
    return exact_b_node(tables, k, common.q_hat[k], common.q_st[k],
                        common.m_count[k], common.r_idx[k], common.s_hat[k], cap=cap)


@dataclass
class PsiTree:
    """Exact backward induction of the individual psi on the unrecombined
    8-branch tree (4 common x 2 idiosyncratic); small-n oracle only.

    Level arrays: common side has 4**k nodes, full side 8**k nodes;
    f_common[k] maps each full node to its common node."""

    params: object
    grid: object
    price: object
    c_qhat: list
    c_qst: list
    c_m: list
    c_ridx: list
    c_j: list
    c_shat: list
    c_alphahat: list
    f_q: list
    f_common: list
    psi: list
    alpha_star: list = None
    s_star: list = None

    def idio_average(self, level_values, k):
        """Idiosyncratic-branch-weighted average at each common node of level k."""
        return np.bincount(self.f_common[k], weights=level_values,
                           minlength=4 ** k) / (2 ** k)


def solve_psi_tree(tables, cap=TREE_CAP):
    """Solve the individual psi equation exactly on the full tree."""
    params, grid, price = tables.params, tables.grid, tables.price
    n, dt, kappa = grid.n_steps, grid.dt, grid.kappa
    if n > cap:
        raise RefusalError(f"psi tree limited to {cap} steps, got {n}")
    if len(params.s0) != 1:
        raise RefusalError("tree oracle requires a deterministic s0")
    s0 = params.s0[0][0]
    u0, d0, ust, dst = step_factors(params, grid)
    sq = math.sqrt(dt)
    mean = mean_q_curve(params, grid)
    w4 = branch_weights(grid)
    eps4 = np.array(BRANCH_EPS, dtype=float)
    jump4 = np.array(BRANCH_JUMP)

    # common side, forward
    c_qhat = [np.array([params.q0])]
    c_qst = [np.array([params.q0_st])]
    c_m = [np.zeros(1, dtype=np.int64)]
    c_ridx = [np.zeros(1, dtype=np.int64)]
    c_j = [None] * (n + 1)
    c_shat = [np.array([params.s0_mean()])]
    c_alphahat = [None] * (n + 1)
    for k in range(n + 1):
        j = _j_flag_inner(params, grid, k, c_ridx[k])
        c_j[k] = j
        phib = tables.phibar.row(k)[c_ridx[k]]
        psib = tables.psibar.values[k][c_m[k], c_ridx[k]]
        u, v = feedback_uv(params, price, phib, psib, c_qhat[k], c_qst[k], mean[k], j)
        c_alphahat[k] = u + v * c_shat[k]
        if k == n:
            break
        rep = lambda arr: np.repeat(arr, 4)
        eps_b = np.tile(eps4, 4 ** k)
        jump_b = np.tile(jump4, 4 ** k)
        c_qhat.append(rep(c_qhat[k]) * (1.0 + dt * params.mu + sq * params.sigma0 * eps_b))
        c_qst.append(rep(c_qst[k]) * (1.0 + dt * params.mu_st + sq * params.sigma_st * eps_b))
        c_m.append(rep(c_m[k]) + (eps_b > 0))
        prev_r = rep(c_ridx[k])
        c_ridx.append(np.where(jump_b, 1, np.where(prev_r == 0, 0, prev_r + 1)).astype(np.int64))
        c_shat.append(rep(c_shat[k] + dt * c_alphahat[k]))

    # full side, forward
    f_q = [np.array([params.q0])]
    f_common = [np.zeros(1, dtype=np.int64)]
    eps8 = np.tile(eps4, 2)
    peps8 = np.repeat(np.array([1.0, -1.0]), 4)
    cb8 = np.tile(np.arange(4), 2)
    for k in range(n):
        rep = lambda arr: np.repeat(arr, 8)
        eps_b = np.tile(eps8, 8 ** k)
        peps_b = np.tile(peps8, 8 ** k)
        f_q.append(rep(f_q[k]) * (1.0 + dt * params.mu
                                  + sq * (params.sigma * peps_b + params.sigma0 * eps_b)))
        f_common.append(np.repeat(f_common[k], 8) * 4 + np.tile(cb8, 8 ** k))

    # backward psi
    w8 = np.concatenate((w4, w4)) * 0.5
    c_phi = tables.phi.values / (params.A + params.K)
    psi = [None] * (n + 1)
    psi[n] = np.full(8 ** n, float(params.h1))
    for k in range(n - 1, -1, -1):
        expected = psi[k + 1].reshape(8 ** k, 8) @ w8
        g0 = individual_field_terms(params, price, c_qhat[k], c_qst[k], mean[k],
                                    c_j[k], c_alphahat[k])[f_common[k]]
        drive = params.K * f_q[k] + g0
        psi[k] = (expected - dt * c_phi[k] * drive) / (1.0 + dt * c_phi[k])

    tree = PsiTree(params=params, grid=grid, price=price,
                   c_qhat=c_qhat, c_qst=c_qst, c_m=c_m, c_ridx=c_ridx, c_j=c_j,
                   c_shat=c_shat, c_alphahat=c_alphahat,
                   f_q=f_q, f_common=f_common, psi=psi)
    _tree_alpha_star(tree, tables)
    return tree


def _tree_alpha_star(tree, tables):
    """Forward alpha_star and S_star on the full tree (S_star by Euler)."""
    params, grid, price = tree.params, tree.grid, tree.price
    n, dt = grid.n_steps, grid.dt
    mean = mean_q_curve(params, grid)
    phi = tables.phi.values
    AK = params.A + params.K
    s0 = params.s0[0][0]
    alpha_star = [None] * (n + 1)
    s_star = [np.full(1, float(s0))]
    for k in range(n + 1):
        g0 = individual_field_terms(params, price, tree.c_qhat[k], tree.c_qst[k],
                                    mean[k], tree.c_j[k], tree.c_alphahat[k])[tree.f_common[k]]
        alpha_star[k] = -(params.K * tree.f_q[k] + g0 + phi[k] * s_star[k] + tree.psi[k]) / AK
        if k == n:
            break
        s_star.append(np.repeat(s_star[k] + dt * alpha_star[k], 8))
    tree.alpha_star = alpha_star
    tree.s_star = s_star
