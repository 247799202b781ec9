"""Forward simulation of the exogenous state processes.

Projected consumption q_hat and the standard-consumer average q_st follow
multiplicative walks driven by the common Bernoulli signs; an individual
consumption q adds an independent idiosyncratic walk.  The jump-age process R
starts at 2*theta, grows by dt per step and resets to 0 at a common jump; the
activation flag is J = 1{R <= theta}.  The deterministic seasonal mean is the
discrete product E[Q_k] = q0 * (1 + dt*mu)**k, so degenerate-case identities
hold exactly on the grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import RefusalError
from .lattice import GridSpec
from .seeding import stream

COMMON_PATH_COLUMNS = ("k", "t", "eps", "eta", "q_hat", "q_st", "R", "J", "mean_q")


def _normalize_s0(s0):
    if isinstance(s0, (int, float)):
        return ((float(s0), 1.0),)
    atoms = tuple((float(v), float(p)) for v, p in s0)
    total = sum(p for _, p in atoms)
    if not atoms or any(p < 0 for _, p in atoms) or abs(total - 1.0) > 1e-12:
        raise ValueError("s0 distribution needs nonnegative weights summing to 1")
    return atoms


@dataclass(frozen=True)
class ModelParams:
    """All scalar model coefficients.

    Time units are user-declared: every rate (mu, lambda0) is per unit time
    and every volatility per square-root unit; nothing is converted silently.
    A (control) and C (storage) are cost weights, K is the
    demand-charge weight.  Price is p0 + p1 * x, divergence penalty
    f0 + f1 * x, terminal cost h0 + h1*s + h2/2*s^2.  alpha_bar is the
    contracted reduction (kW) held for theta hours after each common jump.
    lam is the idiosyncratic jump intensity, carried for completeness but
    unused since the idiosyncratic jump size is zero in the LQ setting.
    s0 may be a constant or a finite discrete distribution ((value, prob), ...).
    """

    A: float
    C: float
    K: float = 0.0
    p0: float = 0.0
    p1: float = 0.0
    f0: float = 0.0
    f1: float = 0.0
    h0: float = 0.0
    h1: float = 0.0
    h2: float = 0.0
    alpha_bar: float = 0.0
    theta: float = 1.0
    pi: float = 0.5
    mu: float = 0.0
    mu_st: float = 0.0
    sigma: float = 0.0
    sigma0: float = 0.0
    sigma_st: float = 0.0
    lambda0: float = 0.0
    lam: float = 0.0
    T: float = 1.0
    q0: float = 1.0
    q0_st: float = 1.0
    s0: object = 0.0

    def __post_init__(self):
        object.__setattr__(self, "s0", _normalize_s0(self.s0))
        # C = 0 is admitted: strict convexity is needed for uniqueness theory,
        # not for the backward solvers, and degenerate checks rely on it
        checks = [
            (self.A > 0, "A must be > 0"),
            (self.C >= 0, "C must be >= 0"),
            (self.K >= 0, "K must be >= 0"),
            (self.p1 >= 0, "p1 must be >= 0"),
            (self.f1 >= 0, "f1 must be >= 0"),
            (self.h2 >= 0, "h2 must be >= 0"),
            (0.0 <= self.pi <= 1.0, "pi must lie in [0, 1]"),
            (self.T > 0, "T must be > 0"),
            (0.0 <= self.theta < self.T, "theta must satisfy 0 <= theta < T"),
            (self.lambda0 >= 0, "lambda0 must be >= 0"),
            (self.lam >= 0, "lam must be >= 0"),
            (self.sigma >= 0 and self.sigma0 >= 0 and self.sigma_st >= 0,
             "volatilities must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def grid(self, n_steps):
        return GridSpec.from_horizon(self.T, n_steps, self.lambda0)

    def s0_mean(self):
        return sum(v * p for v, p in self.s0)

    def s0_second_moment(self):
        return sum(v * v * p for v, p in self.s0)

    def sample_s0(self, rng, size=None):
        values = np.array([v for v, _ in self.s0])
        probs = np.array([p for _, p in self.s0])
        if len(values) == 1:
            return values[0] if size is None else np.full(size, values[0])
        return rng.choice(values, size=size, p=probs)


def step_factors(params, grid):
    """Up/down multiplicative factors for (q_hat, q_st); refuses when the
    walk could cross zero (grid too coarse for the volatility)."""
    sq = math.sqrt(grid.dt)
    u0 = 1.0 + grid.dt * params.mu + sq * params.sigma0
    d0 = 1.0 + grid.dt * params.mu - sq * params.sigma0
    ust = 1.0 + grid.dt * params.mu_st + sq * params.sigma_st
    dst = 1.0 + grid.dt * params.mu_st - sq * params.sigma_st
    if min(d0, dst) <= 0.0:
        raise RefusalError(
            "multiplicative walk could cross zero: "
            f"1 + dt*mu - sqrt(dt)*sigma = {min(d0, dst):g}; refine the grid"
        )
    return u0, d0, ust, dst


def player_step_guard(params, grid):
    sq = math.sqrt(grid.dt)
    d = 1.0 + grid.dt * params.mu - sq * (params.sigma + params.sigma0)
    if d <= 0.0:
        raise RefusalError(
            "player walk could cross zero: "
            f"1 + dt*mu - sqrt(dt)*(sigma + sigma0) = {d:g}; refine the grid"
        )


def mean_q_curve(params, grid):
    """Discrete seasonal mean E[Q_k] = q0 * (1 + dt*mu)**k."""
    return params.q0 * (1.0 + grid.dt * params.mu) ** np.arange(grid.n_steps + 1)


def lattice_level(params, grid, k):
    """(q_hat, q_st) over up-move counts m = 0..k at step k."""
    u0, d0, ust, dst = step_factors(params, grid)
    m = np.arange(k + 1)
    q_hat = params.q0 * u0 ** m * d0 ** (k - m)
    q_st = params.q0_st * ust ** m * dst ** (k - m)
    return q_hat, q_st


@dataclass
class CommonPath:
    """One realization of the common walks with all derived F0-adapted arrays.

    Increment arrays have length n_steps (entry i drives the step i -> i+1);
    state arrays have length n_steps + 1.  r_idx encodes the jump-age lattice
    state (0 = never jumped, j + 1 = age j).  The control-side arrays are
    filled once by forward_common_control and read-only afterwards.
    """

    params: ModelParams
    grid: GridSpec
    eps: np.ndarray
    is_jump: np.ndarray
    eta: np.ndarray
    q_hat: np.ndarray
    q_st: np.ndarray
    R: np.ndarray
    J: np.ndarray
    mean_q: np.ndarray
    m_count: np.ndarray
    r_idx: np.ndarray
    s_hat: np.ndarray | None = None
    alpha_hat: np.ndarray | None = None
    phibar_on_path: np.ndarray | None = None
    psibar_on_path: np.ndarray | None = None


@dataclass
class PlayerPath:
    """One consumer's idiosyncratic walk plus, after forward_player_control,
    the derived control arrays."""

    params: ModelParams
    grid: GridSpec
    eps_i: np.ndarray
    q: np.ndarray
    s0: float
    psi_on_path: np.ndarray | None = None
    alpha_star: np.ndarray | None = None
    s_star: np.ndarray | None = None
    cost_sample: float | None = None


def jump_age_update(r_prev, is_jump, grid):
    """Exact reset semantics: 0 at a jump, else r_prev + dt."""
    if r_prev < 0:
        raise ValueError("jump age must be nonnegative")
    return 0.0 if is_jump else r_prev + grid.dt


def _derive_common_arrays(params, grid, eps, jumps):
    n = grid.n_steps
    dt = grid.dt
    eta = np.where(jumps, grid.kappa, grid.kappa - 1.0)
    # power form keeps recombination exact: the value at step k depends on the
    # up-move count only, bit for bit, and matches the lattice levels
    u0, d0, ust, dst = step_factors(params, grid)
    m = np.concatenate(([0], np.cumsum(eps > 0))).astype(np.int64)
    k_arr = np.arange(n + 1)
    q_hat = params.q0 * u0 ** m * d0 ** (k_arr - m)
    q_st = params.q0_st * ust ** m * dst ** (k_arr - m)
    R = np.empty(n + 1)
    r_idx = np.zeros(n + 1, dtype=np.int64)
    R[0] = 2.0 * params.theta
    for k in range(n):
        if jumps[k]:
            R[k + 1] = 0.0
            r_idx[k + 1] = 1
        else:
            R[k + 1] = R[k] + dt
            r_idx[k + 1] = 0 if r_idx[k] == 0 else r_idx[k] + 1
    J = (R <= params.theta).astype(np.int8)
    return eta, q_hat, q_st, R, r_idx, J, m


def simulate_common_path(params, grid, seed, path_index=0):
    """Simulate q_hat, q_st, R, J along one common path.

    Draw order is fixed (signs first, then jump uniforms) so results are
    reproducible for a given (seed, path_index)."""
    step_factors(params, grid)
    idx = path_index if isinstance(path_index, (tuple, list)) else (path_index,)
    rng = stream(seed, "common-path", *idx)
    n = grid.n_steps
    eps = rng.integers(0, 2, size=n).astype(np.int64) * 2 - 1
    jumps = rng.random(n) < (1.0 - grid.kappa)
    eta, q_hat, q_st, R, r_idx, J, m_count = _derive_common_arrays(params, grid, eps, jumps)
    return CommonPath(
        params=params, grid=grid, eps=eps, is_jump=jumps, eta=eta,
        q_hat=q_hat, q_st=q_st, R=R, J=J, mean_q=mean_q_curve(params, grid),
        m_count=m_count, r_idx=r_idx,
    )


def simulate_player_path(common, params, grid, seed, player_index=0):
    """Simulate one consumer's walk on top of an existing common path.

    The idiosyncratic stream is derived independently of the common stream;
    draw order: s0 sample, then signs."""
    if not common.grid.matches(grid):
        raise RefusalError("player grid does not match the common path grid")
    player_step_guard(params, grid)
    idx = player_index if isinstance(player_index, (tuple, list)) else (player_index,)
    rng = stream(seed, "player-path", *idx)
    s0 = float(params.sample_s0(rng))
    n = grid.n_steps
    eps_i = rng.integers(0, 2, size=n).astype(np.int64) * 2 - 1
    sq = math.sqrt(grid.dt)
    fac = 1.0 + grid.dt * params.mu + sq * (params.sigma * eps_i + params.sigma0 * common.eps)
    q = np.concatenate(([params.q0], params.q0 * np.cumprod(fac)))
    return PlayerPath(params=params, grid=grid, eps_i=eps_i, q=q, s0=s0)


@dataclass
class CommonBatch:
    """Vectorized common paths: 2-D arrays with one row per path."""

    params: ModelParams
    grid: GridSpec
    eps: np.ndarray
    is_jump: np.ndarray
    q_hat: np.ndarray
    q_st: np.ndarray
    R: np.ndarray
    J: np.ndarray
    mean_q: np.ndarray
    m_count: np.ndarray
    r_idx: np.ndarray
    s_hat: np.ndarray | None = None
    alpha_hat: np.ndarray | None = None

    @property
    def n_paths(self):
        return self.eps.shape[0]


def simulate_common_batch(params, grid, seed, n_paths, tag="common-batch"):
    """Simulate n_paths common paths at once.  All paths come from a single
    derived stream; the draw layout (signs array, then jump array) is fixed."""
    step_factors(params, grid)
    rng = stream(seed, tag)
    n = grid.n_steps
    eps = rng.integers(0, 2, size=(n_paths, n)).astype(np.int64) * 2 - 1
    jumps = rng.random((n_paths, n)) < (1.0 - grid.kappa)
    dt = grid.dt
    u0, d0, ust, dst = step_factors(params, grid)
    m_count = np.concatenate(
        (np.zeros((n_paths, 1), dtype=np.int64), np.cumsum(eps > 0, axis=1)), axis=1
    )
    k_arr = np.arange(n + 1)[None, :]
    q_hat = params.q0 * u0 ** m_count * d0 ** (k_arr - m_count)
    q_st = params.q0_st * ust ** m_count * dst ** (k_arr - m_count)
    R = np.empty((n_paths, n + 1))
    r_idx = np.zeros((n_paths, n + 1), dtype=np.int64)
    R[:, 0] = 2.0 * params.theta
    for k in range(n):
        j = jumps[:, k]
        R[:, k + 1] = np.where(j, 0.0, R[:, k] + dt)
        r_idx[:, k + 1] = np.where(j, 1, np.where(r_idx[:, k] == 0, 0, r_idx[:, k] + 1))
    J = (R <= params.theta).astype(np.int8)
    return CommonBatch(
        params=params, grid=grid, eps=eps, is_jump=jumps, q_hat=q_hat, q_st=q_st,
        R=R, J=J, mean_q=mean_q_curve(params, grid), m_count=m_count, r_idx=r_idx,
    )


def common_path_from_batch(batch, i):
    """Extract path i of a batch as a CommonPath (control fills not copied)."""
    eta = np.where(batch.is_jump[i], batch.grid.kappa, batch.grid.kappa - 1.0)
    return CommonPath(
        params=batch.params, grid=batch.grid, eps=batch.eps[i], is_jump=batch.is_jump[i],
        eta=eta, q_hat=batch.q_hat[i], q_st=batch.q_st[i], R=batch.R[i], J=batch.J[i],
        mean_q=batch.mean_q, m_count=batch.m_count[i], r_idx=batch.r_idx[i],
    )


def write_common_csv(path, fileobj):
    """Serialize a CommonPath with columns (k, t, eps, eta, q_hat, q_st, R, J,
    mean_q).  Row k >= 1 carries the increment that led into state k; row 0
    carries zeros in the increment columns."""
    w = csv.writer(fileobj)
    w.writerow(COMMON_PATH_COLUMNS)
    n = path.grid.n_steps
    for k in range(n + 1):
        eps = 0 if k == 0 else int(path.eps[k - 1])
        eta = 0.0 if k == 0 else float(path.eta[k - 1])
        w.writerow([
            k, "%.17g" % (k * path.grid.dt), eps, "%.17g" % eta,
            "%.17g" % path.q_hat[k], "%.17g" % path.q_st[k],
            "%.17g" % path.R[k], int(path.J[k]), "%.17g" % path.mean_q[k],
        ])
