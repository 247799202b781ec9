"""Backward Riccati solvers.

Two objects share the quadratic-driver structure d(phi) = (-C + phi^2 / D) dt:

* the deterministic curve phi with constant denominator D = A + K, solved in
  closed form (hyperbolic-tangent solution sampled on the grid);
* the jump-age dependent table phibar with denominator
  D(k, r) = A + K + a1 + f1_eff * J(r), solved by backward induction on the
  (k, r) lattice.  Per node the implicit equation
  phi = E[phi'] + dt * (C - phi^2 / D) is solved exactly by its positive
  quadratic root; the fixed-point sweep the scheme was originally stated with
  is retained as a cross-check mode, and the constructive Picard iteration
  (linearized drivers from X^(0) = 0) as an independent oracle.

phibar does not depend on the Brownian coordinate, so the four-branch
conditional expectation collapses to the two jump branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RefusalError

MODES = ("MFG", "MFC", "MFC_AGG")


@dataclass(frozen=True)
class PriceSpec:
    """Effective pricing coefficients seen by the solver.

    The solver always solves the MFG-form system; MFC and MFC_AGG runs are
    obtained by transforming the rules (slope doubling), so one code path
    computes all three equilibria.  Costs are always evaluated with the
    original coefficients, never with these.
    """

    a0: float
    a_st: float
    a1: float
    f0_eff: float
    f1_eff: float
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.a1 < 0 or self.f1_eff < 0:
            raise ValueError("a1 and f1_eff must be nonnegative")

    @classmethod
    def for_mode(cls, params, mode, agg_double_f=True):
        p0, p1, f0, f1, pi = params.p0, params.p1, params.f0, params.f1, params.pi
        if mode == "MFG":
            return cls(p0, pi * p1, (1 - pi) * p1, f0, f1, mode)
        if mode == "MFC":
            return cls(p0, 2 * pi * p1, 2 * (1 - pi) * p1, f0, 2 * f1, mode)
        if mode == "MFC_AGG":
            f1_eff = 2 * f1 if agg_double_f else f1
            return cls(p0, pi * p1, 2 * (1 - pi) * p1, f0, f1_eff, mode)
        raise ValueError(f"mode must be one of {MODES}")

    def k_theta(self, params, j):
        """Effective control weight A + K + a1 + f1_eff * J; always >= A + K."""
        return params.A + params.K + self.a1 + self.f1_eff * j


def j_flags(params, grid, k):
    """Activation flags over the jump-age states at step k (index 0 = never,
    index j + 1 = age j); length k + 1."""
    ages = np.empty(k + 1)
    ages[0] = 2.0 * params.theta + k * grid.dt
    ages[1:] = np.arange(k) * grid.dt
    return (ages <= params.theta).astype(np.int8)


def phi_closed_form(C, D, h2, tau):
    """Backward Riccati ODE d(phi)/d(tau) = C - phi^2 / D, phi(0) = h2,
    evaluated at time-to-go tau (scalar or array)."""
    tau = np.asarray(tau, dtype=float)
    if C > 0.0:
        a = math.sqrt(C * D)
        th = np.tanh(math.sqrt(C / D) * tau)
        return a * (h2 + a * th) / (a + h2 * th)
    if h2 == 0.0:
        return np.zeros_like(tau)
    return D * h2 / (D + h2 * tau)


@dataclass
class PhiCurve:
    """Deterministic Riccati curve sampled at grid times (values[k] = phi(t_k))."""

    values: np.ndarray
    C: float
    D: float
    h2: float
    T: float

    def __len__(self):
        return len(self.values)


def solve_phi_ode(params, grid):
    D = params.A + params.K
    tau = grid.horizon - grid.times()
    return PhiCurve(values=phi_closed_form(params.C, D, params.h2, tau),
                    C=params.C, D=D, h2=params.h2, T=grid.horizon)


@dataclass
class RiccatiTable:
    """phibar on the (k, r) jump-age lattice: values[k][r_index]."""

    params: object
    grid: object
    price: PriceSpec
    values: list

    def value(self, k, r_index):
        return self.values[k][r_index]

    def row(self, k):
        return self.values[k]

    def denom_row(self, k):
        return self.price.k_theta(self.params, j_flags(self.params, self.grid, k).astype(float))

    def iter_rows(self):
        """Yield (k, r, value) with r = -1 encoding the never-jumped state."""
        for k, row in enumerate(self.values):
            for idx, v in enumerate(row):
                yield k, idx - 1, v

    def successor_rep(self, k, r_index):
        """Martingale integrands of the one-step-ahead values at node (k, r):
        the representation of the four successor values on {1, eps, eta,
        eps*eta}.  The Brownian integrand is zero since phibar is blind to
        the Brownian coordinate."""
        from .lattice import martingale_rep

        succ = self.values[k + 1]
        adv = _advance_index(k)[r_index]
        no_jump = succ[adv]
        jump = succ[1]
        return martingale_rep([no_jump, no_jump, jump, jump], self.grid)


def _advance_index(k):
    """Successor r-index map for the no-jump branch at step k (length k + 1):
    never stays never, age j becomes age j + 1."""
    return np.concatenate(([0], np.arange(2, k + 2)))


def _implicit_root(target, dt, D):
    """Positive root of (dt/D) x^2 + x - target = 0 in a cancellation-free form."""
    return 2.0 * target / (1.0 + np.sqrt(1.0 + 4.0 * dt * target / D))


def solve_phibar(params, grid, price, method="quadratic", fp_tol=1e-13, fp_max_iter=500):
    """Backward induction for phibar on the jump-age lattice."""
    n, dt, kappa = grid.n_steps, grid.dt, grid.kappa
    C, h2 = params.C, params.h2
    values = [None] * (n + 1)
    values[n] = np.full(n + 1, float(h2))
    for k in range(n - 1, -1, -1):
        succ = values[k + 1]
        expected = kappa * succ[_advance_index(k)] + (1.0 - kappa) * succ[1]
        D = price.k_theta(params, j_flags(params, grid, k).astype(float))
        target = expected + dt * C
        if method == "quadratic":
            row = _implicit_root(target, dt, D)
        elif method == "fixed_point":
            row = target.copy()
            for it in range(fp_max_iter):
                new = expected + dt * (C - row * row / D)
                delta = np.max(np.abs(new - row))
                row = new
                if delta < fp_tol:
                    break
            else:
                raise RefusalError(
                    f"fixed-point sweep did not contract at step {k}: "
                    f"last update {delta:g} > {fp_tol:g}"
                )
        else:
            raise ValueError("method must be 'quadratic' or 'fixed_point'")
        values[k] = row
    return RiccatiTable(params=params, grid=grid, price=price, values=values)


@dataclass
class PicardResult:
    table: RiccatiTable
    sup_diffs: list
    max_monotone_violation: float
    iterations: int


def solve_phibar_picard(params, grid, price, tol=1e-10, max_iter=100):
    """Constructive Picard iteration: X^(0) = 0, then each X^(m) solves the
    linearized backward recursion with driver C + 2*Theta*X^(m-1)*X^(m)
    - Theta*(X^(m-1))^2, Theta = -1/D.  Iterates are nonnegative and, from the
    first one on, pointwise nonincreasing."""
    n, dt, kappa = grid.n_steps, grid.dt, grid.kappa
    C, h2 = params.C, params.h2
    denoms = [price.k_theta(params, j_flags(params, grid, k).astype(float)) for k in range(n)]
    prev = [np.zeros(k + 1) for k in range(n)] + [np.full(n + 1, float(h2))]
    sup_diffs = []
    max_violation = 0.0
    for it in range(1, max_iter + 1):
        cur = [None] * (n + 1)
        cur[n] = np.full(n + 1, float(h2))
        for k in range(n - 1, -1, -1):
            succ = cur[k + 1]
            expected = kappa * succ[_advance_index(k)] + (1.0 - kappa) * succ[1]
            xm = prev[k]
            D = denoms[k]
            cur[k] = (expected + dt * (C + xm * xm / D)) / (1.0 + 2.0 * dt * xm / D)
        diff = max(np.max(np.abs(cur[k] - prev[k])) for k in range(n + 1))
        sup_diffs.append(diff)
        if it >= 2:
            rise = max(np.max(cur[k] - prev[k]) for k in range(n + 1))
            max_violation = max(max_violation, rise)
        prev = cur
        if diff < tol:
            table = RiccatiTable(params=params, grid=grid, price=price, values=cur)
            return PicardResult(table=table, sup_diffs=sup_diffs,
                                max_monotone_violation=max_violation, iterations=it)
    raise RefusalError(
        f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations; "
        f"last sup-norm difference {sup_diffs[-1]:g}"
    )


def feedback_uv(params, price, phibar_v, psibar_v, q_hat, q_st, mean_q, j):
    """Affine coefficients of the projected control: alpha_hat = u + v * S_hat.

    Works on scalars or broadcastable arrays; j is the activation flag."""
    kt = price.k_theta(params, j)
    u = -(price.a0 + price.a_st * q_st + (price.a1 + params.K) * q_hat + psibar_v
          + j * (price.f0_eff + price.f1_eff * (q_hat - mean_q - params.alpha_bar))) / kt
    v = -phibar_v / kt
    return u, v


def individual_field_terms(params, price, q_hat, q_st, mean_q, j, alpha_hat):
    """The F0-measurable part of the individual coupling/driver:
    a0 + a_st*q_st + a1*(q_hat + alpha_hat) + J*(f0 + f1*(q_hat - mean + alpha_hat - alpha_bar))."""
    return (price.a0 + price.a_st * q_st + price.a1 * (q_hat + alpha_hat)
            + j * (price.f0_eff + price.f1_eff * (q_hat - mean_q + alpha_hat - params.alpha_bar)))
