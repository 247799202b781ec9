"""Monte Carlo evaluation of the objective functionals.

All evaluators share one vectorized streaming pass: common paths are simulated
as a batch, the feedback recursions advance step by step, and dt-weighted left
Riemann sums of the cost integrand accumulate on the fly (so degenerate-case
identities are exact on the grid).  Costs are always computed with the
original coefficients (p0, p1, f0, f1), whatever pricing mode produced the
control.  For a fixed seed every evaluator is a pure function of its inputs;
numpy's pairwise summation keeps the accumulators stable.

Objective forms:

* representative consumer (the price/divergence fields use q_hat + alpha_hat),
* central planner (population-weighted, including standard consumers),
* n-player (player 1's cost with empirical averages over n players sharing
  the common path), used by the Nash-gap estimator.

The aggregator objective coincides with the representative-consumer
functional evaluated at the aggregator-mode control, so no separate evaluator
is needed for it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .control import forward_common_batch
from .dynamics import simulate_common_batch
from .errors import RefusalError
from .riccati import individual_field_terms
from .seeding import stream

BREAKDOWN_KEYS = ("control", "storage", "demand_charge", "energy", "divergence", "terminal")


@dataclass
class CostEstimate:
    mean: float
    std_error: float
    n_samples: int
    breakdown: dict

    def total_from_breakdown(self):
        return sum(self.breakdown.values())


@dataclass
class NashGapReport:
    n_players: int
    j_n_i: CostEstimate
    j_mfg: CostEstimate
    gap: float
    gap_std_error: float
    deviation_gain: float | None = None


def _estimate(totals, parts):
    totals = np.asarray(totals)
    n = totals.shape[0]
    se = float(np.std(totals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CostEstimate(mean=float(np.mean(totals)), std_error=se, n_samples=n,
                        breakdown={k: float(np.mean(v)) for k, v in parts.items()})


class _Pass:
    """One streaming forward pass over (common batch) x (players)."""

    def __init__(self, tables, n_paths, seed, tag, n_players=1):
        self.tables = tables
        self.params = tables.params
        self.grid = tables.grid
        self.batch = simulate_common_batch(self.params, self.grid, seed, n_paths,
                                           tag=f"{tag}-common")
        forward_common_batch(self.batch, tables)
        self.seed = seed
        self.tag = tag
        self.n_players = n_players

    def run(self, zero_alpha=False, perturb=None, eps_step=0.0,
            player0_zero=False, player0_perturb=None, player0_eps=0.0,
            want_empirical=False, want_standard=False):
        p = self.params
        tables = self.tables
        grid = self.grid
        n, dt = grid.n_steps, grid.dt
        batch = self.batch
        P, NP = batch.n_paths, self.n_players
        rng_s0 = stream(self.seed, f"{self.tag}-s0")
        rng_eps = stream(self.seed, f"{self.tag}-player-eps")
        q = np.full((P, NP), float(p.q0))
        s = np.asarray(p.sample_s0(rng_s0, size=(P, NP)), dtype=float)
        parts = {k: np.zeros((P, NP)) for k in BREAKDOWN_KEYS[:-1]}
        emp = {"energy": np.zeros(P), "divergence": np.zeros(P)} if want_empirical else None
        standard = np.zeros(P) if want_standard else None
        bt = tables.btables
        a_coef = tables.a_coef
        phiv = tables.phi.values
        ak = p.A + p.K
        sq = math.sqrt(dt)
        for k in range(n):
            qh = batch.q_hat[:, k]
            qs = batch.q_st[:, k]
            ah = batch.alpha_hat[:, k]
            sh = batch.s_hat[:, k]
            j = batch.J[:, k].astype(float)
            mk = batch.mean_q[k]
            b_k = (bt.beta0[k][batch.m_count[:, k], batch.r_idx[:, k]]
                   + bt.betaS[k][batch.r_idx[:, k]] * sh)
            g0 = individual_field_terms(p, tables.price, qh, qs, mk, j, ah)
            psi = a_coef[k] * q + b_k[:, None]
            alpha = -(p.K * q + g0[:, None] + phiv[k] * s + psi) / ak
            if zero_alpha:
                alpha = np.zeros_like(alpha)
            if perturb is not None:
                state = {"q": q, "q_hat": qh[:, None], "s": s, "j": j[:, None], "mean_q": mk}
                alpha = alpha + eps_step * perturb(k, k * dt, state)
            if player0_zero:
                alpha = alpha.copy()
                alpha[:, 0] = 0.0
            if player0_perturb is not None:
                state0 = {"q": q[:, 0], "q_hat": qh, "s": s[:, 0], "j": j, "mean_q": mk}
                alpha = alpha.copy()
                alpha[:, 0] = alpha[:, 0] + player0_eps * player0_perturb(k, k * dt, state0)
            qa = q + alpha
            x = p.pi * qs + (1 - p.pi) * (qh + ah)
            price_mf = p.p0 + p.p1 * x
            z = qh - mk + ah - p.alpha_bar
            parts["control"] += dt * 0.5 * p.A * alpha ** 2
            parts["storage"] += dt * 0.5 * p.C * s ** 2
            parts["demand_charge"] += dt * 0.5 * p.K * qa ** 2
            parts["energy"] += dt * qa * price_mf[:, None]
            parts["divergence"] += (dt * j[:, None] * (q - mk + alpha - p.alpha_bar)
                                    * (p.f0 + p.f1 * z)[:, None])
            if want_empirical:
                ybar = np.mean(qa, axis=1)
                price_emp = p.p0 + p.p1 * (p.pi * qs + (1 - p.pi) * ybar)
                z_emp = ybar - mk - p.alpha_bar
                emp["energy"] += dt * qa[:, 0] * price_emp
                emp["divergence"] += (dt * j * (q[:, 0] - mk + alpha[:, 0] - p.alpha_bar)
                                      * (p.f0 + p.f1 * z_emp))
            if want_standard:
                standard += dt * (qs * price_mf + 0.5 * p.K * qs ** 2)
            eps_i = rng_eps.integers(0, 2, size=(P, NP)).astype(np.int64) * 2 - 1
            q = q * (1.0 + dt * p.mu + sq * (p.sigma * eps_i
                                             + p.sigma0 * batch.eps[:, k][:, None]))
            s = s + dt * alpha
        parts["terminal"] = p.h0 + p.h1 * s + 0.5 * p.h2 * s ** 2
        return parts, emp, standard


def eval_j_mfg(tables, n_paths, seed, zero_alpha=False, perturb=None,
               eps_step=0.0, tag="jmfg", return_samples=False):
    """Representative-consumer objective at the equilibrium control (or at a
    forced / perturbed control).  Returns mean, standard error and the
    per-term breakdown, which sums to the mean.  With return_samples=True also
    returns the per-path totals, which lets callers pair runs sharing a seed."""
    if n_paths < 2:
        raise RefusalError("need n_paths >= 2 for a standard error")
    run = _Pass(tables, n_paths, seed, tag)
    parts, _, _ = run.run(zero_alpha=zero_alpha, perturb=perturb, eps_step=eps_step)
    cols = {k: v[:, 0] for k, v in parts.items()}
    totals = sum(cols.values())
    est = _estimate(totals, cols)
    return (est, totals) if return_samples else est


def eval_j_c(tables, n_paths, seed, tag="jc"):
    """Central-planner objective: (1 - pi) times the representative terms plus
    pi times the standard consumers' energy and demand-charge costs."""
    if n_paths < 2:
        raise RefusalError("need n_paths >= 2 for a standard error")
    p = tables.params
    run = _Pass(tables, n_paths, seed, tag)
    parts, _, standard = run.run(want_standard=True)
    cols = {k: (1 - p.pi) * v[:, 0] for k, v in parts.items()}
    cols["standard"] = p.pi * standard
    totals = sum(cols.values())
    return _estimate(totals, cols)


def gateaux_residual(tables, direction, eps_step, n_paths, seed, tag="gateaux"):
    """Central difference (J(a* + eps*b) - J(a* - eps*b)) / (2 eps) with common
    random numbers; returns (estimate, standard error)."""
    if eps_step <= 0:
        raise ValueError("eps_step must be positive")
    run = _Pass(tables, n_paths, seed, tag)
    up, _, _ = run.run(perturb=direction, eps_step=eps_step)
    dn, _, _ = run.run(perturb=direction, eps_step=-eps_step)
    diff = (sum(v[:, 0] for v in up.values()) - sum(v[:, 0] for v in dn.values())) / (2 * eps_step)
    se = float(np.std(diff, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return float(np.mean(diff)), se


def random_direction(seed):
    """A bounded adapted perturbation: a deterministic function of (t, state)
    with |beta| <= 2."""
    rng = stream(seed, "direction")
    omega = rng.uniform(0.1, 1.5)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    mix = rng.uniform(-1.0, 1.0)

    def beta(k, t, state):
        return math.cos(omega * t + phase) + mix * np.tanh(state["q"] - state["q_hat"])

    return beta


def nash_gap(n_players, tables, n_mc, seed, deviations=False, tag="nash"):
    """Estimate player 1's n-player cost under the equilibrium profile (price
    and divergence terms use the empirical averages over the n players) and
    the mean-field cost of the same player, with shared noise; the gap is the
    absolute difference of the two means with the paired standard error.

    With deviations=True the report also carries the best observed gain from a
    small family of unilateral deviations of player 1 (the lazy strategy and
    scaled perturbations); the true supremum over deviations is not computable,
    so this is a spot check, not a bound."""
    if n_players < 1:
        raise RefusalError("n_players must be >= 1")
    run = _Pass(tables, n_mc, seed, tag, n_players=n_players)
    parts, emp, _ = run.run(want_empirical=True)
    mfg_cols = {k: v[:, 0] for k, v in parts.items()}
    totals_mfg = sum(mfg_cols.values())
    emp_cols = dict(mfg_cols)
    emp_cols["energy"] = emp["energy"]
    emp_cols["divergence"] = emp["divergence"]
    totals_emp = sum(emp_cols.values())
    diff = totals_emp - totals_mfg
    gap = abs(float(np.mean(diff)))
    gap_se = float(np.std(diff, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    gain = None
    if deviations:
        best = totals_emp.mean()
        lazy_parts, lazy_emp, _ = run.run(want_empirical=True, player0_zero=True)
        lazy_total = (sum(v[:, 0] for k, v in lazy_parts.items()
                          if k not in ("energy", "divergence"))
                      + lazy_emp["energy"] + lazy_emp["divergence"])
        best_dev = lazy_total.mean()
        for i in range(2):
            beta = random_direction(seed + 7919 * (i + 1))
            dparts, demp, _ = run.run(want_empirical=True, player0_perturb=beta,
                                      player0_eps=0.1)
            dev_total = (sum(v[:, 0] for k, v in dparts.items()
                             if k not in ("energy", "divergence"))
                         + demp["energy"] + demp["divergence"])
            best_dev = min(best_dev, dev_total.mean())
        gain = float(best - best_dev)
    return NashGapReport(n_players=n_players, j_n_i=_estimate(totals_emp, emp_cols),
                         j_mfg=_estimate(totals_mfg, mfg_cols), gap=gap,
                         gap_std_error=gap_se, deviation_gain=gain)


def write_cost_report(estimate, fileobj, label="cost"):
    fileobj.write(f"{label}.mean = %.17g\n" % estimate.mean)
    fileobj.write(f"{label}.std_error = %.17g\n" % estimate.std_error)
    fileobj.write(f"{label}.n_samples = {estimate.n_samples}\n")
    for key in estimate.breakdown:
        fileobj.write(f"{label}.breakdown.{key} = %.17g\n" % estimate.breakdown[key])


def write_cost_breakdown_csv(estimate, fileobj):
    w = csv.writer(fileobj)
    w.writerow(["term", "mean"])
    for key, val in estimate.breakdown.items():
        w.writerow([key, "%.17g" % val])
    w.writerow(["total", "%.17g" % estimate.mean])


def write_nash_reports(reports, txt, csvfile):
    w = csv.writer(csvfile)
    w.writerow(["n_players", "j_n_mean", "j_n_se", "j_mfg_mean", "j_mfg_se",
                "gap", "gap_se"])
    for r in reports:
        txt.write(f"n_players = {r.n_players}\n")
        txt.write("  J_n(player 1) = %.17g (se %.17g)\n" % (r.j_n_i.mean, r.j_n_i.std_error))
        txt.write("  J_mfg         = %.17g (se %.17g)\n" % (r.j_mfg.mean, r.j_mfg.std_error))
        txt.write("  gap           = %.17g (se %.17g)\n" % (r.gap, r.gap_std_error))
        if r.deviation_gain is not None:
            txt.write("  best observed deviation gain = %.17g\n" % r.deviation_gain)
        w.writerow([r.n_players, "%.17g" % r.j_n_i.mean, "%.17g" % r.j_n_i.std_error,
                    "%.17g" % r.j_mfg.mean, "%.17g" % r.j_mfg.std_error,
                    "%.17g" % r.gap, "%.17g" % r.gap_std_error])
