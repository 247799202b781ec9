"""Random-walk approximation of the common noise pair (W0, compensated N0).

The Brownian motion is approximated by a symmetric Bernoulli walk with signs
eps in {+1, -1}; the compensated Poisson martingale by the non-symmetric walk
with increments eta in {kappa - 1, kappa}, kappa = exp(-lambda0 * dt), where
eta = kappa flags a jump (probability 1 - kappa).  Together with the product
martingale mu = eps * eta these three orthogonal martingales span every
one-step random variable, which is what `martingale_rep` computes.

Canonical branch order, used by every table and serializer in the package:

    0: (eps=+1, no jump)    weight kappa / 2
    1: (eps=-1, no jump)    weight kappa / 2
    2: (eps=+1, jump)       weight (1 - kappa) / 2
    3: (eps=-1, jump)       weight (1 - kappa) / 2
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Iterator, NamedTuple

import numpy as np

from .errors import RefusalError

BRANCH_EPS = (1, -1, 1, -1)
BRANCH_JUMP = (False, False, True, True)
TREE_CAP_DEFAULT = 10


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid: n_steps steps of length dt (hours), with per-step
    jump-survival probability kappa = exp(-lambda0 * dt)."""

    n_steps: int
    dt: float
    kappa: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if not (0.0 < self.kappa <= 1.0):
            raise ValueError("kappa must lie in (0, 1]")

    @classmethod
    def from_horizon(cls, horizon, n_steps, lambda0):
        if lambda0 < 0:
            raise ValueError("lambda0 must be nonnegative")
        dt = horizon / n_steps
        return cls(n_steps=n_steps, dt=dt, kappa=math.exp(-lambda0 * dt))

    @property
    def horizon(self):
        return self.n_steps * self.dt

    def times(self):
        return np.arange(self.n_steps + 1) * self.dt

    def branch_increments(self):
        """The four one-step increments in canonical branch order."""
        k = self.kappa
        return tuple(
            BranchIncrement(eps=e, eta=(k if j else k - 1.0), is_jump=j)
            for e, j in zip(BRANCH_EPS, BRANCH_JUMP)
        )

    def matches(self, other):
        return (
            self.n_steps == other.n_steps
            and self.dt == other.dt
            and self.kappa == other.kappa
        )


@dataclass(frozen=True)
class BranchIncrement:
    eps: int
    eta: float
    is_jump: bool


@dataclass(frozen=True)
class MartingaleRep:
    """Coefficients of y = mean + z * eps / sqrt(n) + u * eta + v * eps * eta."""

    mean: float
    z: float
    u: float
    v: float

    def branch_values(self, grid):
        """Reconstruct the four branch values in canonical order."""
        s = 1.0 / math.sqrt(grid.n_steps)
        out = np.empty(4)
        for i, inc in enumerate(grid.branch_increments()):
            out[i] = self.mean + s * self.z * inc.eps + self.u * inc.eta + self.v * inc.eps * inc.eta
        return out


class CommonStateIndex(NamedTuple):
    """Recombining lattice node: time step k, up-move count m, jump-age state r.

    r is None while no common jump has occurred (R = 2*theta + k*dt), else the
    integer age j meaning R = j*dt.  Tables encode r as an index: 0 for the
    never-jumped state, j + 1 for age j.
    """

    k: int
    m: int
    r: int | None

    @property
    def r_index(self):
        return 0 if self.r is None else self.r + 1


def branch_weights(grid):
    """Probabilities of the four branches in canonical order; they sum to 1."""
    k = grid.kappa
    return np.array([k / 2.0, k / 2.0, (1.0 - k) / 2.0, (1.0 - k) / 2.0])


def martingale_rep(values, grid):
    """Solve the 4x4 system for the unique representation of four branch values
    on the basis {1, eps, eta, eps*eta}.

    The mean coincides with the branch-weighted conditional expectation because
    eps, eta and eps*eta are centered under the branch weights.
    """
    v = np.asarray(values, dtype=float)
    if v.shape != (4,):
        raise ValueError("expected exactly four branch values in canonical order")
    for i, x in enumerate(v):
        if not math.isfinite(x):
            e, j = BRANCH_EPS[i], BRANCH_JUMP[i]
            raise ValueError(
                f"non-finite value {x!r} on branch {i} (eps={e:+d}, "
                f"{'jump' if j else 'no jump'})"
            )
    a = grid.kappa - 1.0
    u = ((v[2] + v[3]) - (v[0] + v[1])) / 2.0
    vv = ((v[2] - v[3]) - (v[0] - v[1])) / 2.0
    mean = (v[0] + v[1]) / 2.0 - u * a
    z = math.sqrt(grid.n_steps) * ((v[0] - v[1]) / 2.0 - vv * a)
    return MartingaleRep(mean=mean, z=z, u=u, v=vv)


class TreePath(NamedTuple):
    eps: tuple[int, ...]
    jumps: tuple[bool, ...]
    player_eps: tuple[int, ...] | None
    prob: float


def enumerate_tree(grid, max_steps, include_player=False, cap=TREE_CAP_DEFAULT) -> Iterator[TreePath]:
    """Enumerate all increment paths of the common tree (4 branches per step,
    8 with an idiosyncratic walk).  Zero-probability branches are pruned.
    Exact small-n oracle backend; refuses above the step cap."""
    if max_steps > cap:
        raise RefusalError(f"enumerate_tree limited to {cap} steps, got {max_steps}")
    w = branch_weights(grid)
    live = [i for i in range(4) if w[i] > 0.0]
    player_choices = ((1, -1) if include_player else (None,))
    for branches in product(live, repeat=max_steps):
        prob = 1.0
        for b in branches:
            prob *= w[b]
        eps = tuple(BRANCH_EPS[b] for b in branches)
        jumps = tuple(BRANCH_JUMP[b] for b in branches)
        if not include_player:
            yield TreePath(eps=eps, jumps=jumps, player_eps=None, prob=prob)
            continue
        for peps in product((1, -1), repeat=max_steps):
            yield TreePath(eps=eps, jumps=jumps, player_eps=peps, prob=prob * 0.5 ** max_steps)
