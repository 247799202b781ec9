"""On-disk solver artifacts.

cmd_solve writes the backward tables as delimited files plus a manifest
recording the scenario hash and library versions (never timestamps, so a
fixed scenario and seed reproduce byte-identical artifacts).  Floats are
written with 17 significant digits and round-trip exactly; the b-tables are
cheap to re-derive and are rebuilt on load from the stored tables.
"""

from __future__ import annotations

import csv
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .bsde import PsiBarTable, solve_b_tables
from .control import EquilibriumTables
from .errors import MissingArtifactError
from .riccati import PhiCurve, PriceSpec, RiccatiTable
from .scenario import scenario_hash

PHI_FILE = "phi.csv"
PHIBAR_FILE = "phibar.csv"
PSIBAR_FILE = "psibar.csv"
MANIFEST_FILE = "manifest.txt"
SCENARIO_FILE = "scenario.normalized.txt"


def write_artifacts(scenario, tables, out_dir):
    from .scenario import scenario_to_text

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = tables.grid
    with open(out / PHI_FILE, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "t", "phi", "a_coef", "gamma"])
        for k in range(grid.n_steps + 1):
            w.writerow([k, "%.17g" % (k * grid.dt), "%.17g" % tables.phi.values[k],
                        "%.17g" % tables.a_coef[k], "%.17g" % tables.gamma[k]])
    with open(out / PHIBAR_FILE, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "r", "phi_bar"])
        for k, r, v in tables.phibar.iter_rows():
            w.writerow([k, r, "%.17g" % v])
    with open(out / PSIBAR_FILE, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "m", "r", "psi_bar"])
        for k, m, r, v in tables.psibar.iter_rows():
            w.writerow([k, m, r, "%.17g" % v])
    (out / SCENARIO_FILE).write_text(scenario_to_text(scenario))
    manifest = [
        f"scenario_sha256 = {scenario_hash(scenario)}",
        f"dsmfg_version = {__version__}",
        f"numpy_version = {np.__version__}",
        f"python_version = {platform.python_version()}",
        f"grid.n_steps = {scenario.n_steps}",
        f"run.mode = {scenario.mode}",
    ]
    (out / MANIFEST_FILE).write_text("\n".join(manifest) + "\n")
    return [out / name for name in (PHI_FILE, PHIBAR_FILE, PSIBAR_FILE,
                                    SCENARIO_FILE, MANIFEST_FILE)]


def _check_manifest(scenario, out_dir):
    manifest = Path(out_dir) / MANIFEST_FILE
    if not manifest.exists():
        raise MissingArtifactError(
            f"no solver artifacts in {out_dir} (run 'dsmfg solve' first)")
    stored = {}
    for line in manifest.read_text().splitlines():
        key, _, value = line.partition("=")
        stored[key.strip()] = value.strip()
    if stored.get("scenario_sha256") != scenario_hash(scenario):
        raise MissingArtifactError(
            f"artifacts in {out_dir} were solved for a different scenario; re-run solve")


def load_tables(scenario, out_dir):
    """Rebuild EquilibriumTables from disk; refuses stale or absent artifacts."""
    _check_manifest(scenario, out_dir)
    out = Path(out_dir)
    params = scenario.params
    grid = scenario.grid()
    price = PriceSpec.for_mode(params, scenario.mode, agg_double_f=scenario.agg_double_f)
    n = grid.n_steps
    try:
        with open(out / PHI_FILE, newline="") as f:
            rows = list(csv.DictReader(f))
        phi_vals = np.array([float(r["phi"]) for r in rows])
        a_coef = np.array([float(r["a_coef"]) for r in rows])
        gamma = np.array([float(r["gamma"]) for r in rows])
        phibar_vals = [np.full(k + 1, np.nan) for k in range(n + 1)]
        with open(out / PHIBAR_FILE, newline="") as f:
            for r in csv.DictReader(f):
                phibar_vals[int(r["k"])][int(r["r"]) + 1] = float(r["phi_bar"])
        psibar_vals = [np.full((k + 1, k + 1), np.nan) for k in range(n + 1)]
        with open(out / PSIBAR_FILE, newline="") as f:
            for r in csv.DictReader(f):
                psibar_vals[int(r["k"])][int(r["m"]), int(r["r"]) + 1] = float(r["psi_bar"])
    except (OSError, KeyError, ValueError, IndexError) as exc:
        raise MissingArtifactError(f"corrupt artifacts in {out_dir}: {exc}") from exc
    if len(phi_vals) != n + 1:
        raise MissingArtifactError(f"artifacts in {out_dir} have the wrong grid size")
    if any(not np.all(np.isfinite(v)) for v in phibar_vals) or \
            any(not np.all(np.isfinite(v)) for v in psibar_vals):
        raise MissingArtifactError(f"artifacts in {out_dir} have missing table rows")
    phi = PhiCurve(values=phi_vals, C=params.C, D=params.A + params.K,
                   h2=params.h2, T=grid.horizon)
    phibar = RiccatiTable(params=params, grid=grid, price=price, values=phibar_vals)
    psibar = PsiBarTable(params=params, grid=grid, price=price, values=psibar_vals)
    btables = solve_b_tables(params, grid, price, phi, phibar, psibar)
    return EquilibriumTables(params=params, grid=grid, price=price, phi=phi,
                             phibar=phibar, psibar=psibar, a_coef=a_coef,
                             gamma=gamma, btables=btables, mode=scenario.mode,
                             agg_double_f=scenario.agg_double_f)
