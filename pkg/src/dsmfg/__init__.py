"""Mean-field equilibrium toolkit for demand-side-management contracts.

Solves the linear-quadratic mean-field game (and its central-planner and
aggregator variants) on a random-walk lattice: backward Riccati and linear
BSDE tables, forward feedback recursions, Monte Carlo cost evaluation, an
n-player Nash-gap estimator, and parameter calibration from metered data.
"""

__version__ = "0.1.0"

from .dynamics import CommonPath, ModelParams, PlayerPath, simulate_common_path, simulate_player_path
from .errors import ConfigError, DsmfgError, MissingArtifactError, RefusalError
from .lattice import BranchIncrement, CommonStateIndex, GridSpec, MartingaleRep, branch_weights, enumerate_tree, martingale_rep
from .riccati import PhiCurve, PriceSpec, RiccatiTable, solve_phi_ode, solve_phibar, solve_phibar_picard
from .bsde import PsiAffine, PsiBarTable, estimate_b, exact_b, solve_a_coefficient, solve_psi_tree, solve_psibar
from .control import EquilibriumTables, forward_common_control, forward_player_control, nplayer_profile, solve_equilibrium
from .costs import CostEstimate, NashGapReport, eval_j_c, eval_j_mfg, gateaux_residual, nash_gap
from .calibration import CalibrationResult, ConsumptionPanel, FormatSpec, estimate_seasonality, estimate_volatilities, fit_price_curve, ingest_csv
from .scenario import Scenario, reference_scenario, parse_scenario, parse_scenario_text, scenario_to_text
