"""Excited random walks in i.i.d. cookie environments and the branching
processes with migration that encode them."""

__version__ = "0.1.0"

from .env import CookiePile, EnvironmentLaw, check_ellipticity, delta, permute, reflect
from .coins import CoinField
from .walk import WalkPath, first_passage, run_walk, upcrossings
from .tree import ExcursionTree, excursion_to_tree, tree_to_excursion
from .branching import MigrationLaw, exact_survival, munu_run, nu_exact, theta
from .renewal import cycle_stats, estimate_sigma2_clt, estimate_speed, find_renewals
from .stats import RegimeVerdict, ks_two_sample, mean_ci, predict_regime, verify_regime
