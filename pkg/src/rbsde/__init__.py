"""Reflected BSDEs on finite event trees: solvers, games and brute-force checks."""
from .double import check_separation, solve_decoupled, solve_direct, solve_double, solve_fnm
from .dynkin import epsilon_optimal, game_value, plain_vs_system, saddle_check, stability_bound_check
from .errors import (BudgetError, ConvergenceError, InvariantError, RbsdeError, SeparationError,
                     ValidationError)
from .fexp import Solution, f_expectation, solve_bsde
from .filtration import (FilteredTree, StoppingRule, binomial_tree, build_chain, class_d_norm,
                         count_rules, enumerate_stopping_rules, explicit_tree)
from .generators import Affine, Logistic, Moreau, Power, Tabulated, from_spec
from .lower import solve_lower, solve_upper
from .oracle import OracleBudget, oracle_game, oracle_optimal_stopping
from .processes import FVProcess, LatticeProcess, mertens_decompose
from .scenario import Scenario
from .snell import snell_envelope

__version__ = "0.1.0"
