"""Experiment drivers and exact checks."""

from bbmlab.lab.exact import (
    BkrInstance,
    bkr_brute_force,
    random_bkr_instance,
    subsequence_average_check,
)
from bbmlab.lab.experiments import (
    exp_decorrelation,
    exp_early_branching,
    exp_ergodic,
    exp_localization,
    exp_right_tail,
)
from bbmlab.lab.report import ExperimentReport, write_csv

__all__ = [
    "BkrInstance", "bkr_brute_force", "random_bkr_instance", "subsequence_average_check",
    "exp_decorrelation", "exp_early_branching", "exp_ergodic", "exp_localization",
    "exp_right_tail", "ExperimentReport", "write_csv",
]
