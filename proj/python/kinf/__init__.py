"""Influence-based unlearning in parameter space and in tangent-kernel space."""

from ._kinf import (
    ConfigError,
    KinfError,
    Mlp,
    NumericalError,
    analytic_ntk,
    config_defaults,
    empirical_ntk,
    kgd_train,
    make_blobs,
    run_experiment,
    unlearn_dual,
    unlearn_primal,
)

__all__ = [
    "ConfigError",
    "KinfError",
    "Mlp",
    "NumericalError",
    "analytic_ntk",
    "config_defaults",
    "empirical_ntk",
    "kgd_train",
    "make_blobs",
    "run_experiment",
    "unlearn_dual",
    "unlearn_primal",
]
