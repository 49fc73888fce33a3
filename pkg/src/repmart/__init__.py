"""Replicating martingales: regress-later valuation with closed-form conditional expectations."""

from .esg import EsgConfig, sample_driver, simulate
from .features import FullHermite, PolyLDR, ReluNet, basis_size
from .fit import FitConfig, ReplicatingMartingale, TrainingSet, fit_regress_later, fit_regress_now
from .portfolios import make_portfolio
from .risk import expected_shortfall, nested_mc, value_at_risk

__version__ = "0.1.0"

__all__ = [
    "EsgConfig", "sample_driver", "simulate", "FullHermite", "PolyLDR", "ReluNet", "basis_size",
    "FitConfig", "ReplicatingMartingale", "TrainingSet", "fit_regress_later", "fit_regress_now",
    "make_portfolio", "expected_shortfall", "nested_mc", "value_at_risk",
]
