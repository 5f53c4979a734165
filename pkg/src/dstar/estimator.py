"""scikit-learn style front end: fit the surface and beams to one channel realization."""
from __future__ import annotations

import dataclasses

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import Architecture, ScenarioConfig
from .dbap import evaluate_solution, run_dbap
from .model import ChannelSet, check_dimensions, gen_channels


def check_channels(X, scenario: ScenarioConfig) -> ChannelSet:
    """Accept a ChannelSet or an integer seed (channels are then drawn)."""
    if isinstance(X, ChannelSet):
        check_dimensions(X, scenario)
        return X
    if isinstance(X, (int,)) and not isinstance(X, bool):
        return gen_channels(scenario, seed=X)
    raise TypeError(f"expected a ChannelSet or an integer seed, got {type(X).__name__}")


class DbapOptimizer(BaseEstimator):
    """Alternating optimizer of BS beams and surface configuration.

    ``fit`` solves for one channel realization; ``predict`` returns the
    per-group rates of the fitted configuration on any channel set of the
    same shape, and ``score`` the DL sum rate.
    """

    def __init__(self, scenario: ScenarioConfig | None = None, architecture="DSTAR", max_iters=20,
                 rho1=1.0, rho2=1.0, kappa0=0.1):
        self.scenario = scenario
        self.architecture = architecture
        self.max_iters = max_iters
        self.rho1 = rho1
        self.rho2 = rho2
        self.kappa0 = kappa0

    def _scenario(self) -> ScenarioConfig:
        base = self.scenario if self.scenario is not None else ScenarioConfig()
        return dataclasses.replace(base, architecture=Architecture(self.architecture), max_iters=self.max_iters,
                                   rho1=self.rho1, rho2=self.rho2, kappa0=self.kappa0)

    def fit(self, X, y=None):
        sc = self._scenario()
        if isinstance(X, int) and not isinstance(X, bool):
            sc = dataclasses.replace(sc, seed=X)
        channels = check_channels(X, sc)
        self.scenario_ = sc
        self.beams_, self.star_, self.trace_ = run_dbap(sc, channels)
        self.n_iter_ = self.trace_.iterations
        return self

    def predict(self, X) -> dict:
        check_is_fitted(self, "star_")
        report = evaluate_solution(self.beams_, self.star_, check_channels(X, self.scenario_), self.scenario_)
        return dict(report.rate)

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "star_")
        return evaluate_solution(self.beams_, self.star_, check_channels(X, self.scenario_),
                                 self.scenario_).dl_sum_rate
