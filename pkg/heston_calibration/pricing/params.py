"""
Contract data and model parameters.

``MarketSpec`` carries what the market fixes (strike, rates, maturity);
``HestonParams`` is the calibration vector u = (sigma_nu, rho, kappa_nu, mu_nu);
``ParameterBox`` holds the per-component bounds the calibration respects.
"""
import math
from dataclasses import dataclass, replace

import numpy as np

from .conf import heston_setting
from .exceptions import ParameterError

PARAMETER_NAMES = ('sigma_nu', 'rho', 'kappa_nu', 'mu_nu')


@dataclass(frozen=True)
class MarketSpec:
    K: float = 10.0
    r: float = 0.1
    q: float = 0.05
    T: float = 1.0
    option_kind: str = 'put'

    def __post_init__(self):
        if not (math.isfinite(self.K) and self.K > 0):
            raise ParameterError(f"Strike must be positive, got K={self.K}.")
        if not (math.isfinite(self.T) and self.T > 0):
            raise ParameterError(f"Maturity must be positive, got T={self.T}.")
        if not (math.isfinite(self.r) and math.isfinite(self.q)):
            raise ParameterError("Rates must be finite.")
        if self.option_kind != 'put':
            raise ParameterError(f"Only European puts are priced, got '{self.option_kind}'.")

    @property
    def log_strike(self):
        return math.log(self.K)

    def with_maturity(self, T):
        return replace(self, T=T)


@dataclass(frozen=True)
class HestonParams:
    """Model parameters; signs and the Feller condition are checked by the box, not here."""

    sigma_nu: float
    rho: float
    kappa_nu: float
    mu_nu: float

    def __post_init__(self):
        for name in PARAMETER_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"Parameter {name} must be finite.")

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (4,):
            raise ParameterError(f"Expected 4 parameter values, got shape {values.shape}.")
        return cls(*(float(v) for v in values))

    def as_array(self):
        return np.array([self.sigma_nu, self.rho, self.kappa_nu, self.mu_nu], dtype=float)

    def as_dict(self):
        return {name: getattr(self, name) for name in PARAMETER_NAMES}

    @property
    def feller_gap(self):
        """2 kappa mu - sigma^2; non-negative when the Feller condition holds."""
        return 2.0 * self.kappa_nu * self.mu_nu - self.sigma_nu ** 2

    @property
    def satisfies_feller(self):
        return self.feller_gap >= 0.0


@dataclass(frozen=True)
class ParameterBox:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.lower) != 4 or len(self.upper) != 4:
            raise ParameterError("A parameter box needs 4 lower and 4 upper bounds.")
        for name, lo, hi in zip(PARAMETER_NAMES, self.lower, self.upper):
            if not lo < hi:
                raise ParameterError(f"Box for {name} is empty: [{lo}, {hi}].")
        if self.lower[1] < -1.0 or self.upper[1] > 1.0:
            raise ParameterError("Correlation bounds must lie within [-1, 1].")
        if min(self.lower[0], self.lower[2], self.lower[3]) <= 0.0:
            raise ParameterError("sigma_nu, kappa_nu and mu_nu need positive lower bounds.")

    @classmethod
    def from_mapping(cls, bounds):
        try:
            pairs = [tuple(bounds[name]) for name in PARAMETER_NAMES]
        except KeyError as exc:
            raise ParameterError(f"Box is missing bounds for {exc.args[0]}.") from exc
        return cls(lower=tuple(float(p[0]) for p in pairs), upper=tuple(float(p[1]) for p in pairs))

    @classmethod
    def default(cls):
        return cls.from_mapping(heston_setting('BOX'))

    def as_mapping(self):
        return {name: [lo, hi] for name, lo, hi in zip(PARAMETER_NAMES, self.lower, self.upper)}

    def contains(self, params):
        values = params.as_array()
        return bool(np.all(values >= np.asarray(self.lower)) and np.all(values <= np.asarray(self.upper)))

    def clip(self, values):
        return np.clip(np.asarray(values, dtype=float), self.lower, self.upper)

    def check(self, params):
        if not self.contains(params):
            raise ParameterError(f"Parameters {params} lie outside the admissible box {self.as_mapping()}.")
        return params


REFERENCE_MARKET = MarketSpec(K=10.0, r=0.1, q=0.05, T=1.0)
REFERENCE_PARAMS = HestonParams(sigma_nu=0.9, rho=0.1, kappa_nu=5.0, mu_nu=0.16)
INITIAL_GUESS = HestonParams(sigma_nu=0.92, rho=0.05, kappa_nu=5.2, mu_nu=0.18)
