"""Sign-flip score tests and confidence intervals for GLM coefficients."""

from .baselines import (CovarianceEstimate, sandwich_covariance, sandwich_interval, sandwich_se,
                        std_normal_quantile, wald_interval)
from .errors import (ConvergenceError, DegenerateModelError, DesignError, FlipCIError,
                     InputError, ZeroVarianceError)
from .families import Family, bernoulli, family_from_name, gaussian, negbin, poisson
from .flips import (FlipEnsemble, ScoreTestResult, effective_score, flip_statistics,
                    flip_variance, generate_flips, pvalue_from_stats, sign_flip_test)
from .glm import DesignSplit, FullFit, NullFit, fit_full, fit_null
from .intervals import ConfidenceInterval
from .inversion import CiConfig, PValueFunction, confint, flip_intervals, pvalue_curve

__version__ = "0.1.0"
