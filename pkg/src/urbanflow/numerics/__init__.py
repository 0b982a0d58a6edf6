from .glm import (FitReport, LogisticGLM, PoissonGLM, RankDeficientError,
                  logistic_newton, poisson_irls)
from .kde import GaussianKDE, kde, kde2d
from .spectral import SpectralClusterer, spectral_cluster
from .stats import ZeroVarianceError, ks_two_sample, pearson, spearman

__all__ = [
    "FitReport", "GaussianKDE", "LogisticGLM", "PoissonGLM",
    "RankDeficientError", "SpectralClusterer", "ZeroVarianceError",
    "kde", "kde2d", "ks_two_sample", "logistic_newton", "pearson",
    "poisson_irls", "spearman", "spectral_cluster",
]
