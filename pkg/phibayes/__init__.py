from phibayes.divergence import DivergenceSpec
from phibayes.dual import DualCriterion
from phibayes.families import Dataset, Exponential, NormalLocation, NormalLocationScale, build_family
from phibayes.posterior import PhiPosterior, PriorSpec

__version__ = "0.1.0"

__all__ = (
    "Dataset",
    "DivergenceSpec",
    "DualCriterion",
    "Exponential",
    "NormalLocation",
    "NormalLocationScale",
    "PhiPosterior",
    "PriorSpec",
    "build_family",
)
