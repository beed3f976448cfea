# geoapportion/__init__.py
from geoapportion.config import EstimatorConfig, StudyDesign
from geoapportion.errors import ApportionError, ApportionWarning
from geoapportion.estimator import apportion
from geoapportion.models import ApportionmentEstimate, AttributionMatrix, ConcentrationMatrix

__all__ = [
    "ApportionError",
    "ApportionWarning",
    "ApportionmentEstimate",
    "AttributionMatrix",
    "ConcentrationMatrix",
    "EstimatorConfig",
    "StudyDesign",
    "apportion",
]
