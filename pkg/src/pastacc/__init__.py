"""Constant-time estimation of accuracy change on a growing past dataset."""

from .errors import PastAccError
from .nn import MlpNetwork, ParamVector, Prediction, accuracy, cross_entropy, flatten_params, forward, grad_class_loss, param_delta
from .estimator import GradSumRecord, effect, grad_sum, grad_sum_minibatch, merge_gradsum
from .regressor import EfSample, RegressionModel, calibrate, fit, predict

__version__ = "0.1.0"
