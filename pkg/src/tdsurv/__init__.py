"""Time-dependent Cox survival network: counting-process data, an Efron
partial-likelihood network, Breslow baseline, metrics and a simulator."""

from .baseline import BaselineHazard, breslow, predict_subject, predict_survival, update_prediction
from .coxloss import FittedModel, TrainConfig, build_risk_sets, efron_loss, efron_loss_grad, fit
from .coxph import CoxFit, fit_coxph
from .data import Dataset, LongTable, Measurement, Subject, ValidationError, build_long_format, covariate_at
from .metrics import brier, cdauc, dynamic_cindex, km_censoring
from .nn import NetworkSpec
from .simulate import SimScenario, calibrate_intercept, gen_dataset

__version__ = "0.1.0"
