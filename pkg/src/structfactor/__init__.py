"""Structural-factor modelling of high-dimensional time series.

Typical use::

    from structfactor import read_csv, decompose, fit_factors

    panel = read_csv("weekly.csv", periodicity_s=52)
    dec, bic = decompose(panel)
    ffit = fit_factors(dec.irregular, m=2)
"""

from .cca import FactorModel, TestReport, fit_factors, ratio_estimator, select_num_factors
from .detrend import BicTable, Decomposition, OrderSpec, decompose, fit, select_orders
from .dynamics import VarModel, fit_pipeline, fit_var, forecast, rolling_evaluate
from .errors import InputError, NumericError, StructFactorError
from .panel import TimePanel, read_csv, write_csv

__version__ = "0.1.0"
