"""Wind power forecasting and decision toolkit.

Simulates bounded space-time power processes, fits point and probabilistic
forecast models, samples joint trajectories through a Gaussian copula,
derives market offers and reserve levels, and verifies forecasts with
proper scores and calibration diagnostics.
"""

from .copula import (
    LatentCovariance,
    LatentSample,
    TrajectorySet,
    joint_cdf,
    sample_trajectories,
    to_latent,
    update_covariance,
)
from .data import (
    LeadTimeSet,
    MultivariateTarget,
    SiteSet,
    SpaceTimeSeries,
    ZoneAggregation,
    aggregate,
    flatten,
    load_series,
    save_series,
    unflatten,
)
from .density import (
    AdaptiveQuantileModel,
    BetaDensity,
    CensoredGaussian,
    ErrorClimatology,
    GeneralizedLogitNormal,
    PointMass,
    PredictiveCDF,
    QuantileCDF,
    QuantileSet,
    TruncatedGaussian,
    VarianceTracker,
    cdf_eval,
    cdf_inverse,
    dress_point_forecast,
    fit_adaptive_qr,
    make_parametric,
    quantile_regression,
)
from .errors import ConfigError, DataError, NumericError, WindcastError
from .market import (
    Bid,
    GridDensity,
    MarketPrices,
    MarketSpec,
    ReserveProblem,
    RevenueBreakdown,
    SystemMarginDensity,
    convolve_margin,
    expected_imbalance_cost,
    newsvendor_level,
    optimal_bid,
    optimal_reserves,
    settle,
)
from .point import (
    ARModel,
    ConditionalARModel,
    ConditionalARXModel,
    OffsiteTerms,
    QuantileARModel,
    SpaceTimeARModel,
    TARModel,
    ThresholdRule,
    fit_ar,
    fit_cpar,
    fit_cparx,
    fit_quantile_ar,
    fit_recursive,
    fit_rst,
    fit_tar,
    predict_point,
    predict_quantile_point,
)
from .scores import (
    PointMetrics,
    ReliabilityTable,
    ScoreReport,
    crps,
    energy_score,
    pinball,
    point_metrics,
    reliability,
    sample_crps,
)
from .sim import PowerCurveSpec, RegimeSwitch, SimConfig, SimResult, power_curve, simulate

__version__ = "0.1.0"
