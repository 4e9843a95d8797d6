"""Closed-form sequential Bayesian training of fully connected classifiers.

Softmax output moments come from a probit surrogate whose Gaussian
expectations reduce to multivariate normal CDFs.
"""

from .activations import (
    RELU,
    PwlParams,
    SoftmaxDerivs,
    calibrate_probit,
    pwl_moments,
    softmax,
    softmax_deriv_expectations,
    softmax_moments,
)
from .errors import (
    CalibrationError,
    CheckpointError,
    ConfigurationError,
    NumericalError,
    ProbitBNNError,
)
from .gauss import (
    DEFAULT_JITTER,
    GaussianDiag,
    GaussianFull,
    JitterPolicy,
    MomentTriple,
    WeightPosterior,
    coherent_output_cov,
    condition_joint,
    ensure_psd,
    linear_propagate,
)
from .mvn import (
    ProbitConfig,
    default_probit_config,
    gaussian_probit_integral,
    mvn_cdf,
    mvn_cdf_partial,
    std_correlation,
)
from .network import (
    LayerSpec,
    NetworkState,
    Prediction,
    TrainingReport,
    backward_update,
    encode_label,
    decode_label,
    forward,
    init_network,
    predict,
    train,
)
from .experiment import (
    Dataset,
    ExperimentConfig,
    gen_data,
    load_checkpoint,
    predictive_grid,
    run_experiment,
    save_checkpoint,
    wedge_network,
)

__version__ = "0.1.0"
