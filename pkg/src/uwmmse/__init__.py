"""Weighted-MMSE precoding and its trainable unfolded counterpart.

The package has three layers: a reference block-coordinate solver for the
weighted sum-rate problem (wmmse), a deep-unfolded network that replaces
the solver's matrix inversions with trainable surrogates (network), and a
closed-form backward pass plus SGD trainer that learns those surrogates
directly from the sum-rate objective (gradients, training). bench and cli
wrap the comparison experiments.
"""

from .errors import (DegenerateDiagonal, DegenerateInput, DimensionExceeds,
                     FormatError, ShapeMismatch, SingularMatrix, TrainingError,
                     UwmmseError)
from .kernels import diag_reciprocal, hadamard, stable_inverse, taylor_inverse
from .scenario import (TEST, TRAIN, VAL, ChannelSample, Dataset, SystemConfig,
                       apply_csi_error, config_from_json, config_to_json,
                       load_config, load_dataset, make_dataset, sample_channel,
                       save_config, save_dataset, zero_pad)
from .wmmse import (PrecoderState, SolveReport, mmse_objective, run_wmmse,
                    scale_to_power, sum_rate, total_power, wmmse_iteration,
                    zero_forcing_init)
from .network import (ForwardTrace, IMPROVED, LayerParams, ModelParams,
                      STANDARD, final_layer_v, forward_layer, forward_pass,
                      init_params, inv_surrogate, load_model, normalize_v,
                      operating_scales, save_model)
from .gradients import (GcrLayerSpec, GradientBundle, backward_layer,
                        backward_pass, fd_gradient, fd_model_gradient,
                        fd_wirtinger, gcr_propagate, last_layer_gradients,
                        normalization_backward, parameter_gradients)
from .training import (EvalReport, TrainConfig, TrainReport, evaluate,
                       lr_schedule, rate_ratio, train)
from .bench import (ExperimentSpec, ResultRow, TimingStats, cdf_report,
                    empirical_cdf, generalization_eval, run_benchmark,
                    timing_compare)

__version__ = "0.1.0"
