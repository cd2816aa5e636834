"""Noise-response titration toolkit.

Train clean or trigger-poisoned CNN classifiers at desk scale, fingerprint
any such model by its response to input noise (titration curves and scores),
and localize trigger pixels with implicit gradient maps.
"""

from . import kernels
from .tensor import Tape, Tensor, backward
from .models import (Model, Prediction, build_small_cnn, forward_logits,
                     load_model, predict, save_model)
from .data import (Dataset, PoisonReport, TriggerSpec, apply_trigger,
                   load_idx, load_pgm_mask, make_trigger, poison_dataset,
                   synthetic_dataset, synthetic_splits, write_idx)
from .training import (TrainConfig, TrainRecord, evaluate_accuracy, train,
                       trigger_success_rate)
from .titration import (NoiseConfig, TitrationCurve, Verdict,
                        calibrate_operating_sigma, sample_noisy_inputs,
                        titration_curve, titration_score, verdict)
from .perturbation import (GradientMap, LogitGradient, VarianceLawReport,
                           delta_logit_samples, implicit_gradient_map,
                           logit_input_gradient, predicted_std,
                           trigger_localization_score, validate_variance_law)
from .embedding import (NoiseWalk, PcaBasis, class_logit_centroids, fit_pca,
                        nearest_class, noise_walk)

__version__ = "0.1.0"

KERNEL_BACKEND = kernels.BACKEND
