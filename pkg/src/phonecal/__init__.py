"""Phone-level likelihoods from frame posteriors, and their calibration."""

__version__ = "0.1.0"

from .calib import CalibrationTransform, FitResult, apply, fit, gradient
from .core import (FormatError, FramePosteriorMatrix, PdfMap, PhoneSet, flat_prior,
                   frame_log_likelihoods, posterior_from_loglik, reduce_pdf_posteriors,
                   reduce_pdf_priors)
from .metrics import ConfusionMatrix, EvalReport, confusion_matrix, h_mc, pairwise_eer
from .pooling import (PhoneSegment, PhoneTrial, TrialSet, pool, pool_logdur_mean, pool_mean,
                      pool_sum)
from .synth import SynthConfig, generate, shuffle_labels
