"""influcast: learn per-individual influence and susceptibility vectors
from information-cascade logs, and benchmark them against classical
pairwise propagation-probability estimators."""

from .cascades import (CascadeEvent, CascadeLog, Diagnostics, DiffusionNetwork,
                       ExposureTable, build_diffusion_network, canonical_mode,
                       extract_exposures, parse_cascades, prune, split_by_time)
from .im import (Hyperparams, IMModel, TrainResult, choice_distribution,
                 gradients, objective, propagation_prob, rank_influencers, train)
from .synth import (SynthConfig, generate_ba_network, sample_ground_truth,
                    shuffle_network, simulate_cascades)
from .baselines import (IMPredictor, PairwiseTable, Predictor,
                        bernoulli_estimator, em_estimator, jaccard_estimator,
                        or_combine, pmf_complete, uniform_estimator)
from .evaluation import (GroundTruth, MetricsReport, bernoulli_kl, compositive,
                         estimate_ground_truth, influence_susceptibility_histogram,
                         matrix_difference, mkl, mrr, split_observed_hidden,
                         synthetic_ground_truth)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
