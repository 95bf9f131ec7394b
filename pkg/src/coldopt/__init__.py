"""coldopt: density-constrained global optimisation over a continuous latent
space, with the trained region mapped by a Gaussian mixture of per-datapoint
encoding distributions."""

from .density import MixtureDensity, build_density_model, log_component_density
from .hnsw import HnswIndex, brute_force_knn, recall_at_k
from .model import (
    LossBreakdown,
    MlpPredictor,
    ToyPvae,
    encode,
    decode,
    kl_to_standard_normal,
    predict,
    pvae_loss,
    pvae_loss_grad,
    toy_train,
)
from .objectives import aspect_ratio, diversity, rotation, thickness
from .optimizer import OptConfig, OptProblem, OptResult, maximize_constrained, minimize_cobyla
from .pipeline import (
    Candidate,
    ColdRunReport,
    GridSpec,
    filter_by_density,
    knn_accuracy_study,
    knn_timing_study,
    rank_and_select,
    run_cold,
    sample_grid,
)

__all__ = [
    "MixtureDensity", "build_density_model", "log_component_density",
    "HnswIndex", "brute_force_knn", "recall_at_k",
    "LossBreakdown", "MlpPredictor", "ToyPvae", "encode", "decode",
    "kl_to_standard_normal", "predict", "pvae_loss", "pvae_loss_grad", "toy_train",
    "aspect_ratio", "diversity", "rotation", "thickness",
    "OptConfig", "OptProblem", "OptResult", "maximize_constrained", "minimize_cobyla",
    "Candidate", "ColdRunReport", "GridSpec", "filter_by_density",
    "knn_accuracy_study", "knn_timing_study", "rank_and_select", "run_cold", "sample_grid",
]

__version__ = "0.1.0"
