"""Three-class VUS estimation under nonignorable verification bias."""

from .data import Dataset, Subject, kernel_i, onehot, position_sums, vus_fast, vus_naive
from .disease import DiseaseFit, Eta, fit_disease, rho_v1, score_u
from .estimators import BIAS_CORRECTED, Method, ModelFit, estimate_vus, fit_models, pseudo_weights
from .inference import VusResult, WaldTest, asymptotic_se, bootstrap, bootstrap_se, vus_result
from .meanscore import MeanScoreProblem, SolverReport, solve_gamma
from .scenarios import ScenarioSpec, generate, scenario, true_vus
from .simulation import McReport, run_mc
from .verification import Gamma, pi, rho_v0

__all__ = [
    "Dataset", "Subject", "kernel_i", "onehot", "position_sums", "vus_fast", "vus_naive",
    "DiseaseFit", "Eta", "fit_disease", "rho_v1", "score_u",
    "BIAS_CORRECTED", "Method", "ModelFit", "estimate_vus", "fit_models", "pseudo_weights",
    "VusResult", "WaldTest", "asymptotic_se", "bootstrap", "bootstrap_se", "vus_result",
    "MeanScoreProblem", "SolverReport", "solve_gamma",
    "ScenarioSpec", "generate", "scenario", "true_vus",
    "McReport", "run_mc",
    "Gamma", "pi", "rho_v0",
]
