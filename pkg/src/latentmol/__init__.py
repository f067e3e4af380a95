"""Latent-space molecule optimization in plain numpy.

A total string codec, a small reverse-mode autodiff engine, a VAE over the
codec's strings, property predictors and gradient search in latent space,
plus filtering, fine-tuning and benchmark tasks.
"""

from .molgraph import MolGraph, canonical_key, fingerprint, tanimoto, to_smiles, validate
from .oracles import PropertyOracle, ExternalOracle, get_oracle, kd_from_dg, combine_poses
from .selfies import decode, encode
from .vae import DESK_DIMS, PAPER_DIMS, VaeDims, VaeModel, VaeTrainConfig, load_vae, save_vae, train_vae
from .predictor import PredictorConfig, PropertyPredictor, gen_training_set, train_predictor
from .optimize import Objective, ObjectiveTerm, build_mask, reverse_optimize
from .refine import FilterPolicy, filter_molecules, finetune

__version__ = "0.1.0"

__all__ = [
    "MolGraph", "canonical_key", "fingerprint", "tanimoto", "to_smiles", "validate",
    "PropertyOracle", "ExternalOracle", "get_oracle", "kd_from_dg", "combine_poses",
    "decode", "encode",
    "DESK_DIMS", "PAPER_DIMS", "VaeDims", "VaeModel", "VaeTrainConfig", "load_vae", "save_vae", "train_vae",
    "PredictorConfig", "PropertyPredictor", "gen_training_set", "train_predictor",
    "Objective", "ObjectiveTerm", "build_mask", "reverse_optimize",
    "FilterPolicy", "filter_molecules", "finetune",
]
