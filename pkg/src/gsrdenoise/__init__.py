"""Group-sparsity-residual image denoising with an external GMM patch-group prior."""

from .denoiser import DenoiseParams, denoise
from .gmm import GmmModel, TrainingConfig, load_model, sample_training_groups, save_model, train_em
from .grouping import PatchGroup, PatchSpec, aggregate, block_match, subtract_group_mean
from .image import add_awgn, load_pgm, psnr, save_pgm

__version__ = "0.1.0"
