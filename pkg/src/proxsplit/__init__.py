"""Image restoration by half-quadratic splitting with a learned proximal network."""

from .degradation import DegradationSpec, add_gaussian_noise, apply_forward_model, make_kernel
from .io import load_checkpoint, read_image, save_checkpoint, write_image
from .metrics import psnr, ssim
from .neural import TrainConfig
from .prox import HqsConfig, data_fidelity_step, hqs_solve, quadratic_prox_exact, soft_threshold
from .psn import PsnConfig, init_model, make_special_case_config, psn_forward, restore, train_psn
from .tensor import ConfigError, Kernel, ShapeError, conv2d, conv2d_adjoint

__version__ = "0.1.0"
