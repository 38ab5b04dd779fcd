"""One-shot face swapping in the latent space of a style-based generator."""
from .encoder import EncoderConfig, HieRFE, LatentSpace, encode, load_encoder, save_encoder
from .errors import (CapabilityError, CheckpointError, ConfigurationError, DimensionError,
                     ImageIOError, MegaFSError, NumericError, ValidationError)
from .imageio import load_image, save_image
from .latent import HierLatent, WPlusLatent, num_high_codes, num_style_codes
from .losses import LossReport, LossWeightsInv, LossWeightsSwap, l_inv, l_swap
from .manipulators import (FTM, IDInjection, ftm_forward, id_inject, lcr_compose, transfer_block,
                           transfer_cell)
from .oracles import OracleSet
from .pipeline import MegaFS, PipelineConfig, SwapResult, batch_generate
from .synthesis import GeneratorConfig, GeneratorHandle, build_generator, synthesize
from .trainer import TrainConfig, TrainLog, train_ftm, train_hierfe

__version__ = "0.1.0"
