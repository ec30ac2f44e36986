"""Multi-rate task-oriented communication over symmetric discrete memoryless channels."""

from .channel import (RateContext, SdmcChannel, codebook_size_from_rate, eps_from_ber,
                      select_level, transition_matrix, transmit)
from .codebook import NestedCodebook, QuantizationResult, extend_level, lookup, quantize, vq_loss
from .data import Dataset, batches, generate_blobs, load_idx, train_test_split
from .evaluation import SweepResult, evaluate, sweep_ber, sweep_levels_eps
from .models import MrTocModel, encode, infer, load_checkpoint, save_checkpoint
from .training import TrainConfig, mr_loss, train_progressive

__version__ = "0.1.0"
