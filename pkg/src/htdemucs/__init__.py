"""Hybrid Transformer Demucs at desk scale: a bi-U-Net (waveform + spectrogram)
with a cross-domain Transformer bottleneck, optional LSH-sparse attention,
training, curation and evaluation tooling, on a small numpy autodiff engine."""
from .dsp import AudioClip, Spectrogram, istft, stft, volume_db
from .errors import (ConfigError, ContractError, CorruptionError, DegenerateRowError, DimensionError,
                     FormatError, HTDemucsError, LengthError, NumericError)
from .evaluation import SdrResult, aggregate, rtf_bench, sdr_chunks
from .separator import ChunkPlan, plan_chunks, separate
from .sparse_attention import LshConfig, SparsityPattern, lsh_pattern, sparse_attention
from .transformer import TransformerConfig
from .unet import SOURCES, HTDemucs, ModelConfig, build_model, count_params
from .weights import load_weights, save_weights

__version__ = "0.1.0"
