"""Desk-scale lab for FSQ/RVQ bottlenecks sent through a binary symmetric channel."""

from .analysis import (
    exact_code_agreement,
    level_accuracy,
    level_confusion,
    mean_cosine_similarity,
    within_level_rate,
)
from .bitstream import (
    BitString,
    ChannelSpec,
    CodeSequence,
    bsc_transmit,
    corrupt_sequence,
    pack_codes,
    unpack_codes,
)
from .codec import CodecConfig, DeskCodec, LatentSequence, frame_signal, overlap_add
from .distill import LossWeights, TrainConfig, distillation_loss, train_student
from .fsq import (
    FsqSpec,
    fsq_dequantize,
    fsq_index_decode,
    fsq_index_encode,
    fsq_quantize,
    make_fsq_spec,
)
from .metrics import MelConfig, mel_mse, mel_spectrogram, si_sdr, stoi
from .rvq import RvqSpec, kmeans, rvq_dequantize, rvq_quantize, train_rvq

__version__ = "0.1.0"
