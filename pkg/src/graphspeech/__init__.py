"""Real-valued graph-spectral speech enhancement toolkit."""

from .audio_io import AudioClip, ManifestEntry, load_manifest, mix_at_snr, read_wav, write_wav
from .enhance import (
    AdamState,
    Mask,
    MlpParams,
    TrainConfig,
    apply_mask,
    enhance_pipeline,
    estimator_mask_source,
    init_mlp_params,
    load_checkpoint,
    mlp_forward,
    oracle_mask_source,
    oracle_ratio_mask,
    save_checkpoint,
    si_sdr_value_and_grad,
    train_step,
    unity_mask_source,
)
from .framing import FrameMatrix, FramingConfig, frame_signal, overlap_add
from .graph_basis import (
    AdjacencyMatrix,
    ComplexGraphBasis,
    GraphBasis,
    build_adjacency,
    circulant_singular_oracle,
    decompose_evd,
    decompose_svd,
    load_basis,
    save_basis,
)
from .metrics import EvalReport, reconstruction_error, si_sdr, snr
from .transform import (
    ComplexSpectrogram,
    TimeGraphSpectrogram,
    analyze,
    gft_evd_forward,
    gft_evd_inverse,
    gft_svd_forward,
    gft_svd_inverse,
    stft_forward,
    stft_inverse,
    synthesize,
)

__version__ = "0.1.0"
