"""Factorized spatial-spectral attention for hyperspectral images, with
masked-autoencoder pretraining, on a small numpy autodiff core."""
from .attention import (
    AttentionFactors,
    DenseParams,
    LESSBlockParams,
    atten_pool,
    branch_attention,
    dense_flops,
    full_ss_attention,
    init_dense,
    init_less_block,
    kron_compose,
    less_attention,
    less_block,
    less_flops,
)
from .bench import FlopReport, LatencyRow, ShapeConfig, count_flops, fit_scaling_exponent, measure_latency
from .embed import EmbedParams, TokenGrid, augment_cls, embed, init_embed, patch_coords, patchify
from .errors import (
    CapacityError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
    InsufficientDataError,
    NumericError,
)
from .hypermae import (
    HCSRange,
    HyperMAEModel,
    MAEConfig,
    MaskPlan,
    get_preset,
    hcs_sample,
    init_model,
    load_checkpoint,
    make_mask_plan,
    pretrain,
    save_checkpoint,
    train_step,
)
from .spectral import (
    ChannelConfig,
    HyperCube,
    WavelengthGrid,
    load_config,
    make_config,
    make_reference_grid,
    save_config,
    synth_cube,
)
from .ssrope import RopeConfig, apply_spatial, apply_spectral
from .tensor import FlopCounter, Tensor, grad_check, precision

__version__ = "0.1.0"
