"""darkwave: low-light RAW to sRGB enhancement by taming a frozen latent
diffusion backbone with wavelet-subband conditioning."""

from .backbone import (
    ArchConfig,
    BackboneBundle,
    DiffusionSchedule,
    PretrainConfig,
    ddim_sample,
    ddim_timesteps,
    forward_diffuse,
    load_bundle,
    pretrain_backbone,
    save_bundle,
)
from .errors import (
    CacheError,
    ConfigError,
    DarkwaveError,
    DimensionError,
    FormatError,
    FreezeViolationError,
    ParameterError,
    TrainingError,
)
from .inference import AblationTamings, EnhanceConfig, enhance, enhance_ablation, naive_isp
from .metrics import MetricReport, psnr, ssim
from .rawproc import (
    BayerRaw,
    DegradationParams,
    PackedRaw,
    ScenePair,
    SrgbImage,
    degrade,
    normalize_amplify,
    pack_bayer,
    read_pair,
    synthesize_scene,
    unpack_bayer,
    write_pair,
)
from .taming import (
    Conditioning,
    TamingSetDecoder,
    TamingSetUNet,
    build_conditioning,
    load_taming_set,
    modulate,
    save_taming_set,
)
from .training import (
    TrainConfig,
    decoder_taming_loss,
    generate_latent_cache,
    train_decoder_taming,
    train_unet_taming,
    unet_taming_loss,
)
from .wavelets import SubbandSet, WaveletSpec, dwt2, dwt_pyramid, idwt2, reconstruct, resize_baseline

__version__ = "0.1.0"
