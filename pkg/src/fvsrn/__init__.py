"""Compressive neural representations for 3D scalar volumes.

A small fully-connected network plus a trainable volumetric latent grid
encode a scalar field; rendering raycasts directly from the compressed
representation, with a cache-blocked fused inference path and keyframe
latent grids for temporal interpolation.
"""

__version__ = "0.1.0"

from .grid import (
    KeyframeGrids,
    LatentGrid,
    QuantizedLatentGrid,
    grid_dequantize,
    grid_init,
    grid_quantize,
    grid_sample,
    grid_sample_backward,
    keyframe_sample,
)
from .imaging import Camera, Image, metric_psnr, metric_ssim, read_png, write_png
from .model import (
    FvsrnModel,
    ModelConfig,
    assemble_input,
    checkpoint_load,
    checkpoint_save,
    decode_volume,
    eval_color,
    eval_density,
    memory_footprint,
    model_init,
)
from .nn import (
    AdamState,
    FourierEncoder,
    GradientBuffer,
    MlpParams,
    adam_step,
    fourier_encode,
    fourier_make,
    init_params,
    mlp_backward,
    mlp_forward,
)
from .render import (
    RayState,
    ModelSource,
    RenderSettings,
    VolumeSource,
    camera_rays,
    composite_invert,
    composite_step,
    raymarch_backward,
    raymarch_forward,
    render_image,
)
from .transfer import TF_PRESETS, TransferFunction, tf_eval, tf_load, tf_save
from .volume import (
    ScalarVolume,
    VolumeFormatError,
    lowpass_downsample,
    sample_volume,
    synth_field,
    volume_read,
    volume_write,
)
