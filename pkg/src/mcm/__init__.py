"""Desk-scale masked channel-mixing autoencoder for paired RGB and depth.

The pipeline: fuse the two modalities by channel, drop and shuffle
channels per patch, hide a random patch subset, encode the visible
patches with a transformer, reconstruct both modalities with two small
decoders, and fine-tune the encoder for multi-label detection.
"""

from .config import RunConfig
from .errors import MCMError
from .mixing import (
    ImagePair,
    MaskPlan,
    MixPlan,
    channel_mix,
    fuse,
    patchify,
    sample_mask_plan,
    sample_mix_plan,
    unpatchify,
)
from .model import ModelConfig, ModelParams, au_forward, build_pos_embed, decode, encode
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ImagePair",
    "MaskPlan",
    "MixPlan",
    "MCMError",
    "ModelConfig",
    "ModelParams",
    "RunConfig",
    "Tensor",
    "au_forward",
    "backward",
    "build_pos_embed",
    "channel_mix",
    "decode",
    "encode",
    "fuse",
    "no_grad",
    "patchify",
    "sample_mask_plan",
    "sample_mix_plan",
    "unpatchify",
    "__version__",
]
