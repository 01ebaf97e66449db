"""Channel fusion, patchification, per-patch channel mixing, spatial masking.

All sampling here is pure: a plan is a value determined by (seed, args)
and can be regenerated bit-exactly. Patch layout is fixed: patches are
taken in row-major grid order, and inside a patch the vector runs over
pixels in row-major order with the channel index fastest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, DimensionError
from .rng import SplitMix64
from .tensor import Tensor

# the 6 permutations of 3 survivors, lexicographic; plans store an index
PERMS3: tuple[tuple[int, int, int], ...] = (
    (0, 1, 2),
    (0, 2, 1),
    (1, 0, 2),
    (1, 2, 0),
    (2, 0, 1),
    (2, 1, 0),
)


def round_half_away(x: float) -> int:
    """round() with halves away from zero (0.5 -> 1), used for mask counts."""
    return int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))


@dataclass
class ImagePair:
    """RGB image and its aligned depth image, both in [0, 1]."""

    rgb: Tensor  # H x W x 3
    depth: Tensor  # H x W x 1

    def __post_init__(self):
        if self.rgb.data.ndim != 3 or self.rgb.shape[2] != 3:
            raise DimensionError(f"rgb must be HxWx3, got {self.rgb.shape}")
        if self.depth.data.ndim != 3 or self.depth.shape[2] != 1:
            raise DimensionError(f"depth must be HxWx1, got {self.depth.shape}")
        if self.rgb.shape[:2] != self.depth.shape[:2]:
            raise DimensionError(
                f"rgb {self.rgb.shape[:2]} and depth {self.depth.shape[:2]} sizes differ"
            )
        for name, t in (("rgb", self.rgb), ("depth", self.depth)):
            if t.data.size and (t.data.min() < 0.0 or t.data.max() > 1.0):
                raise DataError(f"{name} values must lie in [0, 1]")


@dataclass(eq=False)
class MixPlan:
    """Per-patch channel drop and survivor shuffle, regenerable from seed."""

    seed: int
    drops: np.ndarray  # (L,) uint8, dropped channel in 0..3
    perm_ids: np.ndarray  # (L,) uint8, index into PERMS3

    @property
    def length(self) -> int:
        return int(self.drops.shape[0])

    def perm(self, i: int) -> tuple[int, int, int]:
        return PERMS3[int(self.perm_ids[i])]

    def to_bytes(self) -> bytes:
        """Little-endian record: u64 seed, u32 L, then (u8 drop, u8 perm) per patch."""
        head = struct.pack("<QI", self.seed, self.length)
        body = bytes(
            b for i in range(self.length) for b in (int(self.drops[i]), int(self.perm_ids[i]))
        )
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MixPlan":
        seed, n = struct.unpack_from("<QI", blob, 0)
        body = blob[12 : 12 + 2 * n]
        if len(body) != 2 * n:
            raise DataError("mix plan record truncated")
        arr = np.frombuffer(body, dtype=np.uint8).reshape(n, 2)
        return cls(seed=seed, drops=arr[:, 0].copy(), perm_ids=arr[:, 1].copy())


@dataclass(eq=False)
class MaskPlan:
    """Partition of patch indices into visible and masked sets."""

    seed: int
    length: int
    ratio: float
    visible: np.ndarray  # sorted int64
    masked: np.ndarray  # sorted int64

    def __post_init__(self):
        if len(self.visible) + len(self.masked) != self.length:
            raise ContractError("mask plan does not partition the patch set")

    def to_bytes(self) -> bytes:
        """Little-endian record: u64 seed, u32 L, f64 ratio, u32 M, u32 masked indices."""
        head = struct.pack("<QIdI", self.seed, self.length, self.ratio, len(self.masked))
        return head + b"".join(struct.pack("<I", int(i)) for i in self.masked)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MaskPlan":
        seed, n, ratio, m = struct.unpack_from("<QIdI", blob, 0)
        idx = np.frombuffer(blob[24 : 24 + 4 * m], dtype="<u4")
        if idx.size != m:
            raise DataError("mask plan record truncated")
        masked = np.sort(idx.astype(np.int64))
        visible = np.setdiff1d(np.arange(n, dtype=np.int64), masked)
        return cls(seed=seed, length=n, ratio=ratio, visible=visible, masked=masked)


def fuse(pair: ImagePair) -> Tensor:
    """Concatenate RGB and depth by channel: channels 0-2 RGB, channel 3 depth."""
    return Tensor(np.concatenate([pair.rgb.data, pair.depth.data], axis=2))


def split_fused(fused: Tensor) -> ImagePair:
    """Inverse of fuse."""
    if fused.data.ndim != 3 or fused.shape[2] != 4:
        raise DimensionError(f"fused image must be HxWx4, got {fused.shape}")
    return ImagePair(rgb=Tensor(fused.data[:, :, :3].copy()),
                     depth=Tensor(fused.data[:, :, 3:].copy()))


def patchify(img: Tensor, patch: int) -> Tensor:
    """Split HxWxC into L x (patch*patch*C) rows, L = H*W / patch**2."""
    if img.data.ndim != 3:
        raise DimensionError(f"patchify needs HxWxC, got {img.shape}")
    h, w, c = img.shape
    if h % patch or w % patch:
        raise DimensionError(f"patch size {patch} does not divide image {h}x{w}")
    gh, gw = h // patch, w // patch
    x = img.data.reshape(gh, patch, gw, patch, c)
    x = x.transpose(0, 2, 1, 3, 4)  # grid row, grid col, py, px, c
    return Tensor(x.reshape(gh * gw, patch * patch * c))


def unpatchify(patches: Tensor, h: int, w: int, patch: int) -> Tensor:
    """Inverse of patchify; channel count is inferred from the row width."""
    if patches.data.ndim != 2:
        raise DimensionError(f"unpatchify needs LxD, got {patches.shape}")
    gh, gw = h // patch, w // patch
    n, width = patches.shape
    if n != gh * gw or width % (patch * patch):
        raise DimensionError(f"patches {patches.shape} do not tile {h}x{w} at patch {patch}")
    c = width // (patch * patch)
    x = patches.data.reshape(gh, gw, patch, patch, c)
    x = x.transpose(0, 2, 1, 3, 4)
    return Tensor(x.reshape(h, w, c))


def channel_mix(patches: Tensor, plan: MixPlan) -> Tensor:
    """Drop one channel per patch and reorder the three survivors.

    Survivors keep their ascending channel order before plan.perm is
    applied: output channel j of patch i is survivors_sorted[perm[j]].
    """
    if patches.data.ndim != 2:
        raise DimensionError(f"channel_mix needs LxD patches, got {patches.shape}")
    n, width = patches.shape
    if width % 4:
        raise DimensionError(f"patch rows must hold 4 channels, got width {width}")
    if plan.length != n:
        raise ContractError(f"plan covers {plan.length} patches, input has {n}")
    px = width // 4
    src = patches.data.reshape(n, px, 4)
    out = np.empty((n, px, 3), dtype=np.float64)
    for i in range(n):
        drop = int(plan.drops[i])
        survivors = [c for c in range(4) if c != drop]
        order = [survivors[j] for j in plan.perm(i)]
        out[i] = src[i][:, order]
    return Tensor(out.reshape(n, px * 3))


def sample_mix_plan(length: int, seed: int) -> MixPlan:
    """Independent uniform drop over 4 channels and uniform survivor order.

    Two generator draws per patch, in patch order: drop then permutation.
    """
    if length < 1:
        raise ContractError(f"mix plan needs at least one patch, got {length}")
    gen = SplitMix64(seed)
    drops = np.empty(length, dtype=np.uint8)
    perm_ids = np.empty(length, dtype=np.uint8)
    for i in range(length):
        drops[i] = gen.randint(4)
        perm_ids[i] = gen.randint(6)
    return MixPlan(seed=seed, drops=drops, perm_ids=perm_ids)


def sample_mask_plan(length: int, ratio: float, seed: int) -> MaskPlan:
    """Uniform random masked subset of round(ratio * L) patches.

    The masked set is the prefix of a seeded Fisher-Yates permutation of
    0..L-1; both sides are returned sorted.
    """
    if not 0.0 <= ratio < 1.0:
        raise ContractError(f"mask ratio must be in [0, 1), got {ratio}")
    count = round_half_away(ratio * length)
    perm = SplitMix64(seed).permutation(length)
    masked = np.sort(np.asarray(perm[:count], dtype=np.int64))
    visible = np.sort(np.asarray(perm[count:], dtype=np.int64))
    return MaskPlan(seed=seed, length=length, ratio=ratio, visible=visible, masked=masked)
