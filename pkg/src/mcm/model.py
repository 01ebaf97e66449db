"""Masked autoencoder networks: encoder, twin decoders, label head.

Blocks are post-norm: layernorm is applied after each residual sum,

    h   = LN(x + MSA(x))
    out = LN(h + FF(h))

which is the composition every forward here uses (note this differs from
the pre-norm layout common in ViT codebases).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ContractError, DimensionError
from .mixing import MaskPlan, MixPlan, channel_mix, patchify
from .rng import SplitMix64
from .tensor import (
    Tensor,
    add,
    concat,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mean,
    repeat_rows,
    reshape,
    scale,
    softmax_lastdim,
    transpose,
)

INIT_SIGMA = 0.02


@dataclass
class ModelConfig:
    """Desk-scale architecture knobs; every dimension is configurable."""

    img_h: int = 32
    img_w: int = 32
    patch: int = 8
    dim: int = 64
    dec_dim: int = 32
    heads: int = 4
    enc_depth: int = 4
    dec_rgb_depth: int = 2
    dec_depth_depth: int = 1
    num_labels: int = 12
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.img_h % self.patch or self.img_w % self.patch:
            raise ContractError(f"patch {self.patch} must divide image {self.img_h}x{self.img_w}")
        if self.dim % self.heads:
            raise ContractError(f"dim {self.dim} must be divisible by heads {self.heads}")
        if self.dim % 4 or self.dec_dim % 4:
            raise ContractError("dim and dec_dim must be divisible by 4 (position embedding)")
        if min(self.enc_depth, self.dec_rgb_depth, self.dec_depth_depth) < 1:
            raise ContractError("all depths must be positive")
        if self.dec_rgb_depth <= self.dec_depth_depth:
            raise ContractError("rgb decoder must be deeper than the depth decoder")

    @property
    def grid_h(self) -> int:
        return self.img_h // self.patch

    @property
    def grid_w(self) -> int:
        return self.img_w // self.patch

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_px(self) -> int:
        return self.patch * self.patch


@dataclass
class BlockParams:
    """One transformer block: attention, feed-forward, two layernorms."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class ModelParams:
    """Full parameter tree; names below define the checkpoint layout."""

    patch_w: Tensor
    patch_b: Tensor
    encoder: list[BlockParams]
    dec_embed_rgb_w: Tensor
    dec_embed_rgb_b: Tensor
    dec_embed_depth_w: Tensor
    dec_embed_depth_b: Tensor
    mask_token_rgb: Tensor
    mask_token_depth: Tensor
    dec_rgb: list[BlockParams]
    dec_depth: list[BlockParams]
    head_rgb_w: Tensor
    head_rgb_b: Tensor
    head_depth_w: Tensor
    head_depth_b: Tensor
    au_w: Tensor
    au_b: Tensor

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {
            "patch_embed.w": self.patch_w,
            "patch_embed.b": self.patch_b,
        }
        for i, blk in enumerate(self.encoder):
            _add_block(out, f"encoder.{i}", blk)
        out["dec_embed_rgb.w"] = self.dec_embed_rgb_w
        out["dec_embed_rgb.b"] = self.dec_embed_rgb_b
        out["dec_embed_depth.w"] = self.dec_embed_depth_w
        out["dec_embed_depth.b"] = self.dec_embed_depth_b
        out["mask_token_rgb"] = self.mask_token_rgb
        out["mask_token_depth"] = self.mask_token_depth
        for i, blk in enumerate(self.dec_rgb):
            _add_block(out, f"dec_rgb.{i}", blk)
        for i, blk in enumerate(self.dec_depth):
            _add_block(out, f"dec_depth.{i}", blk)
        out["head_rgb.w"] = self.head_rgb_w
        out["head_rgb.b"] = self.head_rgb_b
        out["head_depth.w"] = self.head_depth_w
        out["head_depth.b"] = self.head_depth_b
        out["au_head.w"] = self.au_w
        out["au_head.b"] = self.au_b
        return out

    def encoder_parameter_names(self) -> list[str]:
        """Names restored when fine-tuning starts from a pretrain checkpoint."""
        return [n for n in self.named_parameters() if n.startswith(("patch_embed.", "encoder."))]


def _add_block(out: dict[str, Tensor], prefix: str, blk: BlockParams) -> None:
    for f in fields(BlockParams):
        out[f"{prefix}.{f.name}"] = getattr(blk, f.name)


@dataclass
class PosEmbed:
    """Fixed (not learned) 2-d sine-cosine position table."""

    table: np.ndarray  # (L, dim)
    grid_h: int
    grid_w: int


def build_pos_embed(grid_h: int, grid_w: int, dim: int) -> PosEmbed:
    """Sine-cosine table over a row-major grid.

    The first dim/2 columns encode the row coordinate, the last dim/2 the
    column coordinate. Within an axis half, entry k of the frequency
    ladder is 10000**(-k / (dim/4)); sines come first, then cosines.
    """
    if dim % 4:
        raise ContractError(f"position embedding dim must be divisible by 4, got {dim}")
    half = dim // 2
    k = np.arange(half // 2, dtype=np.float64)
    omega = 10000.0 ** (-k / (half / 2.0))

    def axis_encoding(pos: np.ndarray) -> np.ndarray:
        ang = pos[:, None] * omega[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    rows = np.arange(grid_h, dtype=np.float64)
    cols = np.arange(grid_w, dtype=np.float64)
    ii, jj = np.meshgrid(rows, cols, indexing="ij")
    table = np.concatenate(
        [axis_encoding(ii.reshape(-1)), axis_encoding(jj.reshape(-1))], axis=1
    )
    return PosEmbed(table=np.ascontiguousarray(table), grid_h=grid_h, grid_w=grid_w)


# ---------------------------------------------------------------------------
# initialization


def _trunc(rng: SplitMix64, shape: tuple[int, ...]) -> Tensor:
    flat = np.array([rng.trunc_normal(INIT_SIGMA) for _ in range(int(np.prod(shape)))])
    return Tensor(flat.reshape(shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def _init_block(rng: SplitMix64, d: int) -> BlockParams:
    return BlockParams(
        wq=_trunc(rng, (d, d)),
        bq=_zeros((d,)),
        wk=_trunc(rng, (d, d)),
        bk=_zeros((d,)),
        wv=_trunc(rng, (d, d)),
        bv=_zeros((d,)),
        wo=_trunc(rng, (d, d)),
        bo=_zeros((d,)),
        ln1_g=_ones((d,)),
        ln1_b=_zeros((d,)),
        w1=_trunc(rng, (d, 4 * d)),
        b1=_zeros((4 * d,)),
        w2=_trunc(rng, (4 * d, d)),
        b2=_zeros((d,)),
        ln2_g=_ones((d,)),
        ln2_b=_zeros((d,)),
    )


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Fresh parameters: truncated normal (sigma 0.02, cut at 2 sigma) for
    weights and mask tokens, zeros for biases, identity layernorms.

    Draw order is fixed by this function, so (cfg, seed) pins every value.
    """
    rng = SplitMix64(seed)
    pv = cfg.patch_px * 3
    return ModelParams(
        patch_w=_trunc(rng, (pv, cfg.dim)),
        patch_b=_zeros((cfg.dim,)),
        encoder=[_init_block(rng, cfg.dim) for _ in range(cfg.enc_depth)],
        dec_embed_rgb_w=_trunc(rng, (cfg.dim, cfg.dec_dim)),
        dec_embed_rgb_b=_zeros((cfg.dec_dim,)),
        dec_embed_depth_w=_trunc(rng, (cfg.dim, cfg.dec_dim)),
        dec_embed_depth_b=_zeros((cfg.dec_dim,)),
        mask_token_rgb=_trunc(rng, (1, cfg.dec_dim)),
        mask_token_depth=_trunc(rng, (1, cfg.dec_dim)),
        dec_rgb=[_init_block(rng, cfg.dec_dim) for _ in range(cfg.dec_rgb_depth)],
        dec_depth=[_init_block(rng, cfg.dec_dim) for _ in range(cfg.dec_depth_depth)],
        head_rgb_w=_trunc(rng, (cfg.dec_dim, cfg.patch_px * 3)),
        head_rgb_b=_zeros((cfg.patch_px * 3,)),
        head_depth_w=_trunc(rng, (cfg.dec_dim, cfg.patch_px * 1)),
        head_depth_b=_zeros((cfg.patch_px * 1,)),
        au_w=_trunc(rng, (cfg.dim, cfg.num_labels)),
        au_b=_zeros((cfg.num_labels,)),
    )


# ---------------------------------------------------------------------------
# forward passes


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _msa(x: Tensor, p: BlockParams, heads: int, probs_out: list | None = None) -> Tensor:
    t, d = x.shape
    dh = d // heads
    q = _linear(x, p.wq, p.bq)
    k = _linear(x, p.wk, p.bk)
    v = _linear(x, p.wv, p.bv)
    inv = 1.0 / math.sqrt(dh)
    outs = []
    for h in range(heads):
        cols = (slice(None), slice(h * dh, (h + 1) * dh))
        qh, kh, vh = q[cols], k[cols], v[cols]
        probs = softmax_lastdim(scale(matmul(qh, transpose(kh)), inv))
        if probs_out is not None:
            probs_out.append(probs.data.copy())
        outs.append(matmul(probs, vh))
    return _linear(concat(outs, axis=1), p.wo, p.bo)


def _ff(x: Tensor, p: BlockParams) -> Tensor:
    return _linear(gelu(_linear(x, p.w1, p.b1)), p.w2, p.b2)


def transformer_block(
    x: Tensor, p: BlockParams, heads: int, eps: float, probs_out: list | None = None
) -> Tensor:
    """Post-norm block; see module docstring for the exact composition."""
    if x.data.ndim != 2 or x.shape[1] != p.wq.shape[0]:
        raise DimensionError(f"block expects (T, {p.wq.shape[0]}) tokens, got {x.shape}")
    h = layer_norm(add(x, _msa(x, p, heads, probs_out)), p.ln1_g, p.ln1_b, eps)
    return layer_norm(add(h, _ff(h, p)), p.ln2_g, p.ln2_b, eps)


def run_blocks(x: Tensor, blocks: list[BlockParams], heads: int, eps: float) -> Tensor:
    for blk in blocks:
        x = transformer_block(x, blk, heads, eps)
    return x


def encode(
    mixed_patches: Tensor,
    mask: MaskPlan,
    params: ModelParams,
    cfg: ModelConfig,
    pos: PosEmbed,
) -> Tensor:
    """Embed and encode only the visible patches; masked rows are never read."""
    n = mixed_patches.shape[0]
    if mask.length != n:
        raise ContractError(f"mask plan covers {mask.length} patches, input has {n}")
    if pos.table.shape != (n, cfg.dim):
        raise ContractError(f"position table {pos.table.shape} does not match (L={n}, d={cfg.dim})")
    vis = Tensor(mixed_patches.data[mask.visible])
    x = _linear(vis, params.patch_w, params.patch_b)
    x = add(x, Tensor(pos.table[mask.visible]))
    return run_blocks(x, params.encoder, cfg.heads, cfg.ln_eps)


def assemble_decoder_tokens(e_dec: Tensor, mask: MaskPlan, token: Tensor) -> Tensor:
    """Full-length token sequence: e_dec rows at visible slots, token at masked."""
    n = mask.length
    filled = concat([e_dec, repeat_rows(token, len(mask.masked))], axis=0)
    # row r of `filled` is visible[r] for r < V, else masked[r - V]
    restore = np.empty(n, dtype=np.intp)
    restore[mask.visible] = np.arange(len(mask.visible))
    restore[mask.masked] = len(mask.visible) + np.arange(len(mask.masked))
    return gather_rows(filled, restore)


def decode(
    e: Tensor,
    mask: MaskPlan,
    which: str,
    params: ModelParams,
    cfg: ModelConfig,
    dec_pos: PosEmbed,
) -> Tensor:
    """Reconstruct all L patches of one modality from shared visible encodings."""
    if which == "rgb":
        emb_w, emb_b = params.dec_embed_rgb_w, params.dec_embed_rgb_b
        token, blocks = params.mask_token_rgb, params.dec_rgb
        head_w, head_b = params.head_rgb_w, params.head_rgb_b
    elif which == "depth":
        emb_w, emb_b = params.dec_embed_depth_w, params.dec_embed_depth_b
        token, blocks = params.mask_token_depth, params.dec_depth
        head_w, head_b = params.head_depth_w, params.head_depth_b
    else:
        raise ContractError(f"unknown decoder modality {which!r}")
    if e.shape[0] != len(mask.visible):
        raise ContractError(f"{e.shape[0]} encodings vs {len(mask.visible)} visible patches")
    x = assemble_decoder_tokens(_linear(e, emb_w, emb_b), mask, token)
    x = add(x, Tensor(dec_pos.table))
    x = run_blocks(x, blocks, cfg.heads, cfg.ln_eps)
    return _linear(x, head_w, head_b)


MODALITIES = ("rgb", "depth", "fusion")


def au_forward(
    img: Tensor,
    modality: str,
    params: ModelParams,
    cfg: ModelConfig,
    pos: PosEmbed,
    mix_plan: MixPlan | None = None,
) -> Tensor:
    """Label logits from one image; no spatial masking at fine-tune time.

    rgb wants 3 channels, depth 1 (replicated to 3 so the shared encoder
    sees its usual width), fusion 4 (channel-mixed with the given plan).
    """
    if modality not in MODALITIES:
        raise ContractError(f"modality must be one of {MODALITIES}, got {modality!r}")
    c = img.shape[2] if img.data.ndim == 3 else None
    if modality == "rgb":
        if c != 3:
            raise ContractError(f"rgb modality needs 3 channels, got {c}")
        patches = patchify(img, cfg.patch)
    elif modality == "depth":
        if c != 1:
            raise ContractError(f"depth modality needs 1 channel, got {c}")
        patches = patchify(Tensor(np.repeat(img.data, 3, axis=2)), cfg.patch)
    else:
        if c != 4:
            raise ContractError(f"fusion modality needs 4 channels, got {c}")
        if mix_plan is None:
            raise ContractError("fusion modality needs a mix plan")
        patches = channel_mix(patchify(img, cfg.patch), mix_plan)
    x = _linear(patches, params.patch_w, params.patch_b)
    x = add(x, Tensor(pos.table))
    x = run_blocks(x, params.encoder, cfg.heads, cfg.ln_eps)
    pooled = reshape(mean(x, axis=0), (1, cfg.dim))
    return reshape(_linear(pooled, params.au_w, params.au_b), (cfg.num_labels,))
