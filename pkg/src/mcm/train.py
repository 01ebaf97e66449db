"""Training loops and evaluation passes wired from the building blocks.

Stream naming (see rng.derive_seed): parameter init uses ("init",),
per-epoch plan streams use ("mixplan", epoch) and ("maskplan", epoch)
with one u64 plan seed drawn per sample, frozen per-image mix plans use
("mixplan-fixed", image_id), evaluation mix plans use ("evalmix",
image_id), and batch shuffling uses ("batch", epoch) inside data.py.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import reduce
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, restore_named, save_checkpoint
from .config import RunConfig, check_model_compat
from .data import (
    DatasetManifest,
    dump_reconstruction,
    epoch_batches,
    load_labels,
    load_record_pair,
)
from .errors import DataError
from .losses import au_weights, f1_per_label, recon_loss_parts, weighted_bce
from .mixing import ImagePair, channel_mix, fuse, patchify, sample_mask_plan, sample_mix_plan
from .model import (
    ModelParams,
    PosEmbed,
    au_forward,
    build_pos_embed,
    decode,
    encode,
    init_params,
)
from .optim import AdamW, Schedule, layerwise_scale, lr_at
from .rng import SplitMix64, derive_seed
from .tensor import Tensor, add, backward, concat, no_grad, reshape, scale

logger = logging.getLogger(__name__)


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _mean_of(losses: list[Tensor]) -> Tensor:
    return scale(reduce(add, losses), 1.0 / len(losses))


@dataclass
class Workbench:
    """Model plus the fixed tables every forward pass needs."""

    cfg: RunConfig
    params: ModelParams
    pos_enc: PosEmbed
    pos_dec: PosEmbed

    @classmethod
    def fresh(cls, cfg: RunConfig, init_stream: str = "init") -> "Workbench":
        mc = cfg.model_config()
        return cls(
            cfg=cfg,
            params=init_params(mc, derive_seed(cfg.seed, init_stream)),
            pos_enc=build_pos_embed(mc.grid_h, mc.grid_w, mc.dim),
            pos_dec=build_pos_embed(mc.grid_h, mc.grid_w, mc.dec_dim),
        )


def pretrain_sample_loss(
    bench: Workbench, pair: ImagePair, mix_seed: int, mask_seed: int
) -> tuple[Tensor, Tensor]:
    """Forward one pair through mix, mask, encode, twin decode, recon loss."""
    mc = bench.cfg.model_config()
    patches4 = patchify(fuse(pair), mc.patch)
    mix = sample_mix_plan(mc.num_patches, mix_seed)
    mixed = channel_mix(patches4, mix)
    mask = sample_mask_plan(mc.num_patches, bench.cfg.mask_ratio, mask_seed)
    e = encode(mixed, mask, bench.params, mc, bench.pos_enc)
    pred_rgb = decode(e, mask, "rgb", bench.params, mc, bench.pos_dec)
    pred_depth = decode(e, mask, "depth", bench.params, mc, bench.pos_dec)
    target_rgb = patchify(pair.rgb, mc.patch)
    target_depth = patchify(pair.depth, mc.patch)
    return recon_loss_parts(pred_rgb, pred_depth, target_rgb, target_depth, mask)


def pretrain_trainables(params: ModelParams) -> dict[str, Tensor]:
    return {n: p for n, p in params.named_parameters().items() if not n.startswith("au_head.")}


def finetune_trainables(params: ModelParams) -> dict[str, Tensor]:
    keep = ("patch_embed.", "encoder.", "au_head.")
    return {n: p for n, p in params.named_parameters().items() if n.startswith(keep)}


def finetune_lr_scales(names: list[str], enc_depth: int, factor: float) -> dict[str, float]:
    """Depth assignment: patch embed 0, encoder block i -> i+1, head deepest."""
    total = enc_depth + 1
    scales = {}
    for n in names:
        if n.startswith("patch_embed."):
            idx = 0
        elif n.startswith("encoder."):
            idx = int(n.split(".")[1]) + 1
        else:
            idx = total
        scales[n] = layerwise_scale(idx, total, factor)
    return scales


def _fmt(x: float) -> str:
    return repr(float(x))


def run_pretrain(cfg: RunConfig, manifest: DatasetManifest, out_dir: Path) -> Path:
    """Full pretraining run; returns the final checkpoint path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    bench = Workbench.fresh(cfg)
    opt = AdamW(
        params=pretrain_trainables(bench.params),
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        weight_decay=cfg.weight_decay,
    )
    steps_per_epoch = max(1, -(-len(manifest.records) // cfg.batch_size))
    sched = Schedule(
        base_lr=cfg.base_lr,
        min_lr=cfg.min_lr,
        warmup_epochs=cfg.warmup_epochs,
        total_epochs=cfg.epochs,
        steps_per_epoch=steps_per_epoch,
        drop_epoch=cfg.lr_drop_at_epoch,
        drop_factor=cfg.lr_drop_factor,
    )
    echo = dict(cfg.to_dict(), stage="pretrain")
    rows = ["step,lr,loss_rgb,loss_depth,loss_total"]
    step = 0
    for epoch in range(cfg.epochs):
        mix_stream = SplitMix64(derive_seed(cfg.seed, "mixplan", epoch))
        mask_stream = SplitMix64(derive_seed(cfg.seed, "maskplan", epoch))
        for batch in epoch_batches(manifest, cfg.batch_size, cfg.seed, epoch):
            lr = lr_at(step, sched)
            rgb_losses, depth_losses = [], []
            for record in batch:
                if cfg.remix_per_step:
                    mix_seed = mix_stream.next_u64()
                else:
                    mix_seed = derive_seed(cfg.seed, "mixplan-fixed", record.id)
                pair = load_record_pair(manifest, record)
                l_rgb, l_depth = pretrain_sample_loss(
                    bench, pair, mix_seed, mask_stream.next_u64()
                )
                rgb_losses.append(l_rgb)
                depth_losses.append(l_depth)
            loss_rgb = _mean_of(rgb_losses)
            loss_depth = _mean_of(depth_losses)
            loss = add(loss_rgb, loss_depth)
            backward(loss)
            opt.step(lr)
            opt.zero_grad()
            rows.append(
                f"{step},{_fmt(lr)},{_fmt(loss_rgb.item())},"
                f"{_fmt(loss_depth.item())},{_fmt(loss.item())}"
            )
            step += 1
        save_checkpoint(
            bench.params.named_parameters(), echo, out_dir / f"ckpt_epoch{epoch + 1:04d}.mcm"
        )
    final = out_dir / "ckpt_final.mcm"
    save_checkpoint(bench.params.named_parameters(), echo, final)
    (out_dir / "pretrain_log.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return final


def _finetune_image(cfg: RunConfig, pair: ImagePair, modality: str):
    if modality == "rgb":
        return pair.rgb
    if modality == "depth":
        return pair.depth
    return fuse(pair)


def _labels_for(manifest: DatasetManifest, ids: dict[str, int], y: np.ndarray) -> np.ndarray:
    rows = []
    for r in manifest.records:
        if r.id not in ids:
            raise DataError(f"no label row for image id {r.id}")
        rows.append(y[ids[r.id]])
    return np.stack(rows)


def predict_logits(
    bench: Workbench, manifest: DatasetManifest, modality: str, seed: int
) -> np.ndarray:
    """Deterministic full-dataset logits; fusion uses per-id frozen mix plans."""
    mc = bench.cfg.model_config()
    outs = []
    with no_grad():
        for record in manifest.records:
            pair = load_record_pair(manifest, record)
            img = _finetune_image(bench.cfg, pair, modality)
            plan = None
            if modality == "fusion":
                plan = sample_mix_plan(mc.num_patches, derive_seed(seed, "evalmix", record.id))
            logits = au_forward(img, modality, bench.params, mc, bench.pos_enc, plan)
            outs.append(logits.data)
    return np.stack(outs)


def run_finetune(
    cfg: RunConfig,
    manifest: DatasetManifest,
    ckpt_path,
    out_dir: Path,
    val_manifest: DatasetManifest | None = None,
) -> Path:
    """Fine-tune encoder plus label head from a pretraining checkpoint."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = load_checkpoint(ckpt_path)
    check_model_compat(ckpt.config, cfg)
    bench = Workbench.fresh(cfg, init_stream="init-finetune")
    named = bench.params.named_parameters()
    restore_named(ckpt.tensors, named, names=bench.params.encoder_parameter_names(), strict=False)

    names, ids, y_all = load_labels(manifest.root / "labels.csv")
    if len(names) != cfg.num_labels:
        raise DataError(f"labels.csv has {len(names)} labels, config says {cfg.num_labels}")
    y_train = _labels_for(manifest, ids, y_all)
    weights = au_weights(y_train, invert=cfg.invert_weights)

    mc = cfg.model_config()
    trainables = finetune_trainables(bench.params)
    opt = AdamW(
        params=trainables,
        lr_scales=finetune_lr_scales(list(trainables), cfg.enc_depth, cfg.layer_decay),
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        weight_decay=cfg.weight_decay,
    )
    steps_per_epoch = max(1, -(-len(manifest.records) // cfg.batch_size))
    sched = Schedule(
        base_lr=cfg.base_lr,
        min_lr=cfg.min_lr,
        warmup_epochs=cfg.warmup_epochs,
        total_epochs=cfg.epochs,
        steps_per_epoch=steps_per_epoch,
        drop_epoch=cfg.lr_drop_at_epoch,
        drop_factor=cfg.lr_drop_factor,
    )
    rows = ["epoch,lr,loss_bce,train_f1,val_f1"]
    row_of = {r.id: i for i, r in enumerate(manifest.records)}
    step = 0
    for epoch in range(cfg.epochs):
        mix_stream = SplitMix64(derive_seed(cfg.seed, "mixplan", epoch))
        bce_sum, bce_n = 0.0, 0
        lr = 0.0
        for batch in epoch_batches(manifest, cfg.batch_size, cfg.seed, epoch):
            lr = lr_at(step, sched)
            logit_rows = []
            y_batch = np.stack([y_train[row_of[r.id]] for r in batch])
            for record in batch:
                pair = load_record_pair(manifest, record)
                img = _finetune_image(cfg, pair, cfg.modality)
                plan = None
                if cfg.modality == "fusion":
                    if cfg.remix_per_step:
                        mix_seed = mix_stream.next_u64()
                    else:
                        mix_seed = derive_seed(cfg.seed, "mixplan-fixed", record.id)
                    plan = sample_mix_plan(mc.num_patches, mix_seed)
                logits = au_forward(img, cfg.modality, bench.params, mc, bench.pos_enc, plan)
                logit_rows.append(reshape(logits, (1, cfg.num_labels)))
            loss = weighted_bce(concat(logit_rows, axis=0), y_batch, weights)
            backward(loss)
            opt.step(lr)
            opt.zero_grad()
            bce_sum += loss.item() * len(batch)
            bce_n += len(batch)
            step += 1
        train_logits = predict_logits(bench, manifest, cfg.modality, cfg.seed)
        _, train_f1 = f1_per_label(sigmoid_np(train_logits), y_train, cfg.threshold)
        val_cell = ""
        if val_manifest is not None:
            y_val = _labels_for(val_manifest, ids, y_all)
            val_logits = predict_logits(bench, val_manifest, cfg.modality, cfg.seed)
            _, val_f1 = f1_per_label(sigmoid_np(val_logits), y_val, cfg.threshold)
            val_cell = _fmt(val_f1)
        rows.append(
            f"{epoch},{_fmt(lr)},{_fmt(bce_sum / bce_n)},{_fmt(train_f1)},{val_cell}"
        )
    final = out_dir / "ckpt_finetune.mcm"
    echo = dict(cfg.to_dict(), stage="finetune")
    save_checkpoint(bench.params.named_parameters(), echo, final)
    (out_dir / "finetune_log.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return final


def run_eval(
    cfg: RunConfig, bench: Workbench, manifest: DatasetManifest, modality: str
) -> tuple[list[str], np.ndarray, float]:
    """Per-label F1 on a dataset; returns (label names, scores, macro)."""
    if not manifest.records:
        raise DataError("dataset is empty")
    names, ids, y_all = load_labels(manifest.root / "labels.csv")
    y = _labels_for(manifest, ids, y_all)
    logits = predict_logits(bench, manifest, modality, cfg.seed)
    scores, macro = f1_per_label(sigmoid_np(logits), y, cfg.threshold)
    return names, scores, macro


def run_reconstruct(
    bench: Workbench, pair: ImagePair, ratios: list[float], seed: int, out_prefix
) -> list[Path]:
    """Dump the three-image reconstruction set for each mask ratio."""
    mc = bench.cfg.model_config()
    paths = []
    with no_grad():
        for i, ratio in enumerate(ratios):
            mix = sample_mix_plan(mc.num_patches, derive_seed(seed, "reconmix", i))
            mask = sample_mask_plan(mc.num_patches, ratio, derive_seed(seed, "reconmask", i))
            mixed = channel_mix(patchify(fuse(pair), mc.patch), mix)
            e = encode(mixed, mask, bench.params, mc, bench.pos_enc)
            pred_rgb = decode(e, mask, "rgb", bench.params, mc, bench.pos_dec)
            pred_depth = decode(e, mask, "depth", bench.params, mc, bench.pos_dec)
            prefix = f"{out_prefix}_m{int(round(ratio * 100)):02d}"
            paths.extend(
                dump_reconstruction(
                    mixed, pred_rgb, pred_depth, mask, mc.patch, mc.img_h, mc.img_w, prefix
                )
            )
    return paths
