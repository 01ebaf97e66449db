"""Central finite-difference checks for every differentiable op.

The oracle never touches the analytic path: losses are re-evaluated with
taping disabled while one input element at a time is nudged by +-h. The
reported error is max over elements of |analytic - fd| / max(1, |analytic|).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from . import tensor as T
from .config import RunConfig
from .mixing import sample_mask_plan, sample_mix_plan
from .rng import SplitMix64, derive_seed
from .tensor import Tensor, backward, no_grad
from .train import Workbench, pretrain_sample_loss
from .data import synth_scene
from .model import BlockParams, transformer_block

H_STEP = 1e-5
TOLERANCE = 1e-4


def rand_array(rng: SplitMix64, shape, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    flat = np.array([lo + (hi - lo) * rng.uniform() for _ in range(int(np.prod(shape)))])
    return flat.reshape(shape)


def central_diff(f, arr: np.ndarray, h: float = H_STEP) -> np.ndarray:
    """d f / d arr by central differences, mutating arr in place."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = np.maximum(1.0, np.abs(analytic))
    return float((np.abs(analytic - fd) / denom).max())


def check_loss(build_loss, leaves: dict[str, Tensor], h: float = H_STEP) -> float:
    """Worst relative error over all leaves of a scalar-valued graph."""
    for t in leaves.values():
        t.grad = None
    loss = build_loss()
    backward(loss)
    analytic = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in leaves.items()
    }
    with no_grad():
        f = lambda: build_loss().item()
        worst = 0.0
        for k, t in leaves.items():
            worst = max(worst, max_rel_err(analytic[k], central_diff(f, t.data, h)))
    for t in leaves.values():
        t.grad = None
    return worst


@dataclass
class CheckResult:
    name: str
    err: float

    @property
    def ok(self) -> bool:
        return self.err < TOLERANCE


def _leaf(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rand_array(rng, shape, lo, hi), requires_grad=True)


def _proj(rng, shape) -> Tensor:
    # fixed random projection turns any op output into a scalar loss
    return Tensor(rand_array(rng, shape))


def _op_checks() -> list[tuple[str, float]]:
    rng = SplitMix64(0xC0FFEE)
    results = []

    def run(name, leaves, build):
        results.append((name, check_loss(build, leaves)))

    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (4,))
    r = _proj(rng, (3, 4))
    run("add", {"a": a, "b": b}, lambda: T.sum_(T.mul(T.add(a, b), r)))

    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (3, 4))
    r = _proj(rng, (3, 4))
    run("sub", {"a": a, "b": b}, lambda: T.sum_(T.mul(T.sub(a, b), r)))

    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (4,))
    r = _proj(rng, (3, 4))
    run("mul", {"a": a, "b": b}, lambda: T.sum_(T.mul(T.mul(a, b), r)))

    a = _leaf(rng, (5,))
    r = _proj(rng, (5,))
    run("scale", {"a": a}, lambda: T.sum_(T.mul(T.scale(a, -2.5), r)))

    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (4, 2))
    r = _proj(rng, (3, 2))
    run("matmul", {"a": a, "b": b}, lambda: T.sum_(T.mul(T.matmul(a, b), r)))

    a = _leaf(rng, (2, 3, 4))
    r = _proj(rng, (4, 2, 3))
    run("transpose", {"a": a}, lambda: T.sum_(T.mul(T.transpose(a, (2, 0, 1)), r)))

    a = _leaf(rng, (3, 4))
    r = _proj(rng, (2, 6))
    run("reshape", {"a": a}, lambda: T.sum_(T.mul(T.reshape(a, (2, 6)), r)))

    a = _leaf(rng, (3, 2))
    b = _leaf(rng, (3, 3))
    r = _proj(rng, (3, 5))
    run("concat", {"a": a, "b": b}, lambda: T.sum_(T.mul(T.concat([a, b], axis=1), r)))

    a = _leaf(rng, (4, 6))
    r = _proj(rng, (2, 3))
    key = (slice(1, 3), slice(2, 5, None))
    run("slice", {"a": a}, lambda: T.sum_(T.mul(a[key[0], key[1]], r)))

    a = _leaf(rng, (5, 3))
    idx = np.array([4, 0, 0, 2])
    r = _proj(rng, (4, 3))
    run("gather", {"a": a}, lambda: T.sum_(T.mul(T.gather_rows(a, idx), r)))

    a = _leaf(rng, (1, 4))
    r = _proj(rng, (3, 4))
    run("repeat_rows", {"a": a}, lambda: T.sum_(T.mul(T.repeat_rows(a, 3), r)))

    a = _leaf(rng, (3, 4))
    run("sum", {"a": a}, lambda: T.sum_(a))

    a = _leaf(rng, (3, 4))
    r = _proj(rng, (3,))
    run("sum_axis", {"a": a}, lambda: T.sum_(T.mul(T.sum_(a, axis=1), r)))

    a = _leaf(rng, (3, 4))
    run("mean", {"a": a}, lambda: T.mean(a))

    a = _leaf(rng, (3, 4))
    r = _proj(rng, (4,))
    run("mean_axis", {"a": a}, lambda: T.sum_(T.mul(T.mean(a, axis=0), r)))

    a = _leaf(rng, (3, 4), -2.0, 2.0)
    r = _proj(rng, (3, 4))
    run("gelu", {"a": a}, lambda: T.sum_(T.mul(T.gelu(a), r)))

    a = _leaf(rng, (3, 4), -3.0, 3.0)
    r = _proj(rng, (3, 4))
    run("sigmoid", {"a": a}, lambda: T.sum_(T.mul(T.sigmoid(a), r)))

    a = _leaf(rng, (3, 4), 0.5, 2.0)
    r = _proj(rng, (3, 4))
    run("log", {"a": a}, lambda: T.sum_(T.mul(T.log(a), r)))

    # interior points only; the kink at the clamp bounds is not differentiable
    a = _leaf(rng, (3, 4), -0.4, 0.4)
    r = _proj(rng, (3, 4))
    run("clamp", {"a": a}, lambda: T.sum_(T.mul(T.clamp(a, -0.5, 0.5), r)))

    a = _leaf(rng, (3, 5), -2.0, 2.0)
    r = _proj(rng, (3, 5))
    run("softmax", {"a": a}, lambda: T.sum_(T.mul(T.softmax_lastdim(a), r)))

    x = _leaf(rng, (2, 4, 8))
    g = Tensor(rand_array(rng, (8,), 0.5, 1.5), requires_grad=True)
    bta = _leaf(rng, (8,))
    r = _proj(rng, (2, 4, 8))
    run(
        "layer_norm",
        {"x": x, "gamma": g, "beta": bta},
        lambda: T.sum_(T.mul(T.layer_norm(x, g, bta, 1e-6), r)),
    )
    return results


def _block_check() -> tuple[str, float]:
    rng = SplitMix64(0xB10C)
    d = 8
    blk = BlockParams(
        wq=_leaf(rng, (d, d), -0.3, 0.3),
        bq=_leaf(rng, (d,), -0.1, 0.1),
        wk=_leaf(rng, (d, d), -0.3, 0.3),
        bk=_leaf(rng, (d,), -0.1, 0.1),
        wv=_leaf(rng, (d, d), -0.3, 0.3),
        bv=_leaf(rng, (d,), -0.1, 0.1),
        wo=_leaf(rng, (d, d), -0.3, 0.3),
        bo=_leaf(rng, (d,), -0.1, 0.1),
        ln1_g=Tensor(rand_array(rng, (d,), 0.8, 1.2), requires_grad=True),
        ln1_b=_leaf(rng, (d,), -0.1, 0.1),
        w1=_leaf(rng, (d, 4 * d), -0.3, 0.3),
        b1=_leaf(rng, (4 * d,), -0.1, 0.1),
        w2=_leaf(rng, (4 * d, d), -0.3, 0.3),
        b2=_leaf(rng, (d,), -0.1, 0.1),
        ln2_g=Tensor(rand_array(rng, (d,), 0.8, 1.2), requires_grad=True),
        ln2_b=_leaf(rng, (d,), -0.1, 0.1),
    )
    x = _leaf(rng, (3, d))
    r = _proj(rng, (3, d))
    leaves = {"x": x}
    for f in vars(blk):
        leaves[f] = getattr(blk, f)
    err = check_loss(lambda: T.sum_(T.mul(transformer_block(x, blk, 2, 1e-6), r)), leaves)
    return ("transformer_block", err)


def toy_config() -> RunConfig:
    """Two-patch model small enough to finite-difference end to end."""
    return RunConfig(
        img_h=8,
        img_w=16,
        patch=8,
        dim=8,
        dec_dim=4,
        heads=2,
        enc_depth=1,
        dec_rgb_depth=2,
        dec_depth_depth=1,
        num_labels=3,
        mask_ratio=0.5,
        seed=7,
    )


def _end_to_end_check(cfg: RunConfig, label: str) -> tuple[str, float]:
    bench = Workbench.fresh(cfg)
    pair, _ = synth_scene(cfg.img_h, cfg.img_w, derive_seed(cfg.seed, "scene", 0), 3)
    mix_seed = derive_seed(cfg.seed, "mixplan", 0)
    mask_seed = derive_seed(cfg.seed, "maskplan", 0)

    def build():
        l_rgb, l_depth = pretrain_sample_loss(bench, pair, mix_seed, mask_seed)
        return T.add(l_rgb, l_depth)

    err = check_loss(build, bench.params.named_parameters())
    return (label, err)


def run_all() -> list[CheckResult]:
    """Every registered gradient check; each must come in under 1e-4."""
    results = [CheckResult(n, e) for n, e in _op_checks()]
    results.append(CheckResult(*_block_check()))
    results.append(CheckResult(*_end_to_end_check(toy_config(), "pretrain_loss_2patch")))
    # at a single visible patch the encoder attends over one token and its
    # q/k paths carry no gradient; a 4-patch run covers them in situ
    four = toy_config()
    four.img_w = 32
    results.append(CheckResult(*_end_to_end_check(four, "pretrain_loss_4patch")))
    return results
