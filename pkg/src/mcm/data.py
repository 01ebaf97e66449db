"""Dataset plumbing: image pairs, manifests, labels, synthetic scenes.

On-disk layout of a dataset directory:

  manifest.txt   line-oriented, tab-separated: id, rgb file, depth file,
                 label row index ('-' when unlabeled); paths are relative
                 to the manifest; '#' lines are comments. A '# split: X'
                 comment tags the split.
  labels.csv     header `id,<label names...>`, one {0,1} row per image.
  *.ppm / *.pgm  8-bit binary images (depth may also be 16-bit P5).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .mixing import ImagePair, MaskPlan, unpatchify
from .netpbm import read_netpbm, write_pgm, write_ppm
from .rng import SplitMix64, derive_seed
from .tensor import Tensor

MASK_GRAY = 0.5  # masked patches render as mid-gray in visualizations


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    rgb: str
    depth: str
    label_row: int | None


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.records)


def load_pair(rgb_path, depth_path) -> ImagePair:
    """Read a P6 rgb file and a P5 depth file into an aligned pair."""
    rgb, _ = read_netpbm(rgb_path)
    depth, _ = read_netpbm(depth_path)
    if rgb.shape[2] != 3:
        raise DataError(f"{rgb_path} is not a color P6 file")
    if depth.shape[2] != 1:
        raise DataError(f"{depth_path} is not a grayscale P5 file")
    if rgb.shape[:2] != depth.shape[:2]:
        raise DataError(
            f"size mismatch: rgb {rgb.shape[:2]} vs depth {depth.shape[:2]}"
        )
    return ImagePair(rgb=Tensor(rgb), depth=Tensor(depth))


def save_pair(pair: ImagePair, rgb_path, depth_path) -> None:
    write_ppm(rgb_path, pair.rgb.data)
    write_pgm(depth_path, pair.depth.data)


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = [f"# split: {manifest.split}"]
    for r in sorted(manifest.records, key=lambda r: r.id):
        row = "-" if r.label_row is None else str(r.label_row)
        lines.append(f"{r.id}\t{r.rgb}\t{r.depth}\t{row}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    """Parse a manifest; records come back sorted by id, files must exist."""
    path = Path(path)
    root = path.parent
    split = "train"
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("split:"):
                split = body.split(":", 1)[1].strip()
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
        rid, rgb, depth, row = parts
        records.append(
            ManifestRecord(rid, rgb, depth, None if row == "-" else int(row))
        )
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate image ids")
    for r in records:
        for rel in (r.rgb, r.depth):
            if not (root / rel).exists():
                raise DataError(f"{path}: missing file {rel} for id {r.id}")
    records.sort(key=lambda r: r.id)
    return DatasetManifest(root=root, records=records, split=split)


def load_labels(path) -> tuple[list[str], dict[str, int], np.ndarray]:
    """Read labels.csv: (label names, id -> row, NxK {0,1} matrix)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise DataError(f"{path}: first column must be 'id'")
        names = header[1:]
        ids: dict[str, int] = {}
        rows = []
        for row in reader:
            if len(row) != len(header):
                raise DataError(f"{path}: row {len(rows)} has {len(row)} fields")
            if row[0] in ids:
                raise DataError(f"{path}: duplicate id {row[0]}")
            values = []
            for cell in row[1:]:
                if cell not in ("0", "1"):
                    raise DataError(f"{path}: label value {cell!r} is not 0/1")
                values.append(int(cell))
            ids[row[0]] = len(rows)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no label rows")
    return names, ids, np.asarray(rows, dtype=np.float64)


def load_record_pair(manifest: DatasetManifest, record: ManifestRecord) -> ImagePair:
    return load_pair(manifest.root / record.rgb, manifest.root / record.depth)


def epoch_batches(
    manifest: DatasetManifest, batch_size: int, seed: int, epoch: int
) -> list[list[ManifestRecord]]:
    """Seeded shuffle, then sequential fixed-size batches; the last may be short."""
    order = list(range(len(manifest.records)))
    SplitMix64(derive_seed(seed, "batch", epoch)).shuffle(order)
    shuffled = [manifest.records[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


# ---------------------------------------------------------------------------
# synthetic scenes


def _label_grid(k: int) -> tuple[int, int]:
    """Near-square rows x cols factorization with rows * cols == k."""
    rows = int(math.isqrt(k))
    while k % rows:
        rows -= 1
    return rows, k // rows

_PALETTE = (
    (0.95, 0.30, 0.25),
    (0.30, 0.90, 0.35),
    (0.25, 0.40, 0.95),
    (0.95, 0.85, 0.30),
    (0.85, 0.35, 0.90),
    (0.35, 0.90, 0.90),
)


_TINT_WARM = (0.80, 0.38, 0.25)
_TINT_COOL = (0.28, 0.42, 0.80)


def synth_scene(h: int, w: int, seed: int, num_labels: int) -> tuple[ImagePair, np.ndarray]:
    """One aligned blob scene plus its label row.

    Scenes mimic aligned crops: a dominant central gaussian blob on a
    vertical gradient. The first four labels are global bimodal blob
    attributes (warm vs cool tint, large vs small, high vs low, right vs
    left), which leave strong, well-separated signatures in pooled
    features of either modality. Labels beyond four mark the presence of
    a small satellite blob at a canonical anchor cell of a near-square
    grid. Depth is the blob height field, rising where the image is
    bright.
    """
    rng = SplitMix64(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    rgb = np.empty((h, w, 3))
    for c in range(3):
        rgb[:, :, c] = 0.05 + 0.15 * (yy / max(1, h - 1))
    height_field = np.zeros((h, w))

    # global attribute bits; always drawn so streams stay aligned
    warm = rng.uniform() < 0.5
    large = rng.uniform() < 0.5
    high = rng.uniform() < 0.5
    right = rng.uniform() < 0.5
    jx = (rng.uniform() - 0.5) * 0.05
    jy = (rng.uniform() - 0.5) * 0.05
    cx = w * (0.42 + 0.16 * right + jx)
    cy = h * (0.58 - 0.16 * high + jy)
    radius = min(h, w) * (0.22 + 0.12 * large + (rng.uniform() - 0.5) * 0.02)
    base = _TINT_WARM if warm else _TINT_COOL
    tint = tuple(t + (rng.uniform() - 0.5) * 0.08 for t in base)
    bump = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * radius**2))
    height_field += bump
    for c in range(3):
        rgb[:, :, c] += tint[c] * bump

    labels = np.zeros(num_labels)
    for k, bit in enumerate((warm, large, high, right)[: min(4, num_labels)]):
        labels[k] = float(bit)

    n_sat = num_labels - 4
    if n_sat > 0:
        grid_r, grid_c = _label_grid(n_sat)
        cell_h, cell_w = h / grid_r, w / grid_c
        for k in range(n_sat):
            if rng.uniform() >= 0.45:
                continue
            labels[4 + k] = 1.0
            ay = (k // grid_c + 0.5) * cell_h + (rng.uniform() - 0.5) * 0.4 * cell_h
            ax = (k % grid_c + 0.5) * cell_w + (rng.uniform() - 0.5) * 0.4 * cell_w
            r = (0.05 + 0.05 * rng.uniform()) * min(h, w)
            color = _PALETTE[rng.randint(len(_PALETTE))]
            sat = np.exp(-((xx - ax) ** 2 + (yy - ay) ** 2) / (2.0 * r**2))
            height_field += 0.8 * sat
            for c in range(3):
                rgb[:, :, c] += color[c] * sat

    rgb = np.clip(rgb, 0.0, 1.0)
    depth = np.clip(height_field / 1.6, 0.0, 1.0)[:, :, None]
    return ImagePair(rgb=Tensor(rgb), depth=Tensor(depth)), labels


def synth_dataset(
    n: int, h: int, w: int, seed: int, out_dir, num_labels: int = 12
) -> DatasetManifest:
    """Write n seed-reproducible scene pairs plus labels.csv and manifest.txt."""
    if n < 1:
        raise DataError(f"synthetic dataset needs n >= 1, got {n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    label_rows = []
    for i in range(n):
        pair, labels = synth_scene(h, w, derive_seed(seed, "scene", i), num_labels)
        rid = f"img{i:04d}"
        rgb_name = f"{rid}_rgb.ppm"
        depth_name = f"{rid}_depth.pgm"
        save_pair(pair, out / rgb_name, out / depth_name)
        records.append(ManifestRecord(rid, rgb_name, depth_name, i))
        label_rows.append((rid, labels))
    names = [f"AU{k + 1}" for k in range(num_labels)]
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + names)
        for rid, labels in label_rows:
            writer.writerow([rid] + [str(int(v)) for v in labels])
    manifest = DatasetManifest(root=out, records=records, split="train")
    save_manifest(manifest, out / "manifest.txt")
    return manifest


# ---------------------------------------------------------------------------
# reconstruction dumps


def dump_reconstruction(
    mixed_patches: Tensor,
    pred_rgb_patches: Tensor,
    pred_depth_patches: Tensor,
    mask: MaskPlan,
    patch: int,
    img_h: int,
    img_w: int,
    out_prefix,
) -> list[Path]:
    """Write the three-image set for one sample.

    {prefix}_masked.ppm  the channel-mixed input with masked patches mid-gray
    {prefix}_rgb.ppm     the rgb reconstruction
    {prefix}_depth.pgm   the depth reconstruction

    All values are clamped to [0, 1] and quantized to 8 bits.
    """
    shown = mixed_patches.data.copy()
    shown[mask.masked] = MASK_GRAY
    masked_img = unpatchify(Tensor(np.clip(shown, 0.0, 1.0)), img_h, img_w, patch)
    rgb_img = unpatchify(
        Tensor(np.clip(pred_rgb_patches.data, 0.0, 1.0)), img_h, img_w, patch
    )
    depth_img = unpatchify(
        Tensor(np.clip(pred_depth_patches.data, 0.0, 1.0)), img_h, img_w, patch
    )
    prefix = str(out_prefix)
    paths = [
        Path(prefix + "_masked.ppm"),
        Path(prefix + "_rgb.ppm"),
        Path(prefix + "_depth.pgm"),
    ]
    write_ppm(paths[0], masked_img.data)
    write_ppm(paths[1], rgb_img.data)
    write_pgm(paths[2], depth_img.data)
    return paths
