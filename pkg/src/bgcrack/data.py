"""Dataset handling: disk layout loader, edge ground-truth derivation,
flip/rotation augmentation, and a seeded synthetic crack generator."""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass
class SampleRecord:
    image: np.ndarray   # float32 [3, H, W] in [0, 1]
    body: np.ndarray    # uint8 [1, H, W] in {0, 1}
    edge: np.ndarray    # uint8 [1, H, W] in {0, 1}
    id: str


@dataclass
class DatasetManifest:
    root: str
    split: str = "train"
    expected_count: int | None = None
    size: int | None = None

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(vars(self), fh, indent=2)


@dataclass
class SynthConfig:
    n_images: int = 16
    size: int = 64
    crack_count: tuple[int, int] = (1, 3)
    width: tuple[int, int] = (1, 3)
    noise_scale: float = 0.08
    crack_depth: tuple[float, float] = (0.3, 0.5)
    distractor_count: tuple[int, int] = (0, 0)  # dark non-crack blobs, labeled background
    seed: int = 0

    def __post_init__(self):
        if self.size % 32 != 0:
            raise ValueError("image size must be divisible by 32")
        if self.width[0] < 1:
            raise ValueError("crack widths must be at least 1 px")


def derive_edge_label(body, width=1):
    """Morphological gradient of a binary mask: dilate XOR erode, 3x3 structure."""
    if width < 1:
        raise ValueError("edge width must be >= 1")
    mask = np.asarray(body).astype(bool)
    squeeze = mask.ndim == 3
    plane = mask[0] if squeeze else mask
    structure = np.ones((3, 3), dtype=bool)
    grown = ndimage.binary_dilation(plane, structure, iterations=width)
    kept = ndimage.binary_erosion(plane, structure, iterations=width)
    edge = (grown ^ kept).astype(np.uint8)
    return edge[None] if squeeze else edge


def _read_image(path):
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _read_mask(path):
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr > 127).astype(np.uint8)[None]


def load_dataset(manifest: DatasetManifest, edge_width=1):
    """Read root/<split>/{images,masks}/<id>.png into records, sorted by id.

    Edge labels are derived from the body masks; a count mismatch against the
    manifest warns but does not fail.
    """
    image_dir = Path(manifest.root) / manifest.split / "images"
    mask_dir = Path(manifest.root) / manifest.split / "masks"
    paths = sorted(image_dir.glob("*.png")) if image_dir.is_dir() else []
    if not paths:
        warnings.warn(f"no images found under {image_dir}")
    records = []
    for path in paths:
        mask_path = mask_dir / path.name
        if not mask_path.is_file():
            raise FileNotFoundError(f"missing mask for {path.name}: {mask_path}")
        body = _read_mask(mask_path)
        records.append(SampleRecord(
            image=_read_image(path), body=body,
            edge=derive_edge_label(body, edge_width), id=path.stem))
    if manifest.expected_count is not None and len(records) != manifest.expected_count:
        warnings.warn(
            f"{manifest.split} split holds {len(records)} images, "
            f"manifest expects {manifest.expected_count}")
    if manifest.size is not None and records:
        h, w = records[0].image.shape[-2:]
        if (h, w) != (manifest.size, manifest.size):
            warnings.warn(f"images are {h}x{w}, manifest expects {manifest.size}")
    return records


_AUGMENT_OPS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270")


def _apply_op(arr, op):
    if op == "identity":
        return arr.copy()
    if op == "hflip":
        return np.ascontiguousarray(arr[..., ::-1])
    if op == "vflip":
        return np.ascontiguousarray(arr[..., ::-1, :])
    k = {"rot90": 1, "rot180": 2, "rot270": 3}[op]
    return np.ascontiguousarray(np.rot90(arr, k, axes=(-2, -1)))


def augment(record: SampleRecord, seed):
    """One seeded draw from {identity, flips, right-angle rotations}, applied
    identically to the image and both masks."""
    rng = np.random.default_rng(seed)
    op = _AUGMENT_OPS[rng.integers(len(_AUGMENT_OPS))]
    return SampleRecord(
        image=_apply_op(record.image, op), body=_apply_op(record.body, op),
        edge=_apply_op(record.edge, op), id=record.id)


def _stamp_disk(mask, cy, cx, radius):
    size = mask.shape[0]
    r = max(int(np.ceil(radius)), 0)
    y0, y1 = max(cy - r, 0), min(cy + r + 1, size)
    x0, x1 = max(cx - r, 0), min(cx + r + 1, size)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask[y0:y1, x0:x1] |= ((yy - cy) ** 2 + (xx - cx) ** 2) <= radius ** 2


def _draw_crack(mask, rng, width_range):
    size = mask.shape[0]
    y, x = rng.uniform(0, size, size=2)
    theta = rng.uniform(0, 2 * np.pi)
    width = rng.integers(width_range[0], width_range[1] + 1)
    n_steps = int(rng.integers(size, 2 * size))
    for _ in range(n_steps):
        _stamp_disk(mask, int(round(y)), int(round(x)), width / 2.0)
        theta += rng.normal(0.0, 0.25)
        y += np.sin(theta)
        x += np.cos(theta)
        if not (-width <= y < size + width and -width <= x < size + width):
            break


def generate_synthetic(cfg: SynthConfig, root=None, split="train"):
    """Seeded crack images: low-frequency noise background with darkened
    random-walk polylines. Optionally dumps the Steelcrack-style layout."""
    rng = np.random.default_rng(cfg.seed)
    records = []
    for i in range(cfg.n_images):
        field = ndimage.gaussian_filter(rng.standard_normal((cfg.size, cfg.size)), sigma=4.0)
        field = field / max(np.abs(field).max(), 1e-8)
        background = 0.62 + cfg.noise_scale * field
        mask = np.zeros((cfg.size, cfg.size), dtype=bool)
        for _ in range(rng.integers(cfg.crack_count[0], cfg.crack_count[1] + 1)):
            _draw_crack(mask, rng, cfg.width)
        depth = rng.uniform(0.3, 0.5)
        soft = ndimage.gaussian_filter(mask.astype(np.float64), sigma=0.6)
        gray = np.clip(background - depth * np.clip(soft * 1.5, 0.0, 1.0), 0.0, 1.0)
        pixels = np.round(gray * 255.0).astype(np.uint8)
        image = np.repeat(pixels[None], 3, axis=0).astype(np.float32) / 255.0
        body = mask.astype(np.uint8)[None]
        records.append(SampleRecord(
            image=image, body=body, edge=derive_edge_label(body), id=f"synth_{i:05d}"))
    if root is not None:
        dump_dataset(records, root, split)
    return records


def dump_dataset(records, root, split):
    """Write records as 8-bit PNGs in the root/<split>/{images,masks} layout."""
    image_dir = Path(root) / split / "images"
    mask_dir = Path(root) / split / "masks"
    image_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        rgb = np.round(rec.image * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(rgb, mode="RGB").save(image_dir / f"{rec.id}.png")
        Image.fromarray(rec.body[0] * 255, mode="L").save(mask_dir / f"{rec.id}.png")
