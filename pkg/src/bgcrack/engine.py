"""Training, evaluation and prediction drivers behind the CLI."""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest, augment, load_dataset
from .decoder import BGCrack, ModelConfig
from .losses import LossConfig, total_loss
from .metrics import MetricsReport, count_macs, count_params, mi_dice, mi_iou


@dataclass
class TrainConfig:
    data_root: str = ""
    train_split: str = "train"
    val_split: str = "val"
    out_dir: str = "runs/default"
    lr: float = 6e-3
    batch_size: int = 9
    epochs: int = 70
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    use_augment: bool = True
    edge_width: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def to_dict(self):
        d = vars(self).copy()
        d["model"] = self.model.to_dict()
        d["loss"] = vars(self.loss).copy()
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("model"), dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        if isinstance(d.get("loss"), dict):
            d["loss"] = LossConfig(**d["loss"])
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


class RunLog:
    """Append-only JSON-lines event log; reloadable."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.events = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, **event):
        self.events.append(event)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(event) + "\n")

    def of_kind(self, kind):
        return [e for e in self.events if e.get("kind") == kind]

    @classmethod
    def read(cls, path):
        log = cls()
        with open(path) as fh:
            log.events = [json.loads(line) for line in fh if line.strip()]
        return log


def _batch_tensors(records, device="cpu"):
    images = torch.from_numpy(np.stack([r.image for r in records])).to(device)
    body = torch.from_numpy(np.stack([r.body for r in records])).float().to(device)
    edge = torch.from_numpy(np.stack([r.edge for r in records])).float().to(device)
    return images, body, edge


def predict_probs(model, records, batch_size=8):
    """Body/edge probability maps ([1,H,W] numpy arrays) for a list of records."""
    was_training = model.training
    model.eval()
    bodies, edges = [], []
    with torch.no_grad():
        for i in range(0, len(records), batch_size):
            images, _, _ = _batch_tensors(records[i:i + batch_size])
            pair = model(images)
            bodies.extend(p.numpy() for p in pair.prob_body)
            if pair.prob_edge is not None:
                edges.extend(p.numpy() for p in pair.prob_edge)
    model.train(was_training)
    return bodies, edges


def validation_scores(model, records):
    probs, _ = predict_probs(model, records)
    targets = [r.body for r in records]
    return mi_iou(probs, targets), mi_dice(probs, targets)


def train(cfg: TrainConfig, train_records=None, val_records=None):
    """Adam training with the five-term objective; keeps the best-validation
    checkpoint. Returns (model, RunLog).

    Records can be passed directly (e.g. in-memory synthetic data); otherwise
    they are loaded from cfg.data_root. Loading is single-worker and every
    random draw is derived from cfg.seed, so a rerun with the same config
    reproduces the loss trajectory.
    """
    torch.manual_seed(cfg.seed)
    model = BGCrack(cfg.model)
    if train_records is None:
        train_records = load_dataset(
            DatasetManifest(cfg.data_root, cfg.train_split), cfg.edge_width)
    if val_records is None and cfg.data_root:
        val_dir = Path(cfg.data_root) / cfg.val_split / "images"
        if val_dir.is_dir():
            val_records = load_dataset(
                DatasetManifest(cfg.data_root, cfg.val_split), cfg.edge_width)
    val_records = val_records or []
    if not train_records:
        raise ValueError(f"no training data under {cfg.data_root!r}")

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = RunLog(out_dir / "runlog.jsonl")
    log.append(kind="config", config=cfg.to_dict())

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.adam_betas,
                                 eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    config_echo = cfg.to_dict()
    best_score = -1.0
    best_path = out_dir / "best.ckpt"
    start = time.time()

    def validate(epoch):
        nonlocal best_score
        if not val_records:
            return
        iou, dice = validation_scores(model, val_records)
        log.append(kind="val", epoch=epoch, mi_iou=iou, mi_dice=dice,
                   elapsed=time.time() - start)
        if iou > best_score:
            best_score = iou
            save_checkpoint(best_path, model.state_dict(), config_echo)

    if cfg.epochs > 0:
        validate(epoch=0)

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(train_records))
        for lo in range(0, len(order), cfg.batch_size):
            picked = [train_records[i] for i in order[lo:lo + cfg.batch_size]]
            if cfg.use_augment:
                picked = [augment(r, (cfg.seed, epoch, int(i)))
                          for r, i in zip(picked, order[lo:lo + cfg.batch_size])]
            images, body, edge = _batch_tensors(picked)
            pair = model(images)
            report = total_loss(pair, body, edge, cfg.loss)
            if not torch.isfinite(report.total):
                raise RuntimeError(
                    f"non-finite loss at step {step}: {report.detached()}")
            optimizer.zero_grad(set_to_none=True)
            report.total.backward()
            optimizer.step()
            step += 1
            log.append(kind="step", epoch=epoch, step=step, **report.detached())
        validate(epoch)

    save_checkpoint(out_dir / "last.ckpt", model.state_dict(), config_echo)
    if not best_path.exists():
        save_checkpoint(best_path, model.state_dict(), config_echo)
    return model, log


def load_model(checkpoint_path):
    """Rebuild a model from a checkpoint's config echo and load its weights."""
    state, config = load_checkpoint(checkpoint_path)
    model = BGCrack(ModelConfig.from_dict(config["model"]))
    model.load_state_dict(state, strict=True)
    model.eval()
    return model, config


def evaluate(checkpoint_path, manifest: DatasetManifest, edge_width=1):
    """Metrics over a split, plus parameter and MAC counts for the checkpointed
    model. Returns (MetricsReport, per-image scores)."""
    model, _ = load_model(checkpoint_path)
    records = load_dataset(manifest, edge_width)
    if not records:
        raise ValueError(f"no images in split {manifest.split!r} under {manifest.root!r}")
    probs, _ = predict_probs(model, records)
    targets = [r.body for r in records]
    per_image = {
        "id": [r.id for r in records],
        "mi_iou": [mi_iou([p], [t]) for p, t in zip(probs, targets)],
        "mi_dice": [mi_dice([p], [t]) for p, t in zip(probs, targets)],
    }
    h, w = records[0].image.shape[-2:]
    macs = count_macs(model, (h, w))
    report = MetricsReport(
        mi_iou=float(np.mean(per_image["mi_iou"])),
        mi_dice=float(np.mean(per_image["mi_dice"])),
        n_images=len(records), params=count_params(model), macs=macs["total"])
    return report, per_image


def pad_to_multiple(image, multiple=32):
    """Reflect-pad a [B,3,H,W] tensor up to the next multiple; returns (padded, (H, W))."""
    h, w = image.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return image, (h, w)
    padded = F.pad(image, (pw // 2, pw - pw // 2, ph // 2, ph - ph // 2), mode="reflect")
    return padded, (h, w)


def crop_back(tensor, size, multiple=32):
    h, w = size
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    top, left = ph // 2, pw // 2
    return tensor[..., top:top + h, left:left + w]


def predict_image(model, image_chw, threshold=0.5):
    """Run one [3,H,W] float image of any size; returns dict of numpy maps."""
    tensor = torch.from_numpy(np.ascontiguousarray(image_chw, dtype=np.float32))[None]
    padded, size = pad_to_multiple(tensor)
    with torch.no_grad():
        pair = model(padded)
    body = crop_back(pair.prob_body, size)[0, 0].numpy()
    out = {"body_prob": body, "body_mask": (body >= threshold).astype(np.uint8)}
    if pair.prob_edge is not None:
        edge = crop_back(pair.prob_edge, size)[0, 0].numpy()
        out["edge_prob"] = edge
        out["edge_mask"] = (edge >= threshold).astype(np.uint8)
    return out


def overlay_rgb(image_chw, body_mask, edge_mask=None, alpha=0.5):
    """Body pixels blend toward red, edge pixels toward green, at the given alpha."""
    out = np.asarray(image_chw, dtype=np.float32).transpose(1, 2, 0).copy()
    red = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    green = np.array([0.0, 1.0, 0.0], dtype=np.float32)
    body = body_mask.astype(bool)
    edge = edge_mask.astype(bool) if edge_mask is not None else np.zeros_like(body)
    out[body & ~edge] = (1 - alpha) * out[body & ~edge] + alpha * red
    out[edge] = (1 - alpha) * out[edge] + alpha * green
    return np.clip(out, 0.0, 1.0)
