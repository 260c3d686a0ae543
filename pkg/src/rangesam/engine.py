"""Training loop, evaluation and the data pipeline feeding them."""
from __future__ import annotations

import json
import math
import os
import queue
import threading
from pathlib import Path

import numpy as np

from .augment import augment3d, augment_range
from .autodiff import AdamW, ParamGroup, Tensor, load_checkpoint, lr_schedule, no_grad, save_checkpoint
from .config import RunConfig
from .kitti import IGNORE, KittiDataset, PointCloud, data_root
from .losses import class_weights_from_freq, label_frequencies, total_loss
from .metrics import ConfusionMatrix
from .model import RangeSAM
from .projection import RangeImage, backproject_labels, rasterize
from .synthetic import SyntheticDataset

CKPT_FORMAT = "rangesam-train/1"


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------
def build_dataset(cfg: RunConfig, split: str | None = None):
    if cfg.data.synthetic:
        # the evaluation split of a synthetic run is the training set itself
        return SyntheticDataset(cfg.data.synthetic_size, cfg.projection, seed=cfg.seed)
    root = data_root(cfg.data.root or None)
    return KittiDataset(root, split or cfg.data.split)


def network_input(img: RangeImage, cfg: RunConfig) -> np.ndarray:
    """Normalize the five geometric channels at valid pixels; empty pixels stay 0."""
    ch = img.channels.astype(np.float32).copy()
    valid = img.valid
    mean = np.asarray(cfg.data.input_mean, np.float32)[:, None]
    std = np.asarray(cfg.data.input_std, np.float32)[:, None]
    ch[:5, valid] = (ch[:5, valid] - mean) / std
    ch[:5, ~valid] = 0.0
    return ch


def raster_labels(img: RangeImage) -> np.ndarray:
    if img.labels is None:
        return np.full(img.shape, IGNORE, dtype=np.uint8)
    return img.labels


def make_sample(ds, index: int, cfg: RunConfig, rng, augment: bool):
    pc = ds[index]
    if augment:
        pc = augment3d(pc, cfg.aug, rng)
    img = rasterize(pc, cfg.projection)
    if augment:
        partner = None
        if len(ds) > 1:
            j = int(rng.integers(0, len(ds) - 1))
            j += j >= index
            partner = rasterize(augment3d(ds[j], cfg.aug, rng), cfg.projection)
        img = augment_range(img, partner, cfg.aug, rng)
    return network_input(img, cfg), raster_labels(img)


def steps_per_epoch(cfg: RunConfig, n: int) -> int:
    return cfg.schedule.steps_per_epoch or max(1, math.ceil(n / cfg.data.batch_size))


def batch_indices(cfg: RunConfig, n: int, step: int) -> np.ndarray:
    spe = steps_per_epoch(cfg, n)
    epoch, pos = divmod(step, spe)
    perm = np.random.default_rng([cfg.seed, epoch, 1]).permutation(n)
    bs = cfg.data.batch_size
    return perm[(np.arange(bs) + pos * bs) % n]


def make_batch(ds, cfg: RunConfig, step: int):
    idx = batch_indices(cfg, len(ds), step)
    xs, ys = [], []
    for slot, i in enumerate(idx):
        rng = np.random.default_rng([cfg.seed, step, slot, 2])
        x, y = make_sample(ds, int(i), cfg, rng, cfg.data.augment)
        xs.append(x)
        ys.append(y)
    return np.stack(xs), np.stack(ys)


class Prefetcher:
    """Builds batches for consecutive steps on a worker thread.

    The queue is bounded by ``depth``; items carry their step number and are
    consumed strictly in order, so results do not depend on timing.
    """

    def __init__(self, fn, start: int, stop: int, depth: int = 2):
        self.fn, self.next_step, self.stop = fn, start, stop
        self.q = queue.Queue(maxsize=max(1, depth))
        self._halt = threading.Event()
        self.thread = threading.Thread(target=self._run, args=(start,), daemon=True)
        self.thread.start()

    def _run(self, start):
        for step in range(start, self.stop):
            if self._halt.is_set():
                return
            try:
                item = (step, self.fn(step), None)
            except BaseException as e:  # handed to the consumer
                item = (step, None, e)
            while not self._halt.is_set():
                try:
                    self.q.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if item[2] is not None:
                return

    def get(self):
        step, value, err = self.q.get()
        if err is not None:
            raise err
        if step != self.next_step:
            raise RuntimeError(f"prefetch out of order: got {step}, expected {self.next_step}")
        self.next_step += 1
        return value

    def close(self):
        self._halt.set()
        while self.thread.is_alive():
            try:
                self.q.get_nowait()
            except queue.Empty:
                pass
            self.thread.join(timeout=0.05)


def class_weights(cfg: RunConfig, ds, max_scans: int = 200) -> np.ndarray:
    nc = cfg.model.num_classes
    if cfg.loss.class_weights == "uniform":
        return np.ones(nc)
    counts = np.zeros(nc)
    for i in np.linspace(0, len(ds) - 1, min(len(ds), max_scans)).astype(int):
        img = rasterize(ds[int(i)], cfg.projection)
        counts += label_frequencies(raster_labels(img), nc)
    return class_weights_from_freq(counts)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
class Trainer:
    def __init__(self, cfg: RunConfig, dataset=None, out_dir=None):
        self.cfg = cfg
        self.ds = dataset if dataset is not None else build_dataset(cfg)
        self.out_dir = Path(out_dir or cfg.out_dir)
        self.model = RangeSAM(cfg.model, seed=cfg.seed)
        groups = self.model.param_groups()
        oc = cfg.optimizer
        self.optimizer = AdamW([
            ParamGroup(groups["backbone"], oc.backbone.lr, oc.backbone.weight_decay, "backbone"),
            ParamGroup(groups["head"], oc.head.lr, oc.head.weight_decay, "head"),
        ], betas=tuple(oc.betas), eps=oc.eps)
        self.weights = class_weights(cfg, self.ds)
        self.spe = steps_per_epoch(cfg, len(self.ds))
        self.total_steps = self.spe * cfg.schedule.epochs
        self.warmup_steps = int(round(cfg.schedule.warmup_fraction * self.total_steps))
        self.step = 0

    def lrs(self, step: int) -> list:
        return [lr_schedule(step, self.total_steps, self.warmup_steps, g.lr) for g in self.optimizer.groups]

    def train_step(self, x, y) -> dict:
        cfg = self.cfg
        self.model.train()
        drop_rng = np.random.default_rng([cfg.seed, self.step, 3])
        self.optimizer.zero_grad()
        main, aux = self.model(Tensor(x), rng=drop_rng)
        loss, terms = total_loss(main, aux, y, self.weights, cfg.loss.lambdas, cfg.loss.aux_weight,
                                 return_terms=True)
        if not all(math.isfinite(v) for v in terms.values()):
            raise TrainingError(f"non-finite loss at step {self.step}: "
                                + ", ".join(f"{k}={v}" for k, v in terms.items()))
        loss.backward()
        lrs = self.lrs(self.step)
        self.optimizer.step(lrs)
        self.step += 1
        return {"step": self.step, "epoch": (self.step - 1) // self.spe, "lr_backbone": lrs[0],
                "lr_head": lrs[1], **{k: round(v, 8) for k, v in terms.items()}}

    def fit(self, max_steps: int | None = None, callback=None, log=True, checkpoints=True) -> list:
        """Train until the schedule ends (or ``max_steps`` more steps); returns the step logs."""
        stop = self.total_steps if max_steps is None else min(self.total_steps, self.step + max_steps)
        if log or checkpoints:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        history = []
        feeder = Prefetcher(lambda s: make_batch(self.ds, self.cfg, s), self.step, stop, self.cfg.data.prefetch)
        try:
            with open(self.out_dir / "log.jsonl", "a") if log else open(os.devnull, "w") as fh:
                while self.step < stop:
                    x, y = feeder.get()
                    rec = self.train_step(x, y)
                    history.append(rec)
                    if log and self.step % self.cfg.log_every == 0:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
                        fh.flush()
                    if checkpoints and self.step % self.spe == 0:
                        self.save(self.out_dir / f"epoch{self.step // self.spe:03d}.ckpt")
                        self.save(self.out_dir / "last.ckpt")
                    if callback is not None and callback(self, rec) is False:
                        break
        finally:
            feeder.close()
        return history

    # -- checkpoints ---------------------------------------------------------------
    def state_tensors(self):
        named = list(self.model.named_parameters())
        out = [(f"param/{n}", p.data) for n, p in named]
        for n, m, v in self.optimizer.moments(named):
            out.append((f"adam_m/{n}", m))
            out.append((f"adam_v/{n}", v))
        return out

    def save(self, path):
        meta = {"format": CKPT_FORMAT, "step": self.step, "optimizer_steps": self.optimizer.step_count,
                "config": self.cfg.to_dict()}
        save_checkpoint(path, self.state_tensors(), meta)

    def load(self, path):
        tensors, meta = load_checkpoint(path)
        if meta.get("format") != CKPT_FORMAT:
            raise TrainingError(f"{path}: not a training checkpoint")
        load_model_weights(self.model, tensors, path)
        moments = {}
        for n, _ in self.model.named_parameters():
            if f"adam_m/{n}" in tensors:
                moments[n] = (tensors[f"adam_m/{n}"], tensors[f"adam_v/{n}"])
        self.optimizer.load_moments(self.model.named_parameters(), moments, meta["optimizer_steps"])
        self.step = int(meta["step"])
        return meta


def load_model_weights(model: RangeSAM, tensors: dict, source="checkpoint"):
    state = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as e:
        raise TrainingError(f"{source}: incompatible with model config: {e}") from None


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
def model_predictor(model: RangeSAM, cfg: RunConfig):
    def predict(img: RangeImage) -> np.ndarray:
        x = network_input(img, cfg)[None]
        with no_grad():
            main, _ = model(Tensor(x), with_aux=False)
        return main.data[0].argmax(axis=0).astype(np.uint8)
    model.eval()
    return predict


def gt_predictor(img: RangeImage) -> np.ndarray:
    return raster_labels(img)


def random_predictor(classes, seed: int = 0):
    rng = np.random.default_rng(seed)
    classes = np.asarray(classes, dtype=np.uint8)

    def predict(img: RangeImage) -> np.ndarray:
        return classes[rng.integers(0, len(classes), size=img.shape)]
    return predict


def evaluate_points(ds, cfg: RunConfig, predict, k: int = 7, window: int = 7, limit=None,
                    num_classes=None) -> ConfusionMatrix:
    """rasterize -> predict -> back-project (k-NN) -> point-level confusion."""
    cm = ConfusionMatrix(num_classes or cfg.model.num_classes)
    n = len(ds) if limit is None else min(limit, len(ds))
    for i in range(n):
        pc: PointCloud = ds[i]
        if pc.labels is None:
            raise TrainingError(f"scan {i} has no labels to evaluate against")
        img = rasterize(pc, cfg.projection)
        pred_img = predict(img)
        cm.update(pc.labels, backproject_labels(pred_img, img, pc, k=k, window=window))
    return cm


def evaluate_pixels(model: RangeSAM, ds, cfg: RunConfig, batch: int = 8) -> ConfusionMatrix:
    """Raster-level confusion on valid pixels (no augmentation)."""
    cm = ConfusionMatrix(cfg.model.num_classes)
    model.eval()
    for s in range(0, len(ds), batch):
        imgs = [rasterize(ds[i], cfg.projection) for i in range(s, min(len(ds), s + batch))]
        x = np.stack([network_input(im, cfg) for im in imgs])
        with no_grad():
            main, _ = model(Tensor(x), with_aux=False)
        pred = main.data.argmax(axis=1)
        for im, p in zip(imgs, pred):
            cm.update(raster_labels(im), p)
    return cm
