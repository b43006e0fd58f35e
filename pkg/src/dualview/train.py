"""Training loop: joint objective, evaluation, checkpointing, run artifacts."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import data as D
from . import tensor as T
from .config import TrainConfig, config_to_dict
from .membank import MemoryBank, center_contrast_loss, class_centers
from .metrics import MetricsReport, compute_metrics, csv_header, csv_row
from .model import DualViewModel
from .optim import AdamW

log = logging.getLogger("dualview")


class TrainingDiverged(RuntimeError):
    """Raised when a step produces a non-finite loss; carries diagnostics."""

    def __init__(self, epoch: int, batch_indices, ce: float, contrast: float):
        self.epoch = epoch
        self.batch_indices = list(batch_indices)
        self.ce = ce
        self.contrast = contrast
        super().__init__(
            f"non-finite loss at epoch {epoch}: ce={ce}, contrast={contrast}, batch={self.batch_indices}"
        )


@dataclass
class StepLosses:
    total: float
    ce: float
    contrast: float
    gate_entropy: float | None


class TrainState:
    """Everything a checkpoint round-trips: parameters, optimizer moments,
    memory bank, epoch counter.  RNG state reduces to (seed, epoch)."""

    def __init__(self, cfg: TrainConfig, model: DualViewModel, opt: AdamW, bank: MemoryBank, stats: D.SpacingStats):
        self.cfg = cfg
        self.model = model
        self.opt = opt
        self.bank = bank
        self.stats = stats
        self.epoch = 0


def make_batch(dataset: D.Dataset, indices, stats: D.SpacingStats, np_dtype):
    xs_l, xs_t, ys = [], [], []
    for i in indices:
        s = dataset.samples[i]
        xs_l.append(D.attach_spacing_channel(s.x_long, s.spacing, stats))
        xs_t.append(D.attach_spacing_channel(s.x_trans, s.spacing, stats))
        ys.append(s.label)
    x_long = np.stack(xs_l).astype(np_dtype)
    x_trans = np.stack(xs_t).astype(np_dtype)
    return x_long, x_trans, np.asarray(ys, dtype=np.int64)


def compute_representations(model: DualViewModel, dataset: D.Dataset, indices, stats: D.SpacingStats, batch_size: int = 64):
    """Forward pass over ``indices`` in the given order; returns per-view
    unit-norm feature matrices (no gradients recorded)."""
    zs_l, zs_t = [], []
    with T.no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start : start + batch_size]
            x_long, x_trans, _ = make_batch(dataset, chunk, stats, model.np_dtype)
            pyr_l, pyr_t = model.encode_views(T.tensor(x_long), T.tensor(x_trans))
            zs_l.append(pyr_l.z.data)
            zs_t.append(pyr_t.z.data)
    return np.concatenate(zs_l), np.concatenate(zs_t)


def build_state(cfg: TrainConfig, dataset: D.Dataset, split: D.DatasetSplit) -> TrainState:
    """Construct model + optimizer and a memory bank initialized from one
    encoder pass over the training samples in index order."""
    cfg.validate()
    model = DualViewModel(cfg)
    opt = AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=cfg.weight_decay)
    stats = D.spacing_stats(dataset, split.train)
    train_idx = sorted(split.train)
    labels = np.array([dataset.samples[i].label for i in train_idx], dtype=np.int64)
    bank = MemoryBank(train_idx, labels, cfg.proj_dim, cfg.alpha, cfg.tau, dtype=model.np_dtype)
    z_long, z_trans = compute_representations(model, dataset, train_idx, stats)
    bank.init_features(z_long, z_trans)
    return TrainState(cfg, model, opt, bank, stats)


def _gate_entropy(w: np.ndarray) -> float:
    return float(-(w * np.log(np.maximum(w, 1e-300))).sum(axis=1).mean())


def batch_losses(state: TrainState, dataset: D.Dataset, batch_indices) -> StepLosses:
    """Loss terms on a batch without any parameter or bank side effects."""
    cfg = state.cfg
    with T.no_grad():
        x_long, x_trans, labels = make_batch(dataset, batch_indices, state.stats, state.model.np_dtype)
        pyr_l, pyr_t = state.model.encode_views(T.tensor(x_long), T.tensor(x_trans))
        centers = class_centers(state.bank)
        use_contrast = not cfg.no_cmcl and cfg.lam != 0.0
        con = (
            center_contrast_loss(state.bank, centers, pyr_l.z, pyr_t.z, labels).item()
            if use_contrast
            else 0.0
        )
        logits, w = state.model.logits(pyr_l, pyr_t, centers)
        ce = T.softmax_cross_entropy(logits, labels).item()
    return StepLosses(
        total=ce + cfg.lam * con if use_contrast else ce,
        ce=ce,
        contrast=con,
        gate_entropy=None if w is None else _gate_entropy(w.data),
    )


def train_step(state: TrainState, dataset: D.Dataset, batch_indices) -> StepLosses:
    """One optimization step: forward both views, joint loss, backward,
    optimizer update, then the memory EMA update for the batch indices."""
    cfg = state.cfg
    x_long, x_trans, labels = make_batch(dataset, batch_indices, state.stats, state.model.np_dtype)
    pyr_l, pyr_t = state.model.encode_views(T.tensor(x_long), T.tensor(x_trans))
    centers = class_centers(state.bank)

    contrast = None
    use_contrast = not cfg.no_cmcl and cfg.lam != 0.0
    if use_contrast:
        contrast = center_contrast_loss(state.bank, centers, pyr_l.z, pyr_t.z, labels)

    logits, w = state.model.logits(pyr_l, pyr_t, centers)
    ce = T.softmax_cross_entropy(logits, labels)
    total = ce + contrast * cfg.lam if use_contrast else ce

    ce_val = ce.item()
    con_val = contrast.item() if use_contrast else 0.0
    if not np.isfinite(total.item()):
        raise TrainingDiverged(state.epoch, batch_indices, ce_val, con_val)

    total.backward()
    state.opt.step()
    state.bank.ema_update_batch(batch_indices, pyr_l.z.data, pyr_t.z.data)
    return StepLosses(
        total=total.item(),
        ce=ce_val,
        contrast=con_val,
        gate_entropy=None if w is None else _gate_entropy(w.data),
    )


def evaluate(state: TrainState, dataset: D.Dataset, indices, split_name: str, epoch: int, batch_size: int = 64) -> MetricsReport:
    """Deterministic forward-only metrics; the gate sees a centers snapshot."""
    if len(indices) == 0:
        raise ValueError(f"empty split {split_name!r}")
    centers = class_centers(state.bank)
    preds, labels = [], []
    with T.no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start : start + batch_size]
            x_long, x_trans, y = make_batch(dataset, chunk, state.stats, state.model.np_dtype)
            pyr_l, pyr_t = state.model.encode_views(T.tensor(x_long), T.tensor(x_trans))
            logits, _ = state.model.logits(pyr_l, pyr_t, centers)
            preds.append(logits.data.argmax(axis=1))
            labels.append(y)
    return compute_metrics(np.concatenate(labels), np.concatenate(preds), dataset.spec.n_classes, epoch, split_name)


# -- checkpoint glue -----------------------------------------------------------


def state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for p in state.model.parameters():
        arrays[f"param.{p.name}"] = p.data
    for name, arr in state.opt.state_arrays().items():
        arrays[f"adam.{name}"] = arr
    arrays["bank.m_long"] = state.bank.m_long
    arrays["bank.m_trans"] = state.bank.m_trans
    arrays["bank.labels"] = state.bank.labels
    arrays["bank.indices"] = np.asarray(state.bank.indices, dtype=np.int64)
    centers = class_centers(state.bank)
    arrays["centers.mu_long"] = centers.mu_long
    arrays["centers.mu_trans"] = centers.mu_trans
    return arrays


def save_state(state: TrainState, path, best_epoch: int | None = None) -> None:
    meta = {
        "epoch": state.epoch,
        "adam_t": state.opt.t,
        "rng": {"seed": state.cfg.seed, "epoch": state.epoch},
        "best_epoch": best_epoch,
    }
    ckpt.write_checkpoint(path, state.cfg, meta, state_arrays(state))


def load_state(path, dataset: D.Dataset | None = None) -> TrainState:
    """Rebuild a TrainState from a checkpoint; regenerates the dataset from
    the stored config when one is not supplied."""
    cfg, meta, arrays = ckpt.read_checkpoint(path)
    if dataset is None:
        dataset = D.generate(cfg.effective_data_seed, cfg.data)
    split = D.split(len(dataset), cfg.effective_data_seed, cfg.split_ratios)
    model = DualViewModel(cfg)
    for p in model.parameters():
        p.data = arrays[f"param.{p.name}"].reshape(p.data.shape).astype(p.data.dtype)
    opt = AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=cfg.weight_decay)
    adam = {k[len("adam.") :]: v for k, v in arrays.items() if k.startswith("adam.")}
    opt.load_state_arrays(adam, int(meta["adam_t"]))
    stats = D.spacing_stats(dataset, split.train)
    bank = MemoryBank(
        [int(i) for i in arrays["bank.indices"]],
        arrays["bank.labels"],
        cfg.proj_dim,
        cfg.alpha,
        cfg.tau,
        dtype=model.np_dtype,
    )
    bank.m_long[:] = arrays["bank.m_long"]
    bank.m_trans[:] = arrays["bank.m_trans"]
    state = TrainState(cfg, model, opt, bank, stats)
    state.epoch = int(meta["epoch"])
    return state


# -- experiment driver -----------------------------------------------------------


def export_embeddings(state: TrainState, dataset: D.Dataset, indices, path) -> None:
    """(index, label, z_long, z_trans, z_fused) rows for external projection."""
    z_long, z_trans = compute_representations(state.model, dataset, indices, state.stats)
    fused = []
    with T.no_grad():
        for start in range(0, len(indices), 64):
            chunk = indices[start : start + 64]
            x_l, x_t, _ = make_batch(dataset, chunk, state.stats, state.model.np_dtype)
            pyr_l, pyr_t = state.model.encode_views(T.tensor(x_l), T.tensor(x_t))
            fused.append(state.model.fuse(pyr_l, pyr_t).data)
    z_f = np.concatenate(fused)
    d, f = z_long.shape[1], z_f.shape[1]
    header = (
        ["index", "label"]
        + [f"z_long_{i}" for i in range(d)]
        + [f"z_trans_{i}" for i in range(d)]
        + [f"z_f_{i}" for i in range(f)]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row, idx in enumerate(indices):
            vals = np.concatenate([z_long[row], z_trans[row], z_f[row]])
            fh.write(f"{idx},{dataset.samples[idx].label}," + ",".join(f"{v:.6f}" for v in vals) + "\n")


def train_center_cosine(state: TrainState, dataset: D.Dataset, train_indices) -> float:
    """Mean cosine between each training embedding and its own class center
    (both views averaged); the geometry diagnostic for the contrastive term."""
    idx = sorted(train_indices)
    z_long, z_trans = compute_representations(state.model, dataset, idx, state.stats)
    centers = class_centers(state.bank)
    labels = np.array([dataset.samples[i].label for i in idx])

    def mean_cos(z, mu):
        zn = z / np.linalg.norm(z, axis=1, keepdims=True)
        mun = mu / np.linalg.norm(mu, axis=1, keepdims=True)
        return float((zn * mun[labels]).sum(axis=1).mean())

    return 0.5 * (mean_cos(z_long, centers.mu_long) + mean_cos(z_trans, centers.mu_trans))


def run_experiment(cfg: TrainConfig, out_dir) -> dict:
    """Full training run: per-epoch validation, best-checkpoint selection,
    final test report, metrics CSV, embeddings export.  Deterministic in
    (config, seed)."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    dataset = D.generate(cfg.effective_data_seed, cfg.data)
    split = D.split(len(dataset), cfg.effective_data_seed, cfg.split_ratios)
    state = build_state(cfg, dataset, split)

    rows = [csv_header(cfg.data.n_classes)]
    best_score, best_epoch = -np.inf, -1
    best_path = os.path.join(out_dir, "best.ckpt")
    step_ce: list[float] = []
    step_contrast: list[float] = []
    gate_entropy: list[float] = []
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        entropies = []
        for batch in D.batches(split.train, cfg.batch_size, cfg.seed, epoch):
            losses = train_step(state, dataset, batch)
            step_ce.append(losses.ce)
            step_contrast.append(losses.contrast)
            if losses.gate_entropy is not None:
                entropies.append(losses.gate_entropy)
        gate_entropy.append(float(np.mean(entropies)) if entropies else float("nan"))
        if cfg.log_train_metrics:
            rows.append(csv_row(evaluate(state, dataset, split.train, "train", epoch)))
        val = evaluate(state, dataset, split.val, "val", epoch)
        rows.append(csv_row(val))
        score = getattr(val, cfg.select_by)
        if score > best_score:
            best_score, best_epoch = score, epoch
            save_state(state, best_path, best_epoch=epoch)
        log.info(
            "epoch %d: val acc=%.4f m_f1=%.4f ce=%.4f contrast=%.4f gate_entropy=%.4f",
            epoch, val.acc, val.m_f1, losses.ce, losses.contrast, gate_entropy[-1],
        )
    save_state(state, os.path.join(out_dir, "final.ckpt"), best_epoch=best_epoch)

    best_state = load_state(best_path, dataset)
    test = evaluate(best_state, dataset, split.test, "test", best_epoch)
    rows.append(csv_row(test))
    with open(os.path.join(out_dir, "metrics.csv"), "w") as f:
        f.write("\n".join(rows) + "\n")
    export_embeddings(state, dataset, sorted(split.train), os.path.join(out_dir, "embeddings.csv"))

    summary = {
        "best_epoch": best_epoch,
        "best_val_score": float(best_score),
        "test": {
            "acc": test.acc,
            "m_pre": test.m_pre,
            "m_rec": test.m_rec,
            "m_f1": test.m_f1,
            "per_class_acc": test.per_class_acc,
        },
        "train_center_cosine": train_center_cosine(state, dataset, split.train),
        "gate_entropy": gate_entropy,
        "step_ce": step_ce,
        "step_contrast": step_contrast,
        "runtime_sec": time.time() - t0,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump({"config": config_to_dict(cfg), **summary}, f, indent=2)
    return summary
