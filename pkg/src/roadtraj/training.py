"""Dataset segmentation and the training loop.

Segmentation follows the stream-batching recipe: concatenate all
trajectory tokens (one token per edge), split the stream into
`batch_size` equal pieces trimming the remainder, then slide a window of
l_in + l_out tokens forward by `slide` per step. One window step across
all streams forms one batch. In the default `respect` boundary mode a
window is dropped when its tokens span more than one trajectory, so
every emitted sample stays decodable against the network; the
`concat-faithful` mode keeps such windows.

Training minimizes the summed per-position cross entropy with SGD,
learning rate lr0 * lr_decay^epoch, global-norm gradient clipping, and
scheduled sampling whose teacher probability decays linearly from 1 to 0
over `sampling_epochs` epochs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import save_checkpoint
from .codec import ContextFeatures
from .errors import ConfigError, DataError, NumericError
from .metrics import compute_metrics
from .model import TrajectoryModel, init_params

GRAD_CLIP_NORM = 5.0


@dataclass
class TrainConfig:
    batch_size: int = 20
    slide: int = 5
    lr0: float = 0.5
    lr_decay: float = 0.8
    epochs: int = 10
    dropout: float = 0.1
    sampling_epochs: int | None = None  # None: decay over all epochs
    seed: int = 0
    boundary_mode: str = "respect"      # or "concat-faithful"

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.slide < 1:
            raise ConfigError(f"slide must be >= 1, got {self.slide}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.sampling_epochs is not None and self.sampling_epochs < 1:
            raise ConfigError("sampling_epochs must be >= 1 when set")
        if self.boundary_mode not in ("respect", "concat-faithful"):
            raise ConfigError(f"unknown boundary_mode {self.boundary_mode!r}")
        return self


@dataclass
class TrainSample:
    """One (input window, output window) pair cut from the token stream."""

    input_nodes: list
    input_dirs: list
    target_nodes: list
    target_dirs: list
    input_edges: list
    target_edges: list
    context: ContextFeatures


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_amr: float | None
    val_de: float | None
    lr: float
    alpha: float
    teacher_steps: int = 0
    sampled_steps: int = 0


def scheduled_sampling_alpha(epoch, cfg):
    """Teacher-forcing probability for an epoch: linear decay from 1 to 0."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    horizon = cfg.sampling_epochs if cfg.sampling_epochs is not None else cfg.epochs
    return max(0.0, 1.0 - epoch / horizon)


def segment(net, corpus, cfg, l_in, l_out):
    """Cut a corpus into batches of TrainSample windows.

    Returns a list of batches; each batch holds the samples of one window
    step across the streams (at most `batch_size` of them).
    """
    cfg.validate()
    if not corpus:
        raise DataError("cannot segment an empty corpus")
    edge_tokens = []  # (edge id, trajectory index), one token per edge
    for t_idx, traj in enumerate(corpus):
        node = traj.nodes[0]
        for direction in traj.directions:
            eid = net.edge_at(node, direction)
            if eid is None:
                raise DataError(
                    f"trajectory {traj.traj_id}: no edge at ({node}, {direction})"
                )
            edge_tokens.append((eid, t_idx))
            node = net.edge(eid).target

    window = l_in + l_out
    stream_len = len(edge_tokens) // cfg.batch_size
    if stream_len < window:
        raise DataError(
            f"corpus too small: {len(edge_tokens)} tokens give streams of "
            f"{stream_len} < window {window} for batch_size {cfg.batch_size}"
        )
    streams = [
        edge_tokens[s * stream_len : (s + 1) * stream_len]
        for s in range(cfg.batch_size)
    ]

    batches = []
    offset = 0
    while offset + window <= stream_len:
        batch = []
        for stream in streams:
            chunk = stream[offset : offset + window]
            owners = {t for _, t in chunk}
            if cfg.boundary_mode == "respect" and len(owners) != 1:
                continue
            sample = _make_sample(net, corpus, chunk, l_in, l_out)
            batch.append(sample)
        if batch:
            batches.append(batch)
        offset += cfg.slide
    if not batches:
        raise DataError("segmentation produced no usable windows")
    return batches


def _make_sample(net, corpus, chunk, l_in, l_out):
    edges = [net.edge(eid) for eid, _ in chunk]
    owner = chunk[l_in - 1][1]  # trajectory owning the last input token
    return TrainSample(
        input_nodes=[e.target for e in edges[:l_in]],
        input_dirs=[e.direction for e in edges[:l_in]],
        target_nodes=[e.target for e in edges[l_in:]],
        target_dirs=[e.direction for e in edges[l_in:]],
        input_edges=[e.id for e in edges[:l_in]],
        target_edges=[e.id for e in edges[l_in:]],
        context=corpus[owner].context,
    )


def evaluate_model(model, samples, masked=True):
    """Greedy-predict every sample and score against its target edges."""
    preds = []
    truths = []
    for s in samples:
        res = model.predict(s.input_nodes, s.input_dirs, s.context, masked=masked)
        preds.append(res.edge_ids)
        truths.append(s.target_edges)
    return compute_metrics(preds, truths)


def train(net, corpus, model_cfg, train_cfg, val_samples=None, out_dir=None,
          log_hook=None):
    """Train a fresh model on a corpus; returns (model, per-epoch logs).

    When `out_dir` is given, writes `log.csv`, one checkpoint per epoch
    and a final `checkpoint.ckpt`. Aborts with NumericError (naming the
    batch) if the loss or any gradient goes non-finite.
    """
    model_cfg.validate()
    train_cfg.validate()
    rng = np.random.default_rng(train_cfg.seed)
    model = TrajectoryModel(model_cfg, net, init_params(model_cfg, rng))
    batches = segment(net, corpus, train_cfg, model_cfg.l_in, model_cfg.l_out)
    packed = [model.prepare_batch(batch) for batch in batches]

    logs = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for epoch in range(train_cfg.epochs):
        lr = train_cfg.lr0 * train_cfg.lr_decay**epoch
        alpha = scheduled_sampling_alpha(epoch, train_cfg)
        counters = {}
        loss_sum = 0.0
        n_samples = 0
        for batch_id, batch in enumerate(packed):
            model.params.zero_grad()
            try:
                loss, per_sample = model.training_loss(
                    batch, alpha=alpha, dropout_p=train_cfg.dropout,
                    rng=rng, counters=counters,
                )
                if not np.isfinite(loss.item()):
                    raise NumericError("loss is non-finite")
                loss.backward()
                model.params.clip_gradients(GRAD_CLIP_NORM)
                model.params.sgd_step(lr)
            except NumericError as exc:
                raise NumericError(
                    f"training diverged at epoch {epoch}, batch {batch_id}: {exc}"
                ) from exc
            loss_sum += float(per_sample.sum())
            n_samples += per_sample.shape[0]
        epoch_loss = loss_sum / n_samples

        val_amr = None
        val_de = None
        if val_samples:
            report = evaluate_model(model, val_samples)
            val_amr = report.amr
            val_de = report.de
        log = EpochLog(
            epoch=epoch, loss=epoch_loss, val_amr=val_amr, val_de=val_de,
            lr=lr, alpha=alpha,
            teacher_steps=counters.get("teacher_steps", 0),
            sampled_steps=counters.get("sampled_steps", 0),
        )
        logs.append(log)
        if log_hook is not None:
            log_hook(log)
        if out_dir is not None:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_ep{epoch}.ckpt"), model)

    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "checkpoint.ckpt"), model)
        write_log_csv(os.path.join(out_dir, "log.csv"), logs)
    return model, logs


def write_log_csv(path, logs):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("epoch,loss,val_AMR,val_DE,lr,alpha\n")
        for log in logs:
            amr = "" if log.val_amr is None else f"{log.val_amr:.6f}"
            de = "" if log.val_de is None else f"{log.val_de:.6f}"
            fh.write(
                f"{log.epoch},{log.loss!r},{amr},{de},{log.lr!r},{log.alpha!r}\n"
            )
