"""End-to-end training: exact gradients, optimizer steps, early stopping.

One epoch is one full-batch pass: every event is fused, trend-encoded and
scored, per-event losses are built (optionally after global hard-example
mining), and gradients accumulate event by event in ascending event_id so
runs are bitwise reproducible. Regularization gradients are added in closed
form (2 * lambda_reg * theta). Everything runs in float64.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .clustering import PseudoEvent
from .config import RunConfig
from .data import Dataset
from .fusion import fuse_window
from .metrics import EvalResult, evaluate
from .objective import (
    LossReport,
    ce_terms,
    mine_hard_examples,
    post_probabilities,
    tc_terms,
    total_loss,
)
from .params import ModelParams
from .trend import encode_event
from .windows import WindowSequence

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class ForwardArtifacts:
    """Everything backward() needs: per-event loss nodes plus the report."""

    report: LossReport
    loss_nodes: dict[int, Tensor]  # event_id -> ce_E + lambda_tc * tc_E
    params: ModelParams
    lambda_reg: float


@dataclass
class ModelOutputs:
    """Forward state of the network before any loss is attached."""

    states: dict[int, list]
    p_post: np.ndarray
    p_event: dict[int, float]
    prob_nodes: dict


def run_model(
    ds: Dataset,
    events: list[PseudoEvent],
    windows: dict[int, WindowSequence],
    params: ModelParams,
    cfg: RunConfig,
) -> ModelOutputs:
    """Fusion -> trend encoding -> probabilities for every event."""
    scope = cfg["attention.scope"]
    scale = cfg["attention.scale"]
    alpha = cfg["trend.alpha"]
    beta = cfg["trend.beta"]

    states: dict[int, list] = {}
    for ev in sorted(events, key=lambda e: e.event_id):
        seq = windows[ev.event_id]
        try:
            fusions = [fuse_window(ds, params, w, scope, scale) for w in seq.windows]
            _, _, ev_states = encode_event(fusions, ds, params, alpha, beta)
        except Exception as exc:
            raise TrainingError(f"event {ev.event_id}: {exc}") from exc
        states[ev.event_id] = ev_states

    p_post, p_event, prob_nodes = post_probabilities(
        events, windows, states, params, ds.n
    )
    return ModelOutputs(states, p_post, p_event, prob_nodes)


def forward(
    ds: Dataset,
    events: list[PseudoEvent],
    windows: dict[int, WindowSequence],
    params: ModelParams,
    cfg: RunConfig,
    epoch: int = 0,
    include_ce: bool = True,
) -> ForwardArtifacts:
    """Build the full loss for one epoch. ``include_ce`` exists for tests."""
    outputs = run_model(ds, events, windows, params, cfg)
    train_mask = ds.train_mask()

    terms: list = []
    weights_by_event: dict[int, tuple[float, float]] = {}
    if include_ce:
        terms, weights_by_event = ce_terms(
            events,
            outputs.prob_nodes,
            ds.labels,
            train_mask,
            cfg["loss.epsilon"],
            cfg["weights.adaptive"],
            cfg["weights.scope"],
        )
        if not terms:
            raise TrainingError("no training posts: cannot build the classification loss")

    rho = cfg["mining.rho"]
    mining_active = rho < 1.0 and epoch >= cfg["mining.warmup_epochs"]
    selected = mine_hard_examples(terms, rho) if mining_active else list(terms)
    mined = np.zeros(ds.n, dtype=bool)
    for t in selected:
        mined[t.post_index] = True

    ce_by_event: dict[int, float] = {}
    tc_by_event: dict[int, float] = {}
    loss_nodes: dict[int, Tensor] = {}
    lambda_tc = cfg["loss.lambda_tc"]
    for ev in sorted(events, key=lambda e: e.event_id):
        eid = ev.event_id
        node: Tensor | None = None
        ce_val = 0.0
        for t in selected:
            if t.event_id == eid:
                node = t.node if node is None else node + t.node
                ce_val += t.value
        ce_by_event[eid] = ce_val

        tc_node = tc_terms(outputs.states[eid], cfg["loss.tc_clamp"])
        tc_by_event[eid] = float(tc_node.data) if tc_node is not None else 0.0
        if tc_node is not None and lambda_tc != 0.0:
            scaled = lambda_tc * tc_node
            node = scaled if node is None else node + scaled
        if node is not None:
            loss_nodes[eid] = node

    ce = float(sum(ce_by_event.values()))
    tc = float(sum(tc_by_event.values()))
    total, reg = total_loss(ce, tc, params, lambda_tc, cfg["loss.lambda_reg"])
    report = LossReport(
        ce_by_event=ce_by_event,
        tc_by_event=tc_by_event,
        ce=ce,
        tc=tc,
        reg=reg,
        total=total,
        p_post=outputs.p_post,
        p_event=outputs.p_event,
        weights_by_event=weights_by_event,
        mined=mined,
        lambda_tc=lambda_tc,
        lambda_reg=cfg["loss.lambda_reg"],
    )
    return ForwardArtifacts(report, loss_nodes, params, cfg["loss.lambda_reg"])


def backward(artifacts: ForwardArtifacts) -> dict[str, np.ndarray]:
    """Exact gradients of the total loss for every named parameter."""
    params = artifacts.params
    params.zero_grads()
    for eid in sorted(artifacts.loss_nodes):
        artifacts.loss_nodes[eid].backward()

    grads: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        g = g + 2.0 * artifacts.lambda_reg * tensor.data
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
        grads[name] = g
    return grads


def loss_value(
    ds: Dataset,
    events: list[PseudoEvent],
    windows: dict[int, WindowSequence],
    params: ModelParams,
    cfg: RunConfig,
    include_ce: bool = True,
) -> float:
    """Total loss as a plain number (finite-difference oracle hook)."""
    return forward(ds, events, windows, params, cfg, include_ce=include_ce).report.total


# -- optimizers -----------------------------------------------------------
class Sgd:
    def __init__(self, params: ModelParams, lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            t.data = t.data - self.lr * grads[name]


class Adam:
    def __init__(self, params: ModelParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, t in self.params.items():
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(params: ModelParams, cfg: RunConfig):
    kind = cfg["train.optimizer"]
    if kind == "sgd":
        return Sgd(params, cfg["train.learning_rate"])
    return Adam(
        params,
        cfg["train.learning_rate"],
        cfg["train.adam_beta1"],
        cfg["train.adam_beta2"],
        cfg["train.adam_eps"],
    )


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    """Scale all gradients so the global l2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm and norm > 0:
        factor = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * factor
    return norm


# -- training loop ----------------------------------------------------------
HISTORY_FIELDS = (
    "epoch", "ce", "tc", "reg", "total",
    "val_accuracy", "val_precision", "val_recall", "val_f1", "val_auc",
)


@dataclass
class TrainResult:
    params: ModelParams       # best-validation checkpoint
    history: list[dict]
    best_epoch: int
    best_metric: float
    final_params: ModelParams | None = None  # state after the last update


def _val_metrics(ds: Dataset, p_post: np.ndarray, threshold: float) -> EvalResult | None:
    val_idx = ds.split_indices("val")
    if val_idx.size == 0:
        return None
    return evaluate(p_post[val_idx], ds.labels[val_idx], threshold)


def train(
    ds: Dataset,
    events: list[PseudoEvent],
    windows: dict[int, WindowSequence],
    cfg: RunConfig,
    params: ModelParams | None = None,
) -> TrainResult:
    """Full-batch gradient training with best-validation checkpointing."""
    if ds.split is None:
        raise TrainingError("assign splits before training")
    if cfg["train.epochs"] < 1:
        raise TrainingError("train.epochs must be >= 1")
    if params is None:
        params = ModelParams.build(
            cfg["model.d"], cfg["model.heads"], ds.d_text, ds.d_img,
            seed=cfg.init_seed(),
        )
    optimizer = make_optimizer(params, cfg)
    metric_name = cfg["train.early_stop_metric"]
    patience = cfg["train.early_stop_patience"]
    threshold = cfg["eval.threshold"]

    history: list[dict] = []
    best = params.clone()
    best_metric = -math.inf
    best_epoch = 0
    stale = 0

    for epoch in range(cfg["train.epochs"]):
        artifacts = forward(ds, events, windows, params, cfg, epoch=epoch)
        report = artifacts.report
        if not math.isfinite(report.total):
            # Divergence: hand back the last good checkpoint.
            break

        val = _val_metrics(ds, report.p_post, threshold)
        row = {
            "epoch": epoch,
            "ce": report.ce,
            "tc": report.tc,
            "reg": report.reg,
            "total": report.total,
            "val_accuracy": val.accuracy if val else math.nan,
            "val_precision": val.precision if val else math.nan,
            "val_recall": val.recall if val else math.nan,
            "val_f1": val.f1 if val else math.nan,
            "val_auc": val.auc if val else math.nan,
        }
        history.append(row)

        monitored = row[f"val_{metric_name}"]
        if val is None:
            # No validation split: the latest parameters stand in as best.
            best.load_values(params)
            best_epoch = epoch
        elif math.isfinite(monitored) and monitored > best_metric:
            best_metric = monitored
            best.load_values(params)
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale > patience:
                break

        grads = backward(artifacts)
        clip_gradients(grads, cfg["train.grad_clip_norm"])
        optimizer.step(grads)
        params.assert_finite(f"after update at epoch {epoch}")

    return TrainResult(best, history, best_epoch, best_metric, params)


def write_history(history: list[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in row.items()})


# -- checkpoints -------------------------------------------------------------
def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Header JSON line, then concatenated little-endian float64 tensors."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "d": params.d,
        "H": params.heads,
        "names": [{"name": n, "shape": list(t.shape)} for n, t in params.items()],
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise TrainingError("checkpoint: missing header line")
    try:
        header = json.loads(raw[:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TrainingError(f"checkpoint: bad header ({exc})") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise TrainingError(
            f"checkpoint: unsupported format_version {header.get('format_version')}"
        )

    d, heads = int(header["d"]), int(header["H"])
    shapes = {e["name"]: tuple(int(s) for s in e["shape"]) for e in header["names"]}
    if "fusion.W_text" not in shapes or "fusion.W_img" not in shapes:
        raise TrainingError("checkpoint: encoder tensors missing from header")
    d_text = shapes["fusion.W_text"][1]
    d_img = shapes["fusion.W_img"][1]

    params = ModelParams.build(d, heads, d_text, d_img, zero=True)
    expected = {n: t.shape for n, t in params.items()}
    if list(shapes) != list(expected):
        raise TrainingError("checkpoint: tensor name set does not match this model")
    for name, shape in shapes.items():
        if shape != expected[name]:
            raise TrainingError(
                f"checkpoint: {name} has shape {shape}, expected {expected[name]}"
            )

    body = raw[nl + 1:]
    offset = 0
    for name, t in params.items():
        nbytes = t.data.size * 8
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise TrainingError(f"checkpoint: truncated while reading {name}")
        t.data = np.frombuffer(chunk, dtype="<f8").reshape(t.shape).copy()
        offset += nbytes
    if offset != len(body):
        raise TrainingError("checkpoint: trailing bytes after last tensor")
    return params
