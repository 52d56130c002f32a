"""Shared wiring between CLI commands: structure building and evaluation."""

from __future__ import annotations

import numpy as np

from .clustering import PseudoEvent, check_partition, cluster_events, pass_through_events
from .config import RunConfig
from .data import Dataset
from .metrics import evaluate
from .params import ModelParams
from .training import run_model
from .windows import WindowSequence, segment_all


def build_structure(
    ds: Dataset, cfg: RunConfig
) -> tuple[list[PseudoEvent], dict[int, WindowSequence]]:
    """Pseudo-events (clustered or keyed) plus their window sequences."""
    key = cfg["cluster.key"]
    if key is not None:
        events = pass_through_events(ds, key)
    else:
        events = cluster_events(ds, cfg["cluster.num_clusters"], cfg["cluster.linkage"])
    check_partition(events, ds.n)
    span, stride = cfg.window_geometry()
    return events, segment_all(events, ds, span, stride)


def predictions(
    ds: Dataset,
    events: list[PseudoEvent],
    windows: dict[int, WindowSequence],
    params: ModelParams,
    cfg: RunConfig,
) -> tuple[np.ndarray, dict[int, float]]:
    """Per-post and per-event probabilities under fixed parameters."""
    if params.d_text != ds.d_text:
        raise ValueError(
            f"fusion.W_text expects d_text={params.d_text}, dataset has {ds.d_text}"
        )
    if params.d_img != ds.d_img:
        raise ValueError(
            f"fusion.W_img expects d_img={params.d_img}, dataset has {ds.d_img}"
        )
    out = run_model(ds, events, windows, params, cfg)
    return out.p_post, out.p_event


def evaluate_posts_and_events(
    ds: Dataset,
    indices: np.ndarray,
    p_post: np.ndarray,
    p_event: dict[int, float],
    events: list[PseudoEvent],
    threshold: float,
) -> dict:
    """Post-level metrics over ``indices``; event-level aggregate alongside.

    An event enters the aggregate when it has at least one selected post; its
    reference label is the majority label of those posts (ties go to 1).
    """
    post_level = evaluate(p_post[indices], ds.labels[indices], threshold).as_dict()

    selected = set(int(i) for i in indices)
    ev_probs: list[float] = []
    ev_labels: list[int] = []
    for ev in events:
        members = [i for i in ev.member_indices if i in selected]
        if not members:
            continue
        ev_probs.append(p_event[ev.event_id])
        ev_labels.append(int(np.mean([ds.labels[i] for i in members]) >= 0.5))
    event_level = None
    if ev_probs:
        event_level = evaluate(
            np.asarray(ev_probs), np.asarray(ev_labels), threshold
        ).as_dict()
    return {"post_level": post_level, "event_level": event_level}
