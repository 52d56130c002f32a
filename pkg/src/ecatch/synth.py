"""Synthetic dataset generator with controllable structure.

Each event draws text/image centroids; each post draws an independent
Bernoulli(pi) label and Gaussian features around its centroid, offset by
margin * e0 when fake. The margin also controls how strongly the labels
separate in time inside an event: fake posts arrive as a contiguous wave at
a random position in the event timeline, and authentic posts increasingly
vacate that wave as the margin grows. At margin 0 both classes are uniform
over the event, so labels are independent of every feature; at margin >= 4
the wave is fully separated and sized by prevalence, keeping overall post
density uniform. Timestamp density targets a handful of posts per
default-span window. Modality conflict flips the image-side class direction
with probability kappa. Everything is reproducible from the seed via
per-event child seeds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .windows import PRESETS

SPAN_SECS, STRIDE_SECS = PRESETS["fakeddit"]
TARGET_POSTS_PER_SPAN = 8      # keeps window occupancy inside 3..20
EVENT_GAP_SECS = 90 * 86400
NOISE_SIGMA = 1.0
FULL_SPLIT_MARGIN = 4.0        # margin at which the fake wave is fully separated


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_events: int = 10
    posts_per_event: tuple[int, int] = (30, 60)
    d_text: int = 32
    d_img: int = 16
    imbalance: float = 0.5            # P(label = 1)
    margin: float = 2.0               # class separation in feature and time
    drift: float = 0.0                # per-window centroid shift magnitude
    modality_conflict: float = 0.0    # P(image drawn from the opposite class)
    missing_image: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.posts_per_event
        if self.n_events < 1:
            raise SynthError("n_events must be >= 1")
        if lo < 1 or hi < lo:
            raise SynthError(f"bad posts_per_event range ({lo}, {hi})")
        if self.d_text < 1 or self.d_img < 1:
            raise SynthError("embedding dims must be positive")
        if not 0.0 < self.imbalance < 1.0:
            raise SynthError("imbalance must lie in (0, 1)")
        if self.margin < 0 or self.drift < 0:
            raise SynthError("margin and drift must be >= 0")
        for name in ("modality_conflict", "missing_image"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SynthError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise SynthError(f"unknown spec fields: {sorted(unknown)}")
        if "posts_per_event" in raw:
            ppe = raw["posts_per_event"]
            if not (isinstance(ppe, (list, tuple)) and len(ppe) == 2):
                raise SynthError("posts_per_event must be a [min, max] pair")
            raw = dict(raw, posts_per_event=(int(ppe[0]), int(ppe[1])))
        spec = cls(**raw)
        spec.validate()
        return spec


def _separation(margin: float) -> float:
    return min(1.0, margin / FULL_SPLIT_MARGIN)


def _time_fractions(labels: np.ndarray, sep: float, pi: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Event-relative time in [0, 1] per post, wave-structured by label.

    Fake posts fall uniformly in a wave [c, c + w] with w = 1 - sep*(1 - pi)
    and random position c. Authentic posts draw from the wave's complement
    with probability sep and uniformly otherwise, so sep=0 makes both classes
    uniform (labels independent of time) and sep=1 makes them disjoint with
    uniform overall density.
    """
    n = labels.size
    width = 1.0 - sep * (1.0 - pi)
    c = float(rng.uniform(0.0, 1.0)) * (1.0 - width)
    u = rng.random(n)
    avoid = rng.random(n) < sep
    frac = np.empty(n)

    fake = labels == 1
    frac[fake] = c + u[fake] * width
    outside = u * (1.0 - width)
    outside = np.where(outside < c, outside, outside + width)
    frac[~fake] = np.where(avoid[~fake], outside[~fake], u[~fake])
    return frac


def generate(spec: SynthSpec) -> tuple[Dataset, dict]:
    """Build an in-memory Dataset plus the ground-truth generative record."""
    spec.validate()
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_events)
    lo, hi = spec.posts_per_event
    sep = _separation(spec.margin)
    drift_axis_text = min(1, spec.d_text - 1)
    drift_axis_img = min(1, spec.d_img - 1)

    ids: list[str] = []
    labels: list[int] = []
    timestamps: list[int] = []
    has_image: list[bool] = []
    extra: list[dict] = []
    text_rows: list[np.ndarray] = []
    image_rows: list[np.ndarray] = []
    truth_events: list[dict] = []

    for e in range(spec.n_events):
        rng = np.random.default_rng(children[e])
        n = int(rng.integers(lo, hi + 1))
        t0 = e * EVENT_GAP_SECS
        duration = max(1, n * SPAN_SECS // TARGET_POSTS_PER_SPAN)

        post_labels = (rng.random(n) < spec.imbalance).astype(np.int64)
        frac = _time_fractions(post_labels, sep, spec.imbalance, rng)
        times = (duration * frac).astype(np.int64)

        order = np.argsort(times, kind="stable")
        times = times[order] + t0
        post_labels = post_labels[order]

        centroid_text = rng.normal(0.0, 1.0, size=spec.d_text)
        centroid_img = rng.normal(0.0, 1.0, size=spec.d_img)
        flip = rng.random(n) < spec.modality_conflict
        missing = rng.random(n) < spec.missing_image

        for j in range(n):
            y = int(post_labels[j])
            window_ord = int((times[j] - t0) // STRIDE_SECS)
            tvec = centroid_text + rng.normal(0.0, NOISE_SIGMA, size=spec.d_text)
            tvec[0] += spec.margin * y
            tvec[drift_axis_text] += spec.drift * window_ord

            img_label = 1 - y if flip[j] else y
            ivec = centroid_img + rng.normal(0.0, NOISE_SIGMA, size=spec.d_img)
            ivec[0] += spec.margin * img_label
            ivec[drift_axis_img] += spec.drift * window_ord

            ids.append(f"e{e:03d}p{j:03d}")
            labels.append(y)
            timestamps.append(int(times[j]))
            has_image.append(not bool(missing[j]))
            extra.append({"event": e})
            text_rows.append(tvec)
            image_rows.append(ivec if not missing[j] else np.zeros(spec.d_img))

        truth_events.append({
            "event_id": e,
            "n_posts": n,
            "t0": int(t0),
            "duration": int(duration),
            "centroid_text": [float(v) for v in centroid_text],
            "centroid_img": [float(v) for v in centroid_img],
        })

    ds = Dataset(
        ids=ids,
        labels=np.asarray(labels),
        timestamps=np.asarray(timestamps),
        text=np.asarray(text_rows),
        image=np.asarray(image_rows),
        has_image=np.asarray(has_image),
        extra=extra,
    )
    truth = {
        "spec": _spec_dict(spec),
        "wave_separation": sep,
        "class_axis": 0,
        "events": truth_events,
    }
    return ds, truth


def _spec_dict(spec: SynthSpec) -> dict:
    d = asdict(spec)
    d["posts_per_event"] = list(d["posts_per_event"])
    return d


def write_ground_truth(truth: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(truth, indent=2) + "\n")
