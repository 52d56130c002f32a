"""Cross-cutting verification: oracles and invariant checks.

Everything here is independent of the implementation paths it checks:
gradients against central finite differences, clustering against an
exhaustive agglomerative reference, AUC against explicit pair enumeration,
plus randomized structural invariants (row-stochastic attention, gating and
hull bounds, LSTM output bounds, momentum positivity).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .clustering import PseudoEvent, agglomerate, cluster_events, cosine_distances
from .config import RunConfig
from .data import Dataset, assign_splits
from .fusion import fuse_window, mh_attention
from .metrics import auc_by_pair_enumeration, auc_roc
from .objective import tc_terms
from .params import ModelParams
from .trend import TrendState, aggregate_window, decay_weights, run_lstm, trend_features
from .training import backward, forward, loss_value
from .windows import Window, segment_all, segment_event

DAY = 86400
GRAD_TOL = 1e-4
FD_STEP = 1e-5
REL_FLOOR = 1e-8


@dataclass
class OracleReport:
    name: str
    status: str              # "pass" | "fail"
    worst_error: float
    location: str
    seed: int

    @property
    def ok(self) -> bool:
        return self.status == "pass"

    def line(self) -> str:
        return (f"{self.name:<28} {self.status:<5} worst={self.worst_error:.3e} "
                f"at {self.location or '-'} (seed {self.seed})")


# -- shared toy model -------------------------------------------------------
def toy_problem(seed: int, d: int = 4, heads: int = 2, n_posts: int = 6,
                d_text: int = 5, d_img: int = 3):
    """Tiny two-event dataset plus config and randomized parameters."""
    rng = np.random.default_rng(seed)
    timestamps = np.sort(rng.integers(0, 8 * DAY, size=n_posts))
    labels = rng.integers(0, 2, size=n_posts)
    labels[0], labels[-1] = 0, 1  # keep both classes present
    has_image = rng.random(n_posts) > 0.3
    text = rng.normal(size=(n_posts, d_text))
    image = np.where(has_image[:, None], rng.normal(size=(n_posts, d_img)), 0.0)

    ds = Dataset(
        ids=[f"p{i}" for i in range(n_posts)],
        labels=labels,
        timestamps=timestamps,
        text=text,
        image=image,
        has_image=has_image,
    )
    ds = assign_splits(ds, (0.8, 0.1, 0.1), seed=seed)

    half = n_posts // 2
    events = [
        PseudoEvent(0, tuple(range(half))),
        PseudoEvent(1, tuple(range(half, n_posts))),
    ]
    cfg = RunConfig({
        "model.d": d,
        "model.heads": heads,
        "window.span_secs": 4 * DAY,
        "window.stride_secs": 2 * DAY,
        "trend.alpha": 1.0 / DAY,
        "trend.beta": 0.7,
        "loss.lambda_tc": 0.1,
        "loss.lambda_reg": 1e-4,
        "seed": seed,
    })
    span, stride = cfg.window_geometry()
    windows = segment_all(events, ds, span, stride)
    params = ModelParams.build(d, heads, d_text, d_img, seed=seed)
    return ds, events, windows, params, cfg


# -- gradient oracle --------------------------------------------------------
def grad_check(seed: int, d: int = 4, heads: int = 2,
               corrupt: str | None = None) -> OracleReport:
    """Analytic gradients of the total loss vs central finite differences."""
    ds, events, windows, params, cfg = toy_problem(seed, d=d, heads=heads)
    analytic = backward(forward(ds, events, windows, params, cfg))
    if corrupt is not None:
        analytic[corrupt] = analytic[corrupt] + 1.0

    worst = 0.0
    where = ""
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            fp = loss_value(ds, events, windows, params, cfg)
            flat[i] = orig - FD_STEP
            fm = loss_value(ds, events, windows, params, cfg)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * FD_STEP)
            rel = abs(a_flat[i] - fd) / max(abs(a_flat[i]), abs(fd), REL_FLOOR)
            if rel > worst:
                worst = rel
                where = f"{name}[{i}]"
    status = "pass" if worst < GRAD_TOL else "fail"
    return OracleReport("grad_check", status, worst, where, seed)


# -- structural invariants ----------------------------------------------------
def structural_invariants(n_configs: int = 1000, seed: int = 0) -> OracleReport:
    """Randomized fusion/trend runs; checks the hard architectural bounds."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    where = ""

    def track(err: float, loc: str):
        nonlocal worst, where
        if err > worst:
            worst, where = err, loc

    for trial in range(n_configs):
        d = int(rng.choice([2, 4, 8]))
        heads = int(rng.choice([h for h in (1, 2, 4) if d % h == 0]))
        n = int(rng.integers(1, 7))
        d_text = int(rng.integers(2, 6))
        d_img = int(rng.integers(2, 6))
        # moderate input scales keep sigmoid/tanh off exact float saturation,
        # where open-interval bounds stop being observable
        scale_factor = float(rng.choice([0.1, 0.5, 1.0]))

        times = np.sort(rng.integers(0, 5 * DAY, size=n))
        ds = Dataset(
            ids=[f"p{i}" for i in range(n)],
            labels=rng.integers(0, 2, size=n),
            timestamps=times,
            text=rng.normal(size=(n, d_text)) * scale_factor,
            image=rng.normal(size=(n, d_img)) * scale_factor,
            has_image=np.ones(n, dtype=bool),
        )
        params = ModelParams.build(d, heads, d_text, d_img, seed=int(rng.integers(1 << 31)))
        window = Window(1, int(times[0]), int(times[-1]) + 1,
                        tuple(range(n)), int(times[-1]))

        # attention rows must be stochastic even for large scores
        q = Tensor(rng.normal(size=(n, d)) * float(rng.choice([0.1, 1.0, 3.0])))
        k = Tensor(rng.normal(size=(n, d)) * float(rng.choice([0.1, 1.0, 3.0])))
        _, weights = mh_attention(q, k, k, params.block("att_ti"),
                                  return_weights=True)
        track(float(np.abs(weights.data.sum(axis=-1) - 1.0).max()),
              f"trial {trial}: softmax row sum")

        wf = fuse_window(ds, params, window)
        gate = wf.gate.data
        if not ((gate > 0.0).all() and (gate < 1.0).all()):
            track(1.0, f"trial {trial}: gate out of (0,1)")
        lo = np.minimum(wf.cross_ti.data, wf.cross_it.data) - 1e-12
        hi = np.maximum(wf.cross_ti.data, wf.cross_it.data) + 1e-12
        track(float(np.maximum(lo - wf.fused.data, wf.fused.data - hi).max()),
              f"trial {trial}: fused outside gate interval")

        alpha = float(rng.choice([0.0, 1.0 / DAY, 5.0 / DAY]))
        agg = aggregate_window(wf.fused, window, ds, alpha)
        col_lo = wf.fused.data.min(axis=0) - 1e-12
        col_hi = wf.fused.data.max(axis=0) + 1e-12
        track(float(np.maximum(col_lo - agg.data[0], agg.data[0] - col_hi).max()),
              f"trial {trial}: aggregate outside convex hull")

        # a short aggregate sequence through features + LSTM
        aggs = [agg, agg * float(rng.uniform(0.2, 2.0)), agg + 0.5]
        feats = trend_features(aggs, beta=float(rng.uniform(0.0, 1.0)))
        for f in feats:
            if float(f.momentum.data) < 0:
                track(1.0, f"trial {trial}: negative momentum")
        states = run_lstm(feats, params)
        for s in states:
            if float(np.abs(s.hidden.data).max()) >= 1.0:
                track(1.0, f"trial {trial}: |T| >= 1")

    tol = 1e-12
    status = "pass" if worst <= tol else "fail"
    return OracleReport("structural_invariants", status, worst, where, seed)


# -- clustering oracle --------------------------------------------------------
def _linkage_distance(a: list[int], b: list[int], dist: np.ndarray, linkage: str) -> float:
    cross = dist[np.ix_(a, b)]
    if linkage == "average":
        return float(cross.mean())
    if linkage == "complete":
        return float(cross.max())
    return float(cross.min())


def reference_agglomerate(dist: np.ndarray, num_clusters: int, linkage: str) -> list[list[int]]:
    """Exhaustive reference: linkage recomputed from original pair distances."""
    n = dist.shape[0]
    clusters: dict[int, list[int]] = {i: [i] for i in range(n)}
    while len(clusters) > num_clusters:
        best: tuple[float, int, int] | None = None
        ids = sorted(clusters)
        for ai, i in enumerate(ids):
            for j in ids[ai + 1:]:
                d = _linkage_distance(clusters[i], clusters[j], dist, linkage)
                if best is None or (d, i, j) < best:
                    best = (d, i, j)
        _, i, j = best  # type: ignore[misc]
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]
    out = [sorted(c) for c in clusters.values()]
    out.sort(key=min)
    return out


def clustering_oracle(seeds: list[int]) -> OracleReport:
    """Production clustering vs the exhaustive reference on every small case."""
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        d = int(rng.integers(2, 5))
        x = rng.normal(size=(n, d))
        if rng.random() < 0.2:
            x[int(rng.integers(n))] = 0.0  # exercise the zero-norm rule
        dist = cosine_distances(x)
        k = int(rng.integers(1, n + 1))
        for linkage in ("average", "complete", "single"):
            got = agglomerate(dist, k, linkage)
            want = reference_agglomerate(dist, k, linkage)
            if [sorted(c) for c in got] != want:
                return OracleReport(
                    "clustering_oracle", "fail", 1.0,
                    f"n={n} k={k} linkage={linkage}", seed,
                )
    return OracleReport("clustering_oracle", "pass", 0.0, "", seeds[0] if seeds else 0)


def auc_oracle(seeds: list[int]) -> OracleReport:
    """Rank-statistic AUC vs exhaustive pair enumeration (exact equality)."""
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 11))
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        p = rng.random(n)
        if rng.random() < 0.5:
            p = np.round(p, 1)  # force ties
        got = auc_roc(p, y)
        want = auc_by_pair_enumeration(p, y)
        if got != want:
            return OracleReport("auc_oracle", "fail", abs(got - want),
                                f"n={n}", seed)
    return OracleReport("auc_oracle", "pass", 0.0, "", seeds[0] if seeds else 0)


# -- other module invariants ---------------------------------------------------
def partition_and_scale_invariance(seeds: list[int]) -> OracleReport:
    """Clusterings partition the posts and ignore positive rescaling."""
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        ds = Dataset(
            ids=[f"p{i}" for i in range(n)],
            labels=np.zeros(n, dtype=np.int64),
            timestamps=np.sort(rng.integers(0, 100, size=n)),
            text=rng.normal(size=(n, 3)),
            image=np.zeros((n, 2)),
            has_image=np.zeros(n, dtype=bool),
        )
        k = int(rng.integers(1, n + 1))
        events = cluster_events(ds, k)
        seen = sorted(i for ev in events for i in ev.member_indices)
        if seen != list(range(n)) or len(events) != k:
            return OracleReport("cluster_partition", "fail", 1.0, f"n={n} k={k}", seed)

        scaled = ds.text.copy()
        scaled[0] *= 7.5
        ds2 = Dataset(ds.ids, ds.labels, ds.timestamps, scaled, ds.image, ds.has_image)
        events2 = cluster_events(ds2, k)
        if [e.member_indices for e in events] != [e.member_indices for e in events2]:
            return OracleReport("cluster_partition", "fail", 1.0,
                                f"scale change moved n={n} k={k}", seed)
    return OracleReport("cluster_partition", "pass", 0.0, "", seeds[0] if seeds else 0)


def window_coverage(seeds: list[int]) -> OracleReport:
    """Every member covered; 50%-overlap interior posts sit in >= 2 windows."""
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 30))
        times = np.sort(rng.integers(0, 40 * DAY, size=n))
        ds = Dataset(
            ids=[f"p{i}" for i in range(n)],
            labels=np.zeros(n, dtype=np.int64),
            timestamps=times,
            text=np.zeros((n, 2)),
            image=np.zeros((n, 2)),
            has_image=np.zeros(n, dtype=bool),
        )
        event = PseudoEvent(0, tuple(range(n)))
        span = int(rng.choice([2, 4, 6])) * DAY
        seq = segment_event(event, ds, span, span // 2)
        counts = {i: 0 for i in range(n)}
        for pos, w in enumerate(seq.windows):
            if w.index != pos + 1:
                return OracleReport("window_coverage", "fail", 1.0,
                                    "non-contiguous indices", seed)
            for i in w.members:
                counts[i] += 1
        if any(c == 0 for c in counts.values()):
            return OracleReport("window_coverage", "fail", 1.0, "uncovered post", seed)
        t0, t_last = int(times[0]), int(times[-1])
        for i in range(n):
            interior = t0 + span // 2 <= int(times[i]) and int(times[i]) < t_last - span // 2
            if interior and counts[i] < 2:
                return OracleReport("window_coverage", "fail", 1.0,
                                    f"interior post {i} in {counts[i]} windows", seed)
    return OracleReport("window_coverage", "pass", 0.0, "", seeds[0] if seeds else 0)


def tc_rotation_invariance(seeds: list[int]) -> OracleReport:
    """The consistency term only sees norms and angles."""
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 6))
        steps = int(rng.integers(2, 6))
        states = [TrendState(Tensor(rng.normal(size=(1, d))), Tensor(np.zeros((1, d))))
                  for _ in range(steps)]
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        rotated = [TrendState(Tensor(s.hidden.data @ q), s.cell) for s in states]
        a = tc_terms(states)
        b = tc_terms(rotated)
        va = float(a.data) if a is not None else 0.0
        vb = float(b.data) if b is not None else 0.0
        worst = max(worst, abs(va - vb) / max(abs(va), 1.0))
    status = "pass" if worst < 1e-9 else "fail"
    return OracleReport("tc_rotation_invariance", status, worst, "", seeds[0] if seeds else 0)


def event_order_invariance(seed: int) -> OracleReport:
    """Total loss and summed gradients ignore event processing order."""
    ds, events, windows, params, cfg = toy_problem(seed)
    art1 = forward(ds, events, windows, params, cfg)
    g1 = backward(art1)
    art2 = forward(ds, list(reversed(events)), windows, params, cfg)
    g2 = backward(art2)
    worst = abs(art1.report.total - art2.report.total)
    for name in g1:
        worst = max(worst, float(np.abs(g1[name] - g2[name]).max()))
    status = "pass" if worst < 1e-9 else "fail"
    return OracleReport("event_order_invariance", status, worst, "", seed)


def decay_weight_properties(seeds: list[int]) -> OracleReport:
    """Aggregation weights: convex, newest post at the maximum weight."""
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 8))
        times = np.sort(rng.integers(0, 10 * DAY, size=n))
        ds = Dataset(
            ids=[f"p{i}" for i in range(n)],
            labels=np.zeros(n, dtype=np.int64),
            timestamps=times,
            text=np.zeros((n, 2)),
            image=np.zeros((n, 2)),
            has_image=np.zeros(n, dtype=bool),
        )
        w = Window(1, int(times[0]), int(times[-1]) + 1, tuple(range(n)), int(times[-1]))
        lam = decay_weights(ds, w, alpha=float(rng.uniform(0, 2)) / DAY)
        if abs(lam.sum() - 1.0) > 1e-12 or (lam <= 0).any():
            return OracleReport("decay_weights", "fail", 1.0, f"n={n}", seed)
        if lam.argmax() not in np.flatnonzero(times == times[-1]):
            return OracleReport("decay_weights", "fail", 1.0, "newest not max", seed)
    return OracleReport("decay_weights", "pass", 0.0, "", seeds[0] if seeds else 0)


def run_all(seeds: list[int]) -> list[OracleReport]:
    """The whole battery; one report per named check."""
    seeds = list(seeds) or [0]
    reports = []
    t0 = time.time()
    for seed in seeds[:3]:
        reports.append(grad_check(seed))
    reports.append(structural_invariants(200, seeds[0]))
    salt = [s + k for s in seeds for k in range(17)]
    reports.append(clustering_oracle(salt))
    reports.append(auc_oracle(salt))
    reports.append(partition_and_scale_invariance(salt[:20]))
    reports.append(window_coverage(salt[:30]))
    reports.append(tc_rotation_invariance(salt[:20]))
    reports.append(event_order_invariance(seeds[0]))
    reports.append(decay_weight_properties(salt[:20]))
    elapsed = time.time() - t0
    reports.append(OracleReport(
        "suite_runtime", "pass" if elapsed < 300 else "fail", elapsed, "seconds", seeds[0]
    ))
    return reports


def write_report(reports: list[OracleReport], path: str | Path) -> None:
    payload = [
        {
            "name": r.name,
            "status": r.status,
            "worst_error": r.worst_error,
            "location": r.location,
            "seed": r.seed,
        }
        for r in reports
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
