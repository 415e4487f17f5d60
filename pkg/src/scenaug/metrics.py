"""Zero-shot clustering, linear and few-shot evaluation, and representation stability."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .nn import Adam, softmax_cross_entropy
from .raster import GridConfig, RasterCache, rasterize_map
from .scenario import Scenario, ego
from .train import FinetuneConfig, TrainConfig, finetune, init_model

LINKAGES = ("ward", "average", "complete")
DEFAULT_K_GRID = (1, 5, 10, 20, 50)


class EvalWarning(UserWarning):
    pass


# --- clustering ---------------------------------------------------------------

@dataclass
class ClusteringResult:
    assignments: np.ndarray
    k: int
    acc: float


def _relabel_by_first_appearance(labels: np.ndarray) -> np.ndarray:
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse]


def hierarchical_cluster(x: np.ndarray, k: int, linkage: str = "ward") -> np.ndarray:
    """Agglomerative clustering cut at exactly ``k`` clusters.

    Merges follow the Lance-Williams recurrence. Among equal merge costs the
    lexicographically smallest (i, j) pair of active cluster slots wins.
    Cluster ids are numbered by first appearance in row order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("embeddings must be a 2-D array")
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}")
    sq = (x * x).sum(axis=1)
    d = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    if linkage != "ward":
        d = np.sqrt(d)
    else:
        d *= 0.5  # Ward cost of merging two singletons
    size = np.ones(n)
    label = np.arange(n)
    active = np.ones(n, dtype=bool)
    d[np.diag_indices(n)] = np.inf
    for _ in range(n - k):
        flat = int(np.argmin(d))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        dij = d[i, j]
        ni, nj = size[i], size[j]
        if linkage == "ward":
            nk = size
            new = ((ni + nk) * d[i] + (nj + nk) * d[j] - nk * dij) / (ni + nj + nk)
        elif linkage == "average":
            new = (ni * d[i] + nj * d[j]) / (ni + nj)
        else:
            new = np.maximum(d[i], d[j])
        new[~active] = np.inf
        new[i] = np.inf
        d[i, :] = new
        d[:, i] = new
        d[j, :] = np.inf
        d[:, j] = np.inf
        active[j] = False
        size[i] = ni + nj
        label[label == j] = i
    return _relabel_by_first_appearance(label)


def clustering_accuracy(assignments: Sequence[int], labels: Sequence[int]) -> float:
    """Best one-to-one cluster/label matching fraction (Hungarian on the contingency matrix)."""
    a = np.asarray(assignments)
    y = np.asarray(labels)
    if a.shape != y.shape:
        raise ValueError("assignments and labels must have the same length")
    if a.size == 0:
        raise ValueError("empty input")
    _, ai = np.unique(a, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    size = max(ai.max(), yi.max()) + 1
    table = np.zeros((size, size), dtype=np.int64)
    np.add.at(table, (ai, yi), 1)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / a.size)


def zero_shot(h: np.ndarray, labels: Sequence[int], k: Optional[int] = None,
              linkage: str = "ward") -> ClusteringResult:
    labels = np.asarray(labels)
    k = k or len(np.unique(labels))
    assign = hierarchical_cluster(h, k, linkage)
    return ClusteringResult(assign, k, clustering_accuracy(assign, labels))


# --- splits -------------------------------------------------------------------

def stratified_split(labels: Sequence[int], test_fraction: float = 0.2, seed: int = 0):
    """(train_idx, test_idx); each class is split separately, at least one training row per class."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 17])
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_test = min(int(round(test_fraction * len(idx))), len(idx) - 1)
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def stratified_subset(labels: Sequence[int], fraction: float, seed: int = 0) -> np.ndarray:
    """Indices of a class-proportional subset; every class keeps at least one row."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1] and yield a non-empty subset")
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("fraction yields an empty subset")
    rng = np.random.default_rng([seed, 23])
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n = max(1, int(round(fraction * len(idx))))
        keep.extend(rng.permutation(idx)[:n])
    return np.sort(np.array(keep, dtype=int))


def _masked_accuracy(pred: np.ndarray, y: np.ndarray, known: np.ndarray) -> float:
    mask = np.isin(y, known)
    if not mask.all():
        missing = sorted(set(np.unique(y[~mask]).tolist()))
        warnings.warn(f"classes {missing} absent from the training split; skipped", EvalWarning)
    if not mask.any():
        raise ValueError("no evaluable test rows")
    return float((pred[mask] == y[mask]).mean())


# --- linear probe -------------------------------------------------------------

@dataclass(frozen=True)
class LinearEvalConfig:
    steps: int = 500
    lr: float = 1e-2
    seed: int = 0


def linear_eval(h: np.ndarray, labels: Sequence[int], train_idx: np.ndarray, test_idx: np.ndarray,
                cfg: LinearEvalConfig = LinearEvalConfig()) -> float:
    """Held-out accuracy of an affine softmax classifier trained on frozen embeddings."""
    h = np.asarray(h, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y[train_idx])
    if len(classes) < 2:
        raise ValueError("need at least 2 classes in the training split")
    yt = np.searchsorted(classes, y[train_idx])
    mu = h[train_idx].mean(axis=0)
    sd = h[train_idx].std(axis=0) + 1e-8
    xt = (h[train_idx] - mu) / sd
    rng = np.random.default_rng([cfg.seed, 5])
    w = rng.standard_normal((h.shape[1], len(classes))) * 0.01
    b = np.zeros(len(classes))
    opt = Adam([w, b], lr=cfg.lr)
    for _ in range(cfg.steps):
        _, g = softmax_cross_entropy(xt @ w + b, yt)
        opt.step([xt.T @ g, g.sum(axis=0)])
    pred = classes[(((h[test_idx] - mu) / sd) @ w + b).argmax(axis=1)]
    return _masked_accuracy(pred, y[test_idx], classes)


# --- supervised / few-shot ----------------------------------------------------

def supervised_eval(grids: np.ndarray, labels: Sequence[int], train_idx: np.ndarray, test_idx: np.ndarray,
                    model=None, cfg=None, model_seed: int = 0) -> float:
    """Fine-tune ``model`` (or a fresh one when None) with a linear head; held-out accuracy."""
    cfg = cfg or FinetuneConfig(seed=model_seed)
    y = np.asarray(labels)
    classes = np.unique(y[train_idx])
    if model is None:
        c, h, w = grids.shape[1:]
        model = init_model(TrainConfig(seed=model_seed), GridConfig(height=h, width=w, channels=c,
                                                                    ego_pixel=(0, 0)))
    clf = finetune(model, grids[train_idx], np.searchsorted(classes, y[train_idx]), len(classes), cfg)
    pred = classes[clf.predict(grids[test_idx])]
    return _masked_accuracy(pred, y[test_idx], classes)


def few_shot_eval(model, grids: np.ndarray, labels: Sequence[int], train_idx: np.ndarray,
                  test_idx: np.ndarray, fraction: float, seed: int = 0, cfg=None) -> float:
    """Fine-tune on a stratified ``fraction`` of the training split; ``model=None`` trains from scratch."""
    y = np.asarray(labels)
    sub = np.asarray(train_idx)[stratified_subset(y[train_idx], fraction, seed)]
    return supervised_eval(grids, y, sub, test_idx, model, cfg, model_seed=seed)


# --- stability ----------------------------------------------------------------

@dataclass
class StabilityReport:
    k: int
    delta_velocity: float
    delta_traj_xy: float
    delta_map_image: float


def mean_speed(scenario: Scenario) -> float:
    tr = ego(scenario).trajectory
    if len(tr) < 2:
        return 0.0
    step = np.linalg.norm(np.diff(tr.xy, axis=0), axis=1)
    return float((step / np.diff(tr.t)).mean())


def traj_displacement(scenario: Scenario, points: int = 10) -> float:
    """Mean step length of the EGO path resampled to ``points`` evenly spaced timestamps."""
    tr = ego(scenario).trajectory
    if len(tr) < 2:
        return 0.0
    ts = np.linspace(tr.t[0], tr.t[-1], points)
    xy = np.stack([np.interp(ts, tr.t, tr.xy[:, 0]), np.interp(ts, tr.t, tr.xy[:, 1])], axis=1)
    return float(np.linalg.norm(np.diff(xy, axis=0), axis=1).mean())


def map_images(scenarios: Sequence[Scenario], config: GridConfig = GridConfig()) -> np.ndarray:
    cache = RasterCache()
    return np.stack([rasterize_map(s, config, cache) for s in scenarios])


def knn(h: np.ndarray, k: int) -> np.ndarray:
    """(N, k) neighbor indices by Euclidean distance, self excluded, ties broken by index."""
    h = np.asarray(h, dtype=np.float64)
    n = len(h)
    if not 1 <= k < n:
        raise ValueError(f"k={k} must lie in [1, {n - 1}]")
    sq = (h * h).sum(axis=1)
    d = np.maximum(sq[:, None] + sq[None, :] - 2.0 * h @ h.T, 0.0)
    d[np.diag_indices(n)] = np.inf
    return np.argsort(d, axis=1, kind="stable")[:, :k]


@dataclass
class StabilityFeatures:
    velocity: np.ndarray
    traj_xy: np.ndarray
    map_image: np.ndarray

    @classmethod
    def from_scenarios(cls, scenarios: Sequence[Scenario], config: GridConfig = GridConfig()):
        return cls(np.array([mean_speed(s) for s in scenarios]),
                   np.array([traj_displacement(s) for s in scenarios]),
                   map_images(scenarios, config))


def stability(h: np.ndarray, features: StabilityFeatures, k: int) -> StabilityReport:
    nb = knn(h, k)
    rows = np.arange(len(nb))[:, None]
    dv = np.abs(features.velocity[nb] - features.velocity[rows]).mean()
    dt = np.abs(features.traj_xy[nb] - features.traj_xy[rows]).mean()
    imgs = features.map_image.reshape(len(nb), -1)
    dm = np.mean([np.abs(imgs[nb[i]] - imgs[i]).mean() for i in range(len(nb))])
    return StabilityReport(int(k), float(dv), float(dt), float(dm))


def stability_sweep(h: np.ndarray, scenarios: Sequence[Scenario], ks: Sequence[int] = DEFAULT_K_GRID,
                    config: GridConfig = GridConfig()) -> list[StabilityReport]:
    feats = StabilityFeatures.from_scenarios(scenarios, config)
    return [stability(h, feats, k) for k in ks if k < len(h)]


# --- report -------------------------------------------------------------------

def metrics_report(experiment: str, seed: int, acc: Optional[float] = None,
                   linear_acc: Optional[float] = None, few_shot: Optional[dict] = None,
                   stability_reports: Sequence[StabilityReport] = ()) -> str:
    doc = {
        "experiment": experiment,
        "seed": seed,
        "acc": acc,
        "linear_acc": linear_acc,
        "few_shot": dict(few_shot or {}),
        "stability": [{"k": r.k, "deltas": {key: v for key, v in asdict(r).items() if key != "k"}}
                      for r in stability_reports],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
