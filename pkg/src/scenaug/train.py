"""Cross-view self-supervised training on rasterized scenario views."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .baseaug import BaseAugConfig, base_pipeline
from .expert import AugmentationPolicy, VRRanges, apply_view_plan, connectivity_closure, draw_view_plans
from .losses import VICRegCoeffs, barlow_twins_loss, vicreg_loss
from .nn import Adam, EncoderSpec, ProjectorSpec, SSLModel, softmax_cross_entropy
from .raster import GridConfig, RasterCache, rasterize
from .scenario import Scenario

log = logging.getLogger(__name__)

OBJECTIVES = ("barlow_twins", "vicreg")
VARIANTS = ("baseagt", "exagt", "40crop", "base+vr", "base+con")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "barlow_twins"
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 30
    bt_lambda: float = 5e-3
    vicreg: VICRegCoeffs = VICRegCoeffs()
    seed: int = 0
    encoder: EncoderSpec = EncoderSpec()
    projector: ProjectorSpec = ProjectorSpec()

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ValueError("lr must be finite and >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class ViewSetup:
    """How the two views of a scenario are produced."""

    expert: bool
    policy: AugmentationPolicy
    base: BaseAugConfig


def variant_setup(variant: str, policy: Optional[AugmentationPolicy] = None,
                  base: Optional[BaseAugConfig] = None) -> ViewSetup:
    """View recipe for the baseline and ablation variants."""
    policy = policy or AugmentationPolicy()
    base = base or BaseAugConfig()
    if variant == "baseagt":
        return ViewSetup(False, policy, base)
    if variant == "exagt":
        return ViewSetup(True, policy, base)
    if variant == "40crop":
        return ViewSetup(False, policy, replace(base, crop_size=(40, 40)))
    (p_con, p_vr), (q_con, q_vr) = policy.view_probabilities
    if variant == "base+vr":
        return ViewSetup(True, replace(policy, p_con_view_a=0.0, p_con_view_b=0.0,
                                       p_vr_view_a=p_vr, p_vr_view_b=q_vr), base)
    if variant == "base+con":
        return ViewSetup(True, replace(policy, p_vr_view_a=0.0, p_vr_view_b=0.0,
                                       p_con_view_a=p_con, p_con_view_b=q_con), base)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


class ViewGenerator:
    """Produces augmented grid pairs; caches per-scenario work that does not depend on the draw."""

    def __init__(self, scenarios: Sequence[Scenario], setup: ViewSetup, grid: GridConfig = GridConfig()):
        self.scenarios = list(scenarios)
        self.setup = setup
        self.grid = grid
        self.cache = RasterCache()
        self._closures: dict[int, object] = {}
        self._plain: dict[int, object] = {}

    def plain(self, idx: int):
        g = self._plain.get(idx)
        if g is None:
            g = rasterize(self.scenarios[idx], self.grid, self.cache)
            self._plain[idx] = g
        return g

    def closure(self, idx: int):
        c = self._closures.get(idx)
        if c is None:
            c = connectivity_closure(self.scenarios[idx])
            self._closures[idx] = c
        return c

    def pair(self, idx: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        s = self.scenarios[idx]
        if self.setup.expert:
            plans = draw_view_plans(self.setup.policy, rng)
            grids = []
            for plan in plans:
                if not (plan.apply_con or plan.apply_vr):
                    grids.append(self.plain(idx))
                    continue
                closure = self.closure(idx) if plan.apply_con else None
                grids.append(rasterize(apply_view_plan(s, plan, closure), self.grid, self.cache))
        else:
            grids = [self.plain(idx), self.plain(idx)]
        return tuple(base_pipeline(g, self.setup.base, rng).data for g in grids)


def view_rng(seed: int, epoch: int, idx: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch), int(idx), 0x5EED])


_WORKER: Optional[ViewGenerator] = None


def _init_worker(scenarios, setup, grid):
    global _WORKER
    _WORKER = ViewGenerator(scenarios, setup, grid)


def _worker_pair(task):
    seed, epoch, idx = task
    return _WORKER.pair(idx, view_rng(seed, epoch, idx))


@dataclass
class TrainResult:
    model: SSLModel
    loss_trace: list[float]
    step_losses: list[float] = field(default_factory=list)

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(self.loss_trace, 1):
            w.writerow([i, repr(float(v))])
        return buf.getvalue()

    def write_loss_csv(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.loss_csv())


def _objective(cfg: TrainConfig, za: np.ndarray, zb: np.ndarray):
    za64, zb64 = za.astype(np.float64), zb.astype(np.float64)
    if cfg.objective == "barlow_twins":
        return barlow_twins_loss(za64, zb64, cfg.bt_lambda)
    return vicreg_loss(za64, zb64, cfg.vicreg)


def init_model(cfg: TrainConfig, grid: GridConfig = GridConfig()) -> SSLModel:
    return SSLModel(grid.shape, cfg.encoder, cfg.projector, np.random.default_rng([cfg.seed, 1]))


def train(scenarios: Sequence[Scenario], policy: Optional[AugmentationPolicy] = None,
          base_cfg: Optional[BaseAugConfig] = None, train_cfg: TrainConfig = TrainConfig(),
          variant: str = "exagt", grid: GridConfig = GridConfig(), jobs: int = 1,
          model: Optional[SSLModel] = None) -> TrainResult:
    """Train encoder and projector on two-view batches; returns the model and per-epoch mean loss.

    Batch composition and every augmentation draw depend only on
    ``train_cfg.seed``, so results do not depend on ``jobs``.
    """
    if not scenarios:
        raise ValueError("empty dataset")
    setup = variant_setup(variant, policy, base_cfg)
    model = model or init_model(train_cfg, grid)
    opt = Adam(model.params, lr=train_cfg.lr)
    n = len(scenarios)
    bs = min(train_cfg.batch_size, n)
    if bs < 2:
        raise ValueError("need at least 2 scenarios per batch")

    executor: Optional[Executor] = None
    gen: Optional[ViewGenerator] = None
    if jobs > 1:
        executor = ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(list(scenarios), setup, grid))
    else:
        gen = ViewGenerator(scenarios, setup, grid)

    trace: list[float] = []
    steps: list[float] = []
    step = 0
    try:
        for epoch in range(train_cfg.epochs):
            order = np.random.default_rng([train_cfg.seed, epoch, 7]).permutation(n)
            epoch_losses = []
            for start in range(0, n - bs + 1, bs):
                idxs = order[start:start + bs]
                tasks = [(train_cfg.seed, epoch, int(i)) for i in idxs]
                if executor is not None:
                    pairs = list(executor.map(_worker_pair, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
                else:
                    pairs = [gen.pair(i, view_rng(*t)) for t, i in zip(tasks, idxs)]
                va = np.stack([p[0] for p in pairs])
                vb = np.stack([p[1] for p in pairs])
                _, za, cache_a = model.forward(va)
                _, zb, cache_b = model.forward(vb)
                out = _objective(train_cfg, za, zb)
                if not math.isfinite(out.value):
                    raise TrainingDiverged(step, out.value)
                ga = model.backward(cache_a, out.grad_a.astype(za.dtype))
                gb = model.backward(cache_b, out.grad_b.astype(zb.dtype))
                for a, b in zip(ga, gb):
                    a += b
                opt.step(ga)
                steps.append(out.value)
                epoch_losses.append(out.value)
                step += 1
            trace.append(float(np.mean(epoch_losses)))
            log.info("epoch %d mean loss %.4f", epoch + 1, trace[-1])
    finally:
        if executor is not None:
            executor.shutdown()
    return TrainResult(model, trace, steps)


def rasterize_all(scenarios: Sequence[Scenario], grid: GridConfig = GridConfig(),
                  cache: Optional[RasterCache] = None) -> np.ndarray:
    return np.stack([rasterize(s, grid, cache).data for s in scenarios])


def embed_grids(model: SSLModel, grids: np.ndarray, mode: str = "representation_h",
                batch_size: int = 128) -> np.ndarray:
    if mode not in ("representation_h", "projection_z"):
        raise ValueError(f"unknown embedding mode {mode!r}")
    rows = []
    for i in range(0, len(grids), batch_size):
        h, z, _ = model.forward(grids[i:i + batch_size])
        rows.append(h if mode == "representation_h" else z)
    return np.concatenate(rows).astype(np.float64) if rows else np.zeros((0, model.d_r))


def embed_dataset(model: SSLModel, scenarios: Sequence[Scenario], mode: str = "representation_h",
                  grid: GridConfig = GridConfig()) -> np.ndarray:
    """Embeddings of the un-augmented rasterization of each scenario, one row per scenario."""
    return embed_grids(model, rasterize_all(scenarios, grid, RasterCache()), mode)


# --- supervised fine-tuning --------------------------------------------------

@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 40
    lr: float = 1e-4
    batch_size: int = 32
    seed: int = 0


class Classifier:
    """Encoder plus a linear head on ``h``; both are trained."""

    def __init__(self, model: SSLModel, n_classes: int, rng: np.random.Generator):
        self.model = model
        d = model.d_r
        dtype = model.encoder.weights[0].dtype
        self.w = (rng.standard_normal((d, n_classes)) / np.sqrt(d)).astype(dtype)
        self.b = np.zeros(n_classes, dtype=dtype)

    @property
    def params(self):
        return self.model.encoder.params + [self.w, self.b]

    def logits(self, grids: np.ndarray) -> np.ndarray:
        return self.model.encode(grids) @ self.w + self.b

    def predict(self, grids: np.ndarray, batch_size: int = 128) -> np.ndarray:
        return np.concatenate([
            self.logits(grids[i:i + batch_size]).argmax(axis=1) for i in range(0, len(grids), batch_size)
        ])

    def step_grads(self, grids: np.ndarray, labels: np.ndarray):
        x = self.model.prepare(grids)
        h, acts = self.model.encoder.forward(x)
        logits = h @ self.w + self.b
        loss, g = softmax_cross_entropy(logits.astype(np.float64), labels)
        g = g.astype(h.dtype)
        gw = h.T @ g
        gb = g.sum(axis=0)
        genc, _ = self.model.encoder.backward(acts, g @ self.w.T)
        return loss, genc + [gw, gb]


def finetune(model: SSLModel, grids: np.ndarray, labels: np.ndarray, n_classes: int,
             cfg: FinetuneConfig = FinetuneConfig()) -> Classifier:
    """Supervised training of the (unfrozen) encoder plus a fresh linear head."""
    clf = Classifier(model.copy(), n_classes, np.random.default_rng([cfg.seed, 3]))
    opt = Adam(clf.params, lr=cfg.lr)
    n = len(grids)
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch, 11]).permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grads = clf.step_grads(grids[idx], labels[idx])
            opt.step(grads)
    return clf
