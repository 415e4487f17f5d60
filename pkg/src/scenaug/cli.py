"""Command-line pipeline: synth, ingest, mine-labels, augment, rasterize, train, eval, ablate-vr.

Exit codes: 0 ok, 2 usage (bad flags, missing files), 3 validation
(invalid scenarios or config), 4 runtime failure. Outputs are staged and
moved into place only when a command succeeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import itertools
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from .baseaug import BaseAugConfig
from .expert import (AugmentationPolicy, VRParams, VRRanges, augment_combined, augment_con, augment_vr,
                     sample_views, scenario_rng)
from .ingest import (LabeledDataset, ScenarioParseError, ScenarioValidationError, SchemaError,
                     build_labeled_dataset, parse_scenario, read_scenarios, serialize_scenario)
from .losses import VICRegCoeffs
from .metrics import (DEFAULT_K_GRID, LinearEvalConfig, few_shot_eval, linear_eval, metrics_report,
                      stability_sweep, stratified_split, zero_shot)
from .nn import EncoderSpec, ProjectorSpec, SSLModel
from .raster import GridConfig, RasterCache, rasterize, render_png, write_grid_sequence
from .scenario import Scenario
from .synth import generate_suite
from .train import VARIANTS, FinetuneConfig, TrainConfig, TrainingDiverged, embed_dataset, rasterize_all, train

log = logging.getLogger("scenaug")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4
DEFAULT_ABLATION_GRID = "d_max=100,50;alpha_max=360,120"
OBJECTIVE_FLAGS = {"bt": "barlow_twins", "vicreg": "vicreg"}


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


# --- staged outputs -----------------------------------------------------------

class Outputs:
    """Collects output files in a staging directory; ``commit`` moves them into place."""

    def __init__(self):
        self._stage = Path(tempfile.mkdtemp(prefix="scenaug-"))
        self._files: list[tuple[Path, Path]] = []

    def path(self, target: os.PathLike) -> Path:
        target = Path(target)
        staged = self._stage / f"{len(self._files)}_{target.name}"
        self._files.append((staged, target))
        return staged

    def write_bytes(self, target: os.PathLike, data: bytes) -> None:
        self.path(target).write_bytes(data)

    def write_text(self, target: os.PathLike, text: str) -> None:
        self.write_bytes(target, text.encode("utf-8"))

    def commit(self) -> None:
        for staged, target in self._files:
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.move(str(staged), str(target))
        self.discard()

    def discard(self) -> None:
        shutil.rmtree(self._stage, ignore_errors=True)


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    """Order-preserving map, optionally across worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


# --- config -------------------------------------------------------------------

CONFIG_SECTIONS = ("grid", "policy", "base", "train", "eval")


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - set(CONFIG_SECTIONS) - {"seed", "data", "labels"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return doc


def _build(cls, section: dict, name: str, converters: Optional[dict] = None):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - fields
    if unknown:
        raise ConfigError(f"config section {name!r}: unknown keys {sorted(unknown)}")
    kwargs = dict(section)
    for key, conv in (converters or {}).items():
        if key in kwargs:
            kwargs[key] = conv(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section {name!r}: {exc}") from exc


def build_grid(cfg: dict) -> GridConfig:
    return _build(GridConfig, cfg.get("grid", {}), "grid", {"ego_pixel": tuple})


def build_policy(cfg: dict, seed: int) -> AugmentationPolicy:
    section = dict(cfg.get("policy", {}))
    section.setdefault("rng_seed", seed)
    return _build(AugmentationPolicy, section, "policy",
                  {"vr_ranges": lambda d: _build(VRRanges, d, "policy.vr_ranges")})


def build_base(cfg: dict, seed: int) -> BaseAugConfig:
    section = dict(cfg.get("base", {}))
    section.setdefault("rng_seed", seed)
    return _build(BaseAugConfig, section, "base", {"crop_size": tuple, "rotation_range": tuple})


def build_train(cfg: dict, seed: int, **overrides) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    section["seed"] = seed
    section.update({k: v for k, v in overrides.items() if v is not None})
    return _build(TrainConfig, section, "train", {
        "vicreg": lambda d: _build(VICRegCoeffs, d, "train.vicreg"),
        "encoder": lambda d: _build(EncoderSpec, d, "train.encoder", {"hidden": tuple}),
        "projector": lambda d: _build(ProjectorSpec, d, "train.projector", {"hidden": tuple}),
    })


def _seed(args, cfg: dict) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def _input(path: Optional[str], what: str) -> Path:
    if not path:
        raise UsageError(f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


# --- subcommands --------------------------------------------------------------

def cmd_synth(args, cfg, out: Outputs) -> int:
    spec = {}
    if args.spec:
        p = Path(args.spec)
        text = p.read_text() if p.exists() else args.spec
        try:
            spec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--spec must be a JSON object or a path to one: {exc}") from exc
    allowed = {"n_background", "connected_fraction", "speed"}
    if set(spec) - allowed:
        raise ConfigError(f"unknown synth spec keys {sorted(set(spec) - allowed)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in spec.items()}
    try:
        scenarios = generate_suite(args.count, seed=_seed(args, cfg), **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    target = Path(args.out)
    out.write_bytes(target / "scenarios.jsonl", b"".join(serialize_scenario(s) + b"\n" for s in scenarios))
    out.write_bytes(target / "labels.jsonl", build_labeled_dataset(scenarios).to_jsonl())
    return EXIT_OK


def _ingest_one(item):
    name, raw = item
    try:
        s = parse_scenario(raw)
        return name, serialize_scenario(s), None
    except ScenarioValidationError as exc:
        return name, None, {"kind": "validation", "violations": list(exc.violations)}
    except (ScenarioParseError, SchemaError) as exc:
        return name, None, {"kind": "parse", "message": str(exc)}


def _raw_documents(path: Path) -> list[tuple[str, bytes]]:
    if path.is_dir():
        return [(p.name, p.read_bytes()) for p in sorted(path.glob("*.json"))]
    if path.suffix == ".jsonl":
        return [(f"{path.name}:{i}", line) for i, line in enumerate(path.read_bytes().splitlines(), 1)
                if line.strip()]
    return [(path.name, path.read_bytes())]


def cmd_ingest(args, cfg, out: Outputs) -> int:
    results = _pmap(_ingest_one, _raw_documents(_input(args.input, "--in")), args.jobs)
    target = Path(args.out)
    good = [data for _, data, _ in results if data is not None]
    report = {"total": len(results), "valid": len(good),
              "errors": [{"source": name, **err} for name, _, err in results if err is not None]}
    out.write_bytes(target / "scenarios.jsonl", b"".join(d + b"\n" for d in good))
    out.write_text(target / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if not report["errors"] else EXIT_VALIDATION


def _read(path: Optional[str]) -> list[Scenario]:
    p = _input(path, "--in")
    return read_scenarios(p)


def cmd_mine_labels(args, cfg, out: Outputs) -> int:
    out.write_bytes(args.out, build_labeled_dataset(_read(args.input)).to_jsonl())
    return EXIT_OK


def _augment_one(task) -> list[Scenario]:
    s, mode, seed, fixed, policy = task
    if mode == "con":
        return [augment_con(s)]
    if mode == "policy":
        return list(sample_views(s, policy))
    params = fixed or policy.vr_ranges.sample(scenario_rng(seed, s.id))
    return [augment_vr(s, params) if mode == "vr" else augment_combined(s, params)]


def cmd_augment(args, cfg, out: Outputs) -> int:
    scenarios = _read(args.input)
    seed = _seed(args, cfg)
    policy = build_policy(cfg, seed)
    fixed = None
    if args.alpha is not None or args.distance is not None:
        if args.alpha is None or args.distance is None:
            raise UsageError("--alpha and --distance must be given together")
        try:
            fixed = VRParams.fixed(args.alpha, args.distance)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    results = _pmap(_augment_one, [(s, args.mode, seed, fixed, policy) for s in scenarios], args.jobs)
    out.write_bytes(args.out, b"".join(serialize_scenario(a) + b"\n" for views in results for a in views))
    if args.render_dir:
        grid = build_grid(cfg)
        cache = RasterCache()
        rdir = Path(args.render_dir)
        for s, views in zip(scenarios, results):
            _stage_pngs(out, rasterize(s, grid, cache), rdir, f"{s.id}_orig")
            for tag, v in zip("ab" if len(views) > 1 else [""], views):
                _stage_pngs(out, rasterize(v, grid, cache), rdir, f"{s.id}_aug{tag}")
    return EXIT_OK


def _stage_pngs(out: Outputs, grid, directory: Path, stem: str) -> None:
    tmp = Path(tempfile.mkdtemp(prefix="scenaug-png-"))
    try:
        for p in render_png(grid, tmp, stem):
            shutil.move(str(p), str(out.path(directory / p.name)))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _rasterize_one(task):
    s, grid = task
    return rasterize(s, grid)


def cmd_rasterize(args, cfg, out: Outputs) -> int:
    grid = build_grid(cfg)
    scenarios = _read(args.input)
    grids = _pmap(_rasterize_one, [(s, grid) for s in scenarios], args.jobs)
    write_grid_sequence(grids, out.path(args.out))
    return EXIT_OK


def _data_path(args, cfg) -> Optional[str]:
    return args.input or cfg.get("data")


def cmd_train(args, cfg, out: Outputs) -> int:
    seed = _seed(args, cfg)
    scenarios = _read(_data_path(args, cfg))
    tcfg = build_train(cfg, seed, objective=OBJECTIVE_FLAGS[args.objective], epochs=args.epochs)
    result = train(scenarios, build_policy(cfg, seed), build_base(cfg, seed), tcfg,
                   variant=args.variant, grid=build_grid(cfg), jobs=args.jobs)
    target = Path(args.out)
    out.write_bytes(target / "model.exmd", result.model.to_bytes())
    out.write_text(target / "loss.csv", result.loss_csv())
    return EXIT_OK


def _aligned_labels(scenarios: Sequence[Scenario], labels_path: Optional[str]) -> np.ndarray:
    if labels_path:
        ds = LabeledDataset.from_jsonl(_input(labels_path, "--labels").read_bytes())
    else:
        ds = build_labeled_dataset(scenarios)
    by_id = dict(zip((sid for sid, _ in ds.entries), ds.class_ids))
    missing = [s.id for s in scenarios if s.id not in by_id]
    if missing:
        raise ConfigError(f"no label for scenarios {missing[:5]}")
    return np.array([by_id[s.id] for s in scenarios])


def evaluate(model: SSLModel, scenarios: Sequence[Scenario], labels: np.ndarray, tasks: Iterable[str],
             seed: int, grid: GridConfig, eval_cfg: dict, experiment: str) -> str:
    tasks = set(tasks)
    acc = linear_acc = None
    few = {}
    reports = []
    h = embed_dataset(model, scenarios, grid=grid) if tasks & {"zeroshot", "linear", "stability"} else None
    train_idx, test_idx = stratified_split(labels, eval_cfg.get("test_fraction", 0.2), seed)
    if "zeroshot" in tasks:
        acc = zero_shot(h, labels, linkage=eval_cfg.get("linkage", "ward")).acc
    if "linear" in tasks:
        linear_acc = linear_eval(h, labels, train_idx, test_idx, LinearEvalConfig(seed=seed))
    if "fewshot" in tasks:
        grids = rasterize_all(scenarios, grid, RasterCache())
        ft = _build(FinetuneConfig, {**eval_cfg.get("finetune", {}), "seed": seed}, "eval.finetune")
        for frac in eval_cfg.get("fractions", [0.01, 0.1]):
            few[str(frac)] = few_shot_eval(model, grids, labels, train_idx, test_idx, frac, seed, ft)
    if "stability" in tasks:
        reports = stability_sweep(h, scenarios, tuple(eval_cfg.get("k_grid", DEFAULT_K_GRID)), grid)
    return metrics_report(experiment, seed, acc, linear_acc, few, reports)


EVAL_KEYS = {"test_fraction", "linkage", "fractions", "k_grid", "finetune"}


def cmd_eval(args, cfg, out: Outputs) -> int:
    seed = _seed(args, cfg)
    eval_cfg = cfg.get("eval", {})
    if set(eval_cfg) - EVAL_KEYS:
        raise ConfigError(f"config section 'eval': unknown keys {sorted(set(eval_cfg) - EVAL_KEYS)}")
    model = SSLModel.load(_input(args.model, "--model"))
    scenarios = _read(args.data or cfg.get("data"))
    labels = _aligned_labels(scenarios, args.labels or cfg.get("labels"))
    report = evaluate(model, scenarios, labels, args.tasks, seed, build_grid(cfg), eval_cfg,
                      experiment=Path(args.model).stem)
    out.write_text(args.out, report)
    return EXIT_OK


def parse_grid(spec: str) -> list[dict[str, float]]:
    """``"d_max=100,50;alpha_max=360,120"`` -> rows, first key varying fastest."""
    axes = []
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        if "=" not in part:
            raise UsageError(f"bad grid axis {part!r}; expected name=v1,v2")
        name, values = part.split("=", 1)
        name = name.strip()
        if name not in {f.name for f in dataclasses.fields(VRRanges)}:
            raise UsageError(f"unknown VR parameter {name!r}")
        try:
            axes.append((name, [float(v) for v in values.split(",") if v.strip()]))
        except ValueError as exc:
            raise UsageError(f"bad value in grid axis {part!r}") from exc
    if not axes:
        raise UsageError("empty grid")
    rows = []
    for combo in itertools.product(*(vals for _, vals in reversed(axes))):
        rows.append(dict(zip((n for n, _ in reversed(axes)), combo)))
    return rows


def cmd_ablate_vr(args, cfg, out: Outputs) -> int:
    seed = _seed(args, cfg)
    rows = parse_grid(args.grid)
    if _data_path(args, cfg):
        scenarios = _read(_data_path(args, cfg))
    else:
        scenarios = generate_suite(args.count, seed=seed)
    labels = _aligned_labels(scenarios, args.labels or cfg.get("labels"))
    grid = build_grid(cfg)
    base_policy = build_policy(cfg, seed)
    tcfg = build_train(cfg, seed, epochs=args.epochs)
    buf = io.StringIO()
    buf.write("d_min\td_max\talpha_min\talpha_max\tacc\tfinal_loss\n")
    for row in rows:
        try:
            ranges = dataclasses.replace(base_policy.vr_ranges, **row)
        except ValueError as exc:
            raise ConfigError(f"grid row {row}: {exc}") from exc
        policy = dataclasses.replace(base_policy, vr_ranges=ranges)
        result = train(scenarios, policy, build_base(cfg, seed), tcfg, variant="exagt", grid=grid, jobs=args.jobs)
        acc = zero_shot(embed_dataset(result.model, scenarios, grid=grid), labels).acc
        buf.write(f"{ranges.d_min:g}\t{ranges.d_max:g}\t{ranges.alpha_min:g}\t{ranges.alpha_max:g}\t"
                  f"{acc:.4f}\t{result.loss_trace[-1]:.4f}\n")
    out.write_text(args.out, buf.getvalue())
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (sections: grid, policy, base, train, eval)")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes; outputs do not depend on it")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="scenaug", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic labeled scenario suite")
    s.add_argument("--spec", help='suite options as JSON, e.g. \'{"n_background": [2, 8]}\', or a path')
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--out", required=True, help="output directory (scenarios.jsonl, labels.jsonl)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="validate scenario files and canonicalize them")
    s.add_argument("--in", dest="input", required=True, help=".json, .jsonl or a directory of .json")
    s.add_argument("--out", required=True, help="output directory (scenarios.jsonl, report.json)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("mine-labels", parents=[common], help="write the labeled dataset JSONL")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mine_labels)

    s = sub.add_parser("augment", parents=[common], help="apply expert augmentations")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--mode", choices=("con", "vr", "combined", "policy"), required=True)
    s.add_argument("--alpha", type=float, help="fixed VR half-aperture in degrees (with --distance)")
    s.add_argument("--distance", type=float, help="fixed VR range in meters (with --alpha)")
    s.add_argument("--out", required=True, help="JSONL; policy mode writes views a and b per scenario")
    s.add_argument("--render-dir", help="also write PNGs of original and augmented grids")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("rasterize", parents=[common], help="write an EXGT grid sequence file")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("train", parents=[common], help="self-supervised training")
    s.add_argument("--in", dest="input", help="scenario file (or 'data' in the config)")
    s.add_argument("--variant", choices=VARIANTS, default="exagt")
    s.add_argument("--objective", choices=tuple(OBJECTIVE_FLAGS), default="bt")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True, help="output directory (model.exmd, loss.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", help="scenario file (or 'data' in the config)")
    s.add_argument("--labels", help="labeled dataset JSONL; mined on the fly when omitted")
    s.add_argument("--tasks", nargs="+", choices=("zeroshot", "linear", "fewshot", "stability"),
                   default=["zeroshot", "linear", "stability"])
    s.add_argument("--out", required=True, help="metrics JSON")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate-vr", parents=[common], help="VR parameter grid: train ExAgt per row, report ACC")
    s.add_argument("--grid", default=DEFAULT_ABLATION_GRID,
                   help=f'axes "name=v1,v2;name=..." over VR ranges (default "{DEFAULT_ABLATION_GRID}")')
    s.add_argument("--in", dest="input", help="scenario file; a synthetic suite is generated when omitted")
    s.add_argument("--labels")
    s.add_argument("--count", type=int, default=200, help="synthetic suite size when --in is omitted")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True, help="TSV table")
    s.set_defaults(func=cmd_ablate_vr)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    out = Outputs()
    try:
        cfg = load_config(args.config)
        code = args.func(args, cfg, out)
        out.commit()
        return code
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ScenarioValidationError, ScenarioParseError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        out.discard()


if __name__ == "__main__":
    sys.exit(main())
