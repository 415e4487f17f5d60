import json
from pathlib import Path

import pytest

from scenaug.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION, main, parse_grid, UsageError

TINY = {
    "seed": 3,
    "train": {"encoder": {"hidden": [16], "d_r": 8, "downsample": 4},
              "projector": {"hidden": [8], "d_p": 8}, "batch_size": 4, "epochs": 2},
    "eval": {"fractions": [0.5], "k_grid": [1, 3], "finetune": {"epochs": 2}},
}


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def pipeline(root: Path, jobs: int) -> dict:
    """Runs every subcommand into ``root``; returns the produced files."""
    root.mkdir(parents=True)
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    out = root / "out"
    j = ["--jobs", str(jobs), "--config", str(cfg)]
    steps = [
        ["synth", "--count", "12", "--spec", '{"n_background": [1, 4]}', "--out", str(out / "suite")],
        ["ingest", "--in", str(out / "suite/scenarios.jsonl"), "--out", str(out / "ingest")],
        ["mine-labels", "--in", str(out / "ingest/scenarios.jsonl"), "--out", str(out / "labels.jsonl")],
        ["augment", "--in", str(out / "suite/scenarios.jsonl"), "--mode", "con", "--out", str(out / "con.jsonl")],
        ["augment", "--in", str(out / "suite/scenarios.jsonl"), "--mode", "vr", "--alpha", "40",
         "--distance", "30", "--out", str(out / "vr.jsonl")],
        ["augment", "--in", str(out / "suite/scenarios.jsonl"), "--mode", "combined", "--out",
         str(out / "comb.jsonl")],
        ["augment", "--in", str(out / "suite/scenarios.jsonl"), "--mode", "policy", "--out",
         str(out / "pol.jsonl"), "--render-dir", str(out / "png")],
        ["rasterize", "--in", str(out / "suite/scenarios.jsonl"), "--out", str(out / "grids.exgt")],
        ["train", "--in", str(out / "suite/scenarios.jsonl"), "--out", str(out / "model")],
        ["train", "--in", str(out / "suite/scenarios.jsonl"), "--variant", "baseagt", "--objective", "vicreg",
         "--out", str(out / "model_vic")],
        ["eval", "--model", str(out / "model/model.exmd"), "--data", str(out / "suite/scenarios.jsonl"),
         "--labels", str(out / "labels.jsonl"), "--tasks", "zeroshot", "linear", "fewshot", "stability",
         "--out", str(out / "metrics.json")],
        ["ablate-vr", "--count", "8", "--grid", "d_max=100,50", "--out", str(out / "ablation.tsv")],
    ]
    for argv in steps:
        assert main([argv[0], *j, *argv[1:]]) == EXIT_OK, argv
    return tree(out)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    return pipeline(base / "a", 1), pipeline(base / "b", 1), pipeline(base / "c", 4)


def test_every_subcommand_is_byte_deterministic(runs):
    a, b, c = runs
    assert a.keys() == b.keys() == c.keys()
    for name in a:
        assert a[name] == b[name], name
        assert a[name] == c[name], name


def test_outputs_have_expected_shape(runs):
    files = runs[0]
    for name in ("suite/scenarios.jsonl", "suite/labels.jsonl", "ingest/report.json", "model/model.exmd",
                 "model/loss.csv", "grids.exgt", "metrics.json", "ablation.tsv"):
        assert name in files
    assert len(files["pol.jsonl"].splitlines()) == 24
    assert sum(n.startswith("png/") for n in files) == 12 * 3 * 4
    metrics = json.loads(files["metrics.json"])
    assert [r["k"] for r in metrics["stability"]] == [1, 3]
    assert set(metrics["few_shot"]) == {"0.5"}
    tsv = files["ablation.tsv"].decode().splitlines()
    assert tsv[0].split("\t") == ["d_min", "d_max", "alpha_min", "alpha_max", "acc", "final_loss"]
    assert [r.split("\t")[1] for r in tsv[1:]] == ["100", "50"]
    assert files["model/loss.csv"].decode().splitlines()[0] == "epoch,mean_loss"


def test_full_vr_reproduces_input(tmp_path, runs):
    src = tmp_path / "s.jsonl"
    src.write_bytes(runs[0]["suite/scenarios.jsonl"])
    out = tmp_path / "vr.jsonl"
    assert main(["augment", "--in", str(src), "--mode", "vr", "--alpha", "360", "--distance", "1e6",
                 "--out", str(out)]) == EXIT_OK
    assert out.read_bytes() == src.read_bytes()


def test_usage_errors(tmp_path):
    assert main(["bogus"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["rasterize", "--in", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "g")]) == EXIT_USAGE
    assert main(["augment", "--in", "x", "--mode", "sideways", "--out", "y"]) == EXIT_USAGE
    assert not (tmp_path / "g").exists()
    with pytest.raises(UsageError):
        parse_grid("d_max")
    with pytest.raises(UsageError):
        parse_grid("speed=1,2")


def test_grid_order_first_key_fastest():
    rows = parse_grid("d_max=100,50;alpha_max=360,120")
    assert rows == [{"alpha_max": 360, "d_max": 100}, {"alpha_max": 360, "d_max": 50},
                    {"alpha_max": 120, "d_max": 100}, {"alpha_max": 120, "d_max": 50}]


def test_validation_errors(tmp_path, runs):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"grid": {"cell_size": 3}}))
    data = tmp_path / "s.jsonl"
    data.write_bytes(runs[0]["suite/scenarios.jsonl"])
    assert main(["rasterize", "--config", str(cfg), "--in", str(data), "--out", str(tmp_path / "g")]) == EXIT_VALIDATION
    cfg.write_text(json.dumps({"colour": 1}))
    assert main(["rasterize", "--config", str(cfg), "--in", str(data), "--out", str(tmp_path / "g")]) == EXIT_VALIDATION
    assert not (tmp_path / "g").exists()


def test_failed_run_leaves_no_partial_output(tmp_path, runs):
    data = tmp_path / "s.jsonl"
    data.write_bytes(runs[0]["suite/scenarios.jsonl"])
    labels = tmp_path / "l.jsonl"
    labels.write_bytes(b"\n".join(runs[0]["labels.jsonl"].splitlines()[:3]) + b"\n")
    model = tmp_path / "m.exmd"
    model.write_bytes(runs[0]["model/model.exmd"])
    out = tmp_path / "metrics.json"
    assert main(["eval", "--model", str(model), "--data", str(data), "--labels", str(labels),
                 "--out", str(out)]) == EXIT_VALIDATION
    assert not out.exists()


def test_ingest_reports_bad_records(tmp_path, runs):
    lines = runs[0]["suite/scenarios.jsonl"].splitlines()
    bad = json.loads(lines[1])
    bad["objects"] = [o for o in bad["objects"] if o["class"] != "ego"]
    src = tmp_path / "in.jsonl"
    src.write_bytes(lines[0] + b"\n" + json.dumps(bad).encode() + b"\n{nope\n")
    out = tmp_path / "ing"
    assert main(["ingest", "--in", str(src), "--out", str(out)]) == EXIT_VALIDATION
    report = json.loads((out / "report.json").read_text())
    assert report["valid"] == 1 and report["total"] == 3 and len(report["errors"]) == 2
    assert len((out / "scenarios.jsonl").read_bytes().splitlines()) == 1


def test_corrupt_model_is_runtime_error(tmp_path, runs):
    data = tmp_path / "s.jsonl"
    data.write_bytes(runs[0]["suite/scenarios.jsonl"])
    model = tmp_path / "m.exmd"
    model.write_bytes(b"EXMD" + bytes(8))
    assert main(["eval", "--model", str(model), "--data", str(data), "--out", str(tmp_path / "o.json")]) == EXIT_RUNTIME
    assert not (tmp_path / "o.json").exists()
