"""Command-line harness: ``train``, ``attack``, ``sweep-temp``, ``runtime-bench``, ``report``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import autodiff as ad
from . import defences, metrics, report
from .attacks import write_transcript
from .data import DataFormatError
from .experiment import AttackSpec, ConfigError, evaluate_attacks, fit, median, prepare
from .model import TextClassifier

log = logging.getLogger("textdefence")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
DEFAULT_ATTACKS = [{"name": "textfooler"}, {"name": "textbugger"}]
STATS_FIELDS = ("lr", "epoch", "train_loss", "val_acc", "wall_ms")
SWEEP_FIELDS = ("T", "seed", "acc", "aua_tf", "aua_tb", "apdr")


# ----------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    validate_config(cfg, base=path.parent)
    return cfg


def validate_config(cfg: dict, base: Path = Path(".")) -> None:
    ds = cfg.setdefault("dataset", {})
    if ds.get("kind", "synth") == "files":
        if "path" not in ds:
            raise ConfigError("dataset.path is required for kind = 'files'")
        p = Path(ds["path"])
        if not p.is_absolute():
            p = base / p
        if not p.exists():
            raise ConfigError(f"dataset path does not exist: {ds['path']}")
        ds["path"] = str(p)
    syn = cfg.setdefault("synonyms", {})
    if "path" in syn:
        p = Path(syn["path"])
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise ConfigError(f"synonym file does not exist: {syn['path']}")
        syn["path"] = str(p)
    run = cfg.setdefault("run", {})
    seeds = run.setdefault("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("run.seeds must be a non-empty list")
    defence = cfg.setdefault("defence", {"kind": "baseline"})
    if defence.get("kind") not in defences.DEFENCES:
        raise ConfigError(f"unknown defence kind {defence.get('kind')!r}")
    for a in cfg.setdefault("attacks", DEFAULT_ATTACKS):
        AttackSpec.from_dict(a)
    try:
        defences.TrainConfig(**cfg.get("train", {}))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"train: {err}") from err


def _seeds(cfg: dict, override: int | None) -> list[int]:
    return [override] if override is not None else [int(s) for s in cfg["run"]["seeds"]]


def _out(cfg: dict, override: str | None) -> Path:
    out = Path(override or cfg["run"].get("out", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in header})


def _defence_label(d: defences.DefenceConfig) -> str:
    return defences.defence_name(d)


# ----------------------------------------------------------------------------
# commands


def cmd_train(cfg: dict, seed: int | None = None, out: str | None = None) -> list[Path]:
    """Train the configured defence once per seed; returns checkpoint paths."""
    root = _out(cfg, out)
    paths = []
    for s in _seeds(cfg, seed):
        prep = prepare(cfg["dataset"], cfg["synonyms"], s)
        result, resolved, table = fit(prep, cfg["defence"], cfg.get("model"), cfg.get("train"), s)
        d = root / f"seed-{s}"
        d.mkdir(parents=True, exist_ok=True)
        result.model.save(d / "checkpoint.json")
        _write_rows(d / "train_stats.csv", STATS_FIELDS, result.stats_rows())
        meta = {"seed": s, "defence": defences.defence_to_dict(resolved), "best_lr": result.best_lr,
                "val_acc": result.val_acc, "sweep": table, "splits": prep.splits.sizes()}
        (d / "train_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        (d / "timing.json").write_text(json.dumps({"wall_ms": result.wall_ms}) + "\n")
        log.info("seed %d: val_acc=%.4f lr=%g -> %s", s, result.val_acc, result.best_lr, d)
        paths.append(d / "checkpoint.json")
    return paths


def cmd_attack(cfg: dict, checkpoint: str | None = None, seed: int | None = None, out: str | None = None,
               allow_subsample: bool = False) -> list[Path]:
    """Attack trained checkpoints over the full test split; writes transcripts and eval.csv."""
    root = _out(cfg, out)
    subsample = cfg["run"].get("subsample")
    if subsample is not None and not allow_subsample:
        raise ConfigError("run.subsample is set; evaluation uses the full test set unless --allow-subsample")
    specs = [AttackSpec.from_dict(a) for a in cfg["attacks"]]
    written = []
    for s in _seeds(cfg, seed):
        d = root / f"seed-{s}"
        ckpt = Path(checkpoint) if checkpoint else d / "checkpoint.json"
        if not ckpt.is_file():
            raise ConfigError(f"checkpoint not found: {ckpt}")
        model = TextClassifier.load(ckpt)
        prep = prepare(cfg["dataset"], cfg["synonyms"], s)
        if model.vocab_hash != prep.vocab.hash():
            raise ConfigError(f"{ckpt}: vocabulary hash does not match the dataset vocabulary")
        meta_p = ckpt.parent / "train_meta.json"
        resolved = (defences.defence_from_dict(json.loads(meta_p.read_text())["defence"]) if meta_p.exists()
                    else defences.defence_from_dict(cfg["defence"]))
        examples = list(prep.splits.test)
        if subsample is not None:
            examples = examples[:int(subsample)]
        rows, transcripts = evaluate_attacks(model, prep, specs, _defence_label(resolved), examples,
                                             subsampled=subsample is not None and int(subsample) < len(prep.splits.test),
                                             allow_subsample=allow_subsample,
                                             workers=int(cfg["run"].get("workers", 1)))
        d.mkdir(parents=True, exist_ok=True)
        for name, trows in transcripts.items():
            write_transcript(d / f"transcript_{name}.jsonl", trows)
        metrics.write_csv(d / "eval.csv", rows)
        written.append(d / "eval.csv")
    return written


def cmd_sweep_temperature(cfg: dict, grid: Sequence[float], seed: int | None = None,
                          out: str | None = None) -> Path:
    """Train and attack once per (temperature, seed); TTSO++ configs vary T_base."""
    root = _out(cfg, out)
    if not grid or any(t <= 0 for t in grid):
        raise ConfigError("temperature grid must be non-empty and positive")
    kind = cfg["defence"].get("kind")
    specs = {s.name: s for s in (AttackSpec.from_dict(a) for a in cfg["attacks"])}
    missing = {"textfooler", "textbugger"} - set(specs)
    if missing:
        raise ConfigError(f"sweep-temp needs both attacks; missing {sorted(missing)}")
    rows = []
    for s in _seeds(cfg, seed):
        prep = prepare(cfg["dataset"], cfg["synonyms"], s)
        for t in grid:
            dcfg = ({"kind": "ttsopp", "T_base": float(t), "alpha": cfg["defence"].get("alpha", 0.5)}
                    if kind == "ttsopp" else {"kind": "ttso", "T": float(t)})
            result, resolved, _ = fit(prep, dcfg, cfg.get("model"), cfg.get("train"), s)
            ev, _ = evaluate_attacks(result.model, prep, [specs["textfooler"], specs["textbugger"]],
                                     _defence_label(resolved))
            by = {r.attack: r for r in ev}
            rows.append({"T": float(t), "seed": s, "acc": by["TextFooler"].acc, "aua_tf": by["TextFooler"].aua,
                         "aua_tb": by["TextBugger"].aua, "apdr": by[metrics.APDR_ROW].pdr})
    path = root / "sweep_temperature.csv"
    _write_rows(path, SWEEP_FIELDS, rows)
    med = []
    for t in grid:
        sel = [r for r in rows if r["T"] == float(t)]
        med.append({"T": float(t), "seed": "median", **{k: median([r[k] for r in sel])
                                                        for k in ("acc", "aua_tf", "aua_tb", "apdr")}})
    _write_rows(root / "sweep_temperature_median.csv", SWEEP_FIELDS, med)
    return path


def cmd_runtime_bench(cfg: dict, defence_list: Sequence[dict], seed: int | None = None,
                      out: str | None = None, repeats: int = 1) -> list[dict]:
    """Training wall-time of each defence relative to the baseline (same data, model, epochs)."""
    root = _out(cfg, out)
    if not any(d.get("kind") == "baseline" for d in defence_list):
        raise ConfigError("runtime-bench needs a baseline entry")
    s = _seeds(cfg, seed)[0]
    prep = prepare(cfg["dataset"], cfg["synonyms"], s)
    timings = {}
    for d in defence_list:
        cfg_d = {k: v for k, v in d.items() if v != "sweep"}
        runs = [fit(prep, cfg_d, cfg.get("model"), cfg.get("train"), s) for _ in range(max(repeats, 1))]
        label = _defence_label(runs[0][1])
        timings[label] = min(r[0].wall_ms for r in runs)
    base = timings[_defence_label(defences.Baseline())]
    rows = [{"defence": k, "wall_ms": v, "multiplier": v / base} for k, v in timings.items()]
    _write_rows(root / "runtime.csv", ("defence", "wall_ms", "multiplier"), rows)
    (root / "runtime.md").write_text(report.runtime_table(rows))
    return rows


def cmd_report(result_dir) -> str:
    root = Path(result_dir)
    files = sorted(root.rglob("eval.csv"))
    if not files:
        raise ConfigError(f"no eval.csv files under {root}")
    rows = [r for f in files for r in metrics.read_csv(f)]
    text = report.markdown_report(rows)
    (root / "report.md").write_text(text)
    return text


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="textdefence", description="Train, attack and compare textual adversarial defences.",
                                epilog="exit codes: 0 success, 2 configuration error, 3 numerical failure")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="TOML run configuration")
            sp.add_argument("--seed", type=int, help="run a single seed instead of run.seeds")
        sp.add_argument("--out", help="output directory (default: run.out)")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("train", help="train a defence and save a checkpoint"))
    sp = sub.add_parser("attack", help="attack a checkpoint on the full test split")
    common(sp)
    sp.add_argument("--checkpoint", help="checkpoint path (default: <out>/seed-<N>/checkpoint.json)")
    sp.add_argument("--allow-subsample", action="store_true", help="permit run.subsample")
    sp = sub.add_parser("sweep-temp", help="temperature sweep (robustness vs training temperature)")
    common(sp)
    sp.add_argument("--grid", default="1,5,10,20", help="comma-separated temperatures")
    sp = sub.add_parser("runtime-bench", help="training runtime multipliers vs baseline")
    common(sp)
    sp.add_argument("--defences", help="comma-separated defence kinds (default: all)")
    sp.add_argument("--repeats", type=int, default=1, help="take the fastest of N runs per defence")
    sp = sub.add_parser("report", help="markdown tables from eval.csv files")
    sp.add_argument("result_dir", nargs="?", help="directory searched for eval.csv files")
    common(sp, config=False)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "report":
            target = args.result_dir or args.out
            if target is None:
                raise ConfigError("report needs a result directory")
            print(cmd_report(target), end="")
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "train":
            cmd_train(cfg, args.seed, args.out)
        elif args.command == "attack":
            cmd_attack(cfg, args.checkpoint, args.seed, args.out, args.allow_subsample)
        elif args.command == "sweep-temp":
            grid = [float(x) for x in args.grid.split(",") if x.strip()]
            cmd_sweep_temperature(cfg, grid, args.seed, args.out)
        elif args.command == "runtime-bench":
            kinds = args.defences.split(",") if args.defences else list(defences.DEFENCES)
            dlist = [cfg["defence"] if cfg["defence"].get("kind") == k else {"kind": k} for k in kinds]
            rows = cmd_runtime_bench(cfg, dlist, args.seed, args.out, args.repeats)
            print(report.runtime_table(rows), end="")
    except (ConfigError, DataFormatError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (defences.TrainingDiverged, ad.NonFiniteError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
