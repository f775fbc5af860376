"""Command-line entry point: ``mada <subcommand> [--config FILE] [--set k=v ...]``.

Stage subcommands share one run directory (``--out``, default
``$MADA_OUT/<config hash>``): ``generate`` writes the datasets, ``warmup`` the
warm-up checkpoint, ``select`` a selection report, ``adapt`` the adapted
checkpoint and training log, ``evaluate`` a metrics report. ``ablate`` and
``sweep`` run the whole pipeline per seed and write CSV tables.

Exit codes: 0 success, 1 invalid arguments, config or input, 2 non-finite
training.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from . import data as data_mod
from . import nn
from .anchors import save_anchors
from .errors import ConfigError, DataFormatError, NonFiniteError
from .features import dump_features
from .pipeline import (LADDER, SWEEP_KINDS, VARIANTS, ExperimentConfig, dump_config, evaluate,
                       image_vectors, load_config, median_by, parse_overrides, run_ablation,
                       run_stage1, run_stage2, run_sweeps, run_warmup, write_csv, write_jsonl)
from .selection import STRATEGIES

log = logging.getLogger("mada")

OUT_ENV = "MADA_OUT"
DEFAULT_OUT = "runs"
SUBCOMMANDS = ("generate", "warmup", "select", "adapt", "evaluate", "ablate", "sweep",
               "dump-features")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str
    seeds: list
    started: str
    outputs: dict
    config: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / f"manifest_{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _resolve_config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "strategy", None):
        overrides.append(f"strategy={args.strategy}")
    if getattr(args, "variant", None):
        overrides.append(f"variant={args.variant}")
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}", "config")
        return load_config(args.config, overrides)
    return parse_overrides(overrides)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, DEFAULT_OUT)) / cfg.config_hash()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, cfg: ExperimentConfig) -> int:
    return cfg.seeds[0] if args.seed is None else args.seed


def _start(command: str, cfg: ExperimentConfig, out: Path, seeds, outputs: dict) -> None:
    (out / "config.cfg").write_text(dump_config(cfg))
    RunManifest(command, cfg.config_hash(), __version__, [int(s) for s in seeds],
                time.strftime("%Y-%m-%dT%H:%M:%S%z"), {k: str(v) for k, v in outputs.items()},
                cfg.to_dict()).write(out)


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"missing {what}: {path}", what)
    return path


def _data_dir(args, out: Path) -> Path:
    return Path(args.data) if args.data else out / "data"


def _load_split(args, out: Path, split: str) -> data_mod.Dataset:
    return data_mod.load(_require(_data_dir(args, out) / f"{split}.bin", f"{split} dataset"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, cfg):
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    ddir = _data_dir(args, out)
    ddir.mkdir(parents=True, exist_ok=True)
    paths = {s: ddir / f"{s}.bin" for s in ("source", "target", "eval")}
    paths["spec"] = ddir / "spec.json"
    _start("generate", cfg, out, [seed], paths)
    spec = cfg.domain_spec(seed)
    source, target = data_mod.generate(spec)
    data_mod.save(source, paths["source"])
    data_mod.save(target, paths["target"])
    data_mod.save(data_mod.generate_eval(spec), paths["eval"])
    paths["spec"].write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    print(f"wrote {len(source)} source, {len(target)} target samples to {ddir}")


def cmd_warmup(args, cfg):
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    source, target = _load_split(args, out, "source"), _load_split(args, out, "target")
    paths = {"params": out / "warmup.npz", "log": out / "warmup_log.jsonl"}
    _start("warmup", cfg, out, [seed], paths)
    w = run_warmup(cfg, source, target, seed)
    nn.save_params(w.params, paths["params"])
    write_jsonl(w.log, paths["log"])
    print(f"warm-up done: {len(w.log)} iterations -> {paths['params']}")


def cmd_select(args, cfg):
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    source, target = _load_split(args, out, "source"), _load_split(args, out, "target")
    params = nn.load_params(_require(Path(args.params) if args.params else out / "warmup.npz",
                                     "warm-up checkpoint"))
    paths = {"selection": out / f"selection_{cfg.strategy}.json"}
    if cfg.strategy == "multi_anchor":
        paths["anchors"] = out / "source_anchors.json"
    _start("select", cfg, out, [seed], paths)
    vectors, _ = image_vectors(params, source.pixels, source.labels)
    s1 = run_stage1(params, vectors, target, cfg, seed)
    scenes = dict(zip(target.ids.tolist(), target.scene_ids.tolist()))
    spec = cfg.domain_spec(seed)
    report = s1.selection.to_json(scenes, spec.exclusive_scenes)
    paths["selection"].write_text(json.dumps(report, indent=2) + "\n")
    if s1.source_anchors is not None:
        save_anchors(s1.source_anchors, paths["anchors"])
    share = report["scene_composition"]["exclusive_share_selected"]
    print(f"{cfg.strategy}: selected {len(s1.labeled_ids)} of {len(target)} "
          f"(exclusive share {share:.2f}) -> {paths['selection']}")


def cmd_adapt(args, cfg):
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    source, target = _load_split(args, out, "source"), _load_split(args, out, "target")
    params = nn.load_params(_require(Path(args.params) if args.params else out / "warmup.npz",
                                     "warm-up checkpoint"))
    variant = cfg.variant
    paths = {"params": out / f"adapted_{variant}.npz", "log": out / f"adapt_{variant}_log.jsonl"}
    if variant == "Mu":
        labeled = [int(i) for i in target.ids]
    elif variant == "M0":
        labeled = []
    else:
        sel_path = _require(Path(args.selection) if args.selection
                            else out / f"selection_{cfg.strategy}.json", "selection report")
        try:
            labeled = [int(i) for i in json.loads(sel_path.read_text())["selected"]]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataFormatError(f"cannot read selection report {sel_path}: {exc}") from exc
    _start("adapt", cfg, out, [seed], paths)
    if variant == "M0":
        nn.save_params(params, paths["params"])
        write_jsonl([], paths["log"])
    else:
        s2 = run_stage2(params, source, target, labeled, cfg, seed, variant)
        nn.save_params(s2.params, paths["params"])
        write_jsonl(s2.log, paths["log"])
        if s2.target_anchors is not None:
            save_anchors(s2.target_anchors, out / f"target_anchors_{variant}.json")
    print(f"{variant}: adapted with {len(labeled)} labelled target samples -> {paths['params']}")


def cmd_evaluate(args, cfg):
    out = _out_dir(args, cfg)
    params_path = _require(Path(args.params) if args.params else out / f"adapted_{cfg.variant}.npz",
                           "checkpoint")
    dataset = _load_split(args, out, "eval")
    paths = {"metrics": out / f"metrics_{params_path.stem}.json"}
    _start("evaluate", cfg, out, [_seed(args, cfg)], paths)
    m = evaluate(nn.load_params(params_path), dataset)
    paths["metrics"].write_text(json.dumps(m.to_dict(), indent=2) + "\n")
    print(f"mIoU {100 * m.miou:.2f} ({params_path.name}) -> {paths['metrics']}")


def cmd_ablate(args, cfg):
    out = _out_dir(args, cfg)
    paths = {"table": out / "ablation.csv"}
    _start("ablate", cfg, out, cfg.seeds, paths)
    variants = tuple(args.variants.split(",")) if args.variants else LADDER
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}", "variants")
    rows = run_ablation(cfg, variants)
    write_csv(rows, paths["table"])
    for v, m in median_by(rows, "variant").items():
        print(f"{v:>3}  median mIoU {m:6.2f}")


def cmd_sweep(args, cfg):
    out = _out_dir(args, cfg)
    kinds = tuple(args.kinds.split(",")) if args.kinds else SWEEP_KINDS
    paths = {k: out / f"sweep_{k}.csv" for k in kinds}
    _start("sweep", cfg, out, cfg.seeds, paths)
    tables = run_sweeps(cfg, kinds)
    key = {"anchors": "k_source", "budget": "budget", "strategy": "strategy"}
    for k, rows in tables.items():
        write_csv(rows, paths[k])
        meds = median_by(rows, key[k])
        print(f"{k}: " + ", ".join(f"{g}={m:.2f}" for g, m in meds.items()))


def cmd_dump_features(args, cfg):
    out = _out_dir(args, cfg)
    split = args.split
    dataset = _load_split(args, out, split)
    params = nn.load_params(_require(Path(args.params) if args.params else out / "warmup.npz",
                                     "checkpoint"))
    paths = {"features": out / f"features_{split}.csv"}
    _start("dump-features", cfg, out, [_seed(args, cfg)], paths)
    labels = dataset.labels if (split == "source" or args.ground_truth) else None
    vec, _ = image_vectors(params, dataset.pixels, labels)
    dump_features(paths["features"], dataset.ids, dataset.domain, vec, dataset.scene_ids)
    print(f"wrote {len(dataset)} vectors -> {paths['features']}")


COMMANDS = {
    "generate": cmd_generate, "warmup": cmd_warmup, "select": cmd_select, "adapt": cmd_adapt,
    "evaluate": cmd_evaluate, "ablate": cmd_ablate, "sweep": cmd_sweep,
    "dump-features": cmd_dump_features,
}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 so that 2 stays reserved for diverged training."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mada", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"mada {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value config file")
        s.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        s.add_argument("--out", help=f"run directory (default ${OUT_ENV}/<config hash>)")
        s.add_argument("--seed", type=int, help="seed for single-run stages (default: first of seeds)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("generate", "warmup", "select", "adapt", "evaluate", "dump-features"):
            s.add_argument("--data", help="dataset directory (default <out>/data)")
        if name in ("select", "adapt", "evaluate", "dump-features"):
            s.add_argument("--params", help="model checkpoint")
        if name in ("select", "adapt"):
            s.add_argument("--strategy", choices=STRATEGIES)
        if name in ("adapt", "evaluate"):
            s.add_argument("--variant", choices=tuple(VARIANTS))
        if name == "adapt":
            s.add_argument("--selection", help="selection report (default <out>/selection_<strategy>.json)")
        if name == "ablate":
            s.add_argument("--variants", help="comma-separated subset of " + ",".join(LADDER))
        if name == "sweep":
            s.add_argument("--kinds", help="comma-separated subset of " + ",".join(SWEEP_KINDS))
        if name == "dump-features":
            s.add_argument("--split", choices=("source", "target", "eval"), default="source")
            s.add_argument("--ground-truth", action="store_true",
                           help="pool target/eval maps with true labels instead of predictions")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
