"""Command-line front end: train victims, run campaigns, sweep ablations.

Subcommands
  train   arch + dataset config -> deterministic model file
  attack  experiment config -> paired baseline/adapted report (CSV + JSON)
  ablate  sweep one axis (method / alpha_lr / step_size) of an experiment
  report  align several report CSVs into one comparison table

Exit codes: 0 success, 1 invalid input or flags, 2 runtime failure. The
P3A_SEED environment variable overrides config seeds; an explicit --seed
flag beats both.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .. import core, diffnet
from . import datasets, experiment


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract here is exit 1 + usage
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="p3a", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out-dir", default=".", help="output directory")

    sub.add_parser("train", parents=[common], help="train a victim model")
    p_attack = sub.add_parser("attack", parents=[common], help="run an attack campaign")
    p_attack.add_argument("--jobs", type=int, default=1, help="worker processes")
    p_ablate = sub.add_parser("ablate", parents=[common], help="sweep one config axis")
    p_ablate.add_argument("--jobs", type=int, default=1, help="worker processes")
    p_report = sub.add_parser("report", help="tabulate report files side by side")
    p_report.add_argument("files", nargs="+", help="report CSV files")
    return parser


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{p}: invalid JSON ({exc})") from exc


def _effective_seed(flag_seed, config_seed) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get("P3A_SEED")
    if env is not None:
        return int(env)
    return int(config_seed)


def _cmd_train(args) -> int:
    doc = _load_config(args.config)
    seed = _effective_seed(args.seed, doc.get("seed", 0))
    dataset_spec = dict(doc["dataset"])
    dataset_spec.setdefault("seed", seed)
    data = datasets.prepare(dataset_spec)
    arch = experiment._arch_from_spec(doc.get("arch", {}), data.train.x.shape[1], data.classes)
    theta = diffnet.train_sgd(arch, data.train, int(doc.get("epochs", 30)),
                              float(doc.get("lr", 0.05)), seed)
    model = diffnet.Model(arch, theta)
    out_path = Path(args.out_dir) / doc.get("out", "model.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    diffnet.save_model(model, out_path, seed=seed)
    train_acc = diffnet.accuracy(arch, theta, data.train)
    test_acc = diffnet.accuracy(arch, theta, data.test) if len(data.test) else float("nan")
    print(f"wrote {out_path} (train acc {train_acc:.3f}, test acc {test_acc:.3f})")
    return 0


def _cmd_attack(args) -> int:
    doc = _load_config(args.config)
    cfg = experiment.ExperimentConfig.from_json(doc, base_dir=Path(args.config).parent)
    cfg.seed = _effective_seed(args.seed, cfg.seed)
    report = experiment.run_experiment(cfg, jobs=args.jobs)
    csv_path, json_path = experiment.write_report(report, args.out_dir)
    print(f"wrote {csv_path} and {json_path}")
    return 0


def _ablate_variants(doc: dict, base: experiment.ExperimentConfig):
    axis = doc.get("axis")
    values = doc.get("values")
    if axis not in ("method", "alpha_lr", "step_size") or not values:
        raise ValueError("ablate config needs axis in {method, alpha_lr, step_size} and values")
    base_p3a = base.p3a or core.P3AConfig()
    for value in values:
        cfg = experiment.ExperimentConfig(
            name=f"{base.name}_{axis}_{value}",
            seed=base.seed, dataset=base.dataset, attacks=base.attacks,
            samples=base.samples, p3a=base_p3a, model_file=base.model_file,
            train=base.train, include_sample_rows=base.include_sample_rows,
        )
        if axis == "method":
            if value == "adaptive":
                cfg.p3a = replace(base_p3a, selection="adaptive_max")
            else:
                cfg.p3a = replace(base_p3a, selection="fixed", fixed_method=str(value))
        elif axis == "alpha_lr":
            cfg.p3a = replace(base_p3a, alpha_lr=float(value))
        else:
            cfg.attacks = [replace(a, step_size=float(value)) for a in base.attacks]
        yield str(value), cfg


def _cmd_ablate(args) -> int:
    doc = _load_config(args.config)
    base = experiment.ExperimentConfig.from_json(doc["experiment"],
                                                 base_dir=Path(args.config).parent)
    base.seed = _effective_seed(args.seed, base.seed)
    summary = [("value", "attack", "final_delta_ce", "final_delta_asr", "final_mean_gain")]
    for value, cfg in _ablate_variants(doc, base):
        report = experiment.run_experiment(cfg, jobs=args.jobs)
        experiment.write_report(report, args.out_dir)
        for series in report.series:
            last = series.rows[-1]
            summary.append((value, series.attack,
                            experiment._fmt(last.get("delta_ce", "")),
                            experiment._fmt(last.get("delta_asr", "")),
                            experiment._fmt(last.get("mean_gain", ""))))
    out = Path(args.out_dir) / f"{base.name}_ablation.csv"
    experiment._atomic_write(out, "\n".join(",".join(map(str, row)) for row in summary) + "\n")
    print(f"wrote {out}")
    return 0


def _cmd_report(args) -> int:
    tables = {}
    keys = []
    for f in args.files:
        path = Path(f)
        if not path.exists():
            raise FileNotFoundError(f"report file not found: {path}")
        lines = path.read_text().strip().splitlines()
        header = lines[0].split(",")
        col = "delta_ce" if "delta_ce" in header else "mean_ce"
        idx = {name: i for i, name in enumerate(header)}
        table = {}
        for line in lines[1:]:
            cells = line.split(",")
            key = (cells[idx["attack"]], cells[idx["step"]])
            table[key] = cells[idx[col]]
            if key not in keys:
                keys.append(key)
        tables[path.stem] = (col, table)
    names = list(tables)
    print("\t".join(["attack", "step"] + [f"{n}:{tables[n][0]}" for n in names]))
    for key in keys:
        row = [key[0], key[1]] + [tables[n][1].get(key, "-") for n in names]
        print("\t".join(row))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"train": _cmd_train, "attack": _cmd_attack,
               "ablate": _cmd_ablate, "report": _cmd_report}[args.command]
    try:
        return handler(args)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, distinct from bad input
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
