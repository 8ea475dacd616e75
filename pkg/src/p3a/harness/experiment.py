"""Paired attack campaigns: baseline vs parameter-adapted, same seeds.

For every attack in the config the engine runs the plain supervision gradient
and, when a P3A section is present, a second run over the same samples with
identical per-sample rng streams, then reports per-step paired deltas (the
adapted run minus the baseline). Reports are written as a plot-ready CSV plus
a JSON document with full metadata; identical config and seed reproduce the
output byte for byte.
"""

import hashlib
import json
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import attacks as atk
from .. import core, diffnet
from . import datasets

CSV_COLUMNS = ("attack", "step", "mean_ce", "delta_ce", "mean_kl", "delta_kl",
               "asr", "delta_asr", "mean_gain", "selected_method_mode")
CSV_COLUMNS_BASELINE = ("attack", "step", "mean_ce", "mean_kl", "asr")


def asr(predictions, labels, only_initially_correct: bool = False,
        clean_predictions=None) -> float:
    """Fraction of samples the attack leaves misclassified.

    The default denominator is every test sample; the flag restricts the
    count to samples the clean model got right (needs clean_predictions).
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValueError("asr needs at least one record")
    if only_initially_correct:
        if clean_predictions is None:
            raise ValueError("restricting to initially-correct samples needs clean predictions")
        mask = np.asarray(clean_predictions) == labels
        if not mask.any():
            raise ValueError("no initially-correct samples to evaluate")
        predictions, labels = predictions[mask], labels[mask]
    return float(np.mean(predictions != labels))


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    dataset: dict
    attacks: list
    samples: int
    p3a: core.P3AConfig | None = None
    model_file: str | None = None
    train: dict | None = None
    include_sample_rows: bool = True

    def __post_init__(self):
        if (self.model_file is None) == (self.train is None):
            raise ValueError("config needs exactly one of model_file / train")
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if not self.attacks:
            raise ValueError("config needs at least one attack")

    @staticmethod
    def from_json(doc: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        attack_list = [atk.AttackConfig(**a) for a in doc["attacks"]]
        p3a_cfg = None
        if doc.get("p3a") is not None:
            p3a = dict(doc["p3a"])
            if "methods" in p3a:
                p3a["methods"] = tuple(p3a["methods"])
            p3a_cfg = core.P3AConfig(**p3a)
        model_file = doc.get("model")
        if model_file is not None and base_dir is not None:
            model_file = str((base_dir / model_file).resolve())
        return ExperimentConfig(
            name=doc.get("name", "experiment"),
            seed=int(doc.get("seed", 0)),
            dataset=doc["dataset"],
            attacks=attack_list,
            samples=int(doc["samples"]),
            p3a=p3a_cfg,
            model_file=model_file,
            train=doc.get("train"),
            include_sample_rows=bool(doc.get("include_sample_rows", True)),
        )


def _arch_from_spec(spec: dict, input_dim: int, classes: int) -> diffnet.ModelArch:
    if "layers" in spec:
        return diffnet.arch_from_json({"input_dim": spec.get("input_dim", input_dim),
                                       "layers": spec["layers"]})
    return diffnet.mlp(input_dim, [int(h) for h in spec.get("hidden", [32])],
                       classes, spec.get("activation", "relu"))


def resolve_victim(cfg: ExperimentConfig, data: datasets.PreparedData):
    """Load the victim from disk or train it; returns (model, provenance dict)."""
    if cfg.model_file is not None:
        path = Path(cfg.model_file)
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        model = diffnet.load_model(path)
        return model, {"model_file": str(path), "model_hash": diffnet.model_file_hash(path)}
    train_spec = cfg.train
    arch = _arch_from_spec(train_spec.get("arch", {}), data.train.x.shape[1], data.classes)
    theta = diffnet.train_sgd(arch, data.train, int(train_spec.get("epochs", 30)),
                              float(train_spec.get("lr", 0.05)), cfg.seed)
    model = diffnet.Model(arch, theta)
    return model, {"trained": train_spec,
                   "train_accuracy": diffnet.accuracy(arch, theta, data.train),
                   "theta_sha256": hashlib.sha256(theta.astype("<f8").tobytes()).hexdigest()}


@dataclass
class SampleOutcome:
    """Per-step scalars for one sample under one attack, both runs."""

    clean_loss: float
    clean_pred: int
    label: int
    ce_base: list
    kl_base: list
    pred_base: list
    max_ball_excess: float = float("-inf")  # max over steps of (linf distance - eps)
    ce_p3a: list = field(default_factory=list)
    kl_p3a: list = field(default_factory=list)
    pred_p3a: list = field(default_factory=list)
    gain_mean: list = field(default_factory=list)   # mean selected gain per step
    selected: list = field(default_factory=list)    # "method+1" label per step
    min_gain: float | None = None


def _trace_scalars(trace: atk.AttackTrace):
    return ([s.ce_loss for s in trace.steps],
            [s.kl for s in trace.steps],
            [s.prediction for s in trace.steps])


def _attack_one_sample(model, sample, attack_cfg, p3a_cfg, rng_key, grid) -> SampleOutcome:
    base_trace = atk.run_attack(model, sample, attack_cfg, core.VanillaDsp(model),
                                grid=grid, rng=np.random.default_rng(rng_key))
    ce_b, kl_b, pred_b = _trace_scalars(base_trace)
    out = SampleOutcome(
        clean_loss=base_trace.clean_loss,
        clean_pred=base_trace.clean_prediction,
        label=sample.y_true,
        ce_base=ce_b, kl_base=kl_b, pred_base=pred_b,
        max_ball_excess=max(s.linf for s in base_trace.steps) - attack_cfg.eps,
    )
    if p3a_cfg is None:
        return out
    p3a_trace = atk.run_attack(model, sample, attack_cfg, core.P3ADsp(model, p3a_cfg),
                               grid=grid, rng=np.random.default_rng(rng_key))
    if p3a_trace.clean_loss != base_trace.clean_loss:
        raise AssertionError("paired runs diverged before the first supervision call")
    out.max_ball_excess = max(out.max_ball_excess,
                              max(s.linf for s in p3a_trace.steps) - attack_cfg.eps)
    out.ce_p3a, out.kl_p3a, out.pred_p3a = _trace_scalars(p3a_trace)
    gains = []
    for step in p3a_trace.steps:
        sel = step.dsp_traces[0]
        out.selected.append(f"{sel.selected_method}{sel.selected_direction:+d}")
        step_gains = [t.selected_gain for t in step.dsp_traces]
        out.gain_mean.append(float(np.mean(step_gains)))
        gains.extend(step_gains)
    out.min_gain = min(gains)
    return out


def _star(args):
    return _attack_one_sample(*args)


@dataclass
class AttackSeries:
    attack: str
    rows: list          # one dict per step, CSV-column keyed
    per_sample: dict    # final-step paired arrays (empty if disabled)
    min_selected_gain: float | None
    max_ball_excess: float


@dataclass
class Report:
    meta: dict
    series: list

    @property
    def min_selected_gain(self):
        gains = [s.min_selected_gain for s in self.series if s.min_selected_gain is not None]
        return min(gains) if gains else None

    @property
    def max_ball_excess(self) -> float:
        return max(s.max_ball_excess for s in self.series)


def _aggregate(attack_name: str, cfg: ExperimentConfig, outcomes: list) -> AttackSeries:
    paired = cfg.p3a is not None
    labels = np.array([o.label for o in outcomes])
    rows = []
    n_steps = len(outcomes[0].ce_base)
    for t in range(n_steps):
        ce_base = np.array([o.ce_base[t] for o in outcomes])
        kl_base = np.array([o.kl_base[t] for o in outcomes])
        pred_base = np.array([o.pred_base[t] for o in outcomes])
        row = {"attack": attack_name, "step": t + 1}
        if paired:
            ce_p3a = np.array([o.ce_p3a[t] for o in outcomes])
            kl_p3a = np.array([o.kl_p3a[t] for o in outcomes])
            pred_p3a = np.array([o.pred_p3a[t] for o in outcomes])
            row["mean_ce"] = float(ce_p3a.mean())
            row["delta_ce"] = float((ce_p3a - ce_base).mean())
            row["mean_kl"] = float(kl_p3a.mean())
            row["delta_kl"] = float((kl_p3a - kl_base).mean())
            row["asr"] = asr(pred_p3a, labels)
            row["delta_asr"] = asr(pred_p3a, labels) - asr(pred_base, labels)
            row["mean_gain"] = float(np.mean([o.gain_mean[t] for o in outcomes]))
            counts = Counter(o.selected[t] for o in outcomes)
            top = max(counts.values())
            row["selected_method_mode"] = min(k for k, v in counts.items() if v == top)
        else:
            row["mean_ce"] = float(ce_base.mean())
            row["mean_kl"] = float(kl_base.mean())
            row["asr"] = asr(pred_base, labels)
        rows.append(row)
    per_sample = {}
    if cfg.include_sample_rows:
        per_sample = {
            "label": labels.tolist(),
            "clean_pred": [o.clean_pred for o in outcomes],
            "clean_loss": [o.clean_loss for o in outcomes],
            "final_ce_base": [o.ce_base[-1] for o in outcomes],
            "final_kl_base": [o.kl_base[-1] for o in outcomes],
            "final_pred_base": [o.pred_base[-1] for o in outcomes],
        }
        if paired:
            per_sample.update({
                "final_ce_p3a": [o.ce_p3a[-1] for o in outcomes],
                "final_kl_p3a": [o.kl_p3a[-1] for o in outcomes],
                "final_pred_p3a": [o.pred_p3a[-1] for o in outcomes],
            })
    min_gain = None
    if paired:
        min_gain = min(o.min_gain for o in outcomes)
    excess = max(o.max_ball_excess for o in outcomes)
    return AttackSeries(attack_name, rows, per_sample, min_gain, excess)


def _attack_names(attack_cfgs) -> list:
    counts = Counter(a.strategy for a in attack_cfgs)
    seen = Counter()
    names = []
    for a in attack_cfgs:
        if counts[a.strategy] == 1:
            names.append(a.strategy)
        else:
            names.append(f"{a.strategy}#{seen[a.strategy]}")
            seen[a.strategy] += 1
    return names


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    data = datasets.prepare(cfg.dataset)
    if cfg.samples > len(data.test):
        raise ValueError(
            f"config asks for {cfg.samples} samples, test split has {len(data.test)}"
        )
    model, provenance = resolve_victim(cfg, data)
    test_samples = [data.test.sample(i) for i in range(cfg.samples)]
    names = _attack_names(cfg.attacks)
    series = []
    for attack_idx, (attack_cfg, name) in enumerate(zip(cfg.attacks, names)):
        work = [
            (model, sample, attack_cfg, cfg.p3a, [cfg.seed, attack_idx, i], data.grid)
            for i, sample in enumerate(test_samples)
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(_star, work, chunksize=8))
        else:
            outcomes = [_attack_one_sample(*w) for w in work]
        series.append(_aggregate(name, cfg, outcomes))
    meta = {
        "name": cfg.name,
        "seed": cfg.seed,
        "samples": cfg.samples,
        "dataset": cfg.dataset,
        "attacks": [vars(a) for a in cfg.attacks],
        "p3a": None if cfg.p3a is None else _p3a_meta(cfg.p3a),
        "victim": provenance,
    }
    return Report(meta=meta, series=series)


def _p3a_meta(p3a_cfg: core.P3AConfig) -> dict:
    doc = dict(vars(p3a_cfg))
    doc["methods"] = list(doc["methods"])
    return doc


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_report(report: Report, out_dir, name: str | None = None):
    """Write <name>.csv and <name>.json atomically; returns the two paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = name or report.meta["name"]
    paired = report.meta["p3a"] is not None
    columns = CSV_COLUMNS if paired else CSV_COLUMNS_BASELINE
    lines = [",".join(columns)]
    for s in report.series:
        for row in s.rows:
            lines.append(",".join(_fmt(row[c]) for c in columns))
    csv_path = out_dir / f"{name}.csv"
    _atomic_write(csv_path, "\n".join(lines) + "\n")
    doc = {
        "meta": report.meta,
        "series": [
            {"attack": s.attack, "steps": s.rows, "per_sample": s.per_sample,
             "min_selected_gain": s.min_selected_gain,
             "max_ball_excess": s.max_ball_excess}
            for s in report.series
        ],
    }
    json_path = out_dir / f"{name}.json"
    _atomic_write(json_path, json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return csv_path, json_path
