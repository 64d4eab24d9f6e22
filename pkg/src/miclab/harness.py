"""Run directories, sweeps, probes, and reports.

Every command here is a plain function taking paths and returning the
data it wrote, so tests and the CLI share one implementation.  A run
directory is self-describing:

    config.yaml       exact copy of the training config
    metrics.csv       header ``step,split,metric,class,value``
    checkpoint.ckpt   latest state, rewritten at every eval point
    runinfo.json      wall-clock seconds, dataset hash, final step

Re-invoking cmd_train on a directory whose checkpoint is mid-run resumes
it: metric rows past the checkpoint step are dropped and the trajectory
continues bit-exactly (the checkpoint carries every rng stream).
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import multiprocessing
import os
import time

import numpy as np
import yaml

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (ExperimentConfig, config_from_dict, config_to_dict,
                     load_config, save_config)
from .errors import CheckpointError, ConfigError
from .evaluation import context_probe
from .synthworlds import PRESETS, SceneSpec, load_dataset, write_benchmark
from .uda import evaluate_model, train

__all__ = ["cmd_generate", "cmd_train", "cmd_sweep", "cmd_probe", "cmd_report",
           "METRICS_HEADER", "read_metrics", "final_values"]

METRICS_HEADER = "step,split,metric,class,value"


# ------------------------------------------------------------- metrics csv

def _format_row(row: dict) -> str:
    return (f"{row['step']},{row['split']},{row['metric']},"
            f"{row['cls']},{float(row['value'])!r}")


def read_metrics(run_dir: str) -> list[dict]:
    path = os.path.join(run_dir, "metrics.csv")
    if not os.path.isfile(path):
        raise IOError(f"no metrics.csv in run {run_dir!r}")
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != METRICS_HEADER:
            raise IOError(f"{path}: unexpected header {header!r}")
        for line in fh:
            step, split, metric, cls, value = line.rstrip("\n").split(",")
            rows.append({"step": int(step), "split": split, "metric": metric,
                         "cls": cls, "value": float(value)})
    return rows


def final_values(rows: list[dict], split: str) -> dict:
    """{(metric, cls): value} at the last evaluated step of ``split``."""
    steps = [r["step"] for r in rows if r["split"] == split]
    if not steps:
        return {}
    last = max(steps)
    return {(r["metric"], r["cls"]): r["value"] for r in rows
            if r["split"] == split and r["step"] == last}


# ---------------------------------------------------------------- generate

def cmd_generate(spec_path: str, out_dir: str, force: bool = False) -> dict:
    """Materialize a benchmark from a YAML spec file.

    The file holds an optional ``preset`` name, a ``spec`` mapping of
    SceneSpec field overrides, a ``seed``, and optional ``counts``.
    """
    with open(spec_path) as fh:
        doc = yaml.safe_load(fh) or {}
    known = {"preset", "spec", "seed", "counts"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in {spec_path}: {sorted(unknown)}")
    preset = doc.get("preset", "default")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
    over = doc.get("spec") or {}
    bad = set(over) - {f.name for f in dataclasses.fields(SceneSpec)}
    if bad:
        raise ConfigError(f"unknown SceneSpec fields: {sorted(bad)}")
    for key in ("colors", "target_tint", "region_cells"):
        if key in over:
            over[key] = tuple(tuple(c) for c in over[key]) if key == "colors" \
                else tuple(over[key])
    spec = dataclasses.replace(PRESETS[preset], **over)
    counts = doc.get("counts")
    if counts is not None:
        counts = {k: int(v) for k, v in counts.items()}
    return write_benchmark(spec, out_dir, seed=int(doc.get("seed", 0)),
                           counts=counts, force=force)


# ------------------------------------------------------------------- train

def _truncate_metrics(path: str, keep_up_to: int) -> None:
    with open(path) as fh:
        lines = fh.read().splitlines()
    kept = [lines[0]]
    for line in lines[1:]:
        if line and int(line.split(",", 1)[0]) <= keep_up_to:
            kept.append(line)
    with open(path, "w") as fh:
        fh.write("\n".join(kept) + "\n")


def cmd_train(config, run_dir: str | None = None) -> dict:
    """Execute (or resume) one training run.

    ``config`` is an ExperimentConfig or a path to one; the run
    directory defaults to ``config.output_dir``.  Returns the runinfo
    dict.  A complete run is returned as-is without retraining.
    """
    cfg = load_config(config) if isinstance(config, str) else config
    cfg.validate()
    run_dir = run_dir or cfg.output_dir
    if not run_dir:
        raise ConfigError("output_dir: a run needs a directory")
    if not cfg.dataset_root:
        raise ConfigError("dataset_root: a run needs a dataset")
    unseal = cfg.host == "supervised_target"
    datasets = load_dataset(cfg.dataset_root, unseal_target_train=unseal)
    os.makedirs(run_dir, exist_ok=True)

    csv_path = os.path.join(run_dir, "metrics.csv")
    ckpt_path = os.path.join(run_dir, "checkpoint.ckpt")
    info_path = os.path.join(run_dir, "runinfo.json")

    start_state = None
    if os.path.isfile(ckpt_path):
        start_state, saved_cfg = load_checkpoint(ckpt_path)
        here = dict(config_to_dict(cfg), steps=None, output_dir=None)
        there = dict(saved_cfg, steps=None, output_dir=None)
        if here != there:
            raise ConfigError(f"{run_dir}: existing checkpoint was trained with a "
                              f"different config; use a fresh directory")
        if start_state.step >= cfg.steps and os.path.isfile(info_path):
            with open(info_path) as fh:
                return json.load(fh)
        _truncate_metrics(csv_path, start_state.step)
    else:
        save_config(cfg, os.path.join(run_dir, "config.yaml"))
        with open(csv_path, "w") as fh:
            fh.write(METRICS_HEADER + "\n")

    def on_eval(step, rows):
        with open(csv_path, "a") as fh:
            for row in rows:
                fh.write(_format_row(row) + "\n")

    def on_checkpoint(state):
        save_checkpoint(ckpt_path, state, config_to_dict(cfg), state.student.arch)

    t0 = time.time()
    state = train(cfg, datasets, start_state=start_state,
                  on_eval=on_eval, on_checkpoint=on_checkpoint)
    if state.step > 0 and not os.path.isfile(ckpt_path):
        on_checkpoint(state)
    info = {
        "steps": state.step,
        "wall_seconds": round(time.time() - t0, 3),
        "dataset_hash": datasets["__meta__"]["content_hash"],
        "host": cfg.host,
        "seed": cfg.seed,
    }
    with open(info_path, "w") as fh:
        json.dump(info, fh, sort_keys=True, indent=1)
    return info


# ------------------------------------------------------------------- sweep

def _set_dotted(d: dict, path: str, value):
    keys = path.split(".")
    node = d
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"sweep axis {path!r}: {k!r} is not a config section")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"sweep axis {path!r}: unknown config field")
    node[keys[-1]] = value


def _sweep_run(args):
    cfg_dict, run_dir = args
    cfg = config_from_dict(cfg_dict)
    cmd_train(cfg, run_dir)
    rows = read_metrics(run_dir)
    split = cfg.eval_splits[-1]
    fin = final_values(rows, split)
    key = ("miou", "") if cfg.task == "seg" else ("accuracy", "")
    return fin.get(key)


def cmd_sweep(sweep_path: str, out_dir: str | None = None,
              workers: int | None = None) -> list[dict]:
    """Grid of runs from a YAML sweep file.

    Keys: ``base`` (config mapping), ``axes`` (dotted field -> list of
    values), ``seeds`` (list), optional ``workers`` and ``out_dir``.
    Returns the aggregate rows also written to ``sweep.csv``: one row
    per run plus one median row per grid cell.
    """
    with open(sweep_path) as fh:
        doc = yaml.safe_load(fh) or {}
    unknown = set(doc) - {"base", "axes", "seeds", "workers", "out_dir"}
    if unknown:
        raise ConfigError(f"unknown keys in {sweep_path}: {sorted(unknown)}")
    base = doc.get("base") or {}
    axes = doc.get("axes") or {}
    seeds = doc.get("seeds") or [0]
    out_dir = out_dir or doc.get("out_dir")
    if not out_dir:
        raise ConfigError("sweep needs an out_dir (file key or argument)")
    workers = int(workers or doc.get("workers") or 1)
    config_from_dict(base).validate()  # fail fast on typos in the base

    names = sorted(axes)
    grid = list(itertools.product(*(axes[n] for n in names)))
    jobs = []
    for cell in grid:
        for seed in seeds:
            cfg_dict = json.loads(json.dumps(dict(base)))  # deep copy
            for name, value in zip(names, cell):
                _set_dotted(cfg_dict, name, value)
            cfg_dict["seed"] = seed
            tag = "_".join(f"{n.split('.')[-1]}{v}" for n, v in zip(names, cell))
            run_dir = os.path.join(out_dir, f"run_{tag}_s{seed}" if tag
                                   else f"run_s{seed}")
            cfg_dict["output_dir"] = run_dir
            config_from_dict(cfg_dict)  # strict: unknown axis values fail here
            jobs.append((cfg_dict, run_dir))

    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            finals = pool.map(_sweep_run, jobs)
    else:
        finals = [_sweep_run(j) for j in jobs]

    rows = []
    for (cell, seed), value in zip(
            ((c, s) for c in grid for s in seeds), finals):
        row = {name: cell[i] for i, name in enumerate(names)}
        row.update(seed=seed, value=value)
        rows.append(row)
    for cell in grid:
        vals = [r["value"] for r in rows
                if all(r[n] == cell[i] for i, n in enumerate(names))
                and r["seed"] != "median" and r["value"] is not None]
        row = {name: cell[i] for i, name in enumerate(names)}
        row.update(seed="median", value=float(np.median(vals)) if vals else None)
        rows.append(row)

    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w") as fh:
        fh.write(",".join(names + ["seed", "value"]) + "\n")
        for row in rows:
            cells = [str(row[n]) for n in names]
            val = "" if row["value"] is None else repr(float(row["value"]))
            fh.write(",".join(cells + [str(row["seed"]), val]) + "\n")
    return rows


# ------------------------------------------------------------------- probe

def cmd_probe(ckpt_path: str, dataset_root: str, probe_patch: int | None = None,
              split: str = "target/val", out_path: str | None = None) -> dict:
    """Occlusion probe of a checkpointed model on an evaluation split."""
    state, _ = load_checkpoint(ckpt_path)
    if state.student.arch.task != "seg":
        raise ConfigError("the occlusion probe is defined for segmentation models")
    datasets = load_dataset(dataset_root)
    if split not in datasets:
        raise ConfigError(f"dataset has no split {split!r}")
    data = datasets[split]
    if data.labels is None:
        raise ConfigError(f"split {split!r} has no labels to score against")
    spec = SceneSpec.from_dict(datasets["__meta__"]["spec"])
    if spec.num_classes != state.student.arch.num_classes:
        raise CheckpointError(
            f"checkpoint predicts {state.student.arch.num_classes} classes but "
            f"the dataset has {spec.num_classes}")
    result = context_probe(state.student, data.images, data.labels,
                           patch=probe_patch)
    report = {"probe_miou": result.mean_iou, "patch": result.patch,
              "per_class": {str(c): float(v)
                            for c, v in enumerate(result.per_class)}}
    if out_path:
        with open(out_path, "w") as fh:
            fh.write("metric,class,value\n")
            fh.write(f"probe_miou,,{result.mean_iou!r}\n")
            for c, v in enumerate(result.per_class):
                fh.write(f"probe_iou,{c},{float(v)!r}\n")
    return report


# ------------------------------------------------------------------ report

def _run_summary(run_dir: str) -> dict:
    cfg_path = os.path.join(run_dir, "config.yaml")
    if not os.path.isfile(cfg_path):
        raise IOError(f"run {run_dir!r} has no config.yaml")
    cfg = load_config(cfg_path)
    rows = read_metrics(run_dir)
    split = cfg.eval_splits[-1]
    fin = final_values(rows, split)
    key = ("miou", "") if cfg.task == "seg" else ("accuracy", "")
    label = cfg.host + ("+mic" if cfg.mic.enabled and cfg.weights.lambda_m > 0
                        else "")
    return {"run": os.path.basename(os.path.normpath(run_dir)), "label": label,
            "seed": cfg.seed, "split": split, "value": fin.get(key),
            "per_class": {cls: v for (m, cls), v in fin.items() if m == "iou"},
            "rows": rows, "cfg": cfg}


def cmd_report(run_dirs: list[str], out_dir: str) -> list[dict]:
    """Comparison tables (markdown + CSV) and a metric-vs-step plot."""
    if not run_dirs:
        raise ConfigError("report needs at least one run directory")
    summaries = [_run_summary(d) for d in run_dirs]
    os.makedirs(out_dir, exist_ok=True)

    groups: dict = {}
    for s in summaries:
        groups.setdefault(s["label"], []).append(s)
    table = []
    for label in sorted(groups):
        vals = [g["value"] for g in groups[label] if g["value"] is not None]
        table.append({"label": label,
                      "runs": len(groups[label]),
                      "median": float(np.median(vals)) if vals else None,
                      "min": min(vals) if vals else None,
                      "max": max(vals) if vals else None})

    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w") as fh:
        fh.write("label,runs,median,min,max\n")
        for row in table:
            fh.write(",".join([row["label"], str(row["runs"])] +
                              ["" if row[k] is None else repr(float(row[k]))
                               for k in ("median", "min", "max")]) + "\n")

    md_path = os.path.join(out_dir, "report.md")
    with open(md_path, "w") as fh:
        fh.write("# Run comparison\n\n")
        fh.write("| method | runs | median | min | max |\n")
        fh.write("|---|---|---|---|---|\n")
        for row in table:
            cells = [row["label"], str(row["runs"])] + \
                [("" if row[k] is None else f"{row[k]:.4f}")
                 for k in ("median", "min", "max")]
            fh.write("| " + " | ".join(cells) + " |\n")

    _plot_curves(summaries, os.path.join(out_dir, "curves.svg"))
    _plot_heatmap(summaries, os.path.join(out_dir, "heatmap.svg"))
    return table


def _plot_heatmap(summaries: list[dict], path: str) -> bool:
    """Median-metric heatmap over a (mask patch, mask ratio) grid.

    Drawn only when the summaries span at least a 2x2 grid of masking
    settings; returns whether a file was written.
    """
    cells: dict = {}
    for s in summaries:
        cfg = s["cfg"]
        if cfg.mic.enabled and s["value"] is not None:
            key = (cfg.mic.patch, cfg.mic.ratio)
            cells.setdefault(key, []).append(s["value"])
    patches = sorted({p for p, _ in cells})
    ratios = sorted({r for _, r in cells})
    if len(patches) < 2 or len(ratios) < 2:
        return False

    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "miclab"
    import matplotlib.pyplot as plt

    grid = np.full((len(patches), len(ratios)), np.nan)
    for i, p in enumerate(patches):
        for j, r in enumerate(ratios):
            if (p, r) in cells:
                grid[i, j] = float(np.median(cells[(p, r)]))
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(ratios)), [str(r) for r in ratios])
    ax.set_yticks(range(len(patches)), [str(p) for p in patches])
    ax.set_xlabel("mask ratio")
    ax.set_ylabel("mask patch")
    for i in range(len(patches)):
        for j in range(len(ratios)):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.3f}", ha="center",
                        va="center", fontsize=7, color="white")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return True


def _plot_curves(summaries: list[dict], path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "miclab"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for s in sorted(summaries, key=lambda s: (s["label"], s["seed"])):
        key = "miou" if s["cfg"].task == "seg" else "accuracy"
        pts = sorted((r["step"], r["value"]) for r in s["rows"]
                     if r["split"] == s["split"] and r["metric"] == key)
        if pts:
            ax.plot(*zip(*pts), label=f"{s['label']} s{s['seed']}")
    ax.set_xlabel("step")
    ax.set_ylabel("target metric")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
