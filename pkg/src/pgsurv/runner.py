"""Experiment commands behind the CLI.

Each command takes a RunConfig and an output directory and returns a report
dict, which is also written as ``report.json``. Reports contain no wall-clock
values so that identical configs give identical bytes; timings go to
``timing.json`` next to the report.
"""
import csv
import io
import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError
from .data import (SynthConfig, generate_synthetic_cohort, load_cohort, load_cohort_dir, make_splits,
                   subsample_finetune, write_cohort)
from .diffcore import RULES, DeterminismError, grad_check, ops, stream
from .model import PathGenomicModel, eval_partition_rng
from .objectives import FUSION_LOSSES, batch_survival_loss
from .survival import fit_bin_edges
from .train import evaluate_c_index, finetune, pretrain

log = logging.getLogger(__name__)

GRAD_TOL = 1e-4
EVAL_SPLITS = ("test", "validation")


class ModeMismatchError(ValueError):
    pass


class SplitRoleError(ValueError):
    pass


# data ---------------------------------------------------------------------

def _load(spec, synth_cfg):
    if not spec:
        return generate_synthetic_cohort(synth_cfg)
    if "dir" in spec:
        return load_cohort_dir(spec["dir"])
    return load_cohort(spec["manifest"], spec.get("features_dir"), spec.get("genomics_dir"),
                       spec["group_spec"])


def load_cohorts(cfg):
    """(pretraining cohort, finetuning cohort); the same object for the internal scheme."""
    cohort = _load(cfg.data, cfg.synth_config("synth"))
    if cfg.scheme == "internal":
        ft_cohort = cohort
    elif not cfg.finetune_data and not cfg.finetune_synth:
        raise ConfigError("external scheme needs finetune_data or finetune_synth")
    else:
        ft_cohort = _load(cfg.finetune_data, cfg.synth_config("finetune_synth"))
    for c in {id(cohort): cohort, id(ft_cohort): ft_cohort}.values():
        if len(c.group_specs) != cfg.n_groups:
            raise ConfigError(f"config has n_groups={cfg.n_groups} but the cohort has {len(c.group_specs)} groups")
    if [s.name for s in cohort.group_specs] != [s.name for s in ft_cohort.group_specs]:
        raise ConfigError("pretraining and finetuning cohorts disagree on genomics groups")
    return cohort, ft_cohort


def split_plan(cfg, cohort, ft_cohort):
    plan = make_splits(cohort, cfg.scheme, cfg.seed,
                       finetune_cohort=None if cfg.scheme == "internal" else ft_cohort)
    return plan.check()


def fold_ids(cfg, plan):
    ks = range(len(plan.folds)) if cfg.folds is None else list(cfg.folds)
    for k in ks:
        if not 0 <= k < len(plan.folds):
            raise ConfigError(f"fold {k} out of range for {len(plan.folds)} folds")
    return list(ks)


def repeat_seed(cfg, r):
    return int(cfg.seed) + r


def guard_training_ids(ids, plan):
    """Refuse to train on any patient of the held-out test subset."""
    leak = set(ids) & set(plan.test)
    if leak:
        raise SplitRoleError(f"training ids include test patients: {sorted(leak)[:5]}")
    return ids


def cells(cfg, plan):
    for r in range(cfg.repeats):
        for k in fold_ids(cfg, plan):
            yield r, k


# output helpers -------------------------------------------------------------

def _dump(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


class _Timer:
    def __init__(self):
        self.laps = {}

    @contextmanager
    def lap(self, name):
        t = time.perf_counter()
        yield
        self.laps[name] = time.perf_counter() - t


def summarize(values):
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def repeat_summary(rows, key):
    """Per-fold values are averaged within a repeat; mean +- std is over repeats."""
    by_rep = {}
    for row in rows:
        by_rep.setdefault(row["repeat"], []).append(row[key])
    per_rep = [float(np.mean(v)) for _, v in sorted(by_rep.items())]
    out = summarize(per_rep)
    out["per_repeat"] = per_rep
    return out


def _rel(path, out):
    return str(Path(path).relative_to(out))


def _write_report(out, report, timer=None):
    out = Path(out)
    _dump(out / "report.json", report)
    if timer is not None:
        _dump(out / "timing.json", {k: round(v, 3) for k, v in timer.laps.items()})
    return report


# checkpoints ----------------------------------------------------------------

def pretrain_ckpt_name(r, k):
    return f"pretrain_r{r}_f{k}.ckpt"


def finetune_ckpt_name(mode, r, k):
    return f"finetune_{mode}_r{r}_f{k}.ckpt"


def _save_model(path, model, cfg, meta, rng_state):
    tensors = dict(model.state_dict())
    return save_checkpoint(path, tensors, config=cfg.to_dict(), meta=meta, rng_state=rng_state)


def restore_model(cohort, cfg, path, seed):
    """Rebuild a model from a checkpoint; the head is restored only if present."""
    tensors, header = load_checkpoint(path)
    model = PathGenomicModel(cohort.group_specs, cfg.model_config(), seed)
    mode = header["meta"].get("mode")
    if mode is not None:
        model.set_head(mode, seed)
    model.load_state_dict(tensors)
    return model, header


def _resolve_pretrain(checkpoint, out, r, k):
    base = Path(checkpoint) if checkpoint else Path(out) / "checkpoints"
    path = base / pretrain_ckpt_name(r, k) if base.is_dir() else base
    if not path.exists():
        raise FileNotFoundError(f"pretrained checkpoint not found: {path}")
    return path


# commands -------------------------------------------------------------------

def cmd_pretrain(cfg, out):
    if not cfg.pretrain:
        raise ConfigError("pretraining is disabled in this config (--no-pretrain); refusing to pretrain")
    out = Path(out)
    timer = _Timer()
    cohort, ft_cohort = load_cohorts(cfg)
    plan = split_plan(cfg, cohort, ft_cohort)
    rows = []
    for r, k in cells(cfg, plan):
        seed = repeat_seed(cfg, r)
        fold = plan.folds[k]
        model = PathGenomicModel(cohort.group_specs, cfg.model_config(), seed)
        with timer.lap(f"pretrain_r{r}_f{k}"):
            hist = pretrain(model, cohort, guard_training_ids(fold.pretrain, plan), cfg.fusion_loss, cfg.n_pretrain_epochs,
                            cfg.batch_size, cfg.pretrain_lr, seed, holdout=fold.pretrain_holdout,
                            eval_seed=seed)
        path = out / "checkpoints" / pretrain_ckpt_name(r, k)
        meta = {"stage": "pretrain", "mode": None, "repeat": r, "fold": k, "seed": seed,
                "fusion_loss": cfg.fusion_loss}
        _save_model(path, model, cfg, meta, hist.pop("rng_state"))
        rows.append({"repeat": r, "fold": k, "seed": seed, "checkpoint": _rel(path, out), **hist})
    report = {"command": "pretrain", "config": cfg.to_dict(), "runs": rows,
              "final_loss": repeat_summary(rows, "final_loss"),
              "initial_loss": repeat_summary(rows, "initial_loss")}
    return _write_report(out, report, timer)


def _fold_events(cohort, plan):
    ids = {pid for f in plan.folds for pid in f.finetune}
    return {pid: cohort[pid].event for pid in ids}


def _finetune_cell(cfg, cohort, ft_cohort, plan, r, k, out, checkpoint, timer):
    seed = repeat_seed(cfg, r)
    fold = plan.folds[k]
    sub = subsample_finetune(plan, cfg.fraction, seed, _fold_events(ft_cohort, plan))
    train_ids = guard_training_ids(sub.folds[k].finetune, plan)
    if cfg.pretrain:
        src = _resolve_pretrain(checkpoint, out, r, k)
        model, header = restore_model(cohort, cfg, src, seed)
        if header["meta"].get("stage") != "pretrain":
            raise ConfigError(f"{src} is not a pretraining checkpoint")
        source = str(src)
    else:
        model = PathGenomicModel(ft_cohort.group_specs, cfg.model_config(), seed)
        source = None
    edges = fit_bin_edges(ft_cohort.records(train_ids))
    with timer.lap(f"finetune_{cfg.modality}_r{r}_f{k}"):
        hist = finetune(model, ft_cohort, train_ids, fold.validation, edges, cfg.modality,
                        cfg.n_finetune_epochs, cfg.batch_size, cfg.finetune_lr, seed,
                        eval_seed=seed, shuffle_labels=cfg.shuffle_labels,
                        shuffle_seed=cfg.shuffle_seed)
    test_c, _ = evaluate_c_index(model, ft_cohort, plan.test, seed)
    path = Path(out) / "checkpoints" / finetune_ckpt_name(cfg.modality, r, k)
    meta = {"stage": "finetune", "mode": cfg.modality, "repeat": r, "fold": k, "seed": seed,
            "bin_edges": list(edges.cuts), "pretrained_from": source is not None}
    _save_model(path, model, cfg, meta, hist.pop("rng_state"))
    return model, {"repeat": r, "fold": k, "seed": seed, "n_finetune": len(train_ids),
                   "checkpoint": _rel(path, out), "bin_edges": list(edges.cuts),
                   "test_c_index": test_c, **hist}


def cmd_finetune(cfg, out, checkpoint=None):
    """Finetune every (repeat, fold) cell. With pretraining on, reads the
    matching pretraining checkpoint from ``checkpoint`` (file or directory) or
    from ``out/checkpoints``; with it off, starts from a fresh model."""
    out = Path(out)
    timer = _Timer()
    cohort, ft_cohort = load_cohorts(cfg)
    plan = split_plan(cfg, cohort, ft_cohort)
    rows = []
    for r, k in cells(cfg, plan):
        _, row = _finetune_cell(cfg, cohort, ft_cohort, plan, r, k, out, checkpoint, timer)
        rows.append(row)
    report = {"command": "finetune", "config": cfg.to_dict(), "mode": cfg.modality, "runs": rows,
              "test_c_index": repeat_summary(rows, "test_c_index"),
              "val_c_index": repeat_summary(rows, "best_val_c_index"),
              "aggregation": "per-fold C-indices averaged within a repeat; mean and std over repeats"}
    return _write_report(out, report, timer)


def cmd_evaluate(cfg, out, checkpoint, split="test"):
    """Dropout-free C-index of finetuned checkpoint(s) on the test set or the
    fold's validation set. Training-role splits are refused."""
    if split not in EVAL_SPLITS:
        raise SplitRoleError(f"refusing to evaluate on {split!r}: only {EVAL_SPLITS} are held out")
    out = Path(out)
    cohort, ft_cohort = load_cohorts(cfg)
    plan = split_plan(cfg, cohort, ft_cohort)
    base = Path(checkpoint)
    paths = sorted(base.glob(f"finetune_{cfg.modality}_r*_f*.ckpt")) if base.is_dir() else [base]
    if not paths:
        raise FileNotFoundError(f"no finetune_{cfg.modality} checkpoints under {base}")
    rows = []
    for path in paths:
        tensors, header = load_checkpoint(path)
        meta = header["meta"]
        if meta.get("stage") != "finetune":
            raise ModeMismatchError(f"{path} is a {meta.get('stage')} checkpoint without a risk head")
        if meta["mode"] != cfg.modality:
            raise ModeMismatchError(
                f"{path} was finetuned in {meta['mode']!r} mode, evaluation requested {cfg.modality!r}")
        seed = meta["seed"]
        model, _ = restore_model(ft_cohort, cfg, path, seed)
        ids = plan.test if split == "test" else plan.folds[meta["fold"]].validation
        score, risks = evaluate_c_index(model, ft_cohort, ids, seed)
        rows.append({"repeat": meta["repeat"], "fold": meta["fold"], "checkpoint": path.name,
                     "c_index": score, "risks": dict(zip(ids, risks.tolist()))})
    report = {"command": "evaluate", "split": split, "mode": cfg.modality, "config": cfg.to_dict(),
              "runs": rows, "c_index": repeat_summary(rows, "c_index")}
    return _write_report(out, report)


SWEEP_FIELDS = ["loss", "pretrain", "fraction", "repeat", "fold", "seed", "n_finetune",
                "best_epoch", "best_val_c_index", "test_c_index"]


def cmd_ablate(cfg, out):
    """Sweep fractions x pretraining on/off x fusion losses.

    Pretraining checkpoints are trained once per (loss, repeat, fold) and
    reused across fractions. Without pretraining the fusion loss plays no
    part, so those cells are run once and listed under every loss.
    """
    out = Path(out)
    timer = _Timer()
    cells_out, rows = [], []
    no_pre = {}
    for loss in cfg.ablate_losses:
        pre_dir = out / f"loss-{loss}"
        if True in cfg.ablate_pretrain:
            with timer.lap(f"pretrain_{loss}"):
                cmd_pretrain(cfg.replace(fusion_loss=loss, pretrain=True), pre_dir)
        for pre in cfg.ablate_pretrain:
            for frac in cfg.ablate_fractions:
                name = f"{'pre' if pre else 'nopre'}_{loss}_frac{frac:g}"
                if not pre and frac in no_pre:
                    report = no_pre[frac]
                else:
                    cell_cfg = cfg.replace(fusion_loss=loss, pretrain=pre, fraction=frac)
                    cell_dir = out / "cells" / name
                    with timer.lap(name):
                        report = cmd_finetune(cell_cfg, cell_dir, checkpoint=pre_dir / "checkpoints" if pre else None)
                    if not pre:
                        no_pre[frac] = report
                cells_out.append({"name": name, "loss": loss, "pretrain": pre, "fraction": frac,
                                  "test_c_index": report["test_c_index"],
                                  "val_c_index": report["val_c_index"]})
                for run in report["runs"]:
                    rows.append({"loss": loss, "pretrain": pre, "fraction": frac,
                                 **{k: run.get(k) for k in SWEEP_FIELDS[3:]}})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(buf.getvalue())
    report = {"command": "ablate", "config": cfg.to_dict(), "cells": cells_out,
              "pretrain_gap": _gaps(cells_out)}
    return _write_report(out, report, timer)


def _gaps(cells_out):
    """Mean test C-index with pretraining minus without, per (loss, fraction)."""
    idx = {(c["loss"], c["pretrain"], c["fraction"]): c["test_c_index"]["mean"] for c in cells_out}
    gaps = {}
    for (loss, pre, frac), v in idx.items():
        other = idx.get((loss, False, frac))
        if pre and other is not None and v is not None:
            gaps[f"{loss}_frac{frac:g}"] = v - other
    return gaps


def cmd_synth(cfg, out):
    cohort = generate_synthetic_cohort(cfg.synth_config("synth"))
    write_cohort(cohort, out)
    return {"command": "synth", "n_patients": len(cohort.patients), "out": str(out)}


# gradient check ---------------------------------------------------------------

GRADCHECK_SYNTH = {"n_patients": 3, "k_min": 8, "k_max": 10, "censoring": 0.0}


def _module_groups(model):
    groups = {}
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:2]) if not name.startswith("head.") else "head"
        groups.setdefault(key, []).append(p)
    return groups


@contextmanager
def corrupted_rule(tag, factor=1.5):
    """Temporarily scale the gradients returned by one backward rule."""
    if tag is None:
        yield
        return
    if tag not in RULES:
        raise ConfigError(f"unknown backward rule {tag!r}")
    orig = RULES[tag]

    def bad(node, g):
        return tuple(None if x is None else factor * x for x in orig(node, g))

    RULES[tag] = bad
    try:
        yield
    finally:
        RULES[tag] = orig


def cmd_gradcheck(cfg, out=None, n_samples=3, corrupt_rule=None, force_dropout=False):
    """Finite-difference check of every parameter group under the fusion
    losses and the survival loss on a tiny synthetic batch."""
    synth = dict(GRADCHECK_SYNTH)
    synth.update(cfg.synth or {})
    synth["seed"] = synth.get("seed", cfg.seed)
    cohort = generate_synthetic_cohort(SynthConfig(**synth))
    ids = cohort.ids
    model = PathGenomicModel(cohort.group_specs, cfg.model_config(), cfg.seed)
    model.set_head("multimodal", cfg.seed)
    recs = cohort.records(ids)
    labels = [i % 4 for i in range(len(ids))]
    censors = [1 - r.event for r in recs]

    # one shared stream, so forced dropout draws fresh masks on every call
    drng = stream(cfg.seed, "gradcheck-dropout") if force_dropout else None

    def embed_all(mode):
        rows = []
        for pid in ids:
            rows.append(ops.reshape(model.embed(cohort[pid], mode, eval_partition_rng(cfg.seed, pid),
                                                training=force_dropout, dropout_rng=drng), (1, -1)))
        return ops.concat(rows)

    def fusion(name):
        def fn():
            img = ops.concat([ops.reshape(model.embed_image(cohort[p], eval_partition_rng(cfg.seed, p)), (1, -1))
                              for p in ids])
            gen = ops.concat([ops.reshape(model.embed_genomics(cohort[p], force_dropout, drng), (1, -1))
                              for p in ids])
            return FUSION_LOSSES[name](img, gen)
        return fn

    def survival():
        return batch_survival_loss(model.head(embed_all("multimodal")), labels, censors)

    losses = {"fusion_mse": fusion("mse"), "fusion_cosine": fusion("cosine"), "survival_nll": survival}
    groups = _module_groups(model)
    results = {}
    with corrupted_rule(corrupt_rule):
        for lname, fn in losses.items():
            for gname, params in sorted(groups.items()):
                if gname == "head" and lname.startswith("fusion"):
                    continue
                rng = stream(cfg.seed, "gradcheck", lname, gname)
                results[f"{lname}/{gname}"] = grad_check(fn, params, n_samples=n_samples, rng=rng)
    worst = max(results.values())
    report = {"command": "gradcheck", "tolerance": GRAD_TOL, "max_rel_error": results,
              "worst": worst, "passed": bool(worst < GRAD_TOL), "corrupted_rule": corrupt_rule}
    if out is not None:
        _write_report(out, report)
    return report


__all__ = ["ModeMismatchError", "SplitRoleError", "DeterminismError", "load_cohorts", "split_plan",
           "cmd_pretrain", "cmd_finetune", "cmd_evaluate", "cmd_ablate", "cmd_synth", "cmd_gradcheck"]
