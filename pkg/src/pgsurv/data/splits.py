"""Split plans for the internal and external evaluation protocols.

internal: one cohort, 80/20 train/test, 4-fold CV over train. In fold k the
    held-out fold is the validation set and the rest is used both for
    pretraining and finetuning.
external: pretraining cohort split into 5 folds (fold k held out from
    pretraining); a separate finetuning cohort split 60/20/20 into
    finetune/validation/test, shared by every fold.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from ..diffcore import stream
from ..survival import DegenerateCohortError

SCHEMES = ("internal", "external")


@dataclass(frozen=True)
class Fold:
    pretrain: tuple
    pretrain_holdout: tuple
    finetune: tuple
    validation: tuple


@dataclass(frozen=True)
class SplitPlan:
    scheme: str
    test: tuple
    folds: tuple = field(default_factory=tuple)

    def training_ids(self):
        out = set()
        for f in self.folds:
            out.update(f.pretrain, f.finetune)
        return out

    def check(self):
        """Raise if any test id shows up in a training role."""
        leak = self.training_ids() & set(self.test)
        if leak:
            raise AssertionError(f"test ids in training subsets: {sorted(leak)[:5]}")
        for k, f in enumerate(self.folds):
            if set(f.validation) & set(f.finetune):
                raise AssertionError(f"fold {k}: validation overlaps finetune")
        return self

    def to_dict(self):
        return {
            "scheme": self.scheme,
            "test": list(self.test),
            "folds": [{k: list(getattr(f, k)) for k in ("pretrain", "pretrain_holdout", "finetune", "validation")}
                      for f in self.folds],
        }


def _sizes(n, parts):
    """Split n into len(parts) integer sizes proportional to ``parts``, summing to n."""
    raw = np.asarray(parts, dtype=float) * n / np.sum(parts)
    sizes = np.floor(raw + 0.5).astype(int)
    sizes[-1] = n - sizes[:-1].sum()
    return sizes


def _deal(ids, events, sizes, rng, label):
    """Random partition of ``ids`` into buckets of the given sizes, each
    bucket holding at least one uncensored patient."""
    ids = np.asarray(ids)
    events = np.asarray(events)
    unc = ids[events == 1]
    if len(unc) < len(sizes) or min(sizes) < 1:
        raise DegenerateCohortError(
            f"{label}: {len(unc)} uncensored patients cannot cover {len(sizes)} subsets of sizes {list(sizes)}")
    unc = rng.permutation(unc)
    seeds = list(unc[:len(sizes)])
    rest = rng.permutation(np.concatenate([unc[len(sizes):], ids[events != 1]]))
    buckets, pos = [], 0
    for b, size in enumerate(sizes):
        take = size - 1
        buckets.append(tuple(sorted([seeds[b], *rest[pos:pos + take]])))
        pos += take
    return buckets


def make_splits(cohort, scheme="internal", seed=0, finetune_cohort=None,
                n_folds=None, test_fraction=0.2):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown split scheme {scheme!r}; expected one of {SCHEMES}")
    rng = stream(seed, "splits", scheme)
    ids = cohort.ids
    events = [cohort[i].event for i in ids]
    if scheme == "internal":
        n_folds = n_folds or 4
        n_test = int(np.floor(test_fraction * len(ids) + 0.5))
        fold_sizes = _sizes(len(ids) - n_test, [1] * n_folds)
        buckets = _deal(ids, events, [n_test, *fold_sizes], rng, "internal split")
        test, folds = buckets[0], buckets[1:]
        plan_folds = []
        for k in range(n_folds):
            train = tuple(sorted(i for j, f in enumerate(folds) if j != k for i in f))
            plan_folds.append(Fold(train, folds[k], train, folds[k]))
        return SplitPlan("internal", test, tuple(plan_folds)).check()

    if finetune_cohort is None:
        raise ValueError("external scheme needs a separate finetune cohort")
    n_folds = n_folds or 5
    pre_folds = _deal(ids, events, _sizes(len(ids), [1] * n_folds), rng, "pretrain folds")
    ft_ids = finetune_cohort.ids
    ft_events = [finetune_cohort[i].event for i in ft_ids]
    finetune, validation, test = _deal(ft_ids, ft_events, _sizes(len(ft_ids), [3, 1, 1]), rng, "finetune split")
    folds = []
    for k in range(n_folds):
        train = tuple(sorted(i for j, f in enumerate(pre_folds) if j != k for i in f))
        folds.append(Fold(train, pre_folds[k], finetune, validation))
    return SplitPlan("external", test, tuple(folds)).check()


def subsample_finetune(plan, fraction, seed, events, max_tries=100):
    """Keep ``round(fraction * n)`` of each fold's finetune set.

    ``events`` maps patient id -> event flag. Draws are retried until the
    subset holds an uncensored patient; after ``max_tries`` one uncensored
    patient is swapped in.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"finetune fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return plan
    folds = []
    for k, fold in enumerate(plan.folds):
        rng = stream(seed, "subsample", k)
        pool = np.asarray(fold.finetune)
        n_keep = int(np.floor(fraction * len(pool) + 0.5))
        unc = [i for i in pool if events[i] == 1]
        if n_keep < 1 or not unc:
            raise DegenerateCohortError(
                f"fold {k}: fraction {fraction} keeps {n_keep} of {len(pool)} patients; no uncensored patient fits")
        for _ in range(max_tries):
            keep = rng.choice(pool, size=n_keep, replace=False)
            if any(events[i] == 1 for i in keep):
                break
        else:
            keep[0] = rng.choice(unc)
        folds.append(replace(fold, finetune=tuple(sorted(keep.tolist()))))
    return replace(plan, folds=tuple(folds)).check()
