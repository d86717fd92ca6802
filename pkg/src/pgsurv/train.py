"""Pretraining (fusion loss) and finetuning (discrete-time survival NLL) loops."""
import logging

import numpy as np

from .data.synth import ConfigError
from .diffcore import Adam, Tape, ops, stream
from .model import embeddings, predict_hazards
from .objectives import FUSION_LOSSES, batch_survival_loss, risk_scores
from .survival import assign_bins, c_index

log = logging.getLogger(__name__)


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def require_modalities(cohort, needed):
    missing = [m for m in needed if m not in cohort.modalities]
    if missing:
        raise ConfigError(f"cohort lacks {missing} data (has {list(cohort.modalities)})")


def fusion_value(model, cohort, ids, loss="mse", eval_seed=0):
    img, gen = embeddings(model, cohort, ids, eval_seed)
    return float(FUSION_LOSSES[loss](img, gen).value)


def pretrain(model, cohort, ids, loss="mse", epochs=25, batch_size=1, lr=1e-4, seed=0,
             holdout=(), eval_seed=0):
    """Minimise the fusion loss between paired patient embeddings.

    Returns a history dict; losses are eval-mode (no dropout) values on the
    training ids before and after training, plus per-epoch training means.
    """
    require_modalities(cohort, ("image", "genomics"))
    if loss not in FUSION_LOSSES:
        raise ConfigError(f"unknown fusion loss {loss!r}; expected one of {sorted(FUSION_LOSSES)}")
    loss_fn = FUSION_LOSSES[loss]
    ids = list(ids)
    params = [p for name, p in model.named_parameters() if not name.startswith("head.")]
    opt = Adam(params, lr=lr)
    history = {"initial_loss": fusion_value(model, cohort, ids, loss, eval_seed),
               "epoch_loss": [], "holdout_loss": []}
    rng = None
    for epoch in range(epochs):
        rng = stream(seed, "pretrain", epoch)
        order = rng.permutation(ids)
        total = 0.0
        for batch in _batches(order, batch_size):
            with Tape() as tape:
                img = ops.concat([ops.reshape(model.embed_image(cohort[pid], rng), (1, -1)) for pid in batch])
                gen = ops.concat([ops.reshape(model.embed_genomics(cohort[pid], True, rng), (1, -1))
                                  for pid in batch])
                value = loss_fn(img, gen)
            tape.backward(value)
            opt.step()
            opt.zero_grad()
            total += float(value.value) * len(batch)
        history["epoch_loss"].append(total / len(ids))
        if holdout:
            history["holdout_loss"].append(fusion_value(model, cohort, holdout, loss, eval_seed))
        log.info("pretrain epoch %d: loss %.5f", epoch, history["epoch_loss"][-1])
    history["final_loss"] = fusion_value(model, cohort, ids, loss, eval_seed)
    history["rng_state"] = None if rng is None else rng.bit_generator.state
    return history


def evaluate_c_index(model, cohort, ids, eval_seed=0):
    hazards = predict_hazards(model, cohort, ids, eval_seed)
    risks = risk_scores(hazards)
    recs = cohort.records(ids)
    return c_index(risks, [r.os_months for r in recs], [r.event for r in recs]), risks


def finetune(model, cohort, train_ids, val_ids, edges, mode, epochs=25, batch_size=1, lr=5e-5,
             seed=0, eval_seed=0, shuffle_labels=False, shuffle_seed=None):
    """Train the mode's branches and head on the survival NLL.

    After every epoch the validation C-index is computed; the parameters of
    the best epoch (first one on ties) are restored at the end.
    """
    needed = {"multimodal": ("image", "genomics"), "image": ("image",), "genomics": ("genomics",)}[mode]
    require_modalities(cohort, needed)
    if model.head is None or model.mode != mode:
        model.set_head(mode, seed)
    train_ids = list(train_ids)
    recs = cohort.records(train_ids)
    times = np.array([r.os_months for r in recs])
    events = np.array([r.event for r in recs])
    val_ids = list(val_ids)
    val_recs = cohort.records(val_ids)
    val_times = np.array([r.os_months for r in val_recs])
    val_events = np.array([r.event for r in val_recs])
    if shuffle_labels:
        # negative control: the labels used for training and for epoch selection
        # are both permuted, so true outcomes are only ever seen at test time
        srng = stream(seed if shuffle_seed is None else shuffle_seed, "shuffle-labels")
        perm = srng.permutation(len(train_ids))
        times, events = times[perm], events[perm]
        vperm = srng.permutation(len(val_ids))
        val_times, val_events = val_times[vperm], val_events[vperm]
    bins = dict(zip(train_ids, assign_bins(times, edges)))
    censor = dict(zip(train_ids, 1 - events))

    params = model.trainable(mode)
    opt = Adam(params, lr=lr)
    history = {"epoch_loss": [], "val_c_index": []}
    best, best_state = -np.inf, None
    rng = None
    for epoch in range(epochs):
        rng = stream(seed, "finetune", epoch)
        order = rng.permutation(train_ids)
        total = 0.0
        for batch in _batches(order, batch_size):
            with Tape() as tape:
                fused = ops.concat([ops.reshape(model.embed(cohort[pid], mode, rng, True, rng), (1, -1))
                                    for pid in batch])
                hazards = model.head(fused)
                value = batch_survival_loss(hazards, [bins[p] for p in batch], [censor[p] for p in batch])
            tape.backward(value)
            opt.step()
            opt.zero_grad()
            total += float(value.value) * len(batch)
        history["epoch_loss"].append(total / len(train_ids))
        score = c_index(risk_scores(predict_hazards(model, cohort, val_ids, eval_seed)), val_times, val_events)
        history["val_c_index"].append(score)
        if score > best:
            best = score
            best_state = [p.value.copy() for p in params]
            history["best_epoch"] = epoch
        log.info("finetune epoch %d: loss %.5f val C %.4f", epoch, history["epoch_loss"][-1], score)
    if best_state is not None:
        for p, v in zip(params, best_state):
            p.value[...] = v
    history["best_val_c_index"] = float(best) if epochs else None
    history["rng_state"] = None if rng is None else rng.bit_generator.state
    return history
