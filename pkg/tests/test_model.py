import numpy as np
import pytest

from pgsurv.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from pgsurv.config import ConfigError
from pgsurv.data import SynthConfig, generate_synthetic_cohort, load_cohort, make_splits, write_cohort
from pgsurv.model import PathGenomicModel, embeddings, head_width, predict_hazards
from pgsurv.survival import fit_bin_edges
from pgsurv.train import evaluate_c_index, finetune, fusion_value, pretrain


@pytest.fixture(scope="module")
def cohort():
    return generate_synthetic_cohort(SynthConfig(n_patients=24, k_min=8, k_max=10, seed=2))


@pytest.fixture(scope="module")
def plan(cohort):
    return make_splits(cohort, "internal", 0)


def snapshot(model, prefix):
    return {k: v.copy() for k, v in model.state_dict().items() if k.startswith(prefix)}


def test_head_widths():
    assert head_width("multimodal") == 512 and head_width("image") == 256 == head_width("genomics")
    with pytest.raises(ValueError):
        head_width("audio")


def test_streams_have_separate_weights(cohort):
    m = PathGenomicModel(cohort.group_specs, seed=0)
    a = m.image.encoder.layers[0].attn.Wq.value
    b = m.genomics.encoder.layers[0].attn.Wq.value
    assert a.shape == b.shape and not np.array_equal(a, b)


def test_pretraining_lowers_fusion_loss(cohort, plan):
    m = PathGenomicModel(cohort.group_specs, seed=0)
    hist = pretrain(m, cohort, plan.folds[0].pretrain, epochs=2, seed=0)
    assert hist["final_loss"] < hist["initial_loss"]
    assert hist["final_loss"] == pytest.approx(fusion_value(m, cohort, plan.folds[0].pretrain))
    assert m.head is None


@pytest.mark.parametrize("mode,frozen", [("image", "genomics."), ("genomics", "image.")])
def test_single_modality_finetune_leaves_other_stream(cohort, plan, mode, frozen):
    m = PathGenomicModel(cohort.group_specs, seed=0)
    before = snapshot(m, frozen)
    trained = snapshot(m, mode + ".")
    fold = plan.folds[0]
    edges = fit_bin_edges(cohort.records(fold.finetune))
    hist = finetune(m, cohort, fold.finetune, fold.validation, edges, mode, epochs=1, seed=0)
    assert m.head.fc.W.value.shape == (256, 4)
    for k, v in snapshot(m, frozen).items():
        assert v.tobytes() == before[k].tobytes()
    assert any(not np.array_equal(v, trained[k]) for k, v in snapshot(m, mode + ".").items())
    assert len(hist["val_c_index"]) == 1 and hist["best_epoch"] == 0


def test_best_epoch_restored(cohort, plan):
    m = PathGenomicModel(cohort.group_specs, seed=1)
    fold = plan.folds[1]
    edges = fit_bin_edges(cohort.records(fold.finetune))
    hist = finetune(m, cohort, fold.finetune, fold.validation, edges, "multimodal", epochs=3, seed=1)
    assert m.head.fc.W.value.shape == (512, 4)
    best = hist["best_epoch"]
    assert hist["val_c_index"][best] == max(hist["val_c_index"])
    assert hist["val_c_index"].index(max(hist["val_c_index"])) == best
    c, _ = evaluate_c_index(m, cohort, fold.validation, 0)
    assert c == pytest.approx(hist["best_val_c_index"])


def test_predictions_deterministic(cohort, plan):
    m = PathGenomicModel(cohort.group_specs, seed=0)
    m.set_head("multimodal")
    a = predict_hazards(m, cohort, plan.test, 0)
    b = predict_hazards(m, cohort, plan.test, 0)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (len(plan.test), 4) and np.all((a > 0) & (a < 1))
    img, gen = embeddings(m, cohort, plan.test, 0)
    assert img.shape == gen.shape == (len(plan.test), 256)


def test_missing_modality_is_config_error(cohort, plan, tmp_path):
    write_cohort(cohort, tmp_path)
    image_only = load_cohort(tmp_path / "manifest.csv", tmp_path / "features", None, tmp_path / "group_spec.csv")
    m = PathGenomicModel(cohort.group_specs, seed=0)
    fold = plan.folds[0]
    edges = fit_bin_edges(cohort.records(fold.finetune))
    with pytest.raises(ConfigError, match="genomics"):
        finetune(m, image_only, fold.finetune, fold.validation, edges, "genomics", epochs=1)
    with pytest.raises(ConfigError):
        pretrain(m, image_only, fold.pretrain, epochs=1)


def test_checkpoint_round_trip(cohort, plan, tmp_path):
    m = PathGenomicModel(cohort.group_specs, seed=0)
    m.set_head("image")
    path = save_checkpoint(tmp_path / "a.ckpt", m.state_dict(), {"x": 1}, {"mode": "image"}, {"s": [1, 2]})
    tensors, header = load_checkpoint(path)
    assert header["config"] == {"x": 1} and header["meta"]["mode"] == "image"
    m2 = PathGenomicModel(cohort.group_specs, seed=5)
    m2.set_head("image")
    m2.load_state_dict(tensors)
    a = predict_hazards(m, cohort, plan.test, 0)
    assert a.tobytes() == predict_hazards(m2, cohort, plan.test, 0).tobytes()
    again = save_checkpoint(tmp_path / "b.ckpt", m2.state_dict(), {"x": 1}, {"mode": "image"}, {"s": [1, 2]})
    assert path.read_bytes() == again.read_bytes()


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"nope")
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)
    p.write_bytes(b"XXXXXXXX" + bytes(12))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)
    good = save_checkpoint(tmp_path / "g.ckpt", {"w": np.ones((3, 3))})
    p.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="past end"):
        load_checkpoint(p)


def test_shuffled_control_permutes_training_and_selection_labels(cohort, plan, monkeypatch):
    import pgsurv.train as train
    fold = plan.folds[0]
    edges = fit_bin_edges(cohort.records(fold.finetune))
    seen = []
    real_c = train.c_index
    monkeypatch.setattr(train, "c_index", lambda r, t, e: seen.append(np.asarray(t).copy()) or real_c(r, t, e))

    def run(**kw):
        seen.clear()
        m = PathGenomicModel(cohort.group_specs, seed=0)
        h = finetune(m, cohort, fold.finetune, fold.validation, edges, "multimodal", epochs=1, seed=0, **kw)
        return h, seen[0]

    true_t = np.array([r.os_months for r in cohort.records(fold.validation)])
    _, t = run()
    np.testing.assert_array_equal(t, true_t)
    h0, t0 = run(shuffle_labels=True)
    assert sorted(t0) == sorted(true_t) and not np.array_equal(t0, true_t)
    h0b, _ = run(shuffle_labels=True, shuffle_seed=0)
    assert h0b["epoch_loss"] == h0["epoch_loss"]
    h1, t1 = run(shuffle_labels=True, shuffle_seed=1)
    assert h1["epoch_loss"] != h0["epoch_loss"] and not np.array_equal(t1, t0)
