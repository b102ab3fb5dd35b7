import numpy as np
import pytest

from dentseg.augment import AugmentationSpec, augment
from dentseg.segnet import checkpoint as ckpt
from dentseg.segnet.model import ModelParameters, Widths
from dentseg.segnet.train import (
    Adam,
    Hyperparameters,
    Sample,
    TrainingError,
    TrainingLog,
    evaluate,
    make_sample,
    train,
)
from dentseg.synth import ArchSpec, generate


@pytest.fixture(scope="module")
def one_sample():
    m, l = generate(ArchSpec(target_cells=300, seed=1))
    return [make_sample(m, l)]


def test_hyperparameter_defaults():
    hp = Hyperparameters()
    assert (hp.learning_rate, hp.beta1, hp.beta2, hp.eps) == (1e-4, 0.9, 0.999, 1e-8)
    assert (hp.weight_decay, hp.batch_size, hp.epochs, hp.dropout_rate) == (0.0, 10, 200, 0.5)


def test_overfit_single_sample_descends(one_sample):
    hp = Hyperparameters(epochs=200)
    params0 = ModelParameters.init(Widths.uniform(8), seed=int(np.random.default_rng(0).integers(2**31)))
    initial = evaluate(params0, one_sample)["loss"]
    _, log = train(one_sample, hp, widths=Widths.uniform(8))
    assert len(log.rows) == 200
    assert log.final["loss"] < initial


def test_overfit_single_sample_reaches_dsc_bar():
    m, l = generate(ArchSpec(target_cells=1000, seed=0))
    _, log = train([make_sample(m, l)], Hyperparameters(), widths=Widths.uniform(8))
    assert log.final["dsc"] >= 0.95, log.final


def test_same_seed_identical_log(one_sample, tmp_path):
    hp = Hyperparameters(epochs=5, seed=3)
    _, a = train(one_sample, hp, widths=Widths.uniform(8))
    _, b = train(one_sample, hp, widths=Widths.uniform(8))
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert TrainingLog.from_csv(tmp_path / "a.csv").rows[0]["epoch"] == 1


def test_resume_equals_uninterrupted(tmp_path):
    m, l = generate(ArchSpec(target_cells=200, seed=2))
    data = [make_sample(a, b) for a, b, _ in augment(m, l, AugmentationSpec(factor=3))]
    hp = Hyperparameters(epochs=4, batch_size=2, learning_rate=1e-3)
    full, log_full = train(data, hp, widths=Widths.uniform(8), checkpoint_path=tmp_path / "full.bin")
    half = Hyperparameters(epochs=2, batch_size=2, learning_rate=1e-3)
    train(data, half, widths=Widths.uniform(8), checkpoint_path=tmp_path / "half.bin")
    resumed, log_res = train(data, half, init="checkpoint", resume_from=tmp_path / "half.bin",
                             checkpoint_path=tmp_path / "res.bin")
    for (n, a), (_, b) in zip(full.tensors(), resumed.tensors()):
        assert a.tobytes() == b.tobytes(), n
    assert [r["epoch"] for r in log_res.rows] == [3, 4]
    assert log_res.rows == log_full.rows[2:]
    a, b = ckpt.load(tmp_path / "full.bin"), ckpt.load(tmp_path / "res.bin")
    assert (a.step, a.epoch, a.rng_state) == (b.step, b.epoch, b.rng_state)
    for n in a.m:
        assert a.m[n].tobytes() == b.m[n].tobytes() and a.v[n].tobytes() == b.v[n].tobytes()


def test_checkpoint_round_trip(tmp_path):
    params = ModelParameters.init(Widths.uniform(4), seed=8)
    rng = np.random.default_rng(1)
    rng.random(3)
    st = ckpt.TrainState.fresh(params, rng, {"learning_rate": 1e-4})
    st.step, st.epoch = 7, 3
    ckpt.save(st, tmp_path / "c.bin")
    back = ckpt.load(tmp_path / "c.bin")
    assert back.step == 7 and back.epoch == 3 and back.hyper == {"learning_rate": 1e-4}
    for (n, a), (_, b) in zip(params.tensors(), back.params.tensors()):
        assert np.array_equal(a, b), n
    r2 = np.random.default_rng()
    r2.bit_generator.state = back.rng_state
    assert r2.random() == rng.random()
    assert (tmp_path / "c.bin").read_bytes()[:8] == b"DSEGCKPT"


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOTACKPT" + bytes(20))
    with pytest.raises(ckpt.CheckpointError, match="not a checkpoint"):
        ckpt.load(p)
    params = ModelParameters.init(Widths.uniform(4))
    ckpt.save(ckpt.TrainState.fresh(params, np.random.default_rng(), {}), p)
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(ckpt.CheckpointError, match="truncated"):
        ckpt.load(p)


def test_empty_dataset():
    with pytest.raises(TrainingError, match="empty"):
        train([], Hyperparameters(epochs=1))


def test_non_finite_loss_reports_coordinates(one_sample):
    s = one_sample[0]
    x = s.graph.x.copy()
    x[0, 0] = np.nan
    bad = Sample(type(s.graph)(x, s.graph.small, s.graph.large, s.graph.small_t, s.graph.large_t), s.labels)
    with pytest.raises(TrainingError, match="epoch 1, batch 0"):
        train([bad], Hyperparameters(epochs=2), widths=Widths.uniform(4))


def test_continuous_needs_checkpoint(one_sample):
    with pytest.raises(TrainingError, match="checkpoint"):
        train(one_sample, init="checkpoint")


def test_adam_zero_gradient_is_noop():
    params = ModelParameters.init(Widths.uniform(4), seed=1)
    before = params.copy()
    opt = Adam(Hyperparameters())
    for _ in range(3):
        opt.step(params, {n: np.zeros_like(t) for n, t in params.tensors()})
    for (n, a), (_, b) in zip(params.tensors(), before.tensors()):
        assert np.array_equal(a, b), n


def test_adam_first_step_magnitude():
    params = ModelParameters.init(Widths.uniform(4), seed=1, dtype=np.float64)
    before = params.copy()
    opt = Adam(Hyperparameters(learning_rate=1e-3))
    g = {n: np.full_like(t, 0.5) for n, t in params.tensors()}
    opt.step(params, g)
    # bias-corrected first step moves every weight by lr * g / (|g| + eps)
    for (n, a), (_, b) in zip(params.tensors(), before.tensors()):
        np.testing.assert_allclose(b - a, 1e-3 * 0.5 / (0.5 + 1e-8), rtol=1e-9)


def test_weight_decay_pulls_toward_zero():
    params = ModelParameters.init(Widths.uniform(4), seed=1, dtype=np.float64)
    w0 = np.abs(params.W["enc1"]).sum()
    opt = Adam(Hyperparameters(learning_rate=1e-3, weight_decay=0.1))
    for _ in range(5):
        opt.step(params, {n: np.zeros_like(t) for n, t in params.tensors()})
    assert np.abs(params.W["enc1"]).sum() < w0


def test_log_columns(tmp_path, one_sample):
    _, log = train(one_sample, Hyperparameters(epochs=2), widths=Widths.uniform(4))
    log.to_csv(tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "epoch,loss,dsc,sen,ppv"
