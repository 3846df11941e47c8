import json
import math

import numpy as np
import pytest

from heatsmoothing import autodiff as ad
from heatsmoothing import data, nn


def test_init_deterministic():
    a, b = nn.init_mlp([2, 8, 2], seed=7), nn.init_mlp([2, 8, 2], seed=7)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p.data, q.data)


def test_init_biases_zero_and_glorot_bound():
    m = nn.init_mlp([5, 16, 7, 3], seed=0)
    for b in m.biases:
        assert np.all(b.data == 0)
    for w in m.weights:
        fan_in, fan_out = w.shape
        assert np.all(np.abs(w.data) <= math.sqrt(6.0 / (fan_in + fan_out)))


@pytest.mark.parametrize("sizes", [[], [3, 2], [2, 0, 2]])
def test_init_rejects_bad_layers(sizes):
    with pytest.raises(ValueError):
        nn.init_mlp(sizes)


def _zero(mode):
    m = nn.init_mlp([3, 4, 5], seed=0, output_mode=mode)
    for p in m.params:
        p.data[...] = 0.0
    return m


def test_zero_network_logits_and_probabilities():
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(nn.forward(_zero("logits"), x).data, np.zeros(5))
    np.testing.assert_allclose(nn.forward(_zero("probabilities"), x).data, np.full(5, 0.2))


def test_probabilities_sum_to_one(rng):
    m = nn.init_mlp([2, 16, 4], seed=3, output_mode="probabilities")
    P = m.predict(rng.standard_normal((50, 2)) * 10)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError, match="input dim"):
        nn.forward(nn.init_mlp([3, 4, 2]), np.zeros(2))


def test_numpy_and_graph_paths_agree(rng):
    m = nn.init_mlp([3, 10, 10, 4], "tanh", seed=5)
    X = rng.standard_normal((7, 3))
    np.testing.assert_allclose(m.logits(X).data, m.predict_logits(X), rtol=1e-14)


def test_eval_counter_counts_rows():
    m = nn.init_mlp([2, 4, 2])
    m.predict(np.zeros((6, 2)))
    m.logits(np.zeros(2))
    assert m.n_evals == 7


def test_serialization_round_trip_bit_exact(tmp_path):
    m = nn.init_mlp([2, 8, 3], "tanh", seed=11, output_mode="probabilities")
    m.provenance = "unit"
    path = tmp_path / "m.json"
    m.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"layer_sizes", "activation", "output_mode", "weights", "biases", "seed", "provenance"}
    back = nn.Mlp.load(path)
    for p, q in zip(m.params, back.params):
        np.testing.assert_array_equal(p.data, q.data)
    assert (back.activation, back.output_mode, back.seed, back.provenance) == ("tanh", "probabilities", 11, "unit")


def test_optim_config_validation():
    with pytest.raises(ValueError):
        nn.OptimConfig(learning_rate=0)
    with pytest.raises(ValueError):
        nn.OptimConfig(momentum=1.0)
    with pytest.raises(ValueError):
        nn.OptimConfig(schedule=[(5, 0.1), (3, 0.1)])
    with pytest.raises(ValueError):
        nn.OptimConfig(schedule=[(5, -1.0)])


def test_default_schedule_step_decay():
    cfg = nn.OptimConfig(learning_rate=1.0, epochs=100)
    assert [cfg.lr_at(e) for e in (0, 49, 50, 74, 75, 99)] == pytest.approx([1, 1, 0.1, 0.1, 0.01, 0.01])


def test_sgd_step_without_momentum_is_plain_gradient(rng):
    m = nn.init_mlp([2, 5, 3], seed=0)
    X, y = rng.standard_normal((8, 2)), rng.integers(0, 3, 8)
    loss = nn.cross_entropy(m.logits(X), y)
    g = ad.grad(loss, m.params)
    before = [p.data.copy() for p in m.params]
    nn.SGD(m.params, lr=0.3, momentum=0.0).step(g)
    for p, b in zip(m.params, before):
        np.testing.assert_allclose(p.data, b - 0.3 * g[p], rtol=0, atol=1e-15)


def test_sgd_heavy_ball_momentum():
    p = ad.Tensor([1.0], requires_grad=True)
    opt = nn.SGD([p], lr=0.1, momentum=0.9)
    opt.step({p: np.array([1.0])})
    opt.step({p: np.array([1.0])})
    # buffers 1 then 1.9
    assert p.data[0] == pytest.approx(1.0 - 0.1 - 0.19)


def test_gradient_clipping_caps_global_norm():
    p = ad.Tensor([0.0, 0.0], requires_grad=True)
    nn.SGD([p], lr=1.0, momentum=0.0, clip_norm=1.0).step({p: np.array([3.0, 4.0])})
    np.testing.assert_allclose(p.data, [-0.6, -0.8])


def test_full_batch_loss_nonincreasing_small_lr(rng):
    X = rng.standard_normal((40, 2))
    y = (X[:, 0] > 0).astype(int)
    m = nn.init_mlp([2, 16, 2], seed=1)
    opt = nn.SGD(m.params, lr=1e-3, momentum=0.0)
    losses = []
    for _ in range(10):
        loss = nn.cross_entropy(m.logits(X), y)
        losses.append(loss.item())
        opt.step(ad.grad(loss, m.params))
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_train_base_separable_blobs():
    ds = data.make_blobs(100, n_classes=2, dim=2, spread=0.2, seed=0)
    m = nn.train_base(ds.inputs, ds.labels, [2, 32, 2], nn.OptimConfig(epochs=200, seed=0))
    assert m.info["train_accuracy"] >= 0.99


def test_train_base_single_point_memorized():
    m = nn.train_base(np.array([[0.5, -0.5]]), np.array([1]), [2, 8, 2],
                      nn.OptimConfig(learning_rate=0.1, epochs=200, batch_size=1))
    assert m.info["final_loss"] < 1e-3
    assert m.classify(np.array([[0.5, -0.5]]))[0] == 1


def test_train_base_deterministic():
    ds = data.make_blobs(30, seed=2)
    cfg = nn.OptimConfig(epochs=5, seed=9)
    a = nn.train_base(ds.inputs, ds.labels, [2, 8, 3], cfg)
    b = nn.train_base(ds.inputs, ds.labels, [2, 8, 3], cfg)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p.data, q.data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_base_divergence_aborts():
    X = np.array([[1e150, 1e150], [-1e150, 1e150]])
    with pytest.raises(nn.TrainingDiverged, match="non-finite"):
        nn.train_base(X, np.array([0, 1]), [2, 4, 2], nn.OptimConfig(learning_rate=10.0, epochs=3))


def test_train_base_rejects_bad_labels():
    with pytest.raises(ValueError):
        nn.train_base(np.zeros((2, 2)), np.array([0, 5]), [2, 4, 2])
    with pytest.raises(ValueError):
        nn.train_base(np.zeros((0, 2)), np.zeros(0, dtype=int), [2, 4, 2])
