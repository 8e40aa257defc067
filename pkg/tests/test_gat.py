"""Attention network: forward pass, loss, gradients, optimizer, training."""
from __future__ import annotations

import math

import numpy as np
import pytest

from tracelink.errors import CheckpointError, LossError, ModelError, TrainingError
from tracelink.gat import (
    AdamState,
    GatParams,
    LayerParams,
    attention_coefficients,
    bce_loss,
    classify_links,
    compute_gradients,
    gat_layer_forward,
    init_adam_state,
    init_params,
    link_probability,
    load_checkpoint,
    model_forward,
    optimizer_step,
    save_checkpoint,
    train,
)
from tracelink.graph import build_graph
from tracelink.preprocess import MappedEvent, TimeWindow
from tracelink.sampling import SamplingKind, SamplingStrategy


def graph_of(pairs, n_nodes):
    events = [MappedEvent(s, d, i) for i, (s, d) in enumerate(pairs)]
    return build_graph(TimeWindow(0, 0, 100, events), n_nodes)


def window_of(pairs, n_nodes=None, index=0):
    return TimeWindow(index, 0, 100, [MappedEvent(s, d, i) for i, (s, d) in enumerate(pairs)])


# ---------------------------------------------------------------------------
# dense oracles: slow, loopy recomputations of the attention formulas

def with_self_loops(src, dst, n):
    loops = np.arange(n, dtype=np.int64)
    return np.concatenate([src, loops]), np.concatenate([dst, loops])


def dense_attention(weights, atts, features, graph):
    """Per-position softmax coefficients, one destination at a time."""
    n = graph.n_nodes
    src, dst = with_self_loops(graph.edge_src, graph.edge_dst, n)
    coeffs = np.zeros((len(src), len(weights)))
    for k, (w, a) in enumerate(zip(weights, atts)):
        wh = features @ w
        raw = np.empty(len(src))
        for e, (s, d) in enumerate(zip(src, dst)):
            z = np.concatenate([wh[d], wh[s]]) @ a  # destination half first
            raw[e] = z if z >= 0 else 0.2 * z
        for i in range(n):
            mask = dst == i
            ex = np.exp(raw[mask] - raw[mask].max())
            coeffs[mask, k] = ex / ex.sum()
    return coeffs


def dense_layer(weights, atts, features, graph, concat=True):
    n = graph.n_nodes
    src, dst = with_self_loops(graph.edge_src, graph.edge_dst, n)
    coeffs = dense_attention(weights, atts, features, graph)
    outs = []
    for k, w in enumerate(weights):
        wh = features @ w
        out = np.zeros((n, w.shape[1]))
        for e, (s, d) in enumerate(zip(src, dst)):
            out[d] += coeffs[e, k] * wh[s]
        outs.append(out)
    return np.concatenate(outs, axis=1) if concat else outs[0]


def random_layer(rng, n, fan_in, hidden, heads):
    return LayerParams(
        [rng.normal(size=(fan_in, hidden)) for _ in range(heads)],
        [rng.normal(size=2 * hidden) for _ in range(heads)],
    )


def grads_like(params, value):
    return GatParams(
        LayerParams(
            [np.full_like(w, value) for w in params.layer1.weights],
            [np.full_like(a, value) for a in params.layer1.att],
        ),
        LayerParams(
            [np.full_like(params.layer2.weights[0], value)],
            [np.full_like(params.layer2.att[0], value)],
        ),
        params.dims,
    )


# ---------------------------------------------------------------------------
# initialization

def test_init_shapes():
    params = init_params(10, 8, 2, np.random.default_rng(0))
    assert [w.shape for w in params.layer1.weights] == [(10, 8), (10, 8)]
    assert [a.shape for a in params.layer1.att] == [(16,), (16,)]
    assert params.layer2.weights[0].shape == (16, 8)
    assert params.layer2.att[0].shape == (16,)
    assert params.dims == params.dims  # dataclass sanity


def test_init_minimal_shapes():
    params = init_params(3, 1, 1, np.random.default_rng(0))
    assert params.layer1.weights[0].shape == (3, 1)
    assert params.layer1.att[0].shape == (2,)


def test_init_deterministic_under_seed():
    a = init_params(6, 4, 2, np.random.default_rng(42))
    b = init_params(6, 4, 2, np.random.default_rng(42))
    for x, y in zip(a.layer1.weights + a.layer1.att, b.layer1.weights + b.layer1.att):
        assert np.array_equal(x, y)
    assert np.array_equal(a.layer2.weights[0], b.layer2.weights[0])


def test_init_respects_glorot_bounds():
    params = init_params(50, 16, 2, np.random.default_rng(1))
    limit1 = math.sqrt(6 / (50 + 16))
    assert all(np.abs(w).max() <= limit1 for w in params.layer1.weights)
    limit2 = math.sqrt(6 / (32 + 16))
    assert np.abs(params.layer2.weights[0]).max() <= limit2


def test_init_rejects_bad_dims():
    with pytest.raises(ModelError):
        init_params(0, 4, 2, np.random.default_rng(0))
    with pytest.raises(ModelError):
        init_params(5, 4, 0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# attention coefficients

def test_attention_self_loop_only_is_one():
    rng = np.random.default_rng(2)
    layer = random_layer(rng, 4, 3, 2, 2)
    record = attention_coefficients(layer, rng.normal(size=(4, 3)), graph_of([], 4))
    assert np.allclose(record.coeffs, 1.0)


def test_attention_identical_neighbors_split_evenly():
    layer = LayerParams([np.eye(3)], [np.arange(6, dtype=float)])
    features = np.tile([0.3, -0.7, 1.1], (3, 1))  # all nodes identical
    record = attention_coefficients(layer, features, graph_of([(1, 0), (2, 0)], 3))
    # destination 0 sees {1, 2, itself}, all indistinguishable
    dst0 = record.coeffs[record.edge_dst == 0, 0]
    assert len(dst0) == 3
    assert np.allclose(dst0, 1 / 3)


def test_attention_matches_dense_oracle():
    rng = np.random.default_rng(3)
    g = graph_of([(0, 1), (1, 2), (2, 3), (3, 0), (0, 1), (4, 1), (5, 5)], 6)
    layer = random_layer(rng, 6, 5, 3, 2)
    features = rng.normal(size=(6, 5))
    record = attention_coefficients(layer, features, g)
    oracle = dense_attention(layer.weights, layer.att, features, g)
    assert record.coeffs.shape == oracle.shape == (7 + 6, 2)
    assert np.allclose(record.coeffs, oracle, atol=1e-12)


def test_attention_rows_sum_to_one_per_destination():
    rng = np.random.default_rng(4)
    g = graph_of([(0, 1), (2, 1), (2, 1), (3, 0), (1, 4)], 5)
    layer = random_layer(rng, 5, 4, 3, 2)
    record = attention_coefficients(layer, rng.normal(size=(5, 4)), g)
    for i in range(5):
        sums = record.coeffs[record.edge_dst == i].sum(axis=0)
        assert np.allclose(sums, 1.0, atol=1e-6)


def test_attention_rejects_mismatched_features():
    layer = LayerParams([np.eye(3)], [np.zeros(6)])
    with pytest.raises(ModelError):
        attention_coefficients(layer, np.zeros((4, 7)), graph_of([], 4))


# ---------------------------------------------------------------------------
# layer forward

def test_layer_identity_on_isolated_nodes():
    features = np.array([[1.0, -2.0], [0.5, 0.25], [3.0, 0.0]])
    layer = LayerParams([np.eye(2)], [np.zeros(4)])
    out = gat_layer_forward(layer, features, graph_of([], 3), concat_heads=False)
    assert np.allclose(out, features)


def test_layer_concat_dimension():
    rng = np.random.default_rng(5)
    layer = random_layer(rng, 6, 6, 4, 2)
    out = gat_layer_forward(layer, np.eye(6), graph_of([(0, 1)], 6))
    assert out.shape == (6, 8)


def test_layer_matches_dense_oracle():
    rng = np.random.default_rng(6)
    g = graph_of([(0, 1), (1, 2), (2, 0), (3, 1), (0, 1)], 5)
    layer = random_layer(rng, 5, 4, 3, 2)
    features = rng.normal(size=(5, 4))
    out = gat_layer_forward(layer, features, g)
    oracle = dense_layer(layer.weights, layer.att, features, g)
    assert np.allclose(out, oracle, atol=1e-10)


def test_layer_multihead_requires_concat():
    rng = np.random.default_rng(7)
    layer = random_layer(rng, 4, 4, 2, 2)
    with pytest.raises(ModelError):
        gat_layer_forward(layer, np.eye(4), graph_of([], 4), concat_heads=False)


# ---------------------------------------------------------------------------
# full model forward

def test_forward_zero_weights_give_zero_embeddings():
    params = init_params(4, 3, 2, np.random.default_rng(0))
    for arr in params.layer1.weights + params.layer1.att:
        arr[:] = 0.0
    params.layer2.weights[0][:] = 0.0
    params.layer2.att[0][:] = 0.0
    emb, _ = model_forward(params, graph_of([(0, 1), (1, 2)], 4))
    assert np.array_equal(emb, np.zeros((4, 3)))


def test_forward_shape_and_record():
    params = init_params(5, 8, 2, np.random.default_rng(1))
    g = graph_of([(0, 1), (1, 2), (2, 3)], 5)
    emb, record = model_forward(params, g)
    assert emb.shape == (5, 8)
    assert record.coeffs.shape == (3 + 5, 2)
    assert params.last_attention is record
    assert np.isfinite(emb).all()


def test_forward_rejects_wrong_node_count():
    params = init_params(5, 4, 2, np.random.default_rng(2))
    with pytest.raises(ModelError):
        model_forward(params, graph_of([(0, 1)], 6))


def test_forward_permutation_equivariance():
    rng = np.random.default_rng(8)
    n = 7
    params = init_params(n, 3, 2, rng)
    pairs = [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (0, 1)]
    emb, _ = model_forward(params, graph_of(pairs, n))

    perm = np.array([3, 5, 0, 6, 1, 2, 4])  # old id -> new id
    permuted = init_params(n, 3, 2, np.random.default_rng(8))
    for w_new, w_old in zip(permuted.layer1.weights, params.layer1.weights):
        w_new[perm] = w_old  # identity features select rows, so rows move
    emb_p, _ = model_forward(permuted, graph_of([(perm[s], perm[d]) for s, d in pairs], n))
    assert np.array_equal(emb_p[perm], emb)


# ---------------------------------------------------------------------------
# link scoring

def test_link_probability_half_for_zero_or_orthogonal():
    emb = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    assert link_probability(emb, 0, 1) == 0.5
    assert link_probability(emb, 1, 2) == 0.5


def test_link_probability_sigma_ln3():
    h = math.sqrt(math.log(3) / 2)
    emb = np.array([[h, h], [h, h]])
    assert abs(link_probability(emb, 0, 1) - 0.75) < 1e-12


def test_link_probability_vectorized_matches_scalar():
    rng = np.random.default_rng(9)
    emb = rng.normal(size=(6, 4))
    src = np.array([0, 2, 5])
    dst = np.array([1, 3, 4])
    vec = link_probability(emb, src, dst)
    assert vec.shape == (3,)
    for i in range(3):
        assert vec[i] == link_probability(emb, int(src[i]), int(dst[i]))


def test_link_probability_stable_at_extremes():
    # moderate magnitudes stay strictly inside (0, 1)
    emb = np.array([[30.0], [1.0], [-1.0]])
    assert 0.0 < link_probability(emb, 0, 2) < 0.5 < link_probability(emb, 0, 1) < 1.0
    # huge magnitudes saturate cleanly instead of overflowing
    big = np.array([[1e3], [1e3], [-1e3]])
    assert link_probability(big, 0, 1) == 1.0
    assert link_probability(big, 0, 2) == 0.0


# ---------------------------------------------------------------------------
# loss and classification

def test_bce_perfect_prediction_near_zero():
    loss = bce_loss(np.array([1.0 - 1e-7]), np.array([1e-7]))
    assert loss < 1e-6


def test_bce_coin_flip_is_ln2():
    loss = bce_loss(np.full(3, 0.5), np.full(5, 0.5))
    assert abs(loss - math.log(2)) < 1e-12


def test_bce_hand_computed_example():
    loss = bce_loss(np.array([0.9]), np.array([0.4]))
    assert abs(loss - (-(math.log(0.9) + math.log(0.6)) / 2)) < 1e-12
    assert abs(loss - 0.308) < 1e-3


def test_bce_clamps_exact_zero_and_one():
    loss = bce_loss(np.array([0.0]), np.array([1.0]))
    assert np.isfinite(loss)
    assert loss == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_bce_requires_some_pairs():
    with pytest.raises(LossError):
        bce_loss(np.array([]), np.array([]))
    assert bce_loss(np.array([0.5]), np.array([])) == pytest.approx(math.log(2))


def test_classify_links_strict_threshold():
    probs = np.array([0.5, 0.51, 0.8])
    assert classify_links(probs, tau=0.5).tolist() == [0, 1, 1]
    assert classify_links(probs, tau=0.9).tolist() == [0, 0, 0]


# ---------------------------------------------------------------------------
# gradients

def test_gradients_dead_parameter_rows_are_zero():
    # node 3 touches no edge and no scored pair; with identity features its
    # layer-1 weight rows influence nothing but its own (unused) embedding
    params = init_params(4, 3, 2, np.random.default_rng(10))
    g = graph_of([(0, 1), (1, 2)], 4)
    pos = np.array([[0, 1], [1, 2]])
    neg = np.array([[2, 0]])
    grads, loss = compute_gradients(params, g, pos, neg)
    assert loss > 0
    for gw in grads.layer1.weights:
        assert np.array_equal(gw[3], np.zeros(3))
        assert np.abs(gw[:3]).sum() > 0  # live rows do move


def test_gradients_invariant_under_duplication():
    params = init_params(5, 4, 2, np.random.default_rng(11))
    g = graph_of([(0, 1), (1, 2), (2, 3)], 5)
    pos = np.array([[0, 1], [1, 2]])
    neg = np.array([[3, 0]])
    g1, l1 = compute_gradients(params, g, pos, neg)
    g2, l2 = compute_gradients(params, g, np.tile(pos, (2, 1)), np.tile(neg, (2, 1)))
    assert l1 == pytest.approx(l2, abs=1e-12)
    for a, b in zip(
        g1.layer1.weights + g1.layer1.att + g1.layer2.weights + g1.layer2.att,
        g2.layer1.weights + g2.layer1.att + g2.layer2.weights + g2.layer2.att,
    ):
        assert np.allclose(a, b, atol=1e-12)


def test_gradients_loss_agrees_with_plain_forward():
    params = init_params(6, 4, 2, np.random.default_rng(12))
    g = graph_of([(0, 1), (1, 2), (3, 4), (4, 5)], 6)
    pos = np.stack([g.edge_src, g.edge_dst], axis=1)
    neg = np.array([[5, 0], [2, 4]])
    _, loss = compute_gradients(params, g, pos, neg)
    emb, _ = model_forward(params, g)
    expected = bce_loss(
        link_probability(emb, pos[:, 0], pos[:, 1]),
        link_probability(emb, neg[:, 0], neg[:, 1]),
    )
    assert loss == pytest.approx(expected, abs=1e-12)


def test_gradients_match_finite_differences_spot_check():
    params = init_params(5, 3, 2, np.random.default_rng(13))
    g = graph_of([(0, 1), (1, 2), (2, 3), (3, 4)], 5)
    pos = np.stack([g.edge_src, g.edge_dst], axis=1)
    neg = np.array([[4, 1], [0, 3]])
    grads, _ = compute_gradients(params, g, pos, neg)

    def loss_at():
        emb, _ = model_forward(params, g)
        return bce_loss(
            link_probability(emb, pos[:, 0], pos[:, 1]),
            link_probability(emb, neg[:, 0], neg[:, 1]),
        )

    h = 1e-5
    checks = [
        (params.layer1.weights[0], grads.layer1.weights[0], (1, 2)),
        (params.layer1.att[1], grads.layer1.att[1], (4,)),
        (params.layer2.weights[0], grads.layer2.weights[0], (2, 1)),
        (params.layer2.att[0], grads.layer2.att[0], (3,)),
    ]
    for arr, grad, idx in checks:
        orig = arr[idx]
        arr[idx] = orig + h
        up = loss_at()
        arr[idx] = orig - h
        down = loss_at()
        arr[idx] = orig
        fd = (up - down) / (2 * h)
        assert abs(fd - grad[idx]) / max(1.0, abs(grad[idx])) < 1e-4


def test_saturated_pairs_keep_a_corrective_gradient():
    # Blow the weights up until every pair score saturates its sigmoid to an
    # exact float 0.0 or 1.0.  A mis-scored pair must still produce a strong
    # gradient through the logit-form loss; if saturation silenced it, a pair
    # that flips to the wrong side during training could never recover.
    params = init_params(6, 4, 2, np.random.default_rng(7))
    for layer in (params.layer1, params.layer2):
        layer.weights = [w * 50.0 for w in layer.weights]
    g = graph_of([(0, 1), (1, 2), (3, 4), (4, 5)], 6)
    pos = np.stack([g.edge_src, g.edge_dst], axis=1)
    neg = np.array([[5, 0], [2, 4]])

    emb, _ = model_forward(params, g)
    probs = np.concatenate([
        link_probability(emb, pos[:, 0], pos[:, 1]),
        link_probability(emb, neg[:, 0], neg[:, 1]),
    ])
    assert np.all((probs == 0.0) | (probs == 1.0))  # genuinely saturated
    assert probs[len(pos)] == 1.0  # and at least one negative is dead wrong

    grads, loss = compute_gradients(params, g, pos, neg)
    assert np.isfinite(loss) and loss > 1.0
    total = sum(
        float(np.abs(a).sum())
        for a in grads.layer1.weights + grads.layer1.att
        + grads.layer2.weights + grads.layer2.att
    )
    assert np.isfinite(total) and total > 1.0


def test_gradients_need_at_least_one_pair():
    params = init_params(3, 2, 2, np.random.default_rng(14))
    g = graph_of([(0, 1)], 3)
    with pytest.raises(LossError):
        compute_gradients(params, g, np.empty((0, 2)), np.empty((0, 2)))


# ---------------------------------------------------------------------------
# optimizer

def test_adam_zero_gradient_keeps_fresh_params():
    params = init_params(3, 2, 1, np.random.default_rng(15))
    before = [w.copy() for w in params.layer1.weights]
    optimizer_step(params, grads_like(params, 0.0), init_adam_state(params), lr=0.5)
    for w, b in zip(params.layer1.weights, before):
        assert np.array_equal(w, b)


def test_adam_first_step_is_signed_learning_rate():
    # with m_hat = g and v_hat = g*g, the first update is lr * g/(|g|+eps)
    params = init_params(3, 2, 1, np.random.default_rng(16))
    before = params.layer1.weights[0].copy()
    optimizer_step(params, grads_like(params, 0.5), init_adam_state(params), lr=0.01)
    delta = params.layer1.weights[0] - before
    assert np.allclose(delta, -0.01, atol=1e-8)


def test_adam_descends_against_gradient_sign():
    params = init_params(3, 2, 1, np.random.default_rng(17))
    before = params.layer2.weights[0].copy()
    optimizer_step(params, grads_like(params, -2.0), init_adam_state(params), lr=0.01)
    assert np.all(params.layer2.weights[0] > before)


def test_adam_ten_steps_bit_identical():
    runs = []
    for _ in range(2):
        params = init_params(4, 3, 2, np.random.default_rng(18))
        state = init_adam_state(params)
        g = graph_of([(0, 1), (1, 2), (2, 3)], 4)
        pos = np.stack([g.edge_src, g.edge_dst], axis=1)
        for _ in range(10):
            grads, _ = compute_gradients(params, g, pos, np.array([[3, 0]]))
            optimizer_step(params, grads, state, lr=0.01)
        runs.append(params)
    for a, b in zip(
        runs[0].layer1.weights + runs[0].layer1.att + runs[0].layer2.weights,
        runs[1].layer1.weights + runs[1].layer1.att + runs[1].layer2.weights,
    ):
        assert np.array_equal(a, b)


def test_adam_state_defaults():
    state = init_adam_state(init_params(2, 2, 1, np.random.default_rng(0)))
    assert isinstance(state, AdamState)
    assert (state.beta1, state.beta2, state.eps) == (0.9, 0.999, 1e-8)
    assert state.step == 0


# ---------------------------------------------------------------------------
# training loop

def test_train_single_edge_single_epoch():
    params = init_params(2, 2, 2, np.random.default_rng(19))
    window = window_of([(0, 1)], index=0)
    artifacts = train(
        params,
        [window],
        SamplingStrategy(SamplingKind.NONE),
        epochs=1,
        seed=0,
        snapshot_epochs=(0,),
    )
    assert len(artifacts.loss_history) == 1
    entry = artifacts.loss_history[0]
    assert (entry.epoch, entry.window_index) == (0, 0)
    assert entry.loss >= 0 and np.isfinite(entry.loss)
    assert set(artifacts.attention_snapshots) == {0}


def test_train_skips_empty_windows():
    params = init_params(3, 2, 2, np.random.default_rng(20))
    windows = [window_of([], index=0), window_of([(0, 1), (1, 2)], index=1)]
    artifacts = train(params, windows, SamplingStrategy(SamplingKind.SIMPLE), epochs=2, seed=1)
    assert [e.window_index for e in artifacts.loss_history] == [1, 1]
    assert [e.epoch for e in artifacts.loss_history] == [0, 1]


def test_train_rejects_all_empty():
    params = init_params(3, 2, 2, np.random.default_rng(21))
    with pytest.raises(TrainingError):
        train(params, [window_of([])], SamplingStrategy(SamplingKind.NONE), epochs=1)


def test_train_rejects_nonpositive_epochs():
    params = init_params(3, 2, 2, np.random.default_rng(22))
    with pytest.raises(TrainingError):
        train(params, [window_of([(0, 1)])], SamplingStrategy(SamplingKind.NONE), epochs=0)


def test_train_learns_a_tiny_pattern():
    # 4 nodes, same two calls every window: loss should drop markedly
    params = init_params(4, 4, 2, np.random.default_rng(23))
    windows = [window_of([(0, 1), (2, 3)], index=i) for i in range(3)]
    artifacts = train(params, windows, SamplingStrategy(SamplingKind.SIMPLE),
                      epochs=60, seed=3)
    first = np.mean([e.loss for e in artifacts.loss_history[:3]])
    last = np.mean([e.loss for e in artifacts.loss_history[-3:]])
    assert last < first / 2


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_round_trip(tmp_path):
    params = init_params(6, 4, 2, np.random.default_rng(24))
    path = tmp_path / "model.bin"
    save_checkpoint(params, path, mapping_sha256="abc123")
    loaded, digest = load_checkpoint(path)
    assert digest == "abc123"
    assert loaded.dims == params.dims
    for a, b in zip(
        loaded.layer1.weights + loaded.layer1.att + loaded.layer2.weights + loaded.layer2.att,
        params.layer1.weights + params.layer1.att + params.layer2.weights + params.layer2.att,
    ):
        assert np.array_equal(a, b)


def test_checkpoint_bytes_are_reproducible(tmp_path):
    params = init_params(4, 3, 2, np.random.default_rng(25))
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(params, p1, "x")
    save_checkpoint(params, p2, "x")
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"\x00\x01\x02 not a header\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    params = init_params(4, 3, 2, np.random.default_rng(26))
    path = tmp_path / "model.bin"
    save_checkpoint(params, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 16])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.bin")
