import numpy as np
import pytest

from conftest import TracingGraph
from temporal_eenn.exit_graph import (ExitGraph, Layer, build_desk_model, cumulative_cost,
                                      run_full, run_to_exit)
from temporal_eenn.stream_gen import StreamConfig, make_centroids
from temporal_eenn.tensor_ops import ShapeError


@pytest.fixture(scope="module")
def desk():
    cfg = StreamConfig(stream_length=10)
    cents = make_centroids(cfg)
    return build_desk_model(cents, seed=3), cents


def _frame(graph, seed=0):
    return np.random.default_rng(seed).standard_normal(graph.input_shape).astype(np.float32)


def test_resume_completeness(desk):
    g, _ = desk
    x = _frame(g)
    full = run_full(g, x)
    for k in range(g.n_exits):
        part = run_to_exit(g, x, k)
        assert part.macs == cumulative_cost(g, k)
        resumed = run_full(g, x, part)
        assert resumed.macs == full.macs == g.full_vote_cost
        for e in range(g.n_exits):
            np.testing.assert_array_equal(resumed.exit_outputs[e], full.exit_outputs[e])


def test_resume_never_recomputes_a_segment(desk):
    g, _ = desk
    tg = TracingGraph(g)
    x = _frame(g)
    run = tg.run_to_exit(x, 1)
    run = tg.run_full(x, run)
    seen = [w for w, _, _ in tg.trace]
    for k in range(g.n_exits):
        n_layers = len(g.segments[k])
        assert seen.count(f"segment{k}") == n_layers
        assert seen.count(f"head{k}") == len(g.heads[k])


def test_exit0_output_independent_of_path(desk):
    g, _ = desk
    x = _frame(g, 1)
    np.testing.assert_array_equal(run_to_exit(g, x, 0).exit_outputs[0], run_full(g, x).exit_outputs[0])


def test_full_run_deterministic_and_normalised(desk):
    g, _ = desk
    x = _frame(g, 2)
    a, b = run_full(g, x), run_full(g, x)
    for k in range(g.n_exits):
        assert a.exit_outputs[k].tobytes() == b.exit_outputs[k].tobytes()
        assert abs(float(a.exit_outputs[k].sum()) - 1.0) < 1e-6
        assert a.exit_outputs[k].shape == (g.class_count,)


def test_cost_ordering_mirrors_exit_table(desk):
    g, _ = desk
    costs = [cumulative_cost(g, k) for k in range(g.n_exits)]
    assert costs == sorted(costs) and len(set(costs)) == len(costs)
    assert costs[-1] < g.full_vote_cost


def test_errors(desk):
    g, _ = desk
    x = _frame(g)
    with pytest.raises(IndexError):
        run_to_exit(g, x, g.n_exits)
    with pytest.raises(IndexError):
        cumulative_cost(g, -1)
    with pytest.raises(ShapeError):
        run_full(g, np.ones((1, 2, 3, 4), np.float32))
    prior = run_to_exit(g, x, 0)
    with pytest.raises(ValueError, match="different frame"):
        run_to_exit(g, x.copy(), 1, prior)


def test_single_segment_graph():
    seg = [Layer("reorder"), Layer("conv", kernel=np.ones((1, 1, 2, 3), np.float32))]
    head = [Layer("pool", pool="avg"), Layer("flatten"),
            Layer("dense", kernel=np.ones((3, 2), np.float32)), Layer("softmax")]
    g = ExitGraph((1, 2, 2, 2), [seg], [head], 2)
    x = np.ones((1, 2, 2, 2), np.float32)
    assert cumulative_cost(g, 0) == run_full(g, x).macs == 2 * 3 * 4 + 3 + 6
    np.testing.assert_allclose(run_full(g, x).exit_outputs[0], [0.5, 0.5])


def test_graph_validation():
    seg = [Layer("reorder")]
    head = [Layer("flatten"), Layer("dense", kernel=np.ones((4, 3), np.float32)), Layer("softmax")]
    with pytest.raises(ShapeError):
        ExitGraph((1, 1, 2, 2), [seg], [head], 2)  # head emits 3 classes
    with pytest.raises(ShapeError):
        ExitGraph((1, 1, 2, 2), [seg, seg], [head], 3)
    with pytest.raises(ValueError):
        Layer("lstm")


def test_desk_model_centroids_classified_at_every_exit(desk):
    g, cents = desk
    for label, c in enumerate(cents):
        outs = run_full(g, c).exit_outputs
        for k in range(g.n_exits):
            assert int(np.argmax(outs[k])) == label


def test_desk_model_seed_determinism(desk):
    _, cents = desk
    a, b = build_desk_model(cents, seed=11), build_desk_model(cents, seed=11)
    c = build_desk_model(cents, seed=12)
    for la, lb in zip(sum(a.segments + a.heads, []), sum(b.segments + b.heads, [])):
        for name in ("kernel", "bias"):
            wa, wb = getattr(la, name), getattr(lb, name)
            assert (wa is None and wb is None) or wa.tobytes() == wb.tobytes()
    assert a.segments[0][1].kernel.tobytes() != c.segments[0][1].kernel.tobytes()


def test_desk_model_rejects_bad_centroids(desk):
    _, cents = desk
    with pytest.raises(ValueError):
        build_desk_model(cents[:1])
    with pytest.raises(ShapeError):
        build_desk_model([cents[0], cents[1][:4]])


def test_desk_model_depthwise_separable_structure(desk):
    g, _ = desk
    for seg in g.segments:
        kinds = [l.kind for l in seg]
        assert kinds[-2:] == ["depthwise", "conv"]
        assert seg[-1].kernel.shape[:2] == (1, 1)
