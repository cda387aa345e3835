import numpy as np
import pytest

from temporal_eenn.bench import make_benchmark, run_sweeps
from temporal_eenn.exit_graph import ExitGraph, Layer, build_desk_model
from temporal_eenn.stream_gen import StreamConfig, generate_stream

ACCEPTANCE_LINES = []


class TracingGraph(ExitGraph):
    """ExitGraph that logs the MACs of every layer it executes."""

    def __init__(self, graph: ExitGraph):
        super().__init__(graph.input_shape, graph.segments, graph.heads, graph.class_count)
        self.trace = []

    def _run_layers(self, layers, x, where):
        total = 0
        for layer in layers:
            x, macs = layer.apply(x)
            self.trace.append((where, layer.kind, macs))
            total += macs
        return x, total

    def drain(self):
        macs = sum(m for _, _, m in self.trace)
        self.trace.clear()
        return macs


class StubGraph(ExitGraph):
    """Tiny graph whose head outputs come from a script keyed by frame value.

    Frames are 1x1x1x1 arrays holding a step index. Segment ``k`` is a 1x1
    conv with ``k + 1`` output channels so each has a distinct, known cost.
    """

    def __init__(self, script, n_classes=3):
        self.script = [[np.asarray(o, dtype=np.float32) for o in step] for step in script]
        n_exits = len(self.script[0])
        segments, heads = [], []
        cin = 1
        for k in range(n_exits):
            cout = k + 1
            seg = [Layer("reorder")] if k == 0 else []
            seg.append(Layer("conv", kernel=np.ones((1, 1, cin, cout), np.float32)))
            segments.append(seg)
            heads.append([Layer("flatten"),
                          Layer("dense", kernel=np.ones((cout, n_classes), np.float32)),
                          Layer("softmax")])
            cin = cout
        super().__init__((1, 1, 1, 1), segments, heads, n_classes)

    def _compute_head(self, run, k):
        out, macs = super()._compute_head(run, k)
        return self.script[int(run.frame.reshape(-1)[0])][k], macs

    def frames(self):
        return [np.full((1, 1, 1, 1), i, dtype=np.float32) for i in range(len(self.script))]


@pytest.fixture(scope="session")
def small_config():
    return StreamConfig(stream_length=1000, seed=7)


@pytest.fixture(scope="session")
def small_setup(small_config):
    samples, centroids = generate_stream(small_config)
    graph = build_desk_model(centroids, seed=small_config.seed)
    return samples, centroids, graph


@pytest.fixture(scope="session")
def standard_bench():
    return make_benchmark(StreamConfig())


@pytest.fixture(scope="session")
def standard_tables(standard_bench):
    return {t.kind: t for t in run_sweeps(standard_bench)}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
