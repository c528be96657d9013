import numpy as np
import pytest

from pyraflow.memplan import Graph, Op, plan_graph, plan_peak_activation_memory, trace_graph
from pyraflow.model import build_model, count_params


def simulate_peak(graph: Graph) -> int:
    """Brute-force oracle: execute the graph, materializing every tensor and
    tracking the exact live set step by step."""
    future_uses = {}
    for i, op in enumerate(graph.ops):
        for t in op.inputs:
            future_uses.setdefault(t, []).append(i)
    keep = set(graph.outputs)
    alive = dict(graph.inputs)
    peak = sum(alive.values())
    for i, op in enumerate(graph.ops):
        alive[op.out] = op.out_bytes
        peak = max(peak, sum(alive.values()))
        for t in list(alive):
            remaining = [j for j in future_uses.get(t, []) if j > i]
            if not remaining and t not in keep:
                del alive[t]
    return peak


def test_single_op_peak_is_input_plus_output():
    g = Graph(inputs={"x": 100})
    g.add("op", "y", 40, "x")
    g.outputs = ["y"]
    assert plan_graph(g) == 140


def test_linear_chain_peak_is_max_consecutive_pair():
    sizes = [100, 30, 80, 10, 60]
    g = Graph(inputs={"t0": sizes[0]})
    prev = "t0"
    for i, size in enumerate(sizes[1:], start=1):
        prev = g.add(f"op{i}", f"t{i}", size, prev)
    g.outputs = [prev]
    expected = max(a + b for a, b in zip(sizes, sizes[1:]))
    assert plan_graph(g) == expected == simulate_peak(g)


def test_diamond_reuse():
    g = Graph(inputs={"x": 10})
    g.add("a", "l", 20, "x")
    g.add("b", "r", 30, "x")
    g.add("c", "y", 5, "l", "r")
    g.outputs = ["y"]
    # during op b: x (being consumed) + l + r live
    assert plan_graph(g) == 60 == simulate_peak(g)


def test_unused_tensor_freed_immediately():
    g = Graph(inputs={"x": 10})
    g.add("a", "dead", 1000, "x")
    g.add("b", "y", 5, "x")
    g.outputs = ["y"]
    assert plan_graph(g) == 1010 == simulate_peak(g)


def random_graph(rng) -> Graph:
    n_inputs = int(rng.integers(1, 3))
    g = Graph(inputs={f"in{i}": int(rng.integers(1, 500)) for i in range(n_inputs)})
    tensors = list(g.inputs)
    n_ops = int(rng.integers(1, 13))
    for i in range(n_ops):
        k = int(rng.integers(1, min(4, len(tensors) + 1)))
        ins = [tensors[j] for j in rng.choice(len(tensors), size=k, replace=False)]
        out = f"t{i}"
        g.add(f"op{i}", out, int(rng.integers(0, 700)), *ins)
        tensors.append(out)
    produced = [op.out for op in g.ops]
    n_out = int(rng.integers(1, min(4, len(produced) + 1)))
    g.outputs = [produced[j] for j in rng.choice(len(produced), size=n_out, replace=False)]
    return g


def test_planner_equals_simulation_on_200_random_dags():
    rng = np.random.default_rng(1234)
    for _ in range(200):
        g = random_graph(rng)
        assert plan_graph(g) == simulate_peak(g)


@pytest.mark.parametrize("variant", ["pwcnet_plus", "pwcnet_small", "compactflownet"])
def test_model_trace_matches_simulation(variant):
    g = trace_graph(build_model(variant), 128, 128)
    assert plan_graph(g) == simulate_peak(g)


@pytest.mark.parametrize("variant", ["pwcnet_plus", "pwcnet_small", "compactflownet"])
def test_peak_monotone_in_resolution(variant):
    m = build_model(variant)
    sizes = [(64, 64), (128, 128), (128, 256), (256, 256), (512, 512)]
    peaks = [plan_peak_activation_memory(m, *s).activation_peak_bytes for s in sizes]
    assert peaks == sorted(peaks)
    totals = [plan_peak_activation_memory(m, *s).total_bytes for s in sizes]
    assert totals == sorted(totals)


def test_plan_includes_weight_bytes():
    m = build_model("compactflownet")
    plan = plan_peak_activation_memory(m, 64, 64, bytes_per_element=4)
    assert plan.weight_bytes == 4 * count_params(m).total
    assert plan.total_bytes == plan.activation_peak_bytes + plan.weight_bytes


def test_bytes_per_element_scales_linearly():
    m = build_model("pwcnet_small")
    p4 = plan_peak_activation_memory(m, 128, 128, bytes_per_element=4)
    p2 = plan_peak_activation_memory(m, 128, 128, bytes_per_element=2)
    assert p4.activation_peak_bytes == 2 * p2.activation_peak_bytes


def test_memory_ordering_mirrors_model_weight_class():
    # lighter variants plan less memory at every benchmark resolution
    for res in ((512, 512), (448, 1024), (1088, 1920)):
        peaks = {v: plan_peak_activation_memory(build_model(v), *res).total_bytes
                 for v in ("pwcnet_plus", "pwcnet_small", "compactflownet")}
        assert peaks["compactflownet"] < peaks["pwcnet_small"] < peaks["pwcnet_plus"]
