import math

import networkx as nx
import numpy as np
import pytest

from funcdp.basis import BoxDomain, analyze, build_basis
from funcdp.errors import ConvergenceError
from funcdp.optim import (
    LogisticAgents,
    LogisticObjective,
    PolynomialAgents,
    QuadraticAgents,
    StepSchedule,
    baseline_noise_scale,
    centralized_minimize,
    distributed_solve,
    impossibility_demo,
    logistic_eval,
    make_topology,
    message_perturbing_baseline,
    metropolis_weights,
)

X = BoxDomain.cube(5.0)


def logistic(n, seed, lam=0.01):
    rng = np.random.default_rng(seed)
    return LogisticObjective(rng.random((n, 2)), np.where(rng.random(n) < 0.5, -1.0, 1.0), lam)


def test_logistic_at_origin():
    obj = LogisticObjective(np.array([[0.2, 0.9]]), np.array([1.0]), 0.01)
    v, g, H = logistic_eval(obj, np.zeros(2))
    assert v == pytest.approx(math.log(2), rel=1e-15)


def test_logistic_derivatives_by_finite_differences():
    obj = logistic(50, 0)
    rng = np.random.default_rng(1)
    h = 1e-5
    for _ in range(5):
        x = rng.uniform(-4, 4, 2)
        fd = np.array([(obj.value(x + h * e) - obj.value(x - h * e)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(obj.gradient(x), fd, rtol=1e-6)
        fdH = np.array([(obj.gradient(x + h * e) - obj.gradient(x - h * e)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(obj.hessian(x), fdH, rtol=1e-6, atol=1e-9)


def test_logistic_hessian_lower_bound():
    obj = logistic(100, 2)
    for x in np.random.default_rng(3).uniform(-5, 5, (50, 2)):
        assert np.linalg.eigvalsh(obj.hessian(x)).min() >= 100 * 0.01 * (1 - 1e-12)


def test_logistic_rejects_bad_labels():
    with pytest.raises(ValueError):
        LogisticObjective(np.zeros((2, 2)), np.array([1.0, 0.0]), 0.01)


def test_centralized_on_quadratics():
    z = np.array([1.5, -2.0])
    x = centralized_minimize(lambda x: np.sum((x - z) ** 2), lambda x: 2 * (x - z), X, tol=1e-12)
    np.testing.assert_allclose(x, z, atol=1e-12)
    z = np.array([7.0, -1.0])
    x = centralized_minimize(lambda x: np.sum((x - z) ** 2), lambda x: 2 * (x - z), X, tol=1e-12)
    np.testing.assert_allclose(x, [5.0, -1.0], atol=1e-12)


def damped_newton(obj, tol=1e-12):
    x = np.zeros(2)
    for _ in range(100):
        g, H = obj.gradient(x), obj.hessian(x)
        dx = np.linalg.solve(H, -g)
        t = 1.0
        while obj.value(x + t * dx) > obj.value(x) + 0.25 * t * g @ dx:
            t /= 2
        x = x + t * dx
        if np.linalg.norm(g) < tol:
            break
    return x


def test_centralized_matches_newton_on_logistic():
    obj = logistic(1000, 4)
    ours = centralized_minimize(obj.value, obj.gradient, X, tol=1e-12)
    oracle = damped_newton(obj)
    assert np.all(np.abs(oracle) < 5)
    np.testing.assert_allclose(ours, oracle, atol=1e-8)


def test_centralized_iteration_cap():
    obj = logistic(50, 8)
    with pytest.raises(ConvergenceError):
        centralized_minimize(obj.value, obj.gradient, X, tol=0.0, max_iters=3)


def test_metropolis_examples():
    net = metropolis_weights(nx.complete_graph(5))
    np.testing.assert_allclose(net.weights, np.full((5, 5), 0.2), rtol=1e-15)
    np.testing.assert_allclose(metropolis_weights(nx.path_graph(2)).weights, 0.5)
    ring = make_topology("ring", 10).weights
    assert np.all(np.abs(ring.sum(axis=0) - 1) <= 1e-15) and np.all(np.abs(ring.sum(axis=1) - 1) <= 1e-15)
    assert np.array_equal(ring, ring.T)


@pytest.mark.parametrize("seed", range(5))
def test_metropolis_doubly_stochastic_random_graphs(seed):
    G = nx.connected_watts_strogatz_graph(12, 4, 0.3, seed=seed)
    W = metropolis_weights(nx.to_numpy_array(G)).weights
    assert np.all(W >= 0)
    assert np.max(np.abs(W.sum(axis=0) - 1)) <= 1e-12 and np.max(np.abs(W.sum(axis=1) - 1)) <= 1e-12


def test_disconnected_graph_rejected():
    G = nx.Graph()
    G.add_nodes_from(range(4))
    G.add_edge(0, 1)
    with pytest.raises(ValueError):
        metropolis_weights(G)
    with pytest.raises(ValueError):
        make_topology("hypercube", 4)


def test_single_agent_is_projected_gradient():
    obj = logistic(30, 5)
    agents = LogisticAgents([obj])
    steps = StepSchedule("harmonic", 0.1)
    rec = distributed_solve(agents, make_topology("complete", 1), X, steps, 50, x0=[[4.0, -4.0]])
    x = np.array([4.0, -4.0])
    for k in range(1, 51):
        x = X.project(x - steps(k) * obj.gradient(x))
    np.testing.assert_allclose(rec.final[0], x, rtol=1e-14)


def test_identical_agents_move_together():
    obj = logistic(30, 6)
    agents = LogisticAgents([obj] * 4)
    rec = distributed_solve(agents, make_topology("ring", 4), X, StepSchedule("harmonic", 0.2), 100, x0=np.tile([1.0, 2.0], (4, 1)))
    assert np.all(rec.states == rec.states[:, :1, :])


def test_ring_logistic_converges_to_centralized():
    objs = [logistic(100, 10 + i) for i in range(10)]
    agents = LogisticAgents(objs)
    x_star = centralized_minimize(agents.total_value, agents.total_gradient, X, tol=1e-12)
    rec = distributed_solve(agents, make_topology("ring", 10), X, StepSchedule("harmonic", 1.0), 100_000, record_every=0)
    assert np.linalg.norm(rec.consensus - x_star) < 1e-3


def test_noise_free_polynomial_agents_converge_monotonically():
    B = build_basis(X, 4)
    rng = np.random.default_rng(7)
    centers = rng.uniform(-2, 2, (5, 2))
    scales = rng.uniform(1.0, 3.0, 5)
    coeffs = np.array([analyze(B, lambda x, z=z, s=s: 0.5 * s * np.sum((x - z) ** 2, axis=1) + 0.01 * x[:, 0] ** 4)
                       for z, s in zip(centers, scales)])
    agents = PolynomialAgents(B, coeffs)
    x_star = centralized_minimize(agents.total_value, agents.total_gradient, X, tol=1e-13)
    rec = distributed_solve(agents, make_topology("ring", 5), X, StepSchedule("harmonic", 0.5), 100_000, record_every=1000)
    dev = np.max(np.linalg.norm(rec.states - x_star, axis=2), axis=1)
    assert dev[-1] < 1e-4
    tail = dev[len(dev) // 2:]
    assert np.all(np.diff(tail) <= 1e-12)


def test_trajectory_csv(tmp_path):
    agents = QuadraticAgents(np.array([[1.0, 0.0], [0.0, 1.0]]))
    rec = distributed_solve(agents, make_topology("path", 2), X, StepSchedule("harmonic", 0.5), 5)
    rec.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,agent,x1,x2" and len(lines) == 1 + 6 * 2


def test_baseline_noise_scale():
    steps = StepSchedule("geometric", 0.5, 0.1)
    assert baseline_noise_scale(2.0, steps, 0.2, 3.0) == pytest.approx(2 * 0.5 * 3.0 / (2.0 * 0.5))
    assert baseline_noise_scale(math.inf, steps, 0.2, 3.0) == 0.0
    with pytest.raises(ValueError):
        baseline_noise_scale(1.0, steps, 0.05, 3.0)
    with pytest.raises(ValueError):
        baseline_noise_scale(1.0, StepSchedule(), 0.5, 3.0)


def test_baseline_zero_noise_and_bias():
    objs = [logistic(100, 20 + i) for i in range(4)]
    agents = LogisticAgents(objs)
    net = make_topology("complete", 4)
    steps = StepSchedule("geometric", 0.5, 0.1)
    rec = message_perturbing_baseline(agents, net, X, steps, 0.0, 0.11, 100, seed=1)
    plain = distributed_solve(agents, net, X, steps, 100, record_every=0)
    np.testing.assert_array_equal(rec.final, plain.final)
    x_star = centralized_minimize(agents.total_value, agents.total_gradient, X, tol=1e-12)
    # summable steps stop short of the optimizer; harmonic steps over the same budget do not
    harmonic = distributed_solve(agents, net, X, StepSchedule("harmonic", 0.5), 100, record_every=0)
    bias = np.linalg.norm(plain.consensus - x_star)
    assert bias > 10 * np.linalg.norm(harmonic.consensus - x_star)


def test_baseline_reproducible():
    agents = LogisticAgents([logistic(20, 30 + i) for i in range(3)])
    net = make_topology("ring", 3)
    steps = StepSchedule("geometric", 0.5, 0.1)
    a = message_perturbing_baseline(agents, net, X, steps, 2.0, 0.11, 30, seed=9, record_every=1)
    b = message_perturbing_baseline(agents, net, X, steps, 2.0, 0.11, 30, seed=9, record_every=1)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.messages, b.messages)


CENTERS = np.random.default_rng(11).uniform(-1, 1, (6, 2))


def test_impossibility_identical_sets_symmetric():
    rep = impossibility_demo(CENTERS, CENTERS, runs=40, iters=400, tail=100)
    assert rep.freq_true == rep.freq_other


def test_impossibility_without_noise():
    other = CENTERS.copy()
    other[0, 0] += 6.0
    rep = impossibility_demo(CENTERS, other, runs=3, noise_c=0.0, iters=300, tail=50)
    assert rep.freq_true == 1.0 and rep.freq_other == 0.0


def test_impossibility_small_run():
    other = CENTERS.copy()
    other[0, 0] += 6.0  # optimizers one unit apart
    rep = impossibility_demo(CENTERS, other, runs=100, iters=500, tail=100, seed=3)
    assert np.linalg.norm(np.subtract(rep.optimizer_true, rep.optimizer_other)) == pytest.approx(1.0)
    assert rep.freq_true > 0 and rep.freq_other <= 3 / 1000
