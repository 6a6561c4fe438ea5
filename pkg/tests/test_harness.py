import math

import numpy as np
import pytest

from funcdp.basis import analyze, build_basis
from funcdp.errors import ConfigError
from funcdp.harness import (
    CSV_HEADER,
    ExperimentConfig,
    SweepResult,
    baseline_sweep,
    bounds_curve,
    generate_dataset,
    privatize,
    run_pipeline,
    sweep,
)
from funcdp.optim import PolynomialAgents, centralized_minimize
from funcdp.privacy import NoiseSchedule
from funcdp.regularity import check_membership

SMALL = dict(n_agents=3, samples_per_agent=40, repetitions=2, degrees=[4], epsilons=[0.1, 10.0, 1000.0])


def test_dataset_is_deterministic():
    a = generate_dataset(3, 10, 5)
    b = generate_dataset(3, 10, 5)
    for (x1, y1), (x2, y2) in zip(a, b):
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    assert not np.array_equal(generate_dataset(3, 10, 6)[0][0], a[0][0])


def test_dataset_statistics():
    data = generate_dataset(1000, 100, 0)
    a = np.concatenate([d[0] for d in data])
    b = np.concatenate([d[1] for d in data])
    assert np.all(np.abs(a.mean(axis=0) - 0.5) < 0.005)
    assert abs(np.mean(b == 1) - 0.5) < 0.01
    assert set(np.unique(b)) == {-1.0, 1.0}


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(**SMALL)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert ExperimentConfig.load(path) == cfg


@pytest.mark.parametrize(
    "data",
    [
        {"schema_version": 1, "bogus": 1},
        {"n_agents": 3},
        {"schema_version": 2},
        {"schema_version": 1, "p": 0.7},
        {"schema_version": 1, "degrees": [20]},
        {"schema_version": 1, "epsilons": [-1.0]},
        {"schema_version": 1, "topology": "torus"},
        {"schema_version": 1, "repetitions": 0},
        {"schema_version": 1, "lam": "abc"},
        {"schema_version": 1, "solver": "magic"},
        [1, 2],
    ],
)
def test_bad_configs(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


@pytest.fixture(scope="module")
def small_cfg():
    return ExperimentConfig(**SMALL)


def test_pipeline_deterministic(small_cfg):
    a = run_pipeline(small_cfg, 1.0, 4, 0)
    b = run_pipeline(small_cfg, 1.0, 4, 0)
    assert a[2] == b[2] and np.array_equal(a[0], b[0])


def test_noise_free_floor_decreases_with_degree(small_cfg):
    e14 = run_pipeline(small_cfg, math.inf, 14, 0)[2]
    e6 = run_pipeline(small_cfg, math.inf, 6, 0)[2]
    assert e14 < e6
    assert e14 < 0.01


def test_small_sweep_structure(small_cfg, tmp_path):
    res = sweep(small_cfg)
    assert len(res.rows) == 6
    b = [res.bounds(4)[e] for e in small_cfg.epsilons]
    assert b[0] > b[1] > b[2]
    assert all(r.error >= 0 and r.error <= r.bound for r in res.rows)
    text = res.to_csv()
    assert text.splitlines()[1] == ",".join(CSV_HEADER)
    path = tmp_path / "s.csv"
    res.write(path)
    again = SweepResult.read_csv(path)
    assert [(r.epsilon, r.degree, r.rep, r.error, r.bound) for r in again.sorted_rows()] == [
        (r.epsilon, r.degree, r.rep, r.error, r.bound) for r in res.sorted_rows()
    ]


def test_sweep_csv_reproducible(small_cfg):
    cfg = ExperimentConfig(**{**SMALL, "epsilons": [3.0]})
    body = lambda r: "\n".join(r.to_csv(timestamp=False).splitlines())
    strip_runtime = lambda text: [ln.rsplit(",", 1)[0] for ln in text.splitlines()]
    a, b = sweep(cfg), sweep(cfg)
    assert strip_runtime(body(a)) == strip_runtime(body(b))


def test_bounds_curve(small_cfg):
    res = bounds_curve(small_cfg)
    assert len(res.rows) == 3 and all(math.isnan(r.error) for r in res.rows)


def test_baseline_sweep_rows():
    cfg = ExperimentConfig(**{**SMALL, "baseline_runs": 3, "epsilons": [1.0, 100.0]})
    res = baseline_sweep(cfg)
    assert len(res.rows) == 6
    assert all(r.degree == 0 and math.isnan(r.bound) and r.error >= 0 for r in res.rows)


def test_exact_recovery_without_noise(basis14, logistic_class):
    """Objectives that already lie in the class pass through unchanged when gamma = 0."""
    B = build_basis(basis14.domain, 4)
    rng = np.random.default_rng(0)
    funcs = []
    for _ in range(5):
        z, s, w = rng.uniform(-3, 3, 2), rng.uniform(2, 10), rng.uniform(0, 0.05)
        funcs.append(analyze(B, lambda x, z=z, s=s, w=w: 0.5 * s * np.sum((x - z) ** 2, axis=1) + w * x[:, 0] ** 4))
    coeffs = np.array(funcs)
    for c in coeffs:
        assert check_membership(B, c, logistic_class).passed
    projected = privatize(B, coeffs, NoiseSchedule(0.0, 0.55), 4, logistic_class, seeds=range(5))
    agents = PolynomialAgents(B, projected)
    truth = PolynomialAgents(B, coeffs)
    D = B.domain
    x_tilde = centralized_minimize(agents.total_value, agents.total_gradient, D, tol=1e-12)
    x_star = centralized_minimize(truth.total_value, truth.total_gradient, D, tol=1e-12)
    assert np.linalg.norm(x_tilde - x_star) < 1e-5


def test_distributed_solver_option():
    cfg = ExperimentConfig(**{**SMALL, "solver": "distributed", "iterations": 20_000, "step_c": 1.0})
    central = ExperimentConfig(**SMALL)
    xd = run_pipeline(cfg, 1000.0, 4, 0)[0]
    xc = run_pipeline(central, 1000.0, 4, 0)[0]
    assert np.linalg.norm(xd - xc) < 1e-2
