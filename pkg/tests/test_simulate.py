from __future__ import annotations

import math

import numpy as np
import pytest
import yaml
from scipy.stats import kendalltau, skew

from msdtest.cli import load_experiment
from msdtest.errors import ParameterError
from msdtest.simulate import (
    DistributionSpec,
    ExperimentSpec,
    resolve_workers,
    rotate_sample,
    rotation_matrix,
    run_experiment,
    sample,
)

I2 = [[1.0, 0.0], [0.0, 1.0]]


def draws(kind, n, seed=0, **params):
    return sample(DistributionSpec(kind, params), n, seed).observations


def null_experiment(reps, n=100, B=100, seed=0):
    law = {"kind": "multinormal", "mean": [0, 0], "cov": I2}
    return ExperimentSpec.from_dict(
        {"name": "null", "x": law, "y": law, "n1": n, "reps": reps, "orders": [1],
         "statistics": ["S"], "alphas": [0.1], "seed": seed, "test": {"B": B}}
    )


class TestSamplers:
    def test_multinormal_covariance(self):
        x = draws("multinormal", 100_000, mean=[0, 0], cov=I2)
        assert np.abs(np.cov(x.T) - np.eye(2)).max() <= 0.03

    def test_example2_variance(self):
        x = draws("example2", 1_000_000, t=2.9)
        t = 2.9
        exact = (t * t + 1) / 2 - (t - 1) ** 2 / (2 * math.pi)
        assert exact == pytest.approx(4.13, abs=0.01)
        assert x[:, 0].var() == pytest.approx(4.13, abs=0.05)

    def test_example2_degenerate(self):
        a = draws("example2", 500, seed=3, t=1.0)
        b = np.random.default_rng(3).standard_normal((500, 2))
        assert np.array_equal(a, b)

    def test_clayton_kendall(self):
        x = draws("clayton-normal", 100_000, means=[0, 0], sds=[1, 1], theta=2.0)
        assert kendalltau(x[:, 0], x[:, 1])[0] == pytest.approx(0.5, abs=0.02)

    def test_clayton_marginals(self):
        x = draws("clayton-normal", 100_000, means=[58, 50], sds=[10, 5], theta=2.0)
        assert x.mean(axis=0) == pytest.approx([58, 50], abs=0.15)
        assert x.std(axis=0) == pytest.approx([10, 5], rel=0.02)

    def test_skew_t_symmetric(self):
        x = draws("skew-t", 100_000, xi=[0, 0], Sigma=I2, alpha=[0, 0], nu=30.0, center=False)
        assert np.abs(skew(x, axis=0)).max() <= 0.05

    def test_skew_t_centered(self):
        x = draws("skew-t", 200_000, xi=[0, 0], Sigma=I2, alpha=[4, -2], nu=10.0)
        assert np.abs(x.mean(axis=0)).max() <= 0.02

    def test_skew_t_skewed(self):
        x = draws("skew-t", 50_000, xi=[0, 0], Sigma=I2, alpha=[5, 0], nu=30.0)
        assert skew(x[:, 0]) > 0.3

    def test_one_component_mixture(self):
        a = draws("gauss-mixture", 300, seed=9, weights=[1.0], means=[[1, 2]], covs=[[[2, 0.5], [0.5, 1]]])
        b = draws("multinormal", 300, seed=9, mean=[1, 2], cov=[[2, 0.5], [0.5, 1]])
        assert np.array_equal(a, b)

    def test_mixture_weights(self):
        x = draws("gauss-mixture", 50_000, weights=[0.25, 0.75], means=[[-10, 0], [10, 0]], covs=[I2, I2])
        assert (x[:, 0] < 0).mean() == pytest.approx(0.25, abs=0.01)

    def test_rotated_covariance(self):
        inner = DistributionSpec("multinormal", {"mean": [0, 0], "cov": [[4, 0], [0, 1]]})
        x = sample(DistributionSpec("rotated", {"inner": inner, "angle_deg": 90}), 100_000, 0).observations
        assert np.cov(x.T) == pytest.approx(np.diag([1.0, 4.0]), abs=0.06)

    def test_deterministic(self):
        a = draws("skew-t", 50, seed=4, alpha=[1, 1], nu=5.0)
        b = draws("skew-t", 50, seed=4, alpha=[1, 1], nu=5.0)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("kind,params", [
        ("multinormal", {"mean": [0, 0], "cov": [[1, 2], [2, 1]]}),
        ("multinormal", {"mean": [0, 0], "cov": [[1, 0.5], [0, 1]]}),
        ("gauss-mixture", {"weights": [0.5, 0.4], "means": [[0, 0], [1, 1]], "covs": [I2, I2]}),
        ("clayton-normal", {"means": [0, 0], "sds": [1, 1], "theta": 0.0}),
        ("skew-t", {"alpha": [0, 0], "nu": 1.0}),
    ])
    def test_invalid(self, kind, params):
        with pytest.raises(ParameterError):
            sample(DistributionSpec(kind, params), 10, 0)

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            DistributionSpec("cauchy")


class TestRotation:
    def test_quarter_turn(self):
        assert rotate_sample(np.array([[1.0, 0.0]]), rotation_matrix(90)) == pytest.approx(np.array([[0.0, 1.0]]), abs=1e-15)

    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(10, 2))
        assert np.array_equal(rotate_sample(x, np.eye(2)), x)

    def test_group(self):
        x = np.random.default_rng(1).normal(size=(10, 2))
        twice = rotate_sample(rotate_sample(x, rotation_matrix(90)), rotation_matrix(90))
        assert np.abs(twice - rotate_sample(x, rotation_matrix(180))).max() <= 1e-12

    @pytest.mark.parametrize("R", [[[1, 0], [0, -1]], [[2, 0], [0, 0.5]], [[1, 0, 0], [0, 1, 0]]])
    def test_rejects(self, R):
        with pytest.raises(ParameterError):
            rotate_sample(np.zeros((2, 2)), R)


class TestExperimentSpec:
    def test_placeholder_substitution(self):
        spec = DistributionSpec("multinormal", {"mean": [0, 0], "cov": [[4, 1], [1, "$beta"]]})
        assert spec.substitute({"beta": 3.0}).params["cov"] == [[4, 1], [1, 3.0]]

    def test_missing_placeholder(self):
        with pytest.raises(ParameterError):
            DistributionSpec("example2", {"t": "$t"}).substitute({})

    def test_full_overrides(self):
        data, _ = load_experiment("power")
        desk, full = ExperimentSpec.from_dict(data), ExperimentSpec.from_dict(data, full=True)
        assert (desk.n1, desk.reps, desk.config.B) == (400, 20, 200)
        assert (full.n1, full.reps, full.config.B) == (3000, 1000, 1000)

    @pytest.mark.parametrize("name", ["table1_desk", "mixture", "skewt", "example1", "example2", "power"])
    def test_bundled_configs_parse(self, name):
        data, _ = load_experiment(name)
        spec = ExperimentSpec.from_dict(data)
        assert spec.reps >= 1 and spec.points

    def test_unknown_key(self):
        data, _ = load_experiment("power")
        data = dict(data, colour="red")
        with pytest.raises(ParameterError):
            ExperimentSpec.from_dict(data)

    def test_unknown_test_key(self):
        data, _ = load_experiment("power")
        data = dict(data, test={"B": 10, "bogus": 1})
        with pytest.raises(ParameterError):
            ExperimentSpec.from_dict(data)

    def test_yaml_roundtrip(self):
        text = yaml.safe_dump({"name": "t", "x": {"kind": "example2", "t": 1.5},
                               "y": {"kind": "example2", "t": 1.0}, "n1": 20, "reps": 1})
        spec = ExperimentSpec.from_dict(yaml.safe_load(text))
        assert spec.x.params == {"t": 1.5}

    def test_workers_env(self, monkeypatch):
        monkeypatch.setenv("MSDTEST_WORKERS", "3")
        assert resolve_workers() == 3
        assert resolve_workers(2) == 2


class TestRunExperiment:
    def test_single_rep_entries(self):
        table = run_experiment(null_experiment(1, n=40, B=20))
        assert all(c.rate in (0.0, 1.0) for c in table.cells)

    def test_worker_independence(self):
        spec = null_experiment(3, n=40, B=20, seed=5)
        assert run_experiment(spec, workers=1).to_csv() == run_experiment(spec, workers=2).to_csv()

    def test_table_shape(self):
        data, _ = load_experiment("power")
        data = dict(data, n1=30, reps=1, test={"B": 10})
        table = run_experiment(ExperimentSpec.from_dict(data))
        assert len(table.cells) == 5 * 2 * 2 * 3
        lines = table.to_text().splitlines()
        assert len(lines) == 1 + 2 * 2 * 3
        assert len(lines[0].split()) == 3 + 5

    def test_null_rejection_rate(self):
        table = run_experiment(null_experiment(200))
        assert 0.05 <= table.rate(order=1, statistic="S") <= 0.16
