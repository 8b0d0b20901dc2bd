from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msdtest.ballgrid import build_grid
from msdtest.errors import DimensionError, ParameterError
from msdtest.quantile import fit_quantile_map
from msdtest.transforms import (
    CoordinateMap,
    MixtureSpec,
    MonotoneMap,
    apply_map,
    mix_background,
    replaced_count,
    symmetrize,
)

FAMILIES = ("exp", "relu", "softplus", "logistic", "arctan")


def sorted_rows(a):
    return a[np.lexsort(a.T[::-1])]


class TestCoordinateMaps:
    def test_softplus_at_zero(self):
        assert CoordinateMap("softplus")(np.array([0.0]))[0] == pytest.approx(math.log(2), abs=1e-15)

    def test_relu_negative(self):
        assert CoordinateMap("shifted-relu")(np.array([-3.0]))[0] == 0.0

    def test_arctan_at_zero(self):
        assert CoordinateMap("arctangent")(np.array([0.0]))[0] == 1.0

    def test_exp_shift(self):
        assert CoordinateMap("exp", a=2, b=1)(np.array([0.5]))[0] == pytest.approx(math.e**2)

    def test_logistic_midpoint(self):
        assert CoordinateMap("logistic", b=0)(np.array([0.0]))[0] == 0.5

    def test_softplus_large_argument(self):
        assert CoordinateMap("softplus", a=2)(np.array([1000.0]))[0] == pytest.approx(1000.0)

    @pytest.mark.parametrize("kwargs", [{"family": "tanh"}, {"family": "exp", "a": 0.0}, {"family": "exp", "a": -1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            CoordinateMap(**kwargs)

    @pytest.mark.parametrize("family", ["exp", "softplus", "logistic", "arctan"])
    def test_strictly_increasing(self, family):
        t = np.linspace(-5, 5, 1001)
        assert np.all(np.diff(CoordinateMap(family, a=1.3, b=0.2)(t)) > 0)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_nonnegative(self, family):
        assert np.all(CoordinateMap(family)(np.linspace(-20, 20, 101)) >= 0)


class TestParse:
    def test_single(self):
        m = MonotoneMap.parse("softplus(a=1,b=0)")
        assert m.maps == (CoordinateMap("softplus", 1.0, 0.0),)

    def test_per_coordinate(self):
        m = MonotoneMap.parse("exp; relu(b=1)")
        assert [c.family for c in m.maps] == ["exp", "relu"]
        assert m.maps[1].b == 1.0

    @pytest.mark.parametrize("text", ["softplus(c=1)", "softplus(a=x)", "soft plus", "softplus(a)"])
    def test_bad(self, text):
        with pytest.raises(ParameterError):
            MonotoneMap.parse(text)


class TestApplyMap:
    def test_broadcast(self):
        out = apply_map(MonotoneMap.parse("softplus"), np.zeros((3, 2)))
        assert np.allclose(out, math.log(2))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            apply_map(MonotoneMap.parse("exp;exp;exp"), np.zeros((3, 2)))

    def test_degenerate_relu_warns(self):
        with pytest.warns(UserWarning, match="identically zero"):
            apply_map(MonotoneMap.parse("relu"), -np.ones((4, 2)))

    @given(
        arrays(np.float64, (15, 2), elements=st.floats(-8, 8)),
        st.sampled_from(["exp", "softplus", "logistic", "arctan"]),
        st.floats(0.1, 2.0),
    )
    def test_preserves_ranks(self, x, family, a):
        out = apply_map(MonotoneMap((CoordinateMap(family, a=a),)), x)
        for k in range(2):
            # Strict order is kept wherever the map still resolves it in floating point.
            i, j = np.triu_indices(len(x), 1)
            lt = x[i, k] < x[j, k]
            assert np.all(out[i, k][lt] <= out[j, k][lt])
            eq = x[i, k] == x[j, k]
            assert np.all(out[i, k][eq] == out[j, k][eq])


class TestSymmetrize:
    def test_one_dimensional(self):
        m = symmetrize(np.array([[2.0]]))
        assert sorted(m.points[:, 0]) == [-2.0, 2.0]
        assert np.all(m.weights == 0.5)

    def test_two_dimensional(self):
        m = symmetrize(np.array([[1.0, 3.0]]))
        assert sorted(map(tuple, m.points)) == [(-1, -3), (-1, 3), (1, -3), (1, 3)]
        assert np.all(m.weights == 0.25)

    def test_zero_mean(self):
        x = np.random.default_rng(0).exponential(size=(50, 3))
        m = symmetrize(x)
        assert np.all(np.abs(m.weights @ m.points) <= 1e-12)

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            symmetrize(np.array([[1.0, -0.1]]))

    def test_random_mode_above_cutoff(self):
        x = np.random.default_rng(0).exponential(size=(20, 5))
        a, b = symmetrize(x, seed=4), symmetrize(x, seed=4)
        assert a.points.shape == (20, 5)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(np.abs(a.points), x)

    @given(arrays(np.float64, (6, 2), elements=st.floats(0, 10)))
    def test_idempotent(self, x):
        once = symmetrize(x)
        twice = symmetrize(np.abs(once.points))
        # Each atom of the first pass reappears four times with a quarter of the mass.
        assert np.array_equal(sorted_rows(np.repeat(once.points, 4, axis=0)), sorted_rows(twice.points))

    @given(arrays(np.float64, (5, 2), elements=st.floats(0, 10)), st.sampled_from([(1, -1), (-1, 1), (-1, -1)]))
    def test_sign_flip_invariant(self, x, flip):
        m = symmetrize(x)
        assert np.array_equal(sorted_rows(m.points * np.array(flip)), sorted_rows(m.points))


class TestMixBackground:
    @pytest.fixture
    def x(self):
        return np.random.default_rng(0).normal(size=(1000, 2))

    def test_eta_zero_identity(self, x):
        out, idx = mix_background(x, MixtureSpec(0.0))
        assert np.array_equal(out, x)
        assert idx.size == 0

    def test_eta_one_replaces_all(self, x):
        out, idx = mix_background(x, MixtureSpec(1.0))
        assert np.array_equal(idx, np.arange(1000))
        assert not np.any(np.all(out == x, axis=1))

    def test_tenth(self, x):
        out, idx = mix_background(x, MixtureSpec(0.1), seed=2)
        assert len(idx) == 100
        keep = np.setdiff1d(np.arange(1000), idx)
        assert np.array_equal(out[keep], x[keep])

    def test_count_rounds_up(self):
        assert replaced_count(0.1, 1000) == 100
        assert replaced_count(0.001, 10) == 1

    def test_inside_inflated_box(self, x):
        out, idx = mix_background(x, MixtureSpec(0.5), seed=1)
        pad = 0.1 * (x.max(0) - x.min(0))
        assert np.all(out[idx] >= x.min(0) - pad) and np.all(out[idx] <= x.max(0) + pad)

    def test_custom_background(self, x):
        spec = MixtureSpec(0.2, background=lambda n, rng: np.full((n, 2), 7.0))
        out, idx = mix_background(x, spec)
        assert np.all(out[idx] == 7.0)

    def test_input_not_modified(self, x):
        before = x.copy()
        mix_background(x, MixtureSpec(0.3))
        assert np.array_equal(x, before)

    @pytest.mark.parametrize("eta", [-0.1, 1.5])
    def test_invalid_eta(self, eta):
        with pytest.raises(ParameterError):
            MixtureSpec(eta)

    def test_stability(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4000, 2))
        x = x[np.all(np.abs(x) <= 2.5, axis=1)][:400]
        grid = build_grid(2, 20, 20)
        base = fit_quantile_map(x, grid, 0.05).images
        dist = []
        for eta in (0.2, 0.05, 0.01):
            mixed, _ = mix_background(x, MixtureSpec(eta), seed=5)
            dist.append(np.linalg.norm(fit_quantile_map(mixed, grid, 0.05).images - base, axis=1).max())
        assert dist[1] <= dist[0] + 0.02
        assert dist[2] <= dist[1] + 0.02
