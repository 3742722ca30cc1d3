import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plasmo import attribution
from plasmo.attribution import DESIGN_GROUPS, FeatureGroups, global_importance, shapley_exact
from plasmo.errors import GroupingError, InvalidArgumentError
from plasmo.surrogate import Surrogate, build_mlp

finite = st.floats(-5, 5, allow_nan=False)


def linear(w, c=0.0):
    w = np.asarray(w, dtype=float)
    return lambda x: x @ w + c


def permutation_shapley(f, instance, background, groups):
    """Average marginal contribution over every ordering of the groups (independent of coalition weights)."""
    k = len(groups.indices)

    def v(members):
        x = background.copy()
        for g in members:
            cols = list(groups.indices[g])
            x[:, cols] = instance[cols]
        return f(x).mean()

    phi = np.zeros(k)
    orders = list(itertools.permutations(range(k)))
    for order in orders:
        seen = []
        for g in order:
            phi[g] += v(seen + [g]) - v(seen)
            seen.append(g)
    return phi / len(orders)


def rng_data(seed, n_bg=20):
    rng = np.random.default_rng(seed)
    return rng.normal(size=4), rng.normal(size=(n_bg, 4))


class TestGroups:
    def test_design_groups_partition(self):
        DESIGN_GROUPS.validate(4)

    @pytest.mark.parametrize(
        "indices",
        [((0,), (1,), (2,)), ((0,), (1, 2), (2, 3)), ((0,), (1,), (2, 3, 4)), ((0, 1), (), (2, 3))],
    )
    def test_not_a_partition(self, indices):
        with pytest.raises(GroupingError):
            shapley_exact(linear([1, 1, 1, 1]), np.zeros(4), np.zeros((2, 4)), FeatureGroups(("a", "b", "c"), indices))


class TestShapley:
    def test_constant_model(self):
        x, bg = rng_data(0)
        e = shapley_exact(lambda z: np.full(len(z), 3.5), x, bg)
        assert e.base_value == 3.5
        assert np.all(e.phi == 0.0)

    def test_linear_closed_form(self):
        x, bg = rng_data(1)
        w = np.array([0.7, -1.3, 2.0, 0.4])
        e = shapley_exact(linear(w, 0.25), x, bg)
        d = w * (x - bg.mean(axis=0))
        assert np.allclose(e.phi, [d[0], d[1], d[2] + d[3]], atol=1e-12)

    def test_matches_permutation_average(self):
        x, bg = rng_data(2)
        f = lambda z: np.sin(z[:, 0]) * z[:, 1] + z[:, 2] * z[:, 3] ** 2 + np.tanh(z[:, 0] + z[:, 2])  # noqa: E731
        e = shapley_exact(f, x, bg)
        assert np.allclose(e.phi, permutation_shapley(f, x, bg, DESIGN_GROUPS), atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, 4, elements=finite), arrays(float, (5, 4), elements=finite))
    def test_efficiency(self, x, bg):
        f = lambda z: z[:, 0] * z[:, 1] - np.cos(z[:, 2]) + z[:, 3] ** 3 / 10  # noqa: E731
        e = shapley_exact(f, x, bg)
        assert e.base_value + e.phi.sum() == pytest.approx(f(x[None])[0], abs=1e-10)

    def test_dummy(self):
        x, bg = rng_data(3)
        e = shapley_exact(lambda z: z[:, 0] ** 2 + np.exp(z[:, 2] - z[:, 3]), x, bg)
        assert abs(e.phi[1]) < 1e-10

    def test_symmetry(self):
        x, bg = rng_data(4)
        x[1] = x[0]
        bg[:, 1] = bg[:, 0]
        e = shapley_exact(lambda z: z[:, 0] * z[:, 1] + z[:, 0] + z[:, 1] + z[:, 2], x, bg)
        assert e.phi[0] == pytest.approx(e.phi[1], abs=1e-10)

    def test_linearity(self):
        x, bg = rng_data(5)
        f, g = linear([1.0, 2.0, -1.0, 0.5]), linear([-0.3, 0.1, 4.0, 2.0], 1.0)
        both = shapley_exact(lambda z: f(z) + g(z), x, bg).phi
        assert np.allclose(both, shapley_exact(f, x, bg).phi + shapley_exact(g, x, bg).phi, atol=1e-10)

    def test_empty_background(self):
        with pytest.raises(InvalidArgumentError):
            shapley_exact(linear([1, 1, 1, 1]), np.zeros(4), np.zeros((0, 4)))

    def test_trained_style_mlp_efficiency(self):
        rng = np.random.default_rng(6)
        model = Surrogate("mlp", build_mlp(seed=2))
        f = attribution.model_output(model, 0)
        bg = rng.normal(size=(30, 4))
        for x in rng.normal(size=(100, 4)):
            e = shapley_exact(f, x, bg)
            assert abs(e.base_value + e.phi.sum() - f(x[None])[0]) < 1e-10


class TestBackground:
    def test_cap(self):
        x = np.arange(1000 * 4, dtype=float).reshape(1000, 4)
        bg = attribution.background_sample(x, seed=3)
        assert bg.shape == (256, 4)
        assert len({tuple(r) for r in bg}) == 256
        assert np.array_equal(bg, attribution.background_sample(x, seed=3))

    def test_small_set_unchanged(self):
        x = np.ones((10, 4))
        assert attribution.background_sample(x).shape == (10, 4)


class TestGlobalImportance:
    def test_ignored_group_ranks_last(self):
        rng = np.random.default_rng(7)
        imp = global_importance(linear([1.0, 3.0, 0.0, 0.0]), rng.normal(size=(20, 4)), rng.normal(size=(15, 4)))
        assert imp.ranking == ("wavelength", "thickness", "material")
        assert imp.mean_abs[2] < 1e-10

    def test_duplicated_instances_same_ranking(self):
        rng = np.random.default_rng(8)
        f = lambda z: z[:, 0] ** 2 + 0.5 * z[:, 1] - z[:, 2]  # noqa: E731
        inst, bg = rng.normal(size=(12, 4)), rng.normal(size=(10, 4))
        a = global_importance(f, inst, bg)
        b = global_importance(f, np.vstack([inst, inst]), bg)
        assert a.ranking == b.ranking
        assert np.allclose(a.mean_abs, b.mean_abs, atol=1e-12)

    def test_needs_ten_instances(self):
        with pytest.raises(InvalidArgumentError):
            global_importance(linear([1, 1, 1, 1]), np.zeros((9, 4)), np.zeros((3, 4)))

    def test_csv_outputs(self, tmp_path):
        rng = np.random.default_rng(9)
        imp = global_importance(linear([1.0, 3.0, 0.5, 0.0]), rng.normal(size=(10, 4)), rng.normal(size=(5, 4)))
        attribution.write_outputs(imp, tmp_path)
        lines = (tmp_path / "explanations.csv").read_text().splitlines()
        assert lines[0] == "instance_id,base_value,phi_thickness,phi_wavelength,phi_material,prediction"
        assert len(lines) == 11
        summary = attribution.read_summary_csv(tmp_path / "summary.csv")
        assert [g for g, _ in summary] == list(imp.ranking)
