import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dsgan.fields import GridField, NormalizationStats
from dsgan.nets import ModelConfig, build_generator
from dsgan.sampling import (
    EnsembleStats,
    ensemble_stats,
    hypothesis_test,
    iter_posterior,
    posterior_stats,
    pseudo_p_value,
    residual_l2,
    sample_center,
    sample_posterior,
)


@pytest.fixture(scope="module")
def gen():
    cfg = ModelConfig(in_channels=2, lr_size=8, max_scale=4, base_width=16, min_width=8, z_channels=2)
    return build_generator(cfg, seed=13)


@pytest.fixture(scope="module")
def y_field():
    rng = np.random.default_rng(3)
    return GridField(rng.standard_normal((2, 8, 8)), ("u", "v"), "2014-01-01T00:00:00")


def constant_field(value, shape=(1, 4, 4)):
    return GridField(np.full(shape, float(value)), tuple(f"c{i}" for i in range(shape[0])))


class TestSampleCenter:
    def test_bit_identical_calls(self, gen, y_field):
        a = sample_center(gen, y_field)
        b = sample_center(gen, y_field)
        assert a.equals(b)

    def test_output_side(self, gen, y_field):
        out = sample_center(gen, y_field)
        assert out.height == 8 * 4 and out.width == 8 * 4
        assert out.channel_names == y_field.channel_names
        assert out.timestamp == y_field.timestamp

    def test_incomplete_stage_rejected(self, y_field):
        cfg = ModelConfig(in_channels=2, lr_size=8, max_scale=4, base_width=16, min_width=8)
        partial = build_generator(cfg, seed=0, stages=1)
        with pytest.raises(ValueError, match="stage"):
            sample_center(partial, y_field)

    def test_wrong_input_size(self, gen):
        bad = GridField(np.zeros((2, 16, 16)), ("u", "v"))
        with pytest.raises(ValueError, match="8x8"):
            sample_center(gen, bad)

    def test_denormalization_applied(self, gen, y_field):
        stats = NormalizationStats(np.array([10.0, -5.0]), np.array([2.0, 3.0]), ("u", "v"))
        raw = sample_center(gen, stats.apply(y_field))
        physical = sample_center(gen, y_field, stats)
        np.testing.assert_allclose(
            physical.values,
            raw.values * stats.std[:, None, None] + stats.mean[:, None, None],
            rtol=1e-6,
        )


class TestSamplePosterior:
    def test_reproducible_lists(self, gen, y_field):
        a = sample_posterior(gen, y_field, 3, seed=5)
        b = sample_posterior(gen, y_field, 3, seed=5)
        for fa, fb in zip(a, b):
            assert fa.equals(fb)

    def test_realization_depends_only_on_seed_and_index(self, gen, y_field):
        long = sample_posterior(gen, y_field, 5, seed=9)
        short = sample_posterior(gen, y_field, 3, seed=9)
        for fs, fl in zip(short, long):
            assert fs.equals(fl)

    def test_realizations_differ(self, gen, y_field):
        a, b = sample_posterior(gen, y_field, 2, seed=1)
        assert np.abs(a.values - b.values).max() > 1e-6

    def test_seeds_differ(self, gen, y_field):
        a = sample_posterior(gen, y_field, 1, seed=1)[0]
        b = sample_posterior(gen, y_field, 1, seed=2)[0]
        assert not a.equals(b)

    def test_n_validation(self, gen, y_field):
        with pytest.raises(ValueError, match="n must"):
            list(iter_posterior(gen, y_field, 0, seed=0))


class TestEnsembleStats:
    def test_identical_realizations_zero_std(self):
        f = constant_field(2.5)
        stats = ensemble_stats([f, f, f])
        assert (stats.std_map.values == 0).all()
        np.testing.assert_array_equal(stats.mean_map.values, f.values)

    def test_two_constants_hand_values(self):
        stats = ensemble_stats([constant_field(1.0), constant_field(3.0)])
        assert (stats.mean_map.values == 2.0).all()
        np.testing.assert_allclose(stats.std_map.values, 1.0)
        assert stats.n == 2

    def test_linearity_of_means(self):
        rng = np.random.default_rng(0)
        fields = [GridField(rng.standard_normal((2, 4, 4)), ("a", "b")) for _ in range(5)]
        stats = ensemble_stats(fields)
        concat = np.stack([f.values for f in fields])
        np.testing.assert_allclose(stats.mean_map.values.mean(), concat.mean(), atol=1e-12)

    def test_too_few(self):
        with pytest.raises(ValueError, match="at least 2"):
            ensemble_stats([constant_field(1.0)])

    def test_streaming_matches_model_stats(self, gen, y_field):
        direct = ensemble_stats(sample_posterior(gen, y_field, 6, seed=2), seed=2)
        streamed = posterior_stats(gen, y_field, 6, seed=2)
        assert direct.mean_map.equals(streamed.mean_map)
        assert direct.std_map.equals(streamed.std_map)

    def test_deterministic_given_inputs(self, gen, y_field):
        a = posterior_stats(gen, y_field, 4, seed=7)
        b = posterior_stats(gen, y_field, 4, seed=7)
        assert a.mean_map.equals(b.mean_map)
        assert a.std_map.equals(b.std_map)


class TestPseudoP:
    def test_center_gives_exactly_one(self, gen, y_field):
        center = sample_center(gen, y_field)
        result = hypothesis_test(gen, y_field, center, n=19, seed=4)
        assert result.pseudo_p == 1.0
        assert result.d_test == 0.0

    def test_replayed_realization_matches_ensemble_entry(self, gen, y_field):
        realization = sample_posterior(gen, y_field, 5, seed=6)[2]
        result = hypothesis_test(gen, y_field, realization, n=5, seed=6)
        assert result.d_test in result.ensemble_d.tolist()

    def test_white_noise_rejected(self, gen, y_field):
        rng = np.random.default_rng(8)
        noise = GridField(rng.standard_normal((2, 32, 32)) * 50.0, ("u", "v"))
        result = hypothesis_test(gen, y_field, noise, n=99, seed=3)
        assert result.pseudo_p == pytest.approx(1.0 / 100)

    def test_monotone_in_d_test(self):
        d = np.array([0.1, 0.5, 0.9, 1.3])
        ps = [pseudo_p_value(d, t) for t in (0.0, 0.2, 0.6, 1.0, 2.0)]
        assert ps == sorted(ps, reverse=True)

    @settings(max_examples=50, deadline=None)
    @given(
        d=st.lists(st.floats(0, 100), min_size=1, max_size=50),
        t=st.floats(0, 120),
    )
    def test_bounds_property(self, d, t):
        arr = np.asarray(d)
        p = pseudo_p_value(arr, t)
        n = arr.shape[0]
        assert 1 / (n + 1) <= p <= 1.0

    def test_shape_mismatch(self, gen, y_field):
        bad = GridField(np.zeros((2, 16, 16)), ("u", "v"))
        with pytest.raises(ValueError, match="candidate"):
            hypothesis_test(gen, y_field, bad, n=3, seed=0)

    def test_unknown_statistic(self, gen, y_field):
        center = sample_center(gen, y_field)
        with pytest.raises(ValueError, match="statistic"):
            hypothesis_test(gen, y_field, center, n=3, seed=0, statistic="nope")

    def test_swd_statistic_runs(self, gen, y_field):
        center = sample_center(gen, y_field)
        result = hypothesis_test(gen, y_field, center, n=3, seed=0, statistic="swd")
        assert result.pseudo_p == 1.0


class TestResidualL2:
    def test_hand_value(self):
        a = constant_field(1.0)
        b = constant_field(3.0)
        assert residual_l2(a, b) == pytest.approx(2.0)

    def test_zero_on_identical(self):
        a = constant_field(4.0)
        assert residual_l2(a, a) == 0.0
