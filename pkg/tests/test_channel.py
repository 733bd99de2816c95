import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irsdeploy.channel import (BS_USER_LINK, FAR_IRS_LINK, INTER_IRS_LINK, NEARBY_IRS_LINK,
                               ArrayGeometry, FadingLaw, LinkModel, RngSeed, classify_link,
                               draw_channel, path_gain_db, steering_vector)
from irsdeploy.scenario import default_scenario

X, Y = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)
SINGLE = ArrayGeometry.single()


class TestPathGain:
    @pytest.mark.parametrize("d, alpha, expected", [
        (1.0, 2.2, -30.0), (1.0, 3.7, -30.0), (10.0, 2.2, -52.0), (100.0, 3.0, -90.0),
    ])
    def test_examples(self, d, alpha, expected):
        assert path_gain_db(d, alpha, -30.0) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("d", [0.0, -1.0])
    def test_domain(self, d):
        with pytest.raises(ValueError):
            path_gain_db(d, 2.0, -30.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1.01, 1e4), st.floats(1.01, 1e4), st.floats(0.5, 5.0), st.floats(0.5, 5.0))
    def test_monotone(self, d1, d2, a1, a2):
        if d1 < d2:
            assert path_gain_db(d1, a1, -30) > path_gain_db(d2, a1, -30)
        if a1 < a2:
            assert path_gain_db(d1, a1, -30) > path_gain_db(d1, a2, -30)


class TestSteering:
    def test_single_antenna(self):
        np.testing.assert_array_equal(steering_vector(SINGLE, (0.3, 0.4, np.sqrt(0.75))), [1])

    def test_broadside_is_flat(self):
        a = steering_vector(ArrayGeometry.ula(4, 0.5, X), Y)
        np.testing.assert_allclose(a, np.ones(4), atol=1e-15)

    def test_endfire_step_is_pi(self):
        a = steering_vector(ArrayGeometry.ula(2, 0.5, X), X)
        assert abs(np.angle(a[1] / a[0])) == pytest.approx(np.pi, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.floats(0, 2 * np.pi), st.floats(0, np.pi))
    def test_unit_modulus(self, rows, cols, az, el):
        direction = (np.sin(el) * np.cos(az), np.sin(el) * np.sin(az), np.cos(el))
        a = steering_vector(ArrayGeometry.facing((1, 1, 0), rows, cols), direction)
        assert a.shape == (rows * cols,)
        np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)

    def test_facing_lies_in_plane(self):
        geom = ArrayGeometry.facing((0.6, 0.8, 0.0), 3, 4)
        np.testing.assert_allclose(geom.offsets() @ np.array([0.6, 0.8, 0.0]), 0.0, atol=1e-12)
        assert geom.kind == "upa" and geom.n_elements == 12


def los_draw(model, seed=RngSeed(3, 0, "t")):
    tx = ArrayGeometry.ula(4, 0.5, Y)
    rx = ArrayGeometry.facing((-1, 0, 0), 2, 3)
    return draw_channel(model, tx, rx, 20.0, ((0.8, 0.6, 0), (-0.8, -0.6, 0)), seed)


class TestDraw:
    def test_los_rank_one(self):
        s = np.linalg.svd(los_draw(LinkModel.pure_los(2.2)), compute_uv=False)
        assert s[1] < 1e-12 * s[0]

    def test_shape_is_rx_by_tx(self):
        assert los_draw(LinkModel.rayleigh(3.0)).shape == (6, 4)

    def test_huge_k_is_los(self):
        los = los_draw(LinkModel.pure_los(2.2))
        ric = los_draw(LinkModel.rician(200.0, 2.2))
        assert np.linalg.norm(ric - los) <= 1e-6 * np.linalg.norm(los)

    def test_los_entry_power_is_path_gain(self):
        h = los_draw(LinkModel.pure_los(2.2))
        np.testing.assert_allclose(np.abs(h) ** 2, 10 ** (path_gain_db(20.0, 2.2, -30) / 10))

    def test_deterministic(self):
        a = los_draw(FAR_IRS_LINK, RngSeed(9, 4, "x"))
        b = los_draw(FAR_IRS_LINK, RngSeed(9, 4, "x"))
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, los_draw(FAR_IRS_LINK, RngSeed(9, 5, "x")))
        assert not np.array_equal(a, los_draw(FAR_IRS_LINK, RngSeed(9, 4, "y")))

    def test_rayleigh_mean_power(self):
        draws = np.array([draw_channel(BS_USER_LINK, SINGLE, SINGLE, 100.0, (X, X),
                                       RngSeed(11, t, "mean"))[0, 0] for t in range(100_000)])
        assert np.mean(np.abs(draws) ** 2) == pytest.approx(1e-9, rel=0.03)

    def test_rician_los_fraction(self):
        draws = np.array([draw_channel(FAR_IRS_LINK, SINGLE, SINGLE, 30.0, (X, X),
                                       RngSeed(12, t, "k"))[0, 0] for t in range(100_000)])
        k = 10 ** (5 / 10)
        fraction = abs(draws.mean()) ** 2 / np.mean(np.abs(draws) ** 2)
        assert fraction == pytest.approx(k / (k + 1), rel=0.02)

    def test_domain(self):
        with pytest.raises(ValueError):
            draw_channel(BS_USER_LINK, SINGLE, SINGLE, 0.0, (X, X), RngSeed(0))


class TestModels:
    def test_constants(self):
        assert NEARBY_IRS_LINK == LinkModel(FadingLaw.PURE_LOS, 2.2)
        assert FAR_IRS_LINK == LinkModel(FadingLaw.RICIAN, 2.5, 5.0)
        assert BS_USER_LINK == LinkModel(FadingLaw.RAYLEIGH, 3.0)

    @pytest.mark.parametrize("kwargs", [
        dict(law=FadingLaw.PURE_LOS, alpha=0.0),
        dict(law=FadingLaw.RICIAN, alpha=2.0),
        dict(law=FadingLaw.RAYLEIGH, alpha=2.0, k_factor_db=3.0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LinkModel(**kwargs)

    @pytest.mark.parametrize("a, b, expected", [
        ("bs", "user1", BS_USER_LINK),
        ("bs", "IRS1", NEARBY_IRS_LINK),
        ("user1", "IRS2", FAR_IRS_LINK),
        ("user2", "IRS2", NEARBY_IRS_LINK),
        ("IRS1", "IRS3", INTER_IRS_LINK),
    ])
    def test_classify(self, a, b, expected):
        sc = default_scenario()
        assert classify_link(sc, a, b) == expected
        assert classify_link(sc, b, a) == expected

    @pytest.mark.parametrize("a, b", [("bs", "user9"), ("bs", "nowhere"), ("bs", "bs"),
                                      ("user1", "user2")])
    def test_classify_errors(self, a, b):
        with pytest.raises((KeyError, ValueError)):
            classify_link(default_scenario(), a, b)

    def test_rng_seed_streams_independent_of_order(self):
        first = RngSeed(5, 2, "a").generator().standard_normal(3)
        RngSeed(5, 2, "b").generator().standard_normal(100)
        assert np.array_equal(first, RngSeed(5, 2, "a").generator().standard_normal(3))
        assert math.isfinite(first.sum())
