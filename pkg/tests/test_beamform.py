import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irsdeploy.association import (AllocationPlan, AssociationPlan, PartitionAssignment,
                                   build_association)
from irsdeploy.beamform import (CascadeGains, align_phases, combined_signal, optimize_many,
                                optimize_reflections, received_power_scaling)
from irsdeploy.channel import path_gain_db
from irsdeploy.composite import (dbm_to_mw, draw_channel_set, effective_channels, mrc_snr,
                                 user_rates)
from irsdeploy.scenario import (LinkToggles, OptimizerOptions, RadioConfig, Side,
                                default_scenario, toy_scenario)

from conftest import cn, random_channel_set

RADIO = RadioConfig()
TIGHT = OptimizerOptions(tol=1e-12, max_iters=500)
LEVELS = np.exp(2j * np.pi * np.arange(16) / 16)
# Worst-case power loss of a 16-level grid point against the continuous optimum
# when the path product carries two quantized phases.
GRID_SLACK = np.cos(np.pi / 16) ** 4


class TestAlign:
    def test_already_aligned(self):
        theta = align_phases(CascadeGains(np.array([0.5, 2.0, 1.0]), 3.0))
        np.testing.assert_allclose(theta, 0.0, atol=1e-15)

    def test_magnitude_sum(self):
        g = CascadeGains(np.array([1j, -1.0]), 0j)
        assert abs(combined_signal(g, align_phases(g))) == pytest.approx(2.0, rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_beats_16_level_grid(self, seed):
        rng = np.random.default_rng(seed)
        g = CascadeGains(cn(rng, 3), complex(cn(rng, 1)[0]))
        best = abs(combined_signal(g, align_phases(g)))
        grid = np.array(list(itertools.product(LEVELS, repeat=3)))
        brute = np.abs(g.reference + grid @ g.gains).max()
        assert best >= brute * (1 - 1e-12)
        assert best == pytest.approx(abs(g.reference) + np.abs(g.gains).sum(), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 2 * np.pi), st.integers(0, 2**31), st.booleans())
    def test_rotation_shifts_phases(self, psi, seed, with_reference):
        rng = np.random.default_rng(seed)
        a = cn(rng, 4)
        ref = complex(cn(rng, 1)[0]) if with_reference else 0j
        g0 = CascadeGains(a, ref)
        g1 = CascadeGains(a * np.exp(1j * psi), ref)
        t0, t1 = align_phases(g0), align_phases(g1)
        offset = np.exp(1j * (t1 - t0))
        np.testing.assert_allclose(offset, offset[0], atol=1e-9)
        np.testing.assert_allclose(offset[0], np.exp(-1j * psi), atol=1e-9)
        assert abs(combined_signal(g1, t1)) == pytest.approx(abs(combined_signal(g0, t0)),
                                                             rel=1e-12)


def single_user_plan(n_bs, n_subsurfaces=1, user_side=None):
    partitions = {0: PartitionAssignment(n_bs, (0,) * n_subsurfaces)} if n_bs else {}
    return AssociationPlan((), partitions, {} if user_side is None else {user_side: 0})


class TestOptimizer:
    def test_single_link_is_fully_coherent(self):
        toy = replace(toy_scenario(), links=LinkToggles(False, True, False))
        toy = toy.with_element_counts((16, 0))
        cs = draw_channel_set(toy, seed=0)
        rs, report = optimize_reflections(cs, single_user_plan(16), RADIO, TIGHT)
        h = effective_channels(cs, rs)[:, 0]
        coherent = np.sum(np.linalg.norm(cs.bs_irs[0], axis=0) * np.abs(cs.irs_user[0][:, 0]))
        assert np.vdot(h, h).real == pytest.approx(coherent ** 2, rel=1e-9)
        assert report.converged

    def test_zero_elements_is_direct_only(self):
        sc = default_scenario().with_element_counts((0, 0, 0))
        cs = draw_channel_set(sc, seed=5)
        plan = build_association(sc, AllocationPlan((0, 0, 0)), [cs])
        rs, report = optimize_reflections(cs, plan, sc.radio)
        assert all(c.size == 0 for c in rs.coefficients)
        h = effective_channels(cs, rs)
        for k in range(3):
            assert mrc_snr(h[:, k], sc.radio) == mrc_snr(cs.direct[:, k], sc.radio)
        assert report.converged and report.iterations == 0

    @pytest.mark.parametrize("source", ["toy"] + [f"gauss{s}" for s in range(4)])
    def test_double_reflection_matches_grid(self, source):
        if source == "toy":
            cs = draw_channel_set(toy_scenario().with_element_counts((2, 2)), seed=0)
        else:
            rng = np.random.default_rng(int(source[5:]))
            cs = random_channel_set(rng, m=2, n_users=1, sizes=(2, 2),
                                    paths=LinkToggles(False, False, True))
        rs, _ = optimize_reflections(cs, single_user_plan(2, user_side=1), RADIO, TIGHT)
        h = effective_channels(cs, rs)[:, 0]
        power = np.vdot(h, h).real
        g, s, r = cs.bs_irs[0], cs.irs_irs[(0, 1)], cs.irs_user[1][:, 0]
        grid = LEVELS[np.array(list(itertools.product(range(16), repeat=4)))]
        inner = (grid[:, 2:] * r) @ s.T
        brute = (np.abs((grid[:, :2] * inner) @ g.T) ** 2).sum(axis=1).max()
        assert power >= GRID_SLACK * brute
        assert power <= brute / GRID_SLACK

    @pytest.mark.parametrize("seed", range(100))
    def test_trajectory_monotone_and_unit_modulus(self, seed):
        rng = np.random.default_rng(1000 + seed)
        n_users = int(rng.integers(1, 4))
        cs = random_channel_set(rng, m=int(rng.integers(1, 5)), n_users=n_users,
                                sizes=(4, 3), scale=float(rng.uniform(0, 2)))
        plan = AssociationPlan(
            (), {0: PartitionAssignment(4, tuple(int(u) for u in rng.integers(0, n_users, 2)))},
            {1: int(rng.integers(0, n_users))})
        rs, report = optimize_reflections(cs, plan, RADIO)
        assert np.all(np.diff(report.trajectory) >= 0)
        for c in rs.coefficients:
            np.testing.assert_allclose(np.abs(c), 1.0, atol=1e-9)
        assert report.objective == pytest.approx(user_rates(effective_channels(cs, rs),
                                                            RADIO).min(), rel=1e-9)

    def test_batch_matches_single_runs(self, rng):
        sets = [random_channel_set(rng, n_users=3, sizes=(6, 2)) for _ in range(4)]
        plan = AssociationPlan((), {0: PartitionAssignment(6, (0, 1, 2))}, {1: 2})
        for cs, (rs, report) in zip(sets, optimize_many(sets, plan, RADIO)):
            rs1, report1 = optimize_reflections(cs, plan, RADIO)
            assert report.iterations == report1.iterations
            for a, b in zip(rs.coefficients, rs1.coefficients):
                np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_max_iters_reports_not_converged(self, rng):
        cs = random_channel_set(rng, n_users=2, sizes=(4, 4))
        plan = AssociationPlan((), {0: PartitionAssignment(4, (0, 1))}, {1: 0})
        rs, report = optimize_reflections(cs, plan, RADIO, OptimizerOptions(max_iters=1))
        assert report.iterations == 1 and not report.converged
        assert len(rs.coefficients) == 2

    def test_partition_size_mismatch(self, rng):
        cs = random_channel_set(rng)
        with pytest.raises(ValueError):
            optimize_reflections(cs, single_user_plan(8, 2), RADIO)

    def test_random_idle_phases_are_reproducible(self, rng):
        cs = random_channel_set(rng, n_users=2, sizes=(4, 4), sides=(Side.BS, Side.USER))
        plan = AssociationPlan((), {0: PartitionAssignment(4, (0, None))}, {})
        opts = OptimizerOptions(idle_phase="random", idle_seed=3)
        a, _ = optimize_reflections(cs, plan, RADIO, opts)
        b, _ = optimize_reflections(cs, plan, RADIO, opts)
        np.testing.assert_array_equal(a.coefficients[0], b.coefficients[0])
        assert not np.allclose(a.coefficients[0][2:], 1.0)


class TestScaling:
    @pytest.mark.parametrize("n", [64, 128, 256])
    def test_single_ratio(self, n):
        ratio = received_power_scaling(2 * n, "single") / received_power_scaling(n, "single")
        assert ratio == pytest.approx(4.0, rel=0.01)

    @pytest.mark.parametrize("n", [64, 128, 256])
    def test_double_ratio(self, n):
        ratio = received_power_scaling(2 * n, "double") / received_power_scaling(n, "double")
        assert ratio == pytest.approx(16.0, rel=0.02)

    def test_one_element_is_path_gain(self):
        toy = toy_scenario()
        bs, (a, _), user = toy.bs_position, toy.irs_list, toy.users[0]
        d1 = np.linalg.norm(np.subtract(a.position, bs))
        d2 = np.linalg.norm(np.subtract(user, a.position))
        gain = 10 ** ((path_gain_db(d1, 2.2, -30) + path_gain_db(d2, 2.2, -30)) / 10)
        expected = dbm_to_mw(toy.radio.tx_power_dbm) * toy.bs_antennas * gain
        assert received_power_scaling(1, "single") == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("n, kind", [(0, "single"), (3, "double"), (8, "triple")])
    def test_errors(self, n, kind):
        with pytest.raises(ValueError):
            received_power_scaling(n, kind)
