import json
import math

import numpy as np
import pytest
from scipy import stats

from rcmlab.heavy_tails import ModelParams, SubordinatorPath, sample_subordinator
from rcmlab.limit_sim import (
    build_speed_measure_traps,
    build_speed_measure_walls,
    gap_at_atom,
    limit_observables,
    sample_trap_measure,
    simulate_quasi_diffusion,
    start_atom_from,
    theta_bar_from_samples,
    theta_bar_limit,
    theta_bar_samples,
)

from oracles import atomic_measure as measure, grid_exit_oracle

RWT = ModelParams(alpha0=0.8, alpha_inf=0.5, p=0.5, mode="RWT")


def one_jump(u, w, K=1.0, tilt_sign=-1, epsilon=1e-200):
    # the compensation drift is sqrt(epsilon) at alpha = 1/2
    return SubordinatorPath(0.5, K, epsilon, np.array([u]), np.array([w]), tilt_sign)


def test_holding_mean_example():
    hold, pleft = measure([-1, 0, 3], [1, 2, 1]).holding_means()
    assert hold[1] == pytest.approx(3.0)
    assert pleft[1] == pytest.approx(0.75)
    _, pleft = measure([-1, 0, 1], [1, 1, 1]).holding_means()
    assert pleft[1] == 0.5
    # reflecting ends jump inwards
    assert pleft[0] == 0.0 and pleft[2] == 1.0


def test_measure_validation():
    with pytest.raises(ValueError):
        measure([0.0, 0.0], [1, 1])
    with pytest.raises(ValueError):
        measure([0.0, 1.0], [1, 0])
    with pytest.raises(ValueError):
        measure([], [])


def test_walls_measure_masses():
    sub = sample_subordinator(0.8, 2.0, 1e-5, np.random.default_rng(1))
    m = build_speed_measure_walls(sub, 0.0, 2.0, 0.01, 0.4)
    assert m.total_mass() == pytest.approx(0.4 * 4.0, rel=1e-12)
    assert np.allclose(m.mass, m.mass[::-1])
    assert np.allclose(m.mass[1:-1], 0.4 * 0.01)
    assert np.all(np.diff(m.x) > 0)
    tilted = build_speed_measure_walls(sub, 0.5, 2.0, 0.01, 0.4)
    assert tilted.total_mass() == pytest.approx(0.4 * (math.exp(2) - math.exp(-2)), rel=1e-12)
    with pytest.raises(ValueError):
        build_speed_measure_walls(sub, 0.0, 3.0, 0.01, 0.4)
    with pytest.raises(ValueError):
        build_speed_measure_walls(sub, 0.0, 2.0, 0.16, 0.4)
    for g in (0.01, 0.02, 0.05, 0.25):
        assert build_speed_measure_walls(sub, 0.0, 2.0, g, 0.4).index_of_preimage(0.0) == round(2.0 / g)


def test_walls_measure_resolves_big_jumps():
    sub = sample_subordinator(0.8, 1.0, 1e-5, np.random.default_rng(2))
    m = build_speed_measure_walls(sub, 0.0, 1.0, 0.01, 0.4, jump_floor=0.05)
    big = np.flatnonzero(sub.jumps > 0.05)
    big = big[np.abs(sub.locations[big]) < 1.0]
    assert big.size > 0
    for j in big:
        u = sub.locations[j]
        lo = np.flatnonzero((m.v == u) & (m.side == -1))
        hi = np.flatnonzero((m.v == u) & (m.side == 1))
        assert lo.size == hi.size == 1
        assert m.x[hi[0]] - m.x[lo[0]] == pytest.approx(sub.jumps[j], rel=1e-9)


def test_traps_measure_single_jump():
    s0 = sample_subordinator(0.8, 1.0, 1e-5, np.random.default_rng(3))
    m = build_speed_measure_traps(s0, one_jump(0.3, 2.0, tilt_sign=1), 0.0, 1.0, 1e-4)
    assert m.size == 1 and m.mass[0] == 2.0 and m.v[0] == 0.3
    assert m.x[0] == pytest.approx(s0.value(0.3))
    m = build_speed_measure_traps(s0, one_jump(0.3, 2.0, tilt_sign=1), 0.25, 1.0, 1e-4)
    assert m.mass[0] == pytest.approx(2.0 * math.exp(0.15))
    with pytest.raises(ValueError):
        build_speed_measure_traps(s0, one_jump(0.3, 1e-5, tilt_sign=1), 0.0, 1.0, 1e-4)


def test_traps_atoms_biject_with_jumps():
    rng = np.random.default_rng(4)
    s0 = sample_subordinator(0.8, 2.0, 1e-5, rng)
    sinf = sample_subordinator(0.5, 2.0, 1e-5, rng, tilt_sign=1)
    m = build_speed_measure_traps(s0, sinf, 0.0, 2.0, 1e-3)
    assert m.size == int(np.sum(sinf.jumps > 1e-3))
    assert np.array_equal(m.weights, sinf.jumps[sinf.jumps > 1e-3])


def test_trap_positions_independent_of_masses():
    # positions come from one subordinator, masses from the other
    rng = np.random.default_rng(5)
    span, heavy = [], []
    for _ in range(300):
        s0, sinf, m = sample_trap_measure(RWT, 1.0, 1e-3, rng)
        i = int(np.argmax(m.mass))
        span.append(m.x[min(i + 1, m.size - 1)] - m.x[max(i - 1, 0)])
        heavy.append(m.mass[i])
    res = stats.permutation_test(
        (span, heavy),
        lambda a, b: stats.spearmanr(a, b).statistic,
        permutation_type="pairings",
        n_resamples=999,
        random_state=0,
    )
    assert res.pvalue > 0.01


def test_three_atom_exit_time_matches_grid_oracle():
    m = measure([-1.0, 0.0, 3.0], [1e-3, 2.0, 1e-3])
    rng = np.random.default_rng(6)
    path = simulate_quasi_diffusion(m, 1, 2e5, (), rng)
    t, a = path.event_times, path.atoms
    stays = np.diff(t)[a[:-1] == 1]
    assert stays.size > 30_000
    oracle = grid_exit_oracle(1.0, 3.0, 2.0, 1e-3, 100_000, np.random.default_rng(7))
    assert stays.mean() == pytest.approx(oracle.mean(), rel=0.02)
    # exit direction: 3/4 to the left
    left = (a[1:] == 0)[a[:-1] == 1].mean()
    assert abs(left - 0.75) < 3 * math.sqrt(0.75 * 0.25 / stays.size)
    assert stats.kstest(stays, "expon", args=(0, 3.0)).pvalue > 0.001


def test_occupation_proportional_to_mass():
    m = measure([0.0, 0.5, 2.0, 2.2, 4.0], [1.0, 3.0, 0.5, 2.0, 1.5])
    rng = np.random.default_rng(8)
    fracs = []
    for _ in range(40):
        p = simulate_quasi_diffusion(m, start_atom_from(m, 1.0, rng), 2000.0, (), rng)
        dt = np.diff(np.append(p.event_times, p.t_end))
        fracs.append(np.bincount(p.atoms, weights=dt, minlength=5) / p.t_end)
    fracs = np.array(fracs)
    want = m.mass / m.total_mass()
    se = fracs.std(axis=0, ddof=1) / math.sqrt(len(fracs))
    assert np.all(np.abs(fracs.mean(axis=0) - want) < 3 * se + 1e-12)


def test_single_atom_never_moves():
    m = measure([0.5], [1.0])
    p = simulate_quasi_diffusion(m, 0, 10.0, (1.0, 5.0), np.random.default_rng(0))
    assert p.steps == 0 and list(p.obs_atoms) == [0, 0]
    sub = one_jump(0.2, 1.0)
    obs = limit_observables(p, sub, 1.0, 5.0)
    assert obs.same_atom and obs.max_kept and obs.at_max


def test_simulation_is_deterministic():
    sub = sample_subordinator(0.8, 1.0, 1e-5, np.random.default_rng(9))
    m = build_speed_measure_walls(sub, 0.0, 1.0, 0.02, 0.4)
    a = simulate_quasi_diffusion(m, 50, 1.0, (0.5,), np.random.default_rng(3))
    b = simulate_quasi_diffusion(m, 50, 1.0, (0.5,), np.random.default_rng(3))
    assert np.array_equal(a.atoms, b.atoms) and np.array_equal(a.event_times, b.event_times)
    assert a.atom_at(0.5) == a.obs_atoms[0]
    assert a.max_atom(0.0, 0.5) == a.obs_max[0]


def test_simulation_rejects_bad_input():
    m = measure([0.0, 1.0], [1.0, 1.0])
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        simulate_quasi_diffusion(m, 0, 1.0, ())
    with pytest.raises(ValueError):
        simulate_quasi_diffusion(m, 2, 1.0, (), rng)
    with pytest.raises(ValueError):
        simulate_quasi_diffusion(m, 0, 0.0, (), rng)
    with pytest.raises(ValueError):
        simulate_quasi_diffusion(m, 0, 1.0, (0.5, 0.2), rng)
    p = simulate_quasi_diffusion(m, 0, 1.0, (), rng, record=False)
    with pytest.raises(ValueError):
        p.atom_at(0.5)


def test_start_atom_from_uses_hitting_probabilities():
    m = measure([0.0, 1.0, 4.0], [1, 1, 1])
    rng = np.random.default_rng(10)
    starts = np.array([start_atom_from(m, 3.0, rng) for _ in range(20_000)])
    # from 3 in [1, 4]: hit 1 first with probability 1/3
    assert abs((starts == 1).mean() - 1 / 3) < 3 * math.sqrt(2 / 9 / 20_000)
    assert start_atom_from(m, 1.0, rng) == 1
    assert start_atom_from(m, -5.0, rng) == 0


def test_gap_lookup_single_jump():
    sub = one_jump(0.205, 1.5, epsilon=1e-8)
    m = build_speed_measure_walls(sub, 0.0, 1.0, 0.01, 0.4)
    i = int(np.searchsorted(m.v, 0.205)) - 1
    assert gap_at_atom(m, sub, i) == pytest.approx(1.5)
    # no jump between two grid points: drift only
    assert gap_at_atom(m, sub, 10) == pytest.approx(m.x[11] - m.x[10])
    assert gap_at_atom(m, sub, m.size - 1) is None
    floored = build_speed_measure_walls(sub, 0.0, 1.0, 0.01, 0.4, jump_floor=1.0)
    j = int(np.flatnonzero((floored.v == 0.205) & (floored.side == -1))[0])
    assert gap_at_atom(floored, sub, j) == 1.5
    assert gap_at_atom(floored, sub, j, lam=0.5) == pytest.approx(1.5 * math.exp(-0.205))


def test_walls_supremum_law_settles_under_refinement():
    # KS between the laws of sup Z on [0, 1] at grid steps s and s/2, common subordinators
    rng = np.random.default_rng(5)
    grids = (0.5, 0.25, 0.125, 0.0625)
    sup = {g: [] for g in grids}
    for _ in range(1500):
        sub = sample_subordinator(0.8, 2.0, 1e-5, rng)
        for g in grids:
            m = build_speed_measure_walls(sub, 0.0, 2.0, g, 0.8 / 1.8, g ** (1 / 0.8))
            p = simulate_quasi_diffusion(m, m.index_of_preimage(0.0), 1.0, (1.0,), rng, record=False)
            sup[g].append(m.v[p.obs_max[0]])
    ks = [stats.ks_2samp(sup[a], sup[b]).statistic for a, b in zip(grids, grids[1:])]
    assert ks[0] > ks[1] > ks[2]


def test_near_constancy_of_trap_process():
    rng = np.random.default_rng(11)
    eps = (0.1, 0.03, 0.01)
    hits = np.zeros(3)
    reps = 2000
    for _ in range(reps):
        _, _, m = sample_trap_measure(RWT, 2.0, 1e-4, rng)
        obs = tuple(1.0 - e for e in eps) + (1.0,)
        p = simulate_quasi_diffusion(m, start_atom_from(m, 0.0, rng), 1.0, obs, rng, record=False)
        hits += p.obs_atoms[:3] == p.obs_atoms[3]
    f = hits / reps
    assert f[0] < f[1] < f[2]


def test_theta_bar_basic_properties():
    rng = np.random.default_rng(12)
    a1, s = theta_bar_samples(RWT, 300, rng)
    est = theta_bar_from_samples(a1, s, [0.0, 0.5, 1.0, 2.0])
    assert est[0].value == 1.0
    vals = [e.value for e in est]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert all(0 < v <= 1 for v in vals)
    with pytest.raises(ValueError):
        theta_bar_from_samples(a1, s, -1.0)
    with pytest.raises(ValueError):
        theta_bar_samples(ModelParams(alpha0=0.8), 10, rng)


def test_theta_bar_stable_under_weight_cutoff():
    a = theta_bar_limit(RWT, 1.0, 1500, np.random.default_rng(13), weight_cutoff=1e-3)
    b = theta_bar_limit(RWT, 1.0, 1500, np.random.default_rng(14), weight_cutoff=5e-4)
    assert a.ci[0] <= b.ci[1] and b.ci[0] <= a.ci[1]


# 10**5 replicas, rng seed 20_000_000, default cutoff
THETA_BAR_GOLDEN_H1 = (0.32105, 0.00122)


def test_theta_bar_matches_golden_value():
    ref, ref_se = THETA_BAR_GOLDEN_H1
    e = theta_bar_limit(RWT, 1.0, 3000, np.random.default_rng(99))
    assert abs(e.value - ref) <= 1.96 * math.hypot(e.stderr, ref_se)


def test_measure_json():
    m = measure([-1.0, 0.0], [1.0, 2.0])
    d = json.loads(m.to_json())
    assert d["atoms"][1] == {"v": 0.0, "x": 0.0, "mass": 2.0}
