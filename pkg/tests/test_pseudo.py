import math

import numpy as np
import pytest

from halfgas.cutoffs import CutoffParams
from halfgas.free_flow import free_transport
from halfgas.geometry import Configuration, sample_ball, sample_unit_sphere
from halfgas.pseudo import (
    CollisionTreeSpec,
    InvalidAdjunction,
    SignMismatch,
    bad_set_estimate,
    build_pseudo,
    divergence_at_zero,
    domain_predicates,
    excluded_adjunction,
    grazing_set_estimate,
    pathological_times,
    sample_surgery_tree,
)

RNG = np.random.default_rng(7)

SURGERY_CUTS = CutoffParams(d=2, n=3, R=1.5, delta=0.42, a=7e-4, eps0=0.084,
                            rho=0.06, eta=0.2, alpha_graze=0.1, gamma=0.2,
                            eps=1e-4)
T_ROOT = 1.6


def single_particle(rng):
    while True:
        x = np.array([[rng.uniform(0.4, 1.5), rng.uniform(-1.0, 1.0)]])
        v = np.array([[rng.uniform(0.15, 1.0) * rng.choice([-1, 1]),
                       rng.uniform(-1.0, 1.0)]])
        if np.linalg.norm(v) <= SURGERY_CUTS.R:
            return x, v


def test_tree_spec_validation():
    with pytest.raises(ValueError):
        CollisionTreeSpec(1, 1.0, [0.5, 0.6], [0, 0], [1, 1],
                          [[1.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        CollisionTreeSpec(1, 1.0, [0.5], [3], [1], [[1.0, 0.0]], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        CollisionTreeSpec(1, 1.0, [0.5], [0], [2], [[1.0, 0.0]], [[0.0, 0.0]])


def test_tree_record_roundtrip():
    spec = CollisionTreeSpec(2, 1.25, [0.9, 0.3], [1, 2], [1, -1],
                             [[1.0, 0.0], [0.0, -1.0]],
                             [[0.4, -0.2], [0.1, 0.7]])
    back = CollisionTreeSpec.from_record(spec.to_record())
    assert back.s == spec.s and back.t_root == spec.t_root
    assert np.array_equal(back.times, spec.times)
    assert np.array_equal(back.labels, spec.labels)
    assert np.array_equal(back.signs, spec.signs)
    assert np.array_equal(back.omegas, spec.omegas)
    assert np.array_equal(back.velocities, spec.velocities)


def test_build_k0_is_plain_transport():
    z = Configuration(0.0, np.array([[1.0, 0.5]]), np.array([[0.4, -0.3]]))
    spec = CollisionTreeSpec(1, 0.7, [], [], [], np.zeros((0, 2)), np.zeros((0, 2)))
    traj = build_pseudo(z, spec, "free")
    x_exp, v_exp = free_transport(z.x, z.v, -0.7)
    assert np.allclose(traj.final.x, x_exp)
    assert np.allclose(traj.final.v, v_exp)


def test_build_single_precollisional_offset_is_eps():
    # no wall interaction: the two builds differ exactly by the adjunction
    # offset carried along identical free flight
    eps = 1e-3
    x = np.array([[1.0, 0.0]])
    v = np.array([[0.3, 0.1]])
    omega = np.array([0.0, 1.0])
    v_new = np.array([0.3, -0.5])  # omega.(v_new - v) = -0.6 < 0
    spec = CollisionTreeSpec(1, 0.5, [0.25], [0], [-1], omega, v_new)
    th = build_pseudo(Configuration(eps, x, v), spec, "hard")
    tf = build_pseudo(Configuration(0.0, x, v), spec, "free")
    assert th.recollision is None
    gap = np.linalg.norm(th.final.x - tf.final.x, axis=1)
    assert gap[0] == pytest.approx(0.0, abs=1e-14)
    assert gap[1] == pytest.approx(eps, rel=1e-12)


def test_build_sign_mismatch_and_invalid_adjunction():
    x = np.array([[1.0, 0.0]])
    v = np.array([[0.3, 0.1]])
    omega = np.array([0.0, 1.0])
    v_new = np.array([0.3, -0.5])
    bad = CollisionTreeSpec(1, 0.5, [0.25], [0], [1], omega, v_new)
    with pytest.raises(SignMismatch):
        build_pseudo(Configuration(1e-3, x, v), bad, "hard")
    # new sphere pushed into the wall
    low = Configuration(0.5, np.array([[0.26, 0.0]]), np.array([[0.0, 0.1]]))
    spec = CollisionTreeSpec(1, 0.5, [0.25], [0], [-1],
                             np.array([-1.0, 0.0]), np.array([0.4, 0.1]))
    with pytest.raises(InvalidAdjunction):
        build_pseudo(low, spec, "hard")


def test_divergence_zero_for_k0_without_bounce():
    z = Configuration(0.0, np.array([[2.0, 0.0]]), np.array([[-0.2, 0.3]]))
    spec = CollisionTreeSpec(1, 0.5, [], [], [], np.zeros((0, 2)), np.zeros((0, 2)))
    th = build_pseudo(Configuration(1e-3, z.x, z.v), spec, "hard")
    tf = build_pseudo(z, spec, "free")
    rep = divergence_at_zero(th, tf)
    assert rep.max_position_gap == 0.0
    assert rep.velocity_relations == ["equal"]


def test_surgery_trees_no_recollision_bounded_divergence():
    rng = np.random.default_rng(99)
    cuts = SURGERY_CUTS
    for _ in range(300):
        x, v = single_particle(rng)
        z0 = Configuration(0.0, x, v)
        k = int(rng.integers(1, 4))
        spec = sample_surgery_tree(z0, T_ROOT, k, cuts, rng)
        th = build_pseudo(Configuration(cuts.eps, x, v), spec, "hard")
        tf = build_pseudo(z0, spec, "free")
        assert th.recollision is None
        rep = divergence_at_zero(th, tf)
        assert rep.max_position_gap <= 2 * k * cuts.eps
        assert all(r in ("equal", "mirror") for r in rep.velocity_relations)
        for a, b in zip(th.receiver_velocity, tf.receiver_velocity):
            assert np.allclose(a, b, atol=1e-12)


def test_energy_bookkeeping():
    rng = np.random.default_rng(11)
    cuts = SURGERY_CUTS
    for _ in range(50):
        x, v = single_particle(rng)
        z0 = Configuration(0.0, x, v)
        spec = sample_surgery_tree(z0, T_ROOT, 3, cuts, rng)
        for kind, z in (("hard", Configuration(cuts.eps, x, v)), ("free", z0)):
            traj = build_pseudo(z, spec, kind)
            expected = z.kinetic_energy() + 0.5 * float(
                np.sum(spec.velocities ** 2))
            assert traj.energy_at_zero() == pytest.approx(expected, rel=1e-12)


def test_pathological_times_examples():
    z = Configuration(0.0, np.array([[5.0, 0.0]]), np.array([[1.0, 0.0]]))
    ivs = pathological_times(z, 0, rho=1.0, t_window=10.0, alpha_graze=1.0)
    assert len(ivs) == 1
    lo, hi = ivs[0]
    assert lo == pytest.approx(4.0)
    assert hi == pytest.approx(6.0)
    # rho below the closest approach: empty
    away = Configuration(0.0, np.array([[5.0, 0.0]]), np.array([[-0.5, 0.0]]))
    assert pathological_times(away, 0, rho=1.0, t_window=3.0, alpha_graze=0.4) == []
    with pytest.raises(ValueError):
        pathological_times(z, 0, rho=1.0, t_window=3.0, alpha_graze=1.5)


def test_pathological_times_vs_dense_sampling():
    rng = np.random.default_rng(3)
    for _ in range(40):
        x = np.array([[rng.uniform(0.0, 4.0), 0.0]])
        u = rng.uniform(0.2, 1.5) * rng.choice([-1, 1])
        z = Configuration(0.0, x, np.array([[u, 0.3]]))
        rho = rng.uniform(0.1, 1.0)
        t_win = 8.0
        ivs = pathological_times(z, 0, rho, t_win, alpha_graze=0.2)
        taus = np.arange(0.0, t_win, 1e-5)
        heights = np.abs(x[0, 0] - taus * u)
        inside = heights < rho
        measure_dense = inside.sum() * 1e-5
        measure = sum(hi - lo for lo, hi in ivs)
        assert measure == pytest.approx(measure_dense, abs=1e-3)
        assert measure <= 2 * rho / 0.2 + 1e-12


def test_domain_predicates():
    params = CutoffParams(d=2, R=2.0, eps=0.01, eps0=0.1, alpha_graze=0.1,
                          gamma=0.05)
    graze = Configuration(0.0, np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    res = domain_predicates(graze, params)
    assert not res["in_omega"] and res["failing_clause"] == "Omega2"
    same_pos = np.array([[1.0, 0.0], [1.0, 0.0]])
    coincident = Configuration(0.0, same_pos, np.array([[0.5, 0.1], [-0.4, 0.2]]))
    res = domain_predicates(coincident, params)
    assert not res["in_omega"] and res["failing_clause"] == "Omega1"
    good = Configuration(0.0, np.array([[1.0, 0.0], [2.0, 1.0]]),
                         np.array([[0.5, 0.1], [-0.4, 0.6]]))
    res = domain_predicates(good, params)
    assert res["in_omega"]


def test_domain_predicates_compact_threshold_extraction():
    # for a sampled compact subset of the open domain, thresholds below the
    # sampled minima put the subset inside the quantitative domain
    rng = np.random.default_rng(21)
    zs = []
    for _ in range(200):
        x = np.column_stack([rng.uniform(0.5, 2.0, 2), rng.uniform(-1, 1, 2)])
        v = rng.uniform(-1.0, 1.0, (2, 2))
        z = Configuration(0.0, x, v)
        probe = CutoffParams(d=2, R=10.0, eps=0.0, eps0=0.0, alpha_graze=0.0,
                             gamma=0.0)
        if domain_predicates(z, probe)["in_omega"]:
            zs.append(z)
    from halfgas.geometry import point_line_distance
    from halfgas.geometry import specular_reflect as s0
    min_sep = min(float(np.linalg.norm(z.x[0] - z.x[1])) for z in zs)
    min_graz = min(float(np.min(np.abs(z.v[:, 0]))) for z in zs)
    min_line = min(
        min(float(point_line_distance(z.v[1] - z.v[0], z.x[0] - z.x[1])),
            float(point_line_distance(z.v[1] - s0(z.v[0]), s0(z.x[0]) - z.x[1])))
        for z in zs)
    max_speed = max(math.sqrt(2 * z.kinetic_energy()) for z in zs)
    params = CutoffParams(d=2, R=max_speed + 0.1, eps=1e-6,
                          eps0=0.9 * min_sep, alpha_graze=min(0.9 * min_graz, 0.1),
                          gamma=0.9 * min_line)
    assert all(domain_predicates(z, params)["in_delta"] for z in zs)


def test_grazing_alpha_larger_than_R_covers_post_half():
    rng = np.random.default_rng(5)
    est = grazing_set_estimate(np.array([0.2, 0.1]), R=1.0, alpha_graze=2.0,
                               d=2, samples=20_000, rng=rng)
    # every post-collisional parameter pair is grazing
    from halfgas.geometry import ball_volume, sphere_surface_measure
    half = 0.5 * sphere_surface_measure(2) * ball_volume(2, 1.0)
    assert est.measure == pytest.approx(half, rel=0.05)


def test_grazing_measure_decreases_with_alpha():
    rng = np.random.default_rng(6)
    oms = None
    vals = []
    for alpha in (0.1, 0.01, 0.001):
        est = grazing_set_estimate(np.zeros(3), R=1.0, alpha_graze=alpha, d=3,
                                   samples=200_000, rng=np.random.default_rng(8))
        vals.append(est.measure)
    assert vals[0] > vals[1] > vals[2]


def test_bad_set_r_to_zero_and_preconditions():
    cuts = CutoffParams(d=2, n=1, R=1.0, delta=1.0, a=0.004, eps0=0.06,
                        rho=0.3, eta=0.1, alpha_graze=0.05, gamma=0.2, eps=0.002)
    z = Configuration(0.0, np.array([[0.5, 0.0]]), np.array([[0.4, 0.3]]))
    rng = np.random.default_rng(9)
    rows = bad_set_estimate(z, cuts, 4000, rng)
    assert len(rows) == 1
    # R -> 0: total measure shrinks to zero
    tiny = CutoffParams(**{**cuts.as_dict(), "R": 1e-3})
    rows_tiny = bad_set_estimate(z, tiny, 2000, np.random.default_rng(10))
    assert rows_tiny[0][1].measure < 1e-4
    low = Configuration(0.0, np.array([[0.1, 0.0]]), np.array([[0.4, 0.3]]))
    with pytest.raises(ValueError):
        bad_set_estimate(low, cuts, 100, rng)


def test_bad_set_k1_matches_generic_path():
    from halfgas.pseudo import _bad_set_generic, _bad_set_k1
    cuts = CutoffParams(d=2, n=1, R=1.2, delta=1.0, a=0.01, eps0=0.08,
                        rho=0.3, eta=0.1, alpha_graze=0.05, gamma=0.2, eps=0.004)
    z = Configuration(0.0, np.array([[0.6, 0.2]]), np.array([[0.5, -0.2]]))
    rng = np.random.default_rng(12)
    oms = np.array([[math.cos(a), math.sin(a)] for a in rng.uniform(0, 2 * math.pi, 400)])
    vs = sample_ball(rng, 2, cuts.R, 400)
    fast = _bad_set_k1(z, cuts, oms, vs, [cuts.a])[0]
    slow = _bad_set_generic(z, cuts, oms, vs, [cuts.a])[0]
    assert np.array_equal(fast, slow)


def test_bad_set_monotone_in_a_with_shared_samples():
    cuts = CutoffParams(d=2, n=1, R=1.5, delta=1.0, a=0.02, eps0=0.15,
                        rho=0.3, eta=0.15, alpha_graze=0.05, gamma=0.3,
                        eps=0.001)
    z = Configuration(0.0, np.array([[0.5, 0.0]]), np.array([[0.4, 0.35]]))
    rng = np.random.default_rng(13)
    grid = [0.002, 0.005, 0.01, 0.02]
    rows = bad_set_estimate(z, cuts, 20_000, rng, a_values=grid)
    vals = [m.measure for _, m in rows]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
