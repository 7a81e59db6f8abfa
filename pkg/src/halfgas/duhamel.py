"""Monte Carlo evaluation of the truncated iterated collision series.

Each depth-k term integrates, over adjunction times on the gap-separated
simplex and parameters on S^{d-1} x B(0, R), the signed product of the
collision kernels along the pseudo-trajectory times the tensorized initial
data at its endpoint.  Summing the pre/post sign choices collapses to the
plain signed kernel product with scattering applied exactly when the
sampled kernel is positive, so one draw serves every sign pattern; the sum
over receiver labels is an explicit loop reusing the same draws.

Two endpoint flavors share all randomness: the point-particle trajectory
(plain series) and the hybrid one, which transports spheres of diameter
eps but keeps the tensorized data and no prefactor.  After the surgery of
adjunction times and parameters the sphere trajectory is collision free,
so both reduce to per-particle reflected lines and vectorize across
samples.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .free_flow import free_transport, pair_min_backward_distance
from .geometry import (
    Configuration,
    ball_volume,
    point_line_distance,
    sample_ball,
    sample_unit_sphere,
    scattering_map,
    specular_reflect,
    sphere_surface_measure,
)


def prefactor(N, s, k, d):
    """(N-s)(N-s-1)...(N-s-k+1) eps^{k(d-1)} at the fixed mean free path.

    With N eps^{d-1} = 1 this is a pure ratio in (0, 1]; it is the factor
    separating the finite-N term from its hybrid version.
    """
    if s + k > N:
        raise ValueError("s + k exceeds the particle number")
    out = 1.0
    for j in range(k):
        out *= (N - s - j) / N
    return out


@dataclass
class TermEstimate:
    value: float
    se: float
    samples: int
    k: int
    invalid: int = 0
    removed: int = 0
    records: list = field(default_factory=list)


def _label_combos(s, k):
    combos = [()]
    for l in range(k):
        combos = [c + (j,) for c in combos for j in range(s + l)]
    return combos


def _near_wall(heights, rho):
    return heights < rho


def _excluded_vec(X, V, j, omega, v_new, cuts):
    """Vectorized excluded-set membership at one adjunction stage.

    X, V: (..., m, d) current point configurations; omega, v_new broadcast
    against (..., d).  Mirrors excluded_adjunction in pseudo.py.
    """
    m = X.shape[-2]
    s0 = specular_reflect
    v_recv = V[..., j, :]
    val = np.sum(omega * (v_new - v_recv), axis=-1)
    post = val > 0
    out = val == 0.0
    out = out | (np.linalg.norm(v_new - v_recv, axis=-1) <= cuts.eta)

    vr_s, vn_s = scattering_map(v_recv, np.broadcast_to(v_new, v_recv.shape), omega)
    w_recv = np.where(post[..., None], vr_s, v_recv)
    w_new = np.where(post[..., None], vn_s, v_new)
    out |= np.where(post,
                    (np.abs(vr_s[..., 0]) <= cuts.alpha_graze)
                    | (np.abs(vn_s[..., 0]) <= cuts.alpha_graze),
                    np.abs(np.broadcast_to(v_new, v_recv.shape)[..., 0])
                    <= cuts.alpha_graze)

    r_pair = max(16 * cuts.R * cuts.a / cuts.eps0, cuts.eps0 / cuts.delta)
    r_wall = max(10 * cuts.R * cuts.a / cuts.rho, cuts.eps0 / cuts.delta)
    # receiver against its own wall mirror: tangential components only
    out |= np.linalg.norm(w_new[..., 1:] - s0(w_recv)[..., 1:], axis=-1) <= r_wall
    for i in range(m):
        if i == j:
            continue
        for mirrored in (False, True):
            anchor = s0(V[..., i, :]) if mirrored else V[..., i, :]
            axis = (s0(X[..., i, :]) - X[..., j, :]) if mirrored \
                else (X[..., i, :] - X[..., j, :])
            dist_new = point_line_distance(w_new - anchor, axis)
            out |= dist_new <= r_pair
            dist_recv = point_line_distance(w_recv - anchor, axis)
            out |= post & (dist_recv <= r_pair)
    return out


def _term_samples(z, k, t, data, cuts, rng, samples, modes=("boltzmann",),
                  surgery=True, eps=None, check_recollision=True):
    """Per-sample summed-over-labels integrand values for one tree depth.

    z is a Configuration or a (positions, velocities) pair of stacked grid
    points with shape (P, s, d): one shared set of draws then serves every
    point.  Returns dict mode -> values of shape (n,) or (P, n), the
    acceptance mask (n,), and the invalid/removed counters.
    """
    if isinstance(z, Configuration):
        zx, zv = z.x, z.v
        batch = ()
    else:
        zx, zv = np.asarray(z[0], dtype=float), np.asarray(z[1], dtype=float)
        batch = zx.shape[:-2]
    s, d = zx.shape[-2], zx.shape[-1]
    if eps is None:
        eps = cuts.eps
    want_hybrid = "hybrid" in modes
    n = samples

    u = np.sort(rng.uniform(0.0, t, (n, k)), axis=1)[:, ::-1]
    gaps_ok = (t - u[:, 0]) >= cuts.delta
    if k > 1:
        gaps_ok &= np.all(u[:, :-1] - u[:, 1:] >= cuts.delta, axis=1)
    omegas = sample_unit_sphere(rng, d, n * k).reshape(n, k, d)
    vnews = sample_ball(rng, d, cuts.R, n * k).reshape(n, k, d)

    shape_n = batch + (n,)
    out = {m: np.zeros(shape_n) for m in modes}
    invalid = 0
    removed = 0
    wall_h = 0.5 * eps

    for J in _label_combos(s, k):
        X = np.broadcast_to(zx[..., None, :, :], batch + (n, s, d)).copy()
        V = np.broadcast_to(zv[..., None, :, :], batch + (n, s, d)).copy()
        if want_hybrid:
            Xh = X.copy()
            Vh = V.copy()
        alive = np.broadcast_to(gaps_ok, shape_n).copy()
        alive_h = alive.copy() if want_hybrid else None
        kern = np.ones(shape_n)
        kern_h = np.ones(shape_n) if want_hybrid else None
        tau = np.full(n, float(t))
        fresh = None  # pair created at the previous adjunction: starts in contact

        for l in range(k + 1):
            t_next = u[:, l] if l < k else np.zeros(n)
            dt = tau - t_next
            X, V = free_transport(X, V, -dt[:, None])
            if want_hybrid:
                if check_recollision and Xh.shape[-2] > 1:
                    m = Xh.shape[-2]
                    for a in range(m):
                        for b in range(a + 1, m):
                            # the fresh contact pair recedes from distance
                            # eps on its pre-bounce segment by construction
                            skip = fresh == (a, b)
                            dmin = pair_min_backward_distance(
                                Xh[..., a, :], Vh[..., a, :],
                                Xh[..., b, :], Vh[..., b, :],
                                wall=wall_h, horizon=dt,
                                skip_first_segment=skip)
                            hit = alive_h & (dmin <= eps)
                            removed += int(np.count_nonzero(hit))
                            alive_h &= ~hit
                Xh, Vh = free_transport(Xh, Vh, -dt[:, None], wall=wall_h)
                fresh = None
            tau = t_next
            if l == k:
                break

            j = J[l]
            om = omegas[:, l, :]
            vn = vnews[:, l, :]
            if surgery:
                alive &= ~_near_wall(X[..., j, 0], cuts.rho)
                alive &= ~_excluded_vec(X, V, j, om, vn, cuts)
                if want_hybrid:
                    alive_h &= alive
            kval = np.sum(om * (vn - V[..., j, :]), axis=-1)
            kern = kern * kval
            post = kval > 0
            vr, vv = scattering_map(V[..., j, :], np.broadcast_to(vn, V[..., j, :].shape), om)
            new_v = np.where(post[..., None], vv, vn)
            recv_v = np.where(post[..., None], vr, V[..., j, :])
            X = np.concatenate([X, X[..., j, :][..., None, :]], axis=-2)
            V = np.concatenate([V, new_v[..., None, :]], axis=-2)
            V[..., j, :] = recv_v

            if want_hybrid:
                kval_h = np.sum(om * (vn - Vh[..., j, :]), axis=-1)
                kern_h = kern_h * kval_h
                x_new = Xh[..., j, :] + eps * om
                bad = x_new[..., 0] < wall_h
                if Xh.shape[-2] > 1:
                    others = np.linalg.norm(Xh - x_new[..., None, :], axis=-1)
                    others[..., j] = np.inf
                    bad |= np.min(others, axis=-1) < eps
                invalid += int(np.count_nonzero(bad & alive_h))
                alive_h &= ~bad
                post_h = kval_h > 0
                vrh, vvh = scattering_map(Vh[..., j, :],
                                          np.broadcast_to(vn, Vh[..., j, :].shape), om)
                new_vh = np.where(post_h[..., None], vvh, vn)
                recv_vh = np.where(post_h[..., None], vrh, Vh[..., j, :])
                Xh = np.concatenate([Xh, x_new[..., None, :]], axis=-2)
                Vh = np.concatenate([Vh, new_vh[..., None, :]], axis=-2)
                Vh[..., j, :] = recv_vh
                fresh = (j, Xh.shape[-2] - 1)

        in_ball = np.sum(V * V, axis=(-1, -2)) <= cuts.R**2
        if "boltzmann" in modes:
            val = np.where(alive & in_ball, kern * data.f0_product(X, V), 0.0)
            out["boltzmann"] += val
        if want_hybrid:
            in_ball_h = np.sum(Vh * Vh, axis=(-1, -2)) <= cuts.R**2
            val = np.where(alive_h & in_ball_h,
                           kern_h * data.f0_product(Xh, Vh), 0.0)
            out["hybrid"] += val
    return out, gaps_ok, invalid, removed


def _reduce(values, accepted, t, k, cuts, d, n_replicas):
    """Conditional-mean estimator with the analytic simplex volume.

    values has the sample axis last; leading axes (grid points) pass
    through.  The standard error comes from independent replica blocks.
    """
    n = values.shape[-1]
    lead = values.shape[:-1]
    if t <= k * cuts.delta:
        return np.zeros(lead), np.zeros(lead)
    vol = ((t - k * cuts.delta) ** k / math.factorial(k)
           * (sphere_surface_measure(d) * ball_volume(d, cuts.R)) ** k)
    reps = []
    bounds = np.linspace(0, n, n_replicas + 1, dtype=int)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        acc = accepted[lo:hi]
        if acc.any():
            reps.append(values[..., lo:hi][..., acc].mean(axis=-1) * vol)
        else:
            reps.append(np.zeros(lead))
    reps = np.stack(reps, axis=-1)
    return reps.mean(axis=-1), reps.std(axis=-1, ddof=1) / math.sqrt(reps.shape[-1])


def term_zero(z, t, data, cuts, mode="boltzmann", eps=None):
    """Depth-0 term: transported initial data under the velocity cutoff."""
    if float(np.sum(z.v * z.v)) > cuts.R**2:
        return 0.0
    if mode == "boltzmann":
        x, v = free_transport(z.x, z.v, -t)
    else:
        if eps is None:
            eps = cuts.eps
        if z.s == 1:
            x, v = free_transport(z.x, z.v, -t, wall=0.5 * eps)
        else:
            from .hard_sphere import advance
            res = advance(Configuration(eps, z.x, z.v), -t)
            x, v = res.final.x, res.final.v
    return float(data.f0_product(x, v))


def estimate_term(z, k, t, data, cuts, mode="boltzmann", surgery=True,
                  samples=20_000, rng=None, n_replicas=10, eps=None):
    """TermEstimate for the depth-k summed-over-labels term at configuration z."""
    if rng is None:
        rng = np.random.default_rng(0)
    if k == 0:
        return TermEstimate(term_zero(z, t, data, cuts, mode, eps=eps), 0.0, 0, 0)
    if t <= k * cuts.delta:
        return TermEstimate(0.0, 0.0, samples, k)
    vals, acc, invalid, removed = _term_samples(
        z, k, t, data, cuts, rng, samples, modes=(mode,), surgery=surgery, eps=eps)
    value, se = _reduce(vals[mode], acc, t, k, cuts, z.d, n_replicas)
    return TermEstimate(float(value), float(se), samples, k, invalid, removed)


def estimate_solution(z_list, s, t, data, cuts, samples=20_000, rng=None,
                      n_max=None, mode="boltzmann", surgery=False,
                      n_replicas=10):
    """Truncated series estimate at every configuration of z_list.

    Returns (values, ses, records); records hold one row per (point, k).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if n_max is None:
        n_max = cuts.n
    values = np.zeros(len(z_list))
    ses = np.zeros(len(z_list))
    records = []
    for idx, z in enumerate(z_list):
        if z.s != s:
            raise ValueError("configuration size mismatch")
        v0 = term_zero(z, t, data, cuts, mode)
        values[idx] += v0
        records.append({"point": idx, "k": 0, "value": v0, "se": 0.0,
                        "samples": 0})
        for k in range(1, n_max + 1):
            sub = np.random.default_rng(rng.integers(2**63))
            est = estimate_term(z, k, t, data, cuts, mode=mode,
                                surgery=surgery, samples=samples, rng=sub,
                                n_replicas=n_replicas)
            values[idx] += est.value
            ses[idx] = math.hypot(ses[idx], est.se)
            records.append({"point": idx, "k": k, "value": est.value,
                            "se": est.se, "samples": est.samples})
    return values, ses, records


def compare_boltzmann_hybrid(z_list, t, data, cuts, samples=20_000, rng=None,
                             n_replicas=10, n_max=None, eps=None,
                             require_delta=True):
    """Sup over the grid of |plain - hybrid| with shared random trees.

    Both endpoint flavors are evaluated on identical draws, so the
    difference carries only the trajectory divergence, not the Monte Carlo
    noise of either term.
    """
    from .pseudo import domain_predicates

    if rng is None:
        rng = np.random.default_rng(0)
    if n_max is None:
        n_max = cuts.n
    if eps is None:
        eps = cuts.eps
    diffs = np.zeros(len(z_list))
    ses = np.zeros(len(z_list))
    invalid_total = 0
    for idx, z in enumerate(z_list):
        if require_delta:
            verdict = domain_predicates(z, cuts)
            if not verdict["in_delta"]:
                raise ValueError(
                    f"grid point {idx} outside the start domain: "
                    f"{verdict['failing_clause']}")
        d0 = term_zero(z, t, data, cuts, "boltzmann") - \
            term_zero(z, t, data, cuts, "hybrid", eps=eps)
        total = d0
        var = 0.0
        for k in range(1, n_max + 1):
            if t <= k * cuts.delta:
                continue
            sub = np.random.default_rng(rng.integers(2**63))
            vals, acc, invalid, removed = _term_samples(
                z, k, t, data, cuts, sub, samples,
                modes=("boltzmann", "hybrid"), surgery=True, eps=eps)
            invalid_total += invalid
            dv, dse = _reduce(vals["boltzmann"] - vals["hybrid"], acc, t, k,
                              cuts, z.d, n_replicas)
            total += dv
            var += dse**2
        diffs[idx] = total
        ses[idx] = math.sqrt(var)
    i_max = int(np.argmax(np.abs(diffs)))
    return {"sup": float(np.abs(diffs[i_max])), "se": float(ses[i_max]),
            "diffs": diffs, "ses": ses, "invalid": invalid_total}


def estimate_term_reference(z, k, t, data, cuts, mode="boltzmann",
                            surgery=True, samples=2_000, rng=None,
                            n_replicas=10, eps=None):
    """Scalar reference estimator built on the event-driven trajectories.

    Slow path used to cross-check the vectorized engine and to evaluate the
    hybrid term without surgery (where sphere recollisions are real and the
    closed-form transport does not apply).
    """
    from .pseudo import (CollisionTreeSpec, InvalidAdjunction, SignMismatch,
                         build_pseudo, excluded_adjunction)

    if rng is None:
        rng = np.random.default_rng(0)
    if eps is None:
        eps = cuts.eps
    if k == 0:
        return TermEstimate(term_zero(z, t, data, cuts, mode, eps=eps), 0.0, 0, 0)
    if t <= k * cuts.delta:
        return TermEstimate(0.0, 0.0, samples, k)
    s, d = z.s, z.d
    values = np.zeros(samples)
    accepted = np.zeros(samples, dtype=bool)
    invalid = 0
    for m in range(samples):
        u = np.sort(rng.uniform(0.0, t, k))[::-1]
        ok = (t - u[0]) >= cuts.delta and np.all(-np.diff(u) >= cuts.delta)
        omegas = sample_unit_sphere(rng, d, k)
        vns = sample_ball(rng, d, cuts.R, k)
        if not ok:
            continue
        accepted[m] = True
        total = 0.0
        for J in _label_combos(s, k):
            cur = Configuration(0.0, z.x.copy(), z.v.copy())
            tau = t
            kern = 1.0
            signs = []
            zeroed = False
            for l in range(k):
                xx, vv = free_transport(cur.x, cur.v, -(tau - u[l]))
                cur = Configuration(0.0, xx, vv)
                tau = u[l]
                jl = J[l]
                if surgery and (cur.x[jl, 0] < cuts.rho
                                or excluded_adjunction(cur, jl, omegas[l],
                                                       vns[l], cuts)):
                    zeroed = True
                    break
                kv = float(np.dot(omegas[l], vns[l] - cur.v[jl]))
                kern *= kv
                signs.append(1 if kv > 0 else -1)
                xn = np.vstack([cur.x, cur.x[jl]])
                vn = np.vstack([cur.v, vns[l]])
                if kv > 0:
                    vn[jl], vn[-1] = scattering_map(vn[jl], vn[-1], omegas[l])
                cur = Configuration(0.0, xn, vn)
            if zeroed or kern == 0.0:
                continue
            if mode == "boltzmann":
                xx, vv = free_transport(cur.x, cur.v, -tau)
                end = Configuration(0.0, xx, vv)
            else:
                spec = CollisionTreeSpec(s, t, u, np.array(J),
                                         np.array(signs), omegas, vns)
                try:
                    traj = build_pseudo(Configuration(eps, z.x, z.v), spec, "hard")
                except (InvalidAdjunction, SignMismatch):
                    invalid += 1
                    continue
                end = traj.final
            if float(np.sum(end.v * end.v)) <= cuts.R**2:
                total += kern * data.f0_config(end)
        values[m] = total
    value, se = _reduce(values, accepted, t, k, cuts, d, n_replicas)
    return TermEstimate(value, se, samples, k, invalid)
