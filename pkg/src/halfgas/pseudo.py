"""Collision-tree pseudo-trajectories and the pathological-set estimators.

A collision tree prescribes, backward from a root time, a sequence of
particle adjunctions (time, receiving label, angular parameter, velocity,
pre/post-collisional sign).  The same tree drives two constructions: the
point-particle one transported by the free flow and the hard-sphere one
transported by the event-driven flow, with the new sphere offset by
eps * omega.  Unprescribed collisions of the hard-sphere build are
recollisions; the surgery of adjunction times and parameters removes the
small sets that can produce them.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .free_flow import free_transport, pair_min_backward_distance
from .geometry import (
    Configuration,
    point_line_distance,
    sample_ball,
    sample_unit_sphere,
    scattering_map,
    specular_reflect,
    sphere_surface_measure,
    ball_volume,
    TOL,
)
from .hard_sphere import advance


class InvalidAdjunction(Exception):
    """New sphere overlapping a third particle or the wall."""


class SignMismatch(Exception):
    """Prescribed sign inconsistent with omega . (v_new - v_receiver)."""


@dataclass
class CollisionTreeSpec:
    """One pseudo-trajectory: root time, adjunction times (strictly
    decreasing), receiving labels (0-based), signs (+1 post, -1 pre) and
    parameters (omega_i, v_new_i)."""

    s: int
    t_root: float
    times: np.ndarray
    labels: np.ndarray
    signs: np.ndarray
    omegas: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.labels = np.atleast_1d(np.asarray(self.labels, dtype=int))
        self.signs = np.atleast_1d(np.asarray(self.signs, dtype=int))
        om = np.asarray(self.omegas, dtype=float)
        ve = np.asarray(self.velocities, dtype=float)
        if self.k:
            self.omegas = om.reshape(self.k, -1)
            self.velocities = ve.reshape(self.k, -1)
        else:
            self.omegas = om.reshape(0, om.shape[-1] if om.ndim > 1 else 1)
            self.velocities = ve.reshape(0, ve.shape[-1] if ve.ndim > 1 else 1)
        self.validate()

    @property
    def k(self):
        return len(np.atleast_1d(self.times))

    def validate(self):
        if self.k:
            seq = np.concatenate([[self.t_root], self.times])
            if np.any(np.diff(seq) >= 0) or self.times[-1] < 0:
                raise ValueError(
                    "adjunction times must decrease strictly within (0, t_root]")
        for i, j in enumerate(self.labels):
            if not 0 <= j < self.s + i:
                raise ValueError(f"label {j} out of range at adjunction {i}")
        if not np.all(np.isin(self.signs, (-1, 1))):
            raise ValueError("signs must be +1 or -1")
        if self.k:
            nrm = np.linalg.norm(self.omegas, axis=1)
            if np.any(np.abs(nrm - 1) > 1e-9):
                raise ValueError("omega parameters must be unit vectors")

    def to_record(self):
        """Single-line text record for replay."""
        def js(a):
            return ",".join(repr(float(x)) for x in np.ravel(a))

        return (
            f"tree s={self.s} t={self.t_root!r} k={self.k} "
            f"times={js(self.times)} labels={','.join(str(int(x)) for x in self.labels)} "
            f"signs={','.join('%+d' % x for x in self.signs)} "
            f"omegas={js(self.omegas)} velocities={js(self.velocities)} "
            f"d={self.omegas.shape[1]}"
        )

    @classmethod
    def from_record(cls, line):
        parts = dict(tok.split("=", 1) for tok in line.split()[1:])
        d = int(parts["d"])
        k = int(parts["k"])

        def arr(key, shape):
            return np.array([float(x) for x in parts[key].split(",")]).reshape(shape)

        return cls(
            s=int(parts["s"]),
            t_root=float(parts["t"]),
            times=arr("times", (k,)),
            labels=np.array([int(x) for x in parts["labels"].split(",")]),
            signs=np.array([int(x) for x in parts["signs"].split(",")]),
            omegas=arr("omegas", (k, d)),
            velocities=arr("velocities", (k, d)),
        )


@dataclass
class PseudoTrajectory:
    kind: str                      # "hard" | "free"
    eps: float
    spec: CollisionTreeSpec
    final: Configuration           # configuration at time 0
    snapshots: list                # (pseudo_time, Configuration) after each stage
    receiver_velocity: list        # velocity of the receiving particle at each adjunction
    recollision: tuple | None      # (i, j, pseudo_time) of the first unprescribed contact
    bounces: list                  # (particle, pseudo_time) wall bounces along the build
    pathological: bool = False

    def energy_at_zero(self):
        return self.final.kinetic_energy()


def _free_segment(cfg, dt, t_hi, bounces):
    """Backward free flow of every particle for duration dt, with bounce log."""
    tb = (np.where(cfg.v[:, 0] > 0, cfg.x[:, 0] / np.where(cfg.v[:, 0] > 0, cfg.v[:, 0], 1.0), np.inf))
    for i in np.nonzero(tb <= dt)[0]:
        bounces.append((int(i), t_hi - float(tb[i])))
    x, v = free_transport(cfg.x, cfg.v, -dt)
    return Configuration(cfg.eps, x, v)


def build_pseudo(z, spec, kind):
    """Construct the pseudo-trajectory prescribed by a collision tree.

    kind "free": point particles, adjunction at the receiver's position.
    kind "hard": spheres of diameter z.eps, adjunction offset by eps*omega,
    transported by the event-driven flow; every unprescribed pair contact
    is recorded as a recollision.
    """
    if kind not in ("hard", "free"):
        raise ValueError("kind must be 'hard' or 'free'")
    eps = z.eps if kind == "hard" else 0.0
    if kind == "hard" and eps <= 0:
        raise ValueError("hard build needs a positive diameter")
    cur = Configuration(eps, z.x.copy(), z.v.copy())
    tau = spec.t_root
    snapshots = [(tau, cur.copy())]
    receiver_velocity = []
    bounces = []
    recollision = None
    pathological = False

    stops = list(spec.times) + [0.0]
    for l in range(spec.k + 1):
        dt = tau - stops[l]
        if dt > 0:
            if kind == "free":
                cur = _free_segment(cur, dt, tau, bounces)
            else:
                res = advance(cur, -dt, record=False)
                for ev in res.events:
                    if ev.kind == "wall":
                        bounces.append((ev.i, tau - ev.time))
                    elif recollision is None:
                        recollision = (ev.i, ev.j, tau - ev.time)
                if res.pathological:
                    pathological = True
                cur = res.final
        tau = stops[l]
        if l == spec.k:
            break

        j = int(spec.labels[l])
        omega = spec.omegas[l]
        v_new = spec.velocities[l]
        v_recv = cur.v[j].copy()
        receiver_velocity.append(v_recv)
        val = float(np.dot(omega, v_new - v_recv))
        if spec.signs[l] * val <= 0:
            raise SignMismatch(
                f"adjunction {l}: sign {spec.signs[l]:+d} but omega.(v_new - v_recv) = {val}")
        x_new = cur.x[j] + (eps * omega if kind == "hard" else 0.0)
        if kind == "hard":
            if x_new[0] < 0.5 * eps - TOL:
                raise InvalidAdjunction(f"adjunction {l}: new sphere inside the wall")
            others = np.delete(np.arange(cur.s), j)
            if others.size:
                dmin = np.min(np.linalg.norm(cur.x[others] - x_new, axis=1))
                if dmin < eps - TOL:
                    raise InvalidAdjunction(f"adjunction {l}: new sphere overlaps particle")
        x = np.vstack([cur.x, x_new])
        v = np.vstack([cur.v, v_new])
        if spec.signs[l] > 0:
            v[j], v[-1] = scattering_map(v[j], v[-1], omega)
        cur = Configuration(eps, x, v)
        snapshots.append((tau, cur.copy()))

    snapshots.append((0.0, cur.copy()))
    return PseudoTrajectory(kind, eps, spec, cur, snapshots, receiver_velocity,
                            recollision, bounces, pathological)


@dataclass
class DivergenceReport:
    max_position_gap: float
    velocity_relations: list  # per particle: "equal" | "mirror" | "other"


def divergence_at_zero(traj_hard, traj_free, atol=1e-9):
    """Maximum final position gap between the two builds of one tree."""
    if traj_hard.spec is not traj_free.spec:
        a, b = traj_hard.spec, traj_free.spec
        same = (a.s == b.s and a.t_root == b.t_root and np.array_equal(a.times, b.times)
                and np.array_equal(a.labels, b.labels) and np.array_equal(a.signs, b.signs)
                and np.array_equal(a.omegas, b.omegas)
                and np.array_equal(a.velocities, b.velocities))
        if not same:
            raise ValueError("pseudo-trajectories built from different trees")
    xe, x0 = traj_hard.final.x, traj_free.final.x
    ve, v0 = traj_hard.final.v, traj_free.final.v
    gap = float(np.max(np.linalg.norm(xe - x0, axis=1)))
    rels = []
    for i in range(x0.shape[0]):
        if np.allclose(ve[i], v0[i], atol=atol):
            rels.append("equal")
        elif np.allclose(ve[i], specular_reflect(v0[i]), atol=atol):
            rels.append("mirror")
        else:
            rels.append("other")
    return DivergenceReport(gap, rels)


def pathological_times(z, j, rho, t_window, alpha_graze):
    """Times in [0, t_window] when the backward free flow of particle j is
    within rho of the wall: at most one interval, of measure <= 2 rho/alpha."""
    x1 = float(z.x[j, 0])
    u = float(z.v[j, 0])
    if abs(u) < alpha_graze:
        raise ValueError("grazing velocity: |v.e1| below the threshold")
    if u > 0:
        lo, hi = (x1 - rho) / u, (x1 + rho) / u
    else:
        lo, hi = (x1 + rho) / u, (x1 - rho) / u
    lo, hi = max(lo, 0.0), min(hi, t_window)
    return [(lo, hi)] if hi > lo else []


# ---------------------------------------------------------------------------
# Domain predicates
# ---------------------------------------------------------------------------

def _line_dist(v_from, v_anchor, direction):
    n = np.linalg.norm(direction)
    if n == 0:
        return float(np.linalg.norm(v_from - v_anchor))
    return float(point_line_distance(v_from - v_anchor, direction))


def domain_predicates(z, params):
    """Clauses of the open start domain and its quantitative shrinking.

    Returns {"in_omega": bool, "in_delta": bool, "failing_clause": str|None};
    the failing clause is the first violated one in order Omega1..Omega4,
    Delta1..Delta6.
    """
    s = z.s
    x, v = z.x, z.v
    s0 = specular_reflect
    failing = None

    def fail(name):
        nonlocal failing
        if failing is None:
            failing = name

    in_omega = True
    for i in range(s):
        for j in range(s):
            if i != j and np.array_equal(x[i], x[j]):
                in_omega = False
                fail("Omega1")
    if np.any(v[:, 0] == 0.0):
        in_omega = False
        fail("Omega2")
    for i in range(s):
        for j in range(s):
            if i == j:
                continue
            if _line_dist(v[j], v[i], x[i] - x[j]) == 0.0:
                in_omega = False
                fail("Omega3")
            if _line_dist(v[j], s0(v[i]), s0(x[i]) - x[j]) == 0.0:
                in_omega = False
                fail("Omega4")

    in_delta = True
    if np.any(x[:, 0] <= 0.5 * params.eps):
        in_delta = False
        fail("Delta1")
    if math.sqrt(float(np.sum(v * v))) > params.R:
        in_delta = False
        fail("Delta2")
    for i in range(s):
        for j in range(i + 1, s):
            if np.linalg.norm(x[i] - x[j]) < params.eps0:
                in_delta = False
                fail("Delta3")
    if np.any(np.abs(v[:, 0]) < params.alpha_graze):
        in_delta = False
        fail("Delta4")
    for i in range(s):
        for j in range(i + 1, s):
            if _line_dist(v[j], v[i], x[i] - x[j]) < params.gamma:
                in_delta = False
                fail("Delta5")
            if _line_dist(v[j], s0(v[i]), s0(x[i]) - x[j]) < params.gamma:
                in_delta = False
                fail("Delta6")
    return {"in_omega": in_omega, "in_delta": in_delta, "failing_clause": failing}


# ---------------------------------------------------------------------------
# Surgery: excluded adjunction parameters
# ---------------------------------------------------------------------------

def _in_cylinder(p, anchor, axis, radius):
    n = np.linalg.norm(axis)
    if n < 1e-14:
        return True  # degenerate axis: exclude conservatively
    return point_line_distance(p - anchor, axis) <= radius


def excluded_adjunction(cfg, j, omega, v_new, cuts):
    """Membership in the excluded parameter set E_j of the current state.

    Mirrors the recollision inventory: shooting cylinders of every other
    particle (plain and wall-mirrored, with the hard and free radii),
    the wall-mirror cylinder of the receiver, the near-velocity ball, and
    the grazing sets (slab before scattering, scattered pair after).
    """
    x, vel = cfg.x, cfg.v
    s0 = specular_reflect
    vr = vel[j]
    val = float(np.dot(omega, v_new - vr))
    if val == 0.0:
        return True
    if np.linalg.norm(v_new - vr) <= cuts.eta:
        return True
    r_pair = max(16 * cuts.R * cuts.a / cuts.eps0, cuts.eps0 / cuts.delta)
    r_wall = max(10 * cuts.R * cuts.a / cuts.rho, cuts.eps0 / cuts.delta)
    e1 = np.zeros(cfg.d)
    e1[0] = 1.0

    if val < 0:
        cand = [(vr, v_new)]
        if abs(v_new[0]) <= cuts.alpha_graze:
            return True
    else:
        vr_s, vn_s = scattering_map(vr, v_new, omega)
        if abs(vr_s[0]) <= cuts.alpha_graze or abs(vn_s[0]) <= cuts.alpha_graze:
            return True
        cand = [(vr_s, vn_s)]

    for w_recv, w_new in cand:
        # receiver/new pair against the wall mirror of itself
        if _in_cylinder(w_new, s0(w_recv), e1, r_wall):
            return True
        for i in range(cfg.s):
            if i == j:
                continue
            for w in (w_new,) if val < 0 else (w_new, w_recv):
                if _in_cylinder(w, vel[i], x[i] - x[j], r_pair):
                    return True
                if _in_cylinder(w, s0(vel[i]), s0(x[i]) - x[j], r_pair):
                    return True
    return False


def sample_surgery_tree(z, t_root, k, cuts, rng, max_tries=100_000):
    """Draw a surgery-compliant collision tree above configuration z.

    Times keep the minimum gap and avoid the near-wall intervals of the
    chosen receiver; parameters are resampled until outside the excluded
    set.  Returns the tree spec.
    """
    cur = Configuration(0.0, z.x.copy(), z.v.copy())
    tau = t_root
    times, labels, signs, omegas, vels = [], [], [], [], []
    for l in range(k):
        lo = (k - l - 1) * cuts.delta
        hi = tau - cuts.delta
        if hi <= lo:
            raise ValueError("root time too small for the requested depth and gap")
        for attempt in range(max_tries):
            t_l = rng.uniform(lo, hi)
            j = int(rng.integers(cur.s))
            x_probe, _ = free_transport(cur.x[j], cur.v[j], -(tau - t_l))
            if x_probe[0] < cuts.rho:
                continue  # adjunction time inside the pathological interval
            cand = Configuration(0.0, *free_transport(cur.x, cur.v, -(tau - t_l)))
            omega = sample_unit_sphere(rng, cur.d)
            v_new = sample_ball(rng, cur.d, cuts.R)
            if excluded_adjunction(cand, j, omega, v_new, cuts):
                continue
            break
        else:
            raise RuntimeError("no compliant adjunction found")
        val = float(np.dot(omega, v_new - cand.v[j]))
        sign = 1 if val > 0 else -1
        x = np.vstack([cand.x, cand.x[j]])
        v = np.vstack([cand.v, v_new])
        if sign > 0:
            v[j], v[-1] = scattering_map(v[j], v[-1], omega)
        cur = Configuration(0.0, x, v)
        tau = t_l
        times.append(t_l)
        labels.append(j)
        signs.append(sign)
        omegas.append(omega)
        vels.append(v_new)
    return CollisionTreeSpec(z.s, t_root, np.array(times), np.array(labels),
                             np.array(signs), np.array(omegas), np.array(vels))


# ---------------------------------------------------------------------------
# Measure estimators
# ---------------------------------------------------------------------------

@dataclass
class MeasureEstimate:
    measure: float
    se: float
    fraction: float
    samples: int

    def ci(self, z=1.96):
        return (self.measure - z * self.se, self.measure + z * self.se)


def grazing_set_estimate(v1, R, alpha_graze, d, samples, rng, omegas=None, v2s=None):
    """Measure of the adjunction parameters whose scattered pair contains a
    grazing velocity.

    Pre-drawn (omegas, v2s) allow common random numbers across thresholds.
    """
    v1 = np.asarray(v1, dtype=float)
    if np.linalg.norm(v1) > R:
        raise ValueError("receiver velocity outside the ball")
    if omegas is None:
        omegas = sample_unit_sphere(rng, d, samples)
    if v2s is None:
        v2s = sample_ball(rng, d, R, samples)
    post = np.sum(omegas * (v2s - v1), axis=1) > 0
    v1p, v2p = scattering_map(np.broadcast_to(v1, v2s.shape), v2s, omegas)
    graze = (np.abs(v1p[:, 0]) <= alpha_graze) | (np.abs(v2p[:, 0]) <= alpha_graze)
    hits = post & graze
    frac = float(hits.mean())
    total = sphere_surface_measure(d) * ball_volume(d, R)
    n = len(hits)
    se = math.sqrt(max(frac * (1 - frac), 1.0 / n) / n)
    return MeasureEstimate(frac * total, se * total, frac, n)


def _axis_offsets(d, scale):
    offs = [np.zeros(d)]
    for ax in range(d):
        e = np.zeros(d)
        e[ax] = scale
        offs.extend([e, -e])
    return offs


def bad_set_estimate(z_bar, cuts, samples, rng, a_values=None):
    """Monte Carlo measure of the adjunction parameters that break the
    stability of good configurations.

    A parameter pair (omega, v) is bad when, for some admissible perturbed
    configuration (positions within `a` of the nominal ones, velocities
    substituted by their wall mirrors, receiver velocity fixed), the
    hard-sphere pair created at contact suffers a later contact, or the
    nominal point pair is not separated by eps0 after the gap time.

    The quantifier over position perturbations is evaluated through its
    ball union: a shift common to a contact pair moves the reflected
    branch by twice its e1-component only (deadzone test), while shifts of
    two distinct particles inflate the contact threshold isotropically by
    2a.  Violation sets then grow with `a` pointwise, so estimates over
    `a_values` are monotone under the shared samples.  Returns a list of
    (a, MeasureEstimate); `a_values` defaults to [cuts.a].
    """
    k = z_bar.s
    d = z_bar.d
    if a_values is None:
        a_values = [cuts.a]
    a_values = sorted(a_values)
    from .free_flow import good_config_free

    if k > 1 and not good_config_free(z_bar, cuts.eps0):
        raise ValueError("precondition: nominal configuration not separated by eps0")
    if z_bar.x[k - 1, 0] < cuts.rho:
        raise ValueError("precondition: receiver closer to the wall than rho")

    omegas = sample_unit_sphere(rng, d, samples)
    vs = sample_ball(rng, d, cuts.R, samples)
    if k == 1:
        bad_per_a = _bad_set_k1(z_bar, cuts, omegas, vs, a_values)
    else:
        bad_per_a = _bad_set_generic(z_bar, cuts, omegas, vs, a_values)
    total = sphere_surface_measure(d) * ball_volume(d, cuts.R)
    out = []
    for a, bad in zip(a_values, bad_per_a):
        frac = float(bad.mean())
        se = math.sqrt(max(frac * (1 - frac), 1.0 / samples) / samples)
        out.append((a, MeasureEstimate(frac * total, se * total, frac, samples)))
    return out


def _deadzone_segment_min_sq(dA, dB, two_a, lo, hi):
    """Min over tau in [lo, hi] of max(|D_1(tau)| - two_a, 0)^2 + |D_perp(tau)|^2
    with D(tau) = dA + tau dB.

    Piecewise quadratic in tau; the minimum sits at an endpoint, a piece
    boundary (D_1 = +-two_a) or a piece-interior stationary point, all of
    which are evaluated.  Vectorized over leading axes; hi may be inf.
    """
    d = dA.shape[-1]
    e1 = np.zeros(d)
    e1[0] = 1.0
    cands = [lo, np.where(np.isfinite(hi), hi, lo)]
    with np.errstate(divide="ignore", invalid="ignore"):
        b1 = dB[..., 0]
        for sgn in (1.0, -1.0):
            cands.append(np.where(b1 != 0, (sgn * two_a - dA[..., 0]) /
                                  np.where(b1 != 0, b1, 1.0), lo))
        bp = np.sum(dB[..., 1:] ** 2, axis=-1)
        cands.append(np.where(bp > 0,
                              -np.sum(dA[..., 1:] * dB[..., 1:], axis=-1) /
                              np.where(bp > 0, bp, 1.0), lo))
        bb = np.sum(dB * dB, axis=-1)
        for sgn in (1.0, -1.0):
            sh = dA - (sgn * two_a)[..., None] * e1 if np.ndim(two_a) else dA - sgn * two_a * e1
            cands.append(np.where(bb > 0, -np.sum(sh * dB, axis=-1) /
                                  np.where(bb > 0, bb, 1.0), lo))
    lo_safe = np.where(np.isfinite(lo), lo, 0.0)
    best = np.full(np.shape(lo), np.inf)
    for tau in cands:
        with np.errstate(invalid="ignore"):
            tc = np.clip(tau, lo_safe, hi)
        tc = np.where(np.isfinite(tc), tc, lo_safe)
        D = dA + tc[..., None] * dB
        h = np.maximum(np.abs(D[..., 0]) - two_a, 0.0)
        g = h * h + np.sum(D[..., 1:] ** 2, axis=-1)
        best = np.minimum(best, g)
    return np.where((hi >= lo) & np.isfinite(lo), best, np.inf)


def _contact_pair_violation(p1, w1, p2, w2, eps, two_a):
    """Ball union of the contact-pair recollision test under a common shift.

    Backward flow with the wall at eps/2.  Before any bounce the pair
    recedes from contact (no violation); while exactly one particle has
    bounced a common shift u displaces the difference by 2(u.e1)e1, giving
    a deadzone of half-width two_a in the e1 component; after both bounces
    the shift cancels again.
    """
    wall = 0.5 * eps
    with np.errstate(divide="ignore", invalid="ignore"):
        tb1 = np.where(w1[..., 0] > 0, (p1[..., 0] - wall) /
                       np.where(w1[..., 0] > 0, w1[..., 0], 1.0), np.inf)
        tb2 = np.where(w2[..., 0] > 0, (p2[..., 0] - wall) /
                       np.where(w2[..., 0] > 0, w2[..., 0], 1.0), np.inf)
    b_lo = np.minimum(tb1, tb2)
    b_hi = np.maximum(tb1, tb2)

    def branch(p, w, mirrored):
        a = p.copy()
        bvec = -w
        if mirrored is not None:
            a = np.where(mirrored[..., None], _mirror_x(p, wall), a)
            bvec = np.where(mirrored[..., None], -_mirror_v(w), bvec)
        return a, bvec

    # exactly-one-bounce window
    m1 = tb1 <= b_lo
    A1, B1 = branch(p1, w1, m1)
    A2, B2 = branch(p2, w2, ~m1)
    gmin = _deadzone_segment_min_sq(A1 - A2, B1 - B2, two_a, b_lo, b_hi)
    viol = gmin <= eps * eps
    # both bounced: the common shift cancels, plain quadratic tail
    A1b, B1b = branch(p1, w1, np.ones(p1.shape[:-1], dtype=bool))
    A2b, B2b = branch(p2, w2, np.ones(p2.shape[:-1], dtype=bool))
    from .free_flow import _segment_min_sq
    qtail = _segment_min_sq(A1b - A2b, B1b - B2b, b_hi,
                            np.full_like(b_hi, np.inf), np.isfinite(b_hi))
    viol |= qtail <= eps * eps
    return viol


def _mirror_x(p, wall):
    out = p.copy()
    out[..., 0] = 2.0 * wall - out[..., 0]
    return out


def _mirror_v(w):
    out = w.copy()
    out[..., 0] = -out[..., 0]
    return out


def _bad_set_k1(z_bar, cuts, omegas, vs, a_values):
    """Vectorized single-receiver case."""
    eps = cuts.eps
    x_bar = z_bar.x[0]
    v_bar = z_bar.v[0]
    val = np.sum(omegas * (vs - v_bar), axis=1)
    post = val > 0
    v_recv = np.broadcast_to(v_bar, vs.shape).copy()
    vr_s, vn_s = scattering_map(v_recv, vs, omegas)
    w_recv = np.where(post[:, None], vr_s, v_recv)
    w_new = np.where(post[:, None], vn_s, vs)

    # Free clause: both points at the nominal position, separation after the
    # gap time must exceed eps0 (independent of the perturbation radius).
    base = np.broadcast_to(x_bar, vs.shape)
    free_min = pair_min_backward_distance(base, w_recv, base, w_new,
                                          wall=0.0, tau_lo=cuts.delta)
    bad_free = (free_min <= cuts.eps0) | (val == 0.0)

    p1 = base
    p2 = base + eps * omegas
    out = []
    for a in a_values:
        hard = _contact_pair_violation(p1, w_recv, p2, w_new, eps, 2.0 * a)
        out.append(bad_free | hard)
    return out


def _bad_set_generic(z_bar, cuts, omegas, vs, a_values):
    """Scalar path for several particles; receiver is the last one."""
    import itertools

    eps = cuts.eps
    k = z_bar.s
    d = z_bar.d
    n = len(vs)
    s0 = specular_reflect
    bad_per_a = [np.zeros(n, dtype=bool) for _ in a_values]
    vel_choices = list(itertools.product((0, 1), repeat=k - 1))

    for m in range(n):
        omega = omegas[m]
        v = vs[m]
        val = float(np.dot(omega, v - z_bar.v[k - 1]))
        if val == 0.0:
            for bad in bad_per_a:
                bad[m] = True
            continue
        if val > 0:
            w_recv, w_new = scattering_map(z_bar.v[k - 1], v, omega)
        else:
            w_recv, w_new = z_bar.v[k - 1].copy(), v.copy()

        # Free clause on the nominal configuration.
        viol_free = False
        for i in range(k - 1):
            if pair_min_backward_distance(z_bar.x[i], z_bar.v[i], z_bar.x[k - 1],
                                          w_new, tau_lo=cuts.delta) <= cuts.eps0:
                viol_free = True
            if val > 0 and pair_min_backward_distance(
                    z_bar.x[i], z_bar.v[i], z_bar.x[k - 1], w_recv,
                    tau_lo=cuts.delta) <= cuts.eps0:
                viol_free = True
        if pair_min_backward_distance(z_bar.x[k - 1], w_recv, z_bar.x[k - 1],
                                      w_new, tau_lo=cuts.delta) <= cuts.eps0:
            viol_free = True

        cum = viol_free
        for ai, a in enumerate(a_values):
            if not cum:
                cum = _hard_violation(z_bar, cuts, omega, w_recv, w_new, a,
                                      vel_choices)
            bad_per_a[ai][m] = cum
    return bad_per_a


def _hard_violation(z_bar, cuts, omega, w_recv, w_new, a, vel_choices):
    """Ball-union hard clause: independent shifts of two distinct spheres
    inflate their contact threshold by 2a; the contact pair shares its
    shift and gets the e1 deadzone."""
    eps = cuts.eps
    k = z_bar.s
    xs = z_bar.x
    x_new = xs[k - 1] + eps * omega
    for choice in vel_choices:
        vel = z_bar.v.copy()
        for i, c in enumerate(choice):
            if c:
                vel[i] = specular_reflect(vel[i])
        vel[k - 1] = w_recv
        # admissibility: the substituted nominal configuration stays contact
        # free along the backward flow
        if not _contact_free(xs, vel, eps):
            continue
        for i in range(k - 1):
            if pair_min_backward_distance(xs[i], vel[i], x_new, w_new,
                                          wall=0.5 * eps) <= eps + 2 * a:
                return True
            if pair_min_backward_distance(xs[i], vel[i], xs[k - 1], w_recv,
                                          wall=0.5 * eps) <= eps + 2 * a:
                return True
        if _contact_pair_violation(xs[k - 1][None, :], np.asarray(w_recv)[None, :],
                                   x_new[None, :], np.asarray(w_new)[None, :],
                                   eps, 2.0 * a)[0]:
            return True
    return False


def _contact_free(xs, vel, eps):
    kk = xs.shape[0]
    for i in range(kk):
        for j in range(i + 1, kk):
            if np.linalg.norm(xs[i] - xs[j]) < eps:
                return False
            if pair_min_backward_distance(xs[i], vel[i], xs[j], vel[j],
                                          wall=0.5 * eps) <= eps:
                return False
    return True


def stability_cover_estimate(z_bar, cuts, samples, rng, a_values=None):
    """Measure of the explicit covering set of the bad adjunction parameters.

    The cover collects the near-velocity ball, the wall-mirror cylinders of
    the receiver (radii 10 R a / rho and eps0/delta), and for every other
    particle the shooting cylinders (radii 12 and 16 R a / eps0 plus the
    free radius) applied to the post-scattering velocities when the pair is
    created post-collisional.  Cylinder radii grow linearly in `a`, so the
    shared-sample estimates over `a_values` are monotone pointwise.
    """
    k = z_bar.s
    d = z_bar.d
    if a_values is None:
        a_values = [cuts.a]
    a_values = sorted(a_values)
    if z_bar.x[k - 1, 0] < cuts.rho:
        raise ValueError("precondition: receiver closer to the wall than rho")
    omegas = sample_unit_sphere(rng, d, samples)
    vs = sample_ball(rng, d, cuts.R, samples)
    s0 = specular_reflect

    v_bar = z_bar.v[k - 1]
    val = np.sum(omegas * (vs - v_bar), axis=1)
    post = val > 0
    vr_s, vn_s = scattering_map(np.broadcast_to(v_bar, vs.shape), vs, omegas)
    w_recv = np.where(post[:, None], vr_s, np.broadcast_to(v_bar, vs.shape))
    w_new = np.where(post[:, None], vn_s, vs)

    base = (np.linalg.norm(vs - v_bar, axis=1) <= cuts.eta) | (val == 0.0)
    # tangential distance to the receiver's wall mirror (axis e1)
    tang = np.linalg.norm(w_new[:, 1:] - s0(w_recv)[:, 1:], axis=1)

    pair_dists = []
    for i in range(k - 1):
        for anchor, axis in ((z_bar.v[i], z_bar.x[i] - z_bar.x[k - 1]),
                             (s0(z_bar.v[i]), s0(z_bar.x[i]) - z_bar.x[k - 1])):
            pair_dists.append((point_line_distance(w_new - anchor, axis),
                               point_line_distance(w_recv - anchor, axis)))

    total = sphere_surface_measure(d) * ball_volume(d, cuts.R)
    out = []
    for a in a_values:
        r_wall = max(10 * cuts.R * a / cuts.rho, cuts.eps0 / cuts.delta)
        r_pair = max(16 * cuts.R * a / cuts.eps0, cuts.eps0 / cuts.delta)
        hit = base | (tang <= r_wall)
        for dist_new, dist_recv in pair_dists:
            hit = hit | (dist_new <= r_pair) | (post & (dist_recv <= r_pair))
        frac = float(hit.mean())
        se = math.sqrt(max(frac * (1 - frac), 1.0 / samples) / samples)
        out.append((a, MeasureEstimate(frac * total, se * total, frac, samples)))
    return out
