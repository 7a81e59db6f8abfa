"""Event-driven transport of N hard spheres in the half-space.

Forward and backward flow (backward runs as forward flow of the
velocity-reversed state, which keeps the two directions on a single code
path and makes reversibility exact up to rounding), with detection of
near-simultaneous events sharing a particle.  Exact ties make the dynamics
ill-defined; they are flagged, never resolved.

Event scheduling uses an invalidation-based priority queue: after an event
only the candidates of the particles involved are recomputed, each in one
vectorized pass over the other particles.
"""

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .free_flow import pair_min_backward_distance
from .geometry import Configuration, phase_space_contains, scattering_map, specular_reflect, TOL

# Two candidate events closer than this and sharing a particle count as a
# tie: almost-everywhere well-posedness only, so ties are detected, not
# resolved.
GAP_TOL = 1e-9


@dataclass
class Event:
    kind: str  # "pair" or "wall"
    i: int
    j: int | None
    time: float

    def involves(self, other):
        mine = {self.i} if self.j is None else {self.i, self.j}
        theirs = {other.i} if other.j is None else {other.i, other.j}
        return bool(mine & theirs)


@dataclass
class FlowResult:
    final: Configuration
    events: list
    pathological: bool
    min_event_gap: float
    states: list | None = None  # (time, x, v) snapshots when recorded


def pair_collision_time(x1, v1, x2, v2, eps, tol=TOL):
    """Smallest t > 0 at which the pair reaches distance eps while approaching.

    None when the quadratic has no admissible root (receding pairs, missed
    approaches, and exact grazing with zero discriminant).  The root is
    computed as c / (-b + sqrt(disc)), which has no cancellation since the
    approaching condition forces b < 0.
    """
    dx = np.asarray(x2, dtype=float) - np.asarray(x1, dtype=float)
    dv = np.asarray(v2, dtype=float) - np.asarray(v1, dtype=float)
    b = float(np.dot(dx, dv))
    c = float(np.dot(dx, dx)) - eps * eps
    if c < -2.0 * eps * tol - tol:
        raise ValueError("overlapping input configuration")
    if b >= 0:
        return None
    a = float(np.dot(dv, dv))
    disc = b * b - a * c
    if disc <= 0:
        return None
    t = c / (-b + math.sqrt(disc))
    return max(t, 0.0)


def wall_bounce_time(x, v, eps):
    """Time of the next wall contact, None if the particle moves away."""
    v1 = float(np.asarray(v, dtype=float)[0])
    if v1 >= 0:
        return None
    x1 = float(np.asarray(x, dtype=float)[0])
    return max((x1 - 0.5 * eps) / (-v1), 0.0)


class _Scheduler:
    """Min-heap of candidate events with per-particle invalidation stamps."""

    def __init__(self, x, v, eps):
        self.x = x
        self.v = v
        self.eps = eps
        self.s = x.shape[0]
        self.stamp = np.zeros(self.s, dtype=np.int64)
        self.heap = []
        self.counter = 0
        for i in range(self.s):
            self._push_wall(i, 0.0)
        for i in range(self.s):
            self._push_pairs(i, 0.0, lower=True)

    def _push(self, t_abs, kind, i, j):
        entry = (
            t_abs,
            self.counter,
            kind,
            i,
            j,
            self.stamp[i],
            self.stamp[j] if j is not None else -1,
        )
        self.counter += 1
        heapq.heappush(self.heap, entry)

    def _push_wall(self, i, now):
        if self.v[i, 0] < 0:
            t = (self.x[i, 0] - 0.5 * self.eps) / (-self.v[i, 0])
            self._push(now + max(t, 0.0), "wall", i, None)

    def _push_pairs(self, i, now, lower=False, skip=()):
        # Vectorized candidate times of particle i against the others.
        dx = self.x - self.x[i]
        dv = self.v - self.v[i]
        b = np.sum(dx * dv, axis=1)
        a = np.sum(dv * dv, axis=1)
        c = np.sum(dx * dx, axis=1) - self.eps * self.eps
        disc = b * b - a * c
        mask = (b < 0) & (disc > 0)
        mask[i] = False
        for k in skip:
            mask[k] = False  # pair already pushed from the other endpoint
        if lower:
            mask[: i + 1] = False  # initial full sweep: each pair once
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            return
        t = np.maximum(c[idx] / (-b[idx] + np.sqrt(disc[idx])), 0.0)
        for j, tj in zip(idx, t):
            self._push(now + tj, "pair", min(i, int(j)), max(i, int(j)))

    def _valid(self, entry):
        _, _, kind, i, j, si, sj = entry
        if self.stamp[i] != si:
            return False
        if j is not None and self.stamp[j] != sj:
            return False
        return True

    def pop_valid(self):
        while self.heap:
            entry = heapq.heappop(self.heap)
            if self._valid(entry):
                return entry
        return None

    def drain_until(self, t_limit):
        """Pop all valid entries with time <= t_limit."""
        out = []
        while self.heap:
            if self.heap[0][0] > t_limit:
                break
            entry = heapq.heappop(self.heap)
            if self._valid(entry):
                out.append(entry)
        return out

    def push_back(self, entries):
        for e in entries:
            heapq.heappush(self.heap, e)

    def invalidate_and_reschedule(self, particles, now):
        for i in particles:
            self.stamp[i] += 1
        for pos, i in enumerate(particles):
            self._push_wall(i, now)
            self._push_pairs(i, now, skip=particles[:pos])


def advance(cfg, t, gap_tol=GAP_TOL, record=False, max_events=1_000_000):
    """Follow the hard-sphere dynamics for time t (t < 0 runs backward).

    Backward flow negates all velocities, advances |t| forward, and negates
    again, which is exact by elastic reversibility.  Event times in the
    result are relative to the start of the call and increase within [0, |t|].

    The run stops early with pathological=True when two valid candidate
    events within gap_tol of each other share a particle.
    """
    if not (np.all(np.isfinite(cfg.x)) and np.all(np.isfinite(cfg.v)) and math.isfinite(t)):
        raise ValueError("non-finite state")
    if not phase_space_contains(cfg):
        raise ValueError("configuration outside the phase space")
    backward = t < 0
    x = cfg.x.copy()
    v = -cfg.v.copy() if backward else cfg.v.copy()
    t_end = abs(t)
    eps = cfg.eps

    sched = _Scheduler(x, v, eps)
    events = []
    states = [(0.0, x.copy(), (-v if backward else v).copy())] if record else None
    now = 0.0
    prev_event_time = None
    min_gap = math.inf
    pathological = False

    while True:
        if len(events) >= max_events:
            raise RuntimeError("event budget exhausted")
        entry = sched.pop_valid()
        if entry is None or entry[0] > t_end:
            if entry is not None:
                sched.push_back([entry])
            break
        t_ev, _, kind, i, j, _, _ = entry

        # Tie detection among currently valid candidates.
        near = sched.drain_until(t_ev + gap_tol)
        ev = Event(kind, i, j, t_ev)
        tie = None
        for other in near:
            oev = Event(other[2], other[3], other[4], other[0])
            if ev.involves(oev):
                tie = oev
                break
        sched.push_back(near)
        if tie is not None:
            x += (t_ev - now) * v
            now = t_ev
            min_gap = min(min_gap, tie.time - t_ev)
            pathological = True
            events.append(ev)
            if record:
                states.append((now, x.copy(), (-v if backward else v).copy()))
            break

        # Free flight of every particle to the event time, then the elastic map.
        x += (t_ev - now) * v
        now = t_ev
        if prev_event_time is not None:
            min_gap = min(min_gap, t_ev - prev_event_time)
        prev_event_time = t_ev
        if kind == "wall":
            v[i, 0] = -v[i, 0]
            touched = (i,)
        else:
            omega = (x[j] - x[i]) / np.linalg.norm(x[j] - x[i])
            vi, vj = scattering_map(v[i], v[j], omega)
            v[i], v[j] = vi, vj
            touched = (i, j)
        events.append(ev)
        sched.invalidate_and_reschedule(touched, now)
        if record:
            states.append((now, x.copy(), (-v if backward else v).copy()))
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite state during advance")

    if not pathological:
        x += (t_end - now) * v
        now = t_end
        if record:
            states.append((now, x.copy(), (-v if backward else v).copy()))
    final_v = -v if backward else v
    final = Configuration(eps, x.copy(), final_v.copy())
    return FlowResult(final, events, pathological, min_gap, states)


class GoodConfigUndetermined(Exception):
    """Raised when the horizon is too short to certify a good configuration."""


def good_config_hard(cfg, c, horizon, gap_tol=GAP_TOL):
    """True iff the backward hard-sphere flow keeps all pair distances > c.

    The flow is followed up to `horizon`; distances are checked at event
    times and at the interior minimum of every free-flight segment.  The
    verdict is only returned when it is decidable: a dip <= c decides False
    at once, and at the horizon every pair must be mutually receding and
    every particle moving away from the wall (backward), which makes all
    distances monotone afterwards.  Otherwise GoodConfigUndetermined is
    raised, which the caller must treat distinctly from False.
    """
    if c < cfg.eps:
        raise ValueError("separation must be >= the diameter")
    res = advance(cfg, -horizon, gap_tol=gap_tol, record=True)
    if res.pathological:
        raise GoodConfigUndetermined("pathological backward flow")
    # A pair event is a contact at distance eps <= c; decide exactly rather
    # than through the rounded segment minimum.
    if any(ev.kind == "pair" for ev in res.events):
        return False
    s = cfg.s
    snaps = res.states
    for (t0, x0, v0), (t1, x1, v1) in zip(snaps[:-1], snaps[1:]):
        seg = t1 - t0
        if seg < 0:
            continue
        for i in range(s):
            for j in range(i + 1, s):
                # Backward segment: positions x0 - tau * v0 for tau in [0, seg].
                dmin = _segment_pair_min(x0[i], v0[i], x0[j], v0[j], seg)
                if dmin <= c:
                    return False
    # Decidability at the horizon: all pairs receding, no wall approach.
    # Backward motion continues as x - tau * v, so a recorded velocity with
    # positive e1-component still heads toward the wall.
    t_h, x_h, v_h = snaps[-1]
    if np.any(v_h[:, 0] > 0):
        raise GoodConfigUndetermined("particle still approaching the wall")
    for i in range(s):
        for j in range(i + 1, s):
            dx = x_h[j] - x_h[i]
            dvb = -(v_h[j] - v_h[i])  # backward relative velocity
            if np.dot(dx, dvb) <= 0:
                raise GoodConfigUndetermined("pair not yet receding at horizon")
    return True


def _segment_pair_min(xi, vi, xj, vj, seg):
    dx = xj - xi
    dv = -(vj - vi)
    bb = float(np.dot(dv, dv))
    if bb == 0:
        return float(np.linalg.norm(dx))
    tstar = min(max(-float(np.dot(dx, dv)) / bb, 0.0), seg)
    return float(np.linalg.norm(dx + tstar * dv))


def good_config_hard_contact_free(cfg, horizon=None):
    """Closed-form test of `all pair distances > eps along backward flow`.

    Valid precisely for separation c = eps: the true flow coincides with
    per-particle wall-only flow until the first pair contact, and the first
    wall-only dip to eps is that contact.  Pairs are therefore decided by
    the piecewise-linear pair minimum with the wall shifted to eps/2.
    """
    eps = cfg.eps
    wall = 0.5 * eps
    for i in range(cfg.s):
        for j in range(i + 1, cfg.s):
            dmin = pair_min_backward_distance(
                cfg.x[i], cfg.v[i], cfg.x[j], cfg.v[j], wall=wall, horizon=horizon
            )
            if dmin <= eps:
                return False
    return True


def sample_admissible(rng, n_particles, eps, box_radius, d, max_rejects=10_000_000):
    """Uniform positions in [eps/2, R] x [-R, R]^{d-1}, velocities in B(0, R).

    Rejection to the hard-sphere phase space.
    """
    from .geometry import sample_ball

    R = box_radius
    for _ in range(max_rejects):
        x = np.empty((n_particles, d))
        x[:, 0] = rng.uniform(0.5 * eps, R, size=n_particles)
        x[:, 1:] = rng.uniform(-R, R, size=(n_particles, d - 1))
        v = sample_ball(rng, d, R, n_particles)
        cfg = Configuration(eps, x, v)
        if phase_space_contains(cfg):
            return cfg
    raise RuntimeError("no admissible sample found")


def pathology_probe(n_particles, eps, box_radius, t, samples, gap_tols, seed, d=2):
    """Fraction of sampled initial states whose flow hits a same-particle tie.

    gap_tols is a sequence of tolerances evaluated on the same sampled
    initial configurations (common random numbers), so the detected
    fractions are monotone in the tolerance by construction.  Returns a
    list of (gap_tol, fraction, count) with `samples` draws each.
    """
    rng = np.random.default_rng(seed)
    cfgs = [sample_admissible(rng, n_particles, eps, box_radius, d) for _ in range(samples)]
    out = []
    for tol in gap_tols:
        hits = 0
        for cfg in cfgs:
            if advance(cfg, t, gap_tol=tol).pathological:
                hits += 1
        out.append((tol, hits / samples, hits))
    return out
