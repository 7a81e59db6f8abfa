"""Closed-form transport of point particles with a specular flat wall.

A particle bounces at most once in each time direction against the flat
wall, so the trajectory is piecewise linear with a single kink and the
post-bounce branch is the mirror image of the virtual straight line.  That
makes the infimum of a pair distance over all of backward time an exact
finite computation: at most three linear segments, each a point-to-line
minimization.
"""

import numpy as np

from .geometry import Configuration, specular_reflect

_INF = np.inf
TOL_SEG = 1e-15


def free_transport(x, v, t, wall=0.0):
    """Transport (x, v) for time t with specular reflection at {x.e1 = wall}.

    The e1-coordinate becomes wall + |x.e1 - wall + t v.e1| and the
    e1-velocity flips sign iff the virtual straight line ends below the
    wall.  Works for negative t.  x, v accept shape (..., d) and t may be a
    scalar or broadcastable array of shape (...).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    t = np.asarray(t, dtype=float)
    y = x + t[..., None] * v
    bounced = y[..., 0] < wall
    xo = y.copy()
    xo[..., 0] = wall + np.abs(y[..., 0] - wall)
    vo = v.copy() if v.shape == xo.shape else np.broadcast_to(v, xo.shape).copy()
    vo[..., 0] = np.where(bounced, -vo[..., 0], vo[..., 0])
    return xo, vo


def transport_configuration(cfg, t, wall=0.0):
    """free_transport applied to every particle of a point configuration."""
    x, v = free_transport(cfg.x, cfg.v, t, wall=wall)
    return Configuration(cfg.eps, x, v)


def backward_bounce_time(x, v, wall=0.0):
    """Time tau > 0 at which x - tau v crosses {x.e1 = wall}; inf if never."""
    x1 = np.asarray(x, dtype=float)[..., 0]
    v1 = np.asarray(v, dtype=float)[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        tb = (x1 - wall) / v1
    return np.where(v1 > 0, tb, _INF)


def _segment_min_sq(dA, dB, lo, hi, valid):
    """Min over tau in [lo, hi] of |dA + tau dB|^2 where valid, else inf."""
    bb = np.sum(dB * dB, axis=-1)
    ab = np.sum(dA * dB, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tstar = np.where(bb > 0, -ab / np.where(bb > 0, bb, 1.0), lo)
        tc = np.clip(tstar, lo, hi)
    lo_safe = np.where(np.isfinite(lo), lo, 0.0)
    tc = np.where(np.isfinite(tc), tc, lo_safe)
    q = np.sum((dA + tc[..., None] * dB) ** 2, axis=-1)
    return np.where(valid & (hi >= lo), q, _INF)


def pair_min_backward_distance(x1, v1, x2, v2, wall=0.0, tau_lo=0.0, horizon=None,
                               skip_first_segment=False):
    """Infimum over tau in [tau_lo, horizon] of the backward free-flow pair distance.

    Backward flow means positions x_i - tau v_i reflected at the wall.  On
    each of the <= 3 segments cut by the two bounce times the difference is
    affine in tau, so the minimum is exact.  Vectorized over leading axes.

    skip_first_segment drops the segment before the first bounce; used for
    pairs created in contact whose initial separation is excluded from the
    good-configuration condition.
    """
    x1 = np.asarray(x1, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    hor = np.inf if horizon is None else np.asarray(horizon, dtype=float)
    tau_lo = np.broadcast_to(np.asarray(tau_lo, dtype=float), x1.shape[:-1])
    hor = np.broadcast_to(hor, tau_lo.shape)

    tb1 = backward_bounce_time(x1, v1, wall)
    tb2 = backward_bounce_time(x2, v2, wall)
    b_lo = np.minimum(tb1, tb2)
    b_hi = np.maximum(tb1, tb2)

    # Particle line parameters before/after its own bounce.
    def lines(x, v):
        pre = (x, -v)
        post_x = x.copy()
        post_x[..., 0] = 2.0 * wall - post_x[..., 0]
        post = (post_x, -specular_reflect(v))
        return pre, post

    pre1, post1 = lines(x1, v1)
    pre2, post2 = lines(x2, v2)

    best = np.full(x1.shape[:-1], _INF)
    bounds = [
        (tau_lo, np.minimum(b_lo, hor)),
        (np.maximum(b_lo, tau_lo), np.minimum(b_hi, hor)),
        (np.maximum(b_hi, tau_lo), hor),
    ]
    if skip_first_segment:
        bounds = bounds[1:]
    for lo, hi in bounds:
        valid = hi > lo - TOL_SEG
        # Which branch each particle uses on [lo, hi]: post iff lo >= bounce time.
        use_post1 = lo >= tb1
        use_post2 = lo >= tb2
        A1 = np.where(use_post1[..., None], post1[0], pre1[0])
        B1 = np.where(use_post1[..., None], post1[1], pre1[1])
        A2 = np.where(use_post2[..., None], post2[0], pre2[0])
        B2 = np.where(use_post2[..., None], post2[1], pre2[1])
        q = _segment_min_sq(A1 - A2, B1 - B2, lo, hi, valid)
        best = np.minimum(best, q)
    return np.sqrt(best)


def min_future_pair_distance(x1, v1, x2, v2, horizon=None):
    """Exact infimum over tau in (0, horizon) of the backward free-flow distance."""
    val = pair_min_backward_distance(x1, v1, x2, v2, wall=0.0, tau_lo=0.0,
                                     horizon=horizon)
    return float(val) if np.ndim(val) == 0 else val


def good_config_free(cfg, c, tau_lo=0.0, wall=0.0):
    """True iff every pair stays at distance > c along all of backward free flow.

    cfg is a point configuration (eps = 0 semantics); wall may be shifted
    for the contact analysis of hard spheres.
    """
    s = cfg.s
    for i in range(s):
        for j in range(i + 1, s):
            dmin = pair_min_backward_distance(
                cfg.x[i], cfg.v[i], cfg.x[j], cfg.v[j], wall=wall, tau_lo=tau_lo
            )
            if dmin <= c:
                return False
    return True
