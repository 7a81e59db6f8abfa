"""Initial one-particle density: truncated Gaussian in position, Maxwellian
in velocity.

f0(x, v) = A exp(-|x - x0|^2 / (2 sigma^2)) exp(-beta0 |v|^2 / 2) on the
half-space, normalized in closed form.  The square root is Lipschitz in the
position variable with an explicit constant, which is what the trajectory-
divergence estimates consume.  sigma=None selects the spatially homogeneous
variant (velocity part only, not a probability density; used to exercise
identities that require position-independent data).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .geometry import Configuration


def _phi(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


@dataclass
class InitialData:
    beta0: float = 1.0
    d: int = 2
    sigma: float | None = 1.0
    center: np.ndarray | None = None

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ValueError("beta0 must be > 0")
        if self.center is None:
            c = np.zeros(self.d)
            c[0] = 1.5
            self.center = c
        else:
            self.center = np.asarray(self.center, dtype=float)
        self.vel_mass = (2.0 * math.pi / self.beta0) ** (self.d / 2.0)
        if self.sigma is None:
            self.pos_mass = None
            self.amplitude = 1.0 / self.vel_mass
        else:
            if self.sigma <= 0:
                raise ValueError("sigma must be > 0")
            self.pos_mass = (2.0 * math.pi * self.sigma**2) ** (self.d / 2.0) \
                * _phi(self.center[0] / self.sigma)
            self.amplitude = 1.0 / (self.pos_mass * self.vel_mass)

    @property
    def homogeneous(self):
        return self.sigma is None

    @property
    def mu0(self):
        """Weight making |f0| e^{beta |v|^2/2} <= exp(-mu0) an equality at the peak."""
        return -math.log(self.amplitude)

    @property
    def sqrt_lipschitz_x(self):
        """Supremum of |grad_x sqrt(f0)|, uniform in the velocity."""
        if self.homogeneous:
            return 0.0
        return math.sqrt(self.amplitude) * math.exp(-0.5) / (self.sigma * math.sqrt(2.0))

    def f0(self, x, v):
        """Density at (x, v); vectorized over leading axes."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        arg = -0.5 * self.beta0 * np.sum(v * v, axis=-1)
        if not self.homogeneous:
            dx = x - self.center
            arg = arg - np.sum(dx * dx, axis=-1) / (2.0 * self.sigma**2)
        return self.amplitude * np.exp(arg)

    def f0_product(self, x, v):
        """Tensorized density over the particle axis (second to last)."""
        return np.prod(self.f0(x, v), axis=-1)

    def f0_config(self, cfg):
        return float(self.f0_product(cfg.x, cfg.v))

    def sample_velocities(self, rng, n):
        return rng.normal(0.0, 1.0 / math.sqrt(self.beta0), (n, self.d))

    def sample_positions(self, rng, n):
        if self.homogeneous:
            raise ValueError("homogeneous profile has no position law")
        lo = (0.0 - self.center[0]) / self.sigma
        x1 = stats.truncnorm.rvs(lo, np.inf, loc=self.center[0],
                                 scale=self.sigma, size=n, random_state=rng)
        out = np.empty((n, self.d))
        out[:, 0] = x1
        for ax in range(1, self.d):
            out[:, ax] = rng.normal(self.center[ax], self.sigma, n)
        return out

    def sample_particles(self, rng, n):
        return self.sample_positions(rng, n), self.sample_velocities(rng, n)

    def mass_quadrature(self, grid=160, span=7.0):
        """Numerical check of the normalization over a box covering the mass."""
        if self.homogeneous:
            raise ValueError("homogeneous profile is not normalized")
        s = self.sigma
        c = self.center
        xs = [np.linspace(max(0.0, c[0] - span * s) if ax == 0 else c[ax] - span * s,
                          c[ax] + span * s, grid) for ax in range(self.d)]
        vs = [np.linspace(-span / math.sqrt(self.beta0), span / math.sqrt(self.beta0), grid)
              for _ in range(self.d)]
        xs[0] = np.linspace(0.0, c[0] + span * s, grid)
        total = 1.0
        for ax in range(self.d):
            g = np.exp(-(xs[ax] - c[ax]) ** 2 / (2 * s * s))
            total *= np.trapezoid(g, xs[ax])
        for ax in range(self.d):
            g = np.exp(-0.5 * self.beta0 * vs[ax] ** 2)
            total *= np.trapezoid(g, vs[ax])
        return self.amplitude * total
