"""Truncation and surgery parameters with their compatibility constraints.

The full vector couples the sphere diameter eps, the tree depth n, the
velocity radius R, the minimum adjunction gap delta and the geometric
thresholds (a, eps0, rho, eta, alpha_graze, gamma).  Experiments that do
not perform surgery only need a subset, so validation checks every
constraint whose operands were supplied and leaves the rest alone.
"""

import math
from dataclasses import dataclass, field, fields

# Maximum admissible grazing threshold c(d); the estimates behind the
# grazing bound require alpha small, with no explicit constant available.
ALPHA_GRAZE_MAX = 1e-1


@dataclass
class CutoffParams:
    d: int = 2
    n: int | None = None              # max tree depth
    R: float | None = None            # velocity ball radius
    delta: float | None = None        # minimum gap between adjunction times
    a: float | None = None            # position perturbation radius
    eps0: float | None = None         # good-configuration separation
    rho: float | None = None          # minimum wall distance at adjunction
    eta: float | None = None          # near-velocity exclusion radius
    alpha_graze: float | None = None  # grazing-velocity threshold
    gamma: float | None = None        # line-distance threshold of the start set
    eps: float | None = None          # sphere diameter
    N: int | None = None              # particle number, N eps^{d-1} = 1

    def violations(self):
        """Messages for every checkable constraint that fails.

        A constraint is checkable when all its operands are set.  Each
        message starts with the constraint in the exact form used by the
        configuration reference.
        """
        v = []

        def have(*names):
            return all(getattr(self, nm) is not None for nm in names)

        if self.d not in (2, 3):
            v.append(f"d in {{2, 3}} (got d={self.d})")
        if have("R") and not self.R >= 1:
            v.append(f"R >= 1 (got R={self.R})")
        if have("eta") and not self.eta <= 1:
            v.append(f"eta <= 1 (got eta={self.eta})")
        if have("eps", "a") and not 2 * self.eps <= self.a:
            v.append(f"2*eps <= a (got 2*eps={2 * self.eps}, a={self.a})")
        if have("a", "eps0") and not 4 * math.sqrt(3) * self.a <= self.eps0:
            v.append(
                f"4*sqrt(3)*a <= eps0 (got 4*sqrt(3)*a={4 * math.sqrt(3) * self.a}, "
                f"eps0={self.eps0})"
            )
        if have("eps0", "eta", "delta") and not self.eps0 <= self.eta * self.delta:
            v.append(
                f"eps0 <= eta*delta (got eps0={self.eps0}, "
                f"eta*delta={self.eta * self.delta})"
            )
        if have("a", "rho") and not 3 * self.a <= self.rho:
            v.append(f"3*a <= rho (got 3*a={3 * self.a}, rho={self.rho})")
        if have("n", "eps", "a") and not 2 * self.n * self.eps <= self.a:
            v.append(
                f"2*n*eps <= a (got 2*n*eps={2 * self.n * self.eps}, a={self.a})"
            )
        if have("R", "a", "eps0", "delta", "gamma"):
            lhs = max(16 * self.R * self.a / self.eps0, self.eps0 / self.delta)
            if not lhs <= self.gamma:
                v.append(
                    f"max(16*R*a/eps0, eps0/delta) <= gamma (got {lhs}, "
                    f"gamma={self.gamma})"
                )
        if have("alpha_graze") and not self.alpha_graze <= ALPHA_GRAZE_MAX:
            v.append(
                f"alpha_graze <= {ALPHA_GRAZE_MAX} (got alpha_graze={self.alpha_graze})"
            )
        if have("N", "eps"):
            prod = self.N * self.eps ** (self.d - 1)
            if not math.isclose(prod, 1.0, rel_tol=1e-9):
                v.append(f"N*eps^(d-1) == 1 (got {prod})")
        return v

    def validate(self):
        """Raise ValueError listing every violated constraint."""
        bad = self.violations()
        if bad:
            raise ValueError("; ".join(bad))
        return self

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown cutoff parameters: {sorted(unknown)}")
        kw = dict(data)
        if "n" in kw and kw["n"] is not None:
            kw["n"] = int(kw["n"])
        if "N" in kw and kw["N"] is not None:
            kw["N"] = int(kw["N"])
        if "d" in kw:
            kw["d"] = int(kw["d"])
        return cls(**kw)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def eps_for(N, d):
    """Diameter matching the fixed-mean-free-path scaling N eps^{d-1} = 1."""
    return N ** (-1.0 / (d - 1))
