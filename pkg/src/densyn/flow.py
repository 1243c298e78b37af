"""ODE integration and flow maps.

A Dormand-Prince 5(4) embedded pair drives everything trajectory-shaped:
forward flow maps, backward flow maps (integrate the negated field), and
logged closed-loop rollouts.  Step size adapts to the embedded error
estimate; a persistent underflow raises with the offending time.
"""

from dataclasses import dataclass

import numpy as np


class IntegrationError(RuntimeError):
    """Step-size underflow or non-finite state during integration."""

    def __init__(self, msg: str, t: float):
        super().__init__(f"{msg} (t={t:.6g})")
        self.t = t


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = 1.0
    min_step: float = 1e-12

    def __post_init__(self):
        if not (0 < self.min_step <= self.max_step):
            raise ValueError("require 0 < min_step <= max_step")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")


# loose tolerances for simulation rollouts, tight ones for density work
SIM_CONFIG = IntegratorConfig(rel_tol=1e-6, abs_tol=1e-8, max_step=0.05)
DENSITY_CONFIG = IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10, max_step=0.1)


@dataclass
class Trajectory:
    """Logged closed-loop run: times, states, inputs, disturbances, cost rate."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    d: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        if self.t.ndim != 1 or (np.diff(self.t) <= 0).any():
            raise ValueError("trajectory time stamps must be strictly increasing")
        for arr in (self.x, self.u, self.d, self.cost):
            if arr.shape[0] != self.t.shape[0]:
                raise ValueError("trajectory array lengths must agree")

    def to_csv(self, path) -> None:
        n, m, p = self.x.shape[1], self.u.shape[1], self.d.shape[1]
        cols = (["t"] + [f"x_{i+1}" for i in range(n)]
                + [f"u_{i+1}" for i in range(m)]
                + [f"d_{i+1}" for i in range(p)] + ["cost"])
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(self.t.shape[0]):
                row = ([self.t[i]] + list(self.x[i]) + list(self.u[i])
                       + list(self.d[i]) + [self.cost[i]])
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


# Dormand-Prince 5(4) tableau; 4th-order embedded estimate, FSAL
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])


def _as_field(f):
    """Accept a ClosedLoopField-like object or a plain callable x -> xdot."""
    if hasattr(f, "eval_many"):
        return lambda x: np.asarray(f(x), dtype=np.float64)
    return lambda x: np.atleast_1d(np.asarray(f(x), dtype=np.float64))


def integrate(f, x0, T: float, cfg: IntegratorConfig = DENSITY_CONFIG,
              observer=None):
    """Flow map endpoint Phi_f(x0, T) for T >= 0.

    ``observer(t, x)``, when given, is called at every accepted step
    (including t=0 and t=T); it is how rollouts log without perturbing the
    integration beyond step-capping at requested times.
    """
    if T < 0:
        raise ValueError("integrate requires T >= 0")
    fn = _as_field(f)
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
    t = 0.0
    if observer is not None:
        observer(t, x)
    if T == 0.0:
        return x
    k = [None] * 7
    k[0] = fn(x)
    hstep = min(cfg.max_step, T)
    t_tiny = 1e-13 * max(1.0, abs(T))  # float residue, not a real interval
    while t < T:
        if T - t <= t_tiny:
            break
        hstep = min(hstep, T - t)
        for stage in range(1, 7):
            xs = x.copy()
            for j in range(stage):
                if _A[stage][j] != 0.0:
                    xs = xs + hstep * _A[stage][j] * k[j]
            k[stage] = fn(xs)
        x5 = x.copy()
        for j in range(7):
            if _B5[j] != 0.0:
                x5 = x5 + hstep * _B5[j] * k[j]
        err = np.zeros_like(x)
        for j in range(7):
            db = _B5[j] - _B4[j]
            if db != 0.0:
                err = err + hstep * db * k[j]
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(x), np.abs(x5))
        enorm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if not np.isfinite(enorm):
            raise IntegrationError("non-finite state during integration", t)
        if enorm <= 1.0:
            t += hstep
            x = x5
            k[0] = k[6]  # FSAL
            if observer is not None:
                observer(t, x)
            factor = 5.0 if enorm == 0.0 else min(5.0, 0.9 * enorm ** -0.2)
        else:
            factor = max(0.2, 0.9 * enorm ** -0.2)
        hstep = min(cfg.max_step, hstep * factor)
        if hstep < cfg.min_step:
            raise IntegrationError("step size underflow (stiffness?)", t)
    return x


def flow_backward(f, x, T: float, cfg: IntegratorConfig = DENSITY_CONFIG):
    """Phi_f(x, -T): integrate the negated field forward for T."""
    fn = _as_field(f)
    return integrate(lambda y: -fn(y), x, T, cfg)
