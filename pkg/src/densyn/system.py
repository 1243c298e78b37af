"""Dynamics abstraction F(x, u, d) with box-bounded inputs and states.

Two concrete systems are provided: the three-state cruise-control model
(lead velocity, ego velocity, gap) and a 1-d single integrator used as a
test fixture.  State boxes use projection semantics: a derivative component
pushing through a box face is zeroed, so trajectories of the saturated
field never leave the box.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from densyn import kernels_numpy
from densyn.field import Grid, GridField, interpolate_many


@dataclass(frozen=True)
class AccParams:
    """Cruise-control model parameters (SI units)."""

    v_max: float = 30.0   # m/s
    a_max: float = 3.0    # m/s^2
    d_min: float = 5.0    # m
    tau_des: float = 1.4  # s, desired time headway
    r_weight: float = 1.0  # LQR input weight
    kappa: float = 0.2    # 1/s, discount rate
    d_axis_hi: float = 80.0  # m, upper bound of the gap axis

    def __post_init__(self):
        for name in ("v_max", "a_max", "d_min", "tau_des", "r_weight", "kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"AccParams.{name} must be positive")
        if not self.tau_des * self.v_max < self.d_axis_hi:
            raise ValueError("tau_des * v_max must fit inside the gap axis")

    @classmethod
    def from_config(cls, cfg: dict) -> "AccParams":
        keys = {"v_max", "a_max", "d_min", "tau_des", "r_weight", "kappa", "d_axis_hi"}
        return cls(**{k: float(v) for k, v in cfg.items() if k in keys})


@dataclass(frozen=True)
class SystemModel:
    """Control system with bounded input/disturbance boxes and a state box."""

    name: str
    n: int
    u_lo: np.ndarray
    u_hi: np.ndarray
    d_lo: np.ndarray  # empty arrays when there is no disturbance
    d_hi: np.ndarray
    state_lo: np.ndarray
    state_hi: np.ndarray
    f_many: Callable  # (X (N,n), U (N,m), D (N,p)) -> (N,n), unsaturated
    kernel_kind: int = -1  # kernels_*.SYS_* id, or -1 for python-only systems
    control_affine: bool = True
    input_matrix: np.ndarray | None = None  # B with F = f0(x,d) + B u

    @property
    def m(self) -> int:
        return self.u_lo.shape[0]

    @property
    def p(self) -> int:
        return self.d_lo.shape[0]

    def clip_u(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.u_lo, self.u_hi)

    def clip_d(self, d: np.ndarray) -> np.ndarray:
        if self.p == 0:
            return np.zeros(np.shape(d)[:-1] + (0,)) if np.ndim(d) else d
        return np.clip(d, self.d_lo, self.d_hi)

    def eval_many(self, X: np.ndarray, U: np.ndarray, D: np.ndarray) -> np.ndarray:
        """Saturated dynamics at a batch of states."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        D = np.atleast_2d(np.asarray(D, dtype=np.float64))
        f = self.f_many(X, U, D)
        return kernels_numpy._saturate(f, X, self.state_lo, self.state_hi)

    def eval(self, x, u, d=()) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        d = np.atleast_1d(np.asarray(d, dtype=np.float64))
        return self.eval_many(x[None], u[None], d[None])[0]


def acc_system(p: AccParams) -> SystemModel:
    """Cruise control: state (v_l, v, D), input a, disturbance a_l.

    xdot = (a_l, a, v_l - v) with velocities saturated to [0, v_max].
    """

    def f_many(X, U, D):
        f = np.empty_like(X)
        f[:, 0] = D[:, 0]
        f[:, 1] = U[:, 0]
        f[:, 2] = X[:, 0] - X[:, 1]
        return f

    return SystemModel(
        name="acc",
        n=3,
        u_lo=np.array([-p.a_max]),
        u_hi=np.array([p.a_max]),
        d_lo=np.array([-p.a_max]),
        d_hi=np.array([p.a_max]),
        state_lo=np.array([0.0, 0.0, 0.0]),
        state_hi=np.array([p.v_max, p.v_max, p.d_axis_hi]),
        f_many=f_many,
        kernel_kind=kernels_numpy.SYS_ACC,
        control_affine=True,
        input_matrix=np.array([[0.0], [1.0], [0.0]]),
    )


def toy_system(u_max: float = 2.0, box: tuple = (-10.0, 10.0)) -> SystemModel:
    """1-d single integrator xdot = u, no disturbance.

    The default state box is wide so saturation never binds unless a
    fixture asks for it explicitly."""

    def f_many(X, U, D):
        return U.copy()

    return SystemModel(
        name="toy",
        n=1,
        u_lo=np.array([-u_max]),
        u_hi=np.array([u_max]),
        d_lo=np.zeros(0),
        d_hi=np.zeros(0),
        state_lo=np.array([box[0]]),
        state_hi=np.array([box[1]]),
        f_many=f_many,
        kernel_kind=kernels_numpy.SYS_TOY,
        control_affine=True,
        input_matrix=np.array([[1.0]]),
    )


# ---------------------------------------------------------------------------
# policies


@dataclass
class Policy:
    """State feedback as one grid table per input channel, clipped to a box."""

    tables: list  # list[GridField], one per channel
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if len(self.tables) != self.lo.shape[0]:
            raise ValueError("one table per input channel required")

    @property
    def grid(self) -> Grid:
        return self.tables[0].grid

    @property
    def m(self) -> int:
        return len(self.tables)

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.empty((X.shape[0], self.m))
        for c, tab in enumerate(self.tables):
            out[:, c] = np.clip(interpolate_many(tab, X), self.lo[c], self.hi[c])
        return out

    def __call__(self, x) -> np.ndarray:
        return self.eval_many(np.atleast_1d(x)[None])[0]

    def table_array(self) -> np.ndarray:
        return np.stack([t.values for t in self.tables])


@dataclass
class ConstantPolicy:
    """Policy returning a fixed input vector everywhere."""

    value: np.ndarray

    def __post_init__(self):
        self.value = np.atleast_1d(np.asarray(self.value, dtype=np.float64))

    @property
    def m(self) -> int:
        return self.value.shape[0]

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.value, (np.atleast_2d(X).shape[0], self.m)).copy()

    def __call__(self, x) -> np.ndarray:
        return self.value.copy()


def policy_from_callable(grid: Grid, fn, lo, hi) -> Policy:
    """Sample a state-feedback callable onto grid tables (one per channel)."""
    pts = grid.nodes()
    vals = np.atleast_2d(np.asarray([np.atleast_1d(fn(x)) for x in pts], dtype=np.float64))
    tables = [GridField(grid, vals[:, c], role=f"policy_{c}") for c in range(vals.shape[1])]
    return Policy(tables=tables, lo=lo, hi=hi)


def constant_policy_like(sys: SystemModel, value) -> ConstantPolicy:
    v = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return ConstantPolicy(np.clip(v, sys.d_lo, sys.d_hi) if v.shape[0] == sys.p else v)


# ---------------------------------------------------------------------------
# closed loop


@dataclass
class ClosedLoopField:
    """Autonomous field f(x) = F(x, u(x), d(x)) with inputs clipped to boxes."""

    sys: SystemModel
    pol_u: object  # Policy or ConstantPolicy
    pol_d: object | None = None  # Policy, ConstantPolicy, or None when p=0

    def __post_init__(self):
        if self.sys.p > 0 and self.pol_d is None:
            raise ValueError("system has a disturbance channel; pol_d required")

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        U = np.clip(self.pol_u.eval_many(X), self.sys.u_lo, self.sys.u_hi)
        if self.sys.p == 0:
            D = np.zeros((X.shape[0], 0))
        else:
            D = np.clip(self.pol_d.eval_many(X), self.sys.d_lo, self.sys.d_hi)
        return self.sys.eval_many(X, U, D)

    def __call__(self, x) -> np.ndarray:
        return self.eval_many(np.atleast_1d(x)[None])[0]


def closed_loop_field(sys: SystemModel, pol_u, pol_d=None) -> ClosedLoopField:
    return ClosedLoopField(sys=sys, pol_u=pol_u, pol_d=pol_d)


def divergence_many(f, X: np.ndarray, h_div, box_lo=None, box_hi=None) -> np.ndarray:
    """div f by central differences with per-axis step h_div.

    ``f`` is anything with ``eval_many``.  When a box is given (defaulting to
    the state box of a closed-loop field), points within h_div of a face use
    a one-sided difference on that axis instead of stepping outside.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if np.isscalar(h_div):
        h_div = np.full(X.shape[1], float(h_div))
    h_div = np.asarray(h_div, dtype=np.float64)
    if box_lo is None and isinstance(f, ClosedLoopField):
        box_lo, box_hi = f.sys.state_lo, f.sys.state_hi
    out = np.zeros(X.shape[0])
    for k in range(X.shape[1]):
        dp = X.copy()
        dm = X.copy()
        dp[:, k] += h_div[k]
        dm[:, k] -= h_div[k]
        denom = np.full(X.shape[0], 2.0 * h_div[k])
        if box_lo is not None:
            over = dp[:, k] > box_hi[k]
            under = dm[:, k] < box_lo[k]
            dp[over, k] = X[over, k]
            dm[under, k] = X[under, k]
            denom[over | under] = h_div[k]
            denom[over & under] = np.inf  # axis thinner than 2*h_div: skip
        out += (f.eval_many(dp)[:, k] - f.eval_many(dm)[:, k]) / denom
    return out


def divergence(f, x, h_div, box_lo=None, box_hi=None) -> float:
    return float(divergence_many(f, np.atleast_1d(x)[None], h_div, box_lo, box_hi)[0])
