"""Comparison controllers: LQR headway tracker and the CBF safety filter.

The legacy controller tracks a desired time headway with an LQR designed in
error coordinates z1 = v - v_l, z2 = D - tau*v (lead speed frozen):

    z1' = a,   z2' = -z1 - tau*a
    cost = int (z2^2 + R a^2) dt

The continuous algebraic Riccati equation is solved by Newton-Kleinman
iteration (quadratically convergent from a stabilizing gain), and the
resulting feedback is saturated to the acceleration box.

The safety filter solves the scalar barrier QP in closed form: for the
cruise-control barrier b = D - D_min - (v^2 - v_l^2)/(2 a_max), the
constraint grad b . F + alpha*b >= 0 is linear in the ego acceleration with
coefficient -v/a_max, so it is an upper bound on u whenever v > 0.
"""

from dataclasses import dataclass

import numpy as np

from densyn.system import AccParams


class RiccatiError(RuntimeError):
    def __init__(self, msg, residuals):
        super().__init__(msg)
        self.residuals = residuals


class CbfInfeasibleError(RuntimeError):
    """The barrier constraint cannot be met at this state (v = 0, b < 0)."""


@dataclass(frozen=True)
class LqrGains:
    k_v: float
    k_d: float
    P: np.ndarray
    residual: float


@dataclass(frozen=True)
class CbfConfig:
    alpha_cbf: float = 1.0
    mode: str = "worst_case"  # or "measured"

    def __post_init__(self):
        if self.alpha_cbf <= 0:
            raise ValueError("alpha_cbf must be positive")
        if self.mode not in ("worst_case", "measured"):
            raise ValueError("mode must be 'worst_case' or 'measured'")


def _lyapunov_2x2(Ac: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Solve Ac^T P + P Ac + W = 0 for symmetric P (vectorized 4x4 solve)."""
    eye = np.eye(2)
    M = np.kron(eye, Ac.T) + np.kron(Ac.T, eye)
    P = np.linalg.solve(M, -W.reshape(4)).reshape(2, 2)
    return 0.5 * (P + P.T)


def care_residual(A, B, Q, R, P) -> float:
    res = A.T @ P + P @ A - P @ B @ np.linalg.inv(R) @ B.T @ P + Q
    return float(np.abs(res).max())


def design_lqr(p: AccParams, tol: float = 1e-12, max_iter: int = 60) -> LqrGains:
    """Headway LQR gains by Newton-Kleinman iteration.

    Returns gains in the (v - v_l, D - tau*v) parameterization with signs
    such that excess headway commands acceleration.
    """
    tau = p.tau_des
    A = np.array([[0.0, 0.0], [-1.0, 0.0]])
    B = np.array([[1.0], [-tau]])
    Q = np.diag([0.0, 1.0])
    R = np.array([[p.r_weight]])
    K = np.array([[1.0, -1.0]])  # stabilizing for all tau > 0
    residuals = []
    P = None
    for _ in range(max_iter):
        Ac = A - B @ K
        W = Q + K.T @ R @ K
        P = _lyapunov_2x2(Ac, W)
        K_new = np.linalg.solve(R, B.T @ P)
        residuals.append(care_residual(A, B, Q, R, P))
        if np.abs(K_new - K).max() < tol and residuals[-1] < 1e-9:
            K = K_new
            break
        K = K_new
    else:
        raise RiccatiError("Newton-Kleinman iteration did not converge", residuals)
    if not (np.linalg.eigvals(A - B @ K).real < 0).all():
        raise RiccatiError("closed loop unstable after Riccati solve", residuals)
    # u = -K z  =>  u = K_v (v - v_l) + K_D (D - tau v) with K = -(K_v, K_D)
    return LqrGains(k_v=float(-K[0, 0]), k_d=float(-K[0, 1]), P=P,
                    residual=residuals[-1])


def legacy_control(g: LqrGains, p: AccParams, x) -> float:
    """Saturated headway feedback: clip(K_v (v - v_l) + K_D (D - tau v))."""
    v_l, v, D = x[0], x[1], x[2]
    u = g.k_v * (v - v_l) + g.k_d * (D - p.tau_des * v)
    return float(np.clip(u, -p.a_max, p.a_max))


def legacy_control_many(g: LqrGains, p: AccParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    u = g.k_v * (X[:, 1] - X[:, 0]) + g.k_d * (X[:, 2] - p.tau_des * X[:, 1])
    return np.clip(u, -p.a_max, p.a_max)


@dataclass
class LegacyPolicy:
    """Policy-like wrapper so the LQR plugs into cost specs and rollouts."""

    gains: LqrGains
    params: AccParams

    @property
    def m(self) -> int:
        return 1

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        return legacy_control_many(self.gains, self.params, X)[:, None]

    def __call__(self, x) -> np.ndarray:
        return np.array([legacy_control(self.gains, self.params, np.atleast_1d(x))])


def barrier(p: AccParams, x) -> float:
    """Critical barrier b = D - D_min - (v^2 - v_l^2) / (2 a_max)."""
    v_l, v, D = x[0], x[1], x[2]
    return float(D - p.d_min - (v * v - v_l * v_l) / (2.0 * p.a_max))


def barrier_many(p: AccParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    return X[:, 2] - p.d_min - (X[:, 1] ** 2 - X[:, 0] ** 2) / (2.0 * p.a_max)


def cbf_constraint_bound(p: AccParams, cfg: CbfConfig, x,
                         a_l_measured: float | None = None):
    """(u_upper_bound, constraint_residual_at_v0) for the barrier QP.

    grad b . F = (v_l/a_max) a_l - (v/a_max) u + (v_l - v); with v > 0 the
    constraint grad b . F + alpha b >= 0 reads u <= u_ub.  At v = 0 the input
    coefficient vanishes and the second return carries the u-free constraint
    value instead (None, value).
    """
    v_l, v = float(x[0]), float(x[1])
    if cfg.mode == "worst_case":
        a_l = -p.a_max
    else:
        if a_l_measured is None:
            raise ValueError("measured mode needs a_l_measured")
        a_l = float(np.clip(a_l_measured, -p.a_max, p.a_max))
    b = barrier(p, x)
    base = (v_l / p.a_max) * a_l + (v_l - v) + cfg.alpha_cbf * b
    if v > 0.0:
        return base * p.a_max / v, None
    return None, base


V0_SLACK = 1e-6  # integration slop allowed on the u-free constraint at v=0


def cbf_filter(p: AccParams, cfg: CbfConfig, x, u0: float,
               a_l_measured: float | None = None) -> float:
    """Minimally filtered input: closed-form solution of the barrier QP.

    At v = 0 the input coefficient vanishes; a strictly negative residual
    there (beyond numeric slack) means the state is already past the
    critical surface and no input can help.
    """
    u_ub, v0_resid = cbf_constraint_bound(p, cfg, x, a_l_measured)
    if u_ub is None:
        if v0_resid < -V0_SLACK:
            raise CbfInfeasibleError(
                f"barrier constraint infeasible at v=0 (b={barrier(p, x):.4g})")
        return float(np.clip(u0, -p.a_max, p.a_max))
    return float(np.clip(min(u0, u_ub), -p.a_max, p.a_max))
