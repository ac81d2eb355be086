"""First-order update rules and the single-trajectory driver.

Update rules, all with step size alpha_k and (where applicable) damping
mu_k or momentum factor beta:

    vsgd                x_k = x_{k-1} - alpha_k F_k
    msgd_damped         v_k = v_{k-1} - mu_k alpha_k v_{k-1} - alpha_k F_k
                        x_k = x_{k-1} + alpha_k v_k
    msgd_classical      v_k = beta v_{k-1} - alpha_k F_k
                        x_k = x_{k-1} + v_k
    nasgd               beta_k = (1 - mu_k alpha_k) alpha_k / alpha_{k-1}
                        y_k = x_{k-1} + beta_k (x_{k-1} - x_{k-2})
                        v_k = (1 - mu_k alpha_k) v_{k-1} - alpha_k F(y_k)
                        x_k = x_{k-1} + alpha_k v_k
    nesterov_classical  y_k = x_{k-1} + beta (x_{k-1} - x_{k-2})
                        x_k = y_k - alpha_k F(y_k)

F_k denotes the oracle draw at x_{k-1} (at y_k for the look-ahead rules).
All states start with v_0 = 0 and x_{-1} = x_0, which makes the first
look-ahead step coincide with the plain damped step.

The damped and classical momentum forms are conjugate: running
msgd_classical with beta = 1 - mu * alpha and step size alpha^2 reproduces
the msgd_damped iterates with v_classical_k = alpha * v_damped_k, on any
problem, for constant alpha.

The weighted running average follows x_bar_n = sum_{k<=n} alpha_k x_{k-1}
/ sum_{k<=n} alpha_k, updated incrementally; the weight of iteration k is
the step size applied to the *previous* iterate.

Step arithmetic is written against arrays of shape (d,) or (replicas, d)
with scalar coefficients, so the Monte Carlo engine reuses these exact
expressions (bitwise) on replica batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DivergenceError, ParameterError
from .lyapunov import LyapunovScalars, scalars
from .oracles import GradientOracle, OracleSample
from .problems import Problem
from .rng import derive_key
from .schedules import PowerSchedule

METHODS = ("vsgd", "msgd_damped", "msgd_classical", "nasgd", "nesterov_classical")

# A trajectory is declared divergent as soon as an iterate has a non-finite
# coordinate or leaves the ball of this radius.
DIVERGENCE_RADIUS = 1e12


@dataclass
class IterState:
    """Iteration counter plus (x, v, previous x).  v is the velocity of the
    momentum rules and stays 0 for plain SGD; x_prev feeds look-ahead."""

    k: int
    x: np.ndarray
    v: np.ndarray
    x_prev: np.ndarray


@dataclass
class AveragedState:
    """Running weighted average and total weight so far."""

    xbar: np.ndarray
    weight_sum: float


def init_state(x0) -> IterState:
    x0 = np.asarray(x0, dtype=float).copy()
    return IterState(k=0, x=x0, v=np.zeros_like(x0), x_prev=x0.copy())


def init_average(x0) -> AveragedState:
    x0 = np.asarray(x0, dtype=float)
    return AveragedState(xbar=np.zeros_like(x0), weight_sum=0.0)


def _stoch_grad(g):
    return g.stoch_grad if isinstance(g, OracleSample) else g


def _check_finite(state: IterState):
    # Only meaningful for single trajectories; replica batches are masked
    # by the experiment engine instead of raising.
    if state.x.ndim == 1 and not np.all(np.isfinite(state.x)):
        raise DivergenceError(state.k)


def vsgd_step(state: IterState, g, alpha: float) -> IterState:
    """Plain stochastic gradient step."""
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    x = state.x - alpha * _stoch_grad(g)
    out = IterState(k=state.k + 1, x=x, v=state.v, x_prev=state.x)
    _check_finite(out)
    return out


def msgd_damped_step(state: IterState, g, alpha: float, mu: float) -> IterState:
    """Damped momentum step (velocity updated first, x uses the new v)."""
    _validate_damping(alpha, mu)
    v = state.v - mu * alpha * state.v - alpha * _stoch_grad(g)
    x = state.x + alpha * v
    out = IterState(k=state.k + 1, x=x, v=v, x_prev=state.x)
    _check_finite(out)
    return out


def msgd_classical_step(state: IterState, g, alpha: float, beta: float) -> IterState:
    """Textbook momentum: v accumulates, x moves by v itself."""
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if not 0.0 <= beta < 1.0:
        raise ParameterError(f"beta must lie in [0, 1), got {beta}")
    v = beta * state.v - alpha * _stoch_grad(g)
    x = state.x + v
    out = IterState(k=state.k + 1, x=x, v=v, x_prev=state.x)
    _check_finite(out)
    return out


def nasgd_step(state: IterState, oracle: GradientOracle, alpha: float,
               alpha_prev: float, mu: float, raw=None) -> IterState:
    """Accelerated step with schedule-coupled look-ahead factor.

    beta_k = (1 - mu*alpha) * alpha / alpha_prev; the gradient is drawn at
    the look-ahead point y.  With x_prev = x (the start convention) the
    look-ahead vanishes and the step equals msgd_damped_step.
    """
    _validate_damping(alpha, mu)
    if alpha_prev <= 0:
        raise ParameterError(f"alpha_prev must be positive, got {alpha_prev}")
    beta = (1.0 - mu * alpha) * alpha / alpha_prev
    y = state.x + beta * (state.x - state.x_prev)
    if raw is None:
        raw = oracle._raw(oracle._rng, 1)[0]
    sg = oracle.stoch_grad(y, raw)
    v = (1.0 - mu * alpha) * state.v - alpha * sg
    x = state.x + alpha * v
    out = IterState(k=state.k + 1, x=x, v=v, x_prev=state.x)
    _check_finite(out)
    return out


def nesterov_classical_step(state: IterState, oracle: GradientOracle,
                            alpha: float, beta: float, raw=None) -> IterState:
    """Classical look-ahead step with fixed momentum factor beta."""
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if not 0.0 <= beta < 1.0:
        raise ParameterError(f"beta must lie in [0, 1), got {beta}")
    y = state.x + beta * (state.x - state.x_prev)
    if raw is None:
        raw = oracle._raw(oracle._rng, 1)[0]
    sg = oracle.stoch_grad(y, raw)
    x = y - alpha * sg
    out = IterState(k=state.k + 1, x=x, v=x - state.x, x_prev=state.x)
    _check_finite(out)
    return out


def _validate_damping(alpha: float, mu: float):
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if mu <= 0:
        raise ParameterError(f"mu must be positive, got {mu}")
    # The velocity decay factor 1 - mu*alpha must not turn negative; the
    # boundary mu*alpha == 1 (memoryless velocity) is allowed so schedules
    # with mu_1 * alpha_1 == 1 remain runnable.
    if mu * alpha > 1.0:
        raise ParameterError(
            f"mu * alpha = {mu * alpha} exceeds 1; the velocity update would flip sign")


def averaged_update(avg: AveragedState, x_prev_iterate, alpha: float) -> AveragedState:
    """Fold iterate x_{k-1} with weight alpha_k into the running average."""
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    x_prev_iterate = np.asarray(x_prev_iterate, dtype=float)
    w = avg.weight_sum + alpha
    xbar = avg.xbar + (alpha / w) * (x_prev_iterate - avg.xbar)
    return AveragedState(xbar=xbar, weight_sum=w)


# ---------------------------------------------------------------------------
# Trajectory recording


@dataclass(frozen=True)
class TrajectoryPoint:
    k: int
    x: np.ndarray
    v: np.ndarray
    alpha: float
    mu: float
    f: float
    grad_sq: float
    lyap: Optional[LyapunovScalars] = None
    xbar: Optional[np.ndarray] = None


@dataclass
class Trajectory:
    method: str
    points: list = field(default_factory=list)
    checkpoint_stride: int = 0
    final: Optional[IterState] = None
    averaged_final: Optional[AveragedState] = None
    seed: int = 0

    def checkpoints(self) -> np.ndarray:
        return np.array([p.k for p in self.points], dtype=int)


def checkpoint_grid(horizon: int, stride: int = 0) -> np.ndarray:
    """Checkpoint iterations: an arithmetic grid for stride >= 1, otherwise
    powers of two plus a short tail window.  Always includes 0 and horizon."""
    horizon = int(horizon)
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    if stride >= 1:
        ks = set(range(0, horizon + 1, int(stride)))
    else:
        ks = {0}
        p = 1
        while p <= horizon:
            ks.add(p)
            p *= 2
        ks.update(range(max(1, horizon - 7), horizon + 1))
    ks.add(horizon)
    return np.array(sorted(ks), dtype=int)


def run(method: str, problem: Problem, oracle: GradientOracle, s: PowerSchedule,
        iters: int, seed: int, x0, *, checkpoint_stride: int = 0,
        beta: Optional[float] = None, lyapunov_coeff: Optional[float] = None,
        lyapunov_vanishing: bool = False, averaged: bool = False) -> Trajectory:
    """Run one trajectory, recording checkpoints.

    The oracle is re-keyed to stream (seed, replica 0), so a single run
    reproduces replica 0 of an experiment with the same master seed.  With
    lyapunov_coeff set, energy scalars are recorded at each checkpoint; the
    coefficient multiplies mu_k when lyapunov_vanishing is true.  Raises
    DivergenceError with the offending iteration on blow-up.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; expected one of {METHODS}")
    iters = int(iters)
    if iters < 1:
        raise ParameterError(f"iters must be >= 1, got {iters}")
    if method in ("msgd_damped", "nasgd") and s.coeff_mu <= 0:
        raise ParameterError(f"{method} requires a positive damping schedule (coeff_mu > 0)")
    if method in ("msgd_classical", "nesterov_classical"):
        if beta is None:
            raise ParameterError(f"{method} requires a momentum factor beta")
    if lyapunov_coeff is not None and problem.minimum is None:
        raise ParameterError("energy recording requires a problem with a known minimum")

    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.dim,):
        raise ParameterError(f"x0 must have shape ({problem.dim},)")
    orc = oracle.with_key(derive_key(seed, 0))
    state = init_state(x0)
    avg = init_average(x0) if averaged else None
    grid = checkpoint_grid(iters, checkpoint_stride)
    grid_set = set(int(g) for g in grid)
    traj = Trajectory(method=method, checkpoint_stride=checkpoint_stride, seed=seed)

    def record(st: IterState, alpha: float, mu: float):
        fval = float(problem.value(st.x))
        grad = problem.gradient(st.x)
        lyap = None
        if lyapunov_coeff is not None:
            coeff = lyapunov_coeff * mu if lyapunov_vanishing else lyapunov_coeff
            lyap = scalars(problem, st.x, st.v, coeff)
        xbar = None
        if avg is not None:
            # x_bar_0 := x_0 (the single-term average) before any update.
            xbar = avg.xbar.copy() if avg.weight_sum > 0 else st.x.copy()
        traj.points.append(TrajectoryPoint(
            k=st.k, x=st.x.copy(), v=st.v.copy(), alpha=alpha, mu=mu,
            f=fval, grad_sq=float(np.einsum("...i,...i->...", grad, grad)),
            lyap=lyap, xbar=xbar))

    if 0 in grid_set:
        record(state, 0.0, 0.0)

    alpha_prev = None
    for k in range(1, iters + 1):
        alpha = s.alpha(k)
        mu = s.mu(k)
        if avg is not None:
            avg = averaged_update(avg, state.x, alpha)
        if method == "vsgd":
            g = orc.sample(state.x)
            state = vsgd_step(state, g, alpha)
        elif method == "msgd_damped":
            g = orc.sample(state.x)
            state = msgd_damped_step(state, g, alpha, mu)
        elif method == "msgd_classical":
            g = orc.sample(state.x)
            state = msgd_classical_step(state, g, alpha, beta)
        elif method == "nasgd":
            state = nasgd_step(state, orc, alpha, alpha_prev if alpha_prev else alpha, mu)
        else:
            state = nesterov_classical_step(state, orc, alpha, beta)
        if float(np.linalg.norm(state.x)) > DIVERGENCE_RADIUS:
            raise DivergenceError(k)
        alpha_prev = alpha
        if k in grid_set:
            record(state, alpha, mu)

    traj.final = state
    traj.averaged_final = avg
    return traj


def trajectory_csv(traj: Trajectory) -> str:
    """CSV with header k,alpha,mu,f,grad_sq and H,Zt,Ht appended when
    energy scalars were recorded."""
    with_lyap = any(p.lyap is not None for p in traj.points)
    cols = ["k", "alpha", "mu", "f", "grad_sq"]
    if with_lyap:
        cols += ["H", "Zt", "Ht"]
    lines = [",".join(cols)]
    for p in traj.points:
        row = [str(p.k), repr(p.alpha), repr(p.mu), repr(p.f), repr(p.grad_sq)]
        if with_lyap:
            if p.lyap is None:
                row += ["", "", ""]
            else:
                row += [repr(p.lyap.h), repr(p.lyap.z_tilde), repr(p.lyap.h_tilde)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def trajectory_json(traj: Trajectory) -> dict:
    with_lyap = any(p.lyap is not None for p in traj.points)
    out = {
        "method": traj.method,
        "seed": traj.seed,
        "checkpoint_stride": traj.checkpoint_stride,
        "points": [],
    }
    for p in traj.points:
        row = {"k": p.k, "alpha": p.alpha, "mu": p.mu, "f": p.f, "grad_sq": p.grad_sq}
        if with_lyap and p.lyap is not None:
            row.update({"H": p.lyap.h, "Zt": p.lyap.z_tilde, "Ht": p.lyap.h_tilde})
        out["points"].append(row)
    return out
