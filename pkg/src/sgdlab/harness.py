"""Monte Carlo experiments over independent replicas.

`run_experiment` simulates `replicas` independent trajectories of one
configuration and aggregates per-checkpoint estimates.  Replica i draws its
noise from the counter-based stream keyed by (master_seed, i), so replica 0
of an experiment reproduces `optimizers.run` with the same seed bitwise.

Execution model: replicas are laid out in fixed consecutive blocks of
`_BLOCK_REPLICAS` and each block advances all its replicas in lock-step
with vectorized array arithmetic (the expressions match the single-state
step functions exactly).  Blocks may run on a thread pool, capped by the
SGDLAB_THREADS environment variable, but aggregation always reduces block
sums in block order and replica sums in replica order (numpy's fixed-order
pairwise summation), so results do not depend on thread count or
completion order.

Diverged replicas (non-finite coordinate or ||x|| > 1e12) are recorded
with their failing iteration, frozen, and excluded from every later
checkpoint; the experiment fails if more than `divergence_tolerance` of
replicas diverge.  Zero-noise oracles short-circuit to a single replica:
all replicas would be identical, so means are that trajectory's values and
standard errors are exactly 0.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import (ExperimentConfig, build_oracle, build_problem,
                     build_schedule, validate_config)
from .errors import ConfigError, ExperimentError
from .lyapunov import (DescentFit, LyapunovSeries, descent_fit, select_lambda,
                       select_zeta)
from .optimizers import DIVERGENCE_RADIUS, checkpoint_grid
from .problems import Convexity, Problem
from .rng import replica_stream
from .schedules import PowerSchedule, classify

_BLOCK_REPLICAS = 256   # fixed aggregation grid, independent of thread count
_RAW_BLOCK = 1024       # iterations of raw noise pre-drawn per replica


@dataclass
class MonteCarloEstimate:
    checkpoints: np.ndarray
    mean_grad_sq: np.ndarray
    se_grad_sq: np.ndarray
    mean_gap: np.ndarray
    se_gap: np.ndarray
    mean_avg_gap: Optional[np.ndarray]
    se_avg_gap: Optional[np.ndarray]
    lyap: Optional[LyapunovSeries]
    replicas: int
    diverged: int
    diverged_iterations: tuple
    config: ExperimentConfig


def threads_cap() -> int:
    raw = os.environ.get("SGDLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SGDLAB_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def resolve_lyapunov(cfg: ExperimentConfig, problem: Problem,
                     schedule: PowerSchedule):
    """(mode, coeff) actually used for energy tracking, or None.

    Constant damping uses the tilt zeta = select_zeta(L, m, m); vanishing
    damping uses the scale lambda = select_lambda(L, l_mu) multiplied by
    mu_k at each step.  Without damping the tilt is 0 (plain energy).
    """
    if not cfg.lyapunov:
        return None
    m, b = schedule.coeff_mu, schedule.exp_mu
    vanishing = m > 0 and b > 0
    if cfg.lyap_coeff is not None:
        return ("vanishing" if vanishing else "constant", float(cfg.lyap_coeff))
    if vanishing:
        cls = classify(schedule)
        l_mu = cls.l_mu if cls.l_mu is not None else 0.0
        return ("vanishing", select_lambda(problem.smoothness_l, l_mu))
    if m > 0:
        return ("constant", select_zeta(problem.smoothness_l, m, m))
    return ("constant", 0.0)


class _BlockStats:
    """Per-checkpoint sums over one replica block (alive replicas only)."""

    __slots__ = ("n", "s_gsq", "q_gsq", "s_gap", "q_gap", "s_avg", "q_avg",
                 "s_h", "s_zt", "s_ht", "s_hbar", "s_dht", "q_dht", "diverged")

    def __init__(self, n_checkpoints: int, averaged: bool, lyap: bool):
        z = lambda: np.zeros(n_checkpoints)
        self.n = np.zeros(n_checkpoints, dtype=np.int64)
        self.s_gsq, self.q_gsq = z(), z()
        self.s_gap, self.q_gap = z(), z()
        self.s_avg = z() if averaged else None
        self.q_avg = z() if averaged else None
        self.s_h = z() if lyap else None
        self.s_zt = z() if lyap else None
        self.s_ht = z() if lyap else None
        self.s_hbar = z() if lyap else None
        self.s_dht = z() if lyap else None
        self.q_dht = z() if lyap else None
        self.diverged = []

    def merge(self, other: "_BlockStats"):
        for name in self.__slots__:
            if name == "diverged":
                self.diverged.extend(other.diverged)
                continue
            mine, theirs = getattr(self, name), getattr(other, name)
            if mine is not None:
                mine += theirs


def _simulate_block(problem, oracle, method: str, beta, alphas, mus,
                    x0, grid, lyap_mode, averaged: bool, f_star: float,
                    master_seed: int, lo: int, hi: int) -> _BlockStats:
    d = problem.dim
    r_count = hi - lo
    horizon = len(alphas)
    gens = [replica_stream(master_seed, i) for i in range(lo, hi)]
    x = np.tile(np.asarray(x0, dtype=float), (r_count, 1))
    v = np.zeros_like(x)
    x_prev = x.copy()
    alive = np.ones(r_count, dtype=bool)
    xbar = np.zeros_like(x)
    weight = 0.0
    stats = _BlockStats(len(grid), averaged, lyap_mode is not None)
    ht_prev = None
    grad_cache = None
    radius_sq = DIVERGENCE_RADIUS ** 2
    ci = 0

    def masked_moments(values, s_arr, q_arr, idx):
        vals = values if bool(alive.all()) else values[alive]
        s_arr[idx] += vals.sum()
        if q_arr is not None:
            q_arr[idx] += (vals * vals).sum()

    def eval_checkpoint(k: int, idx: int):
        nonlocal ht_prev
        fv = problem.value(x)
        gr = problem.gradient(x)
        gsq = np.einsum("...i,...i->...", gr, gr)
        gap = fv - f_star
        stats.n[idx] += int(alive.sum())
        masked_moments(gsq, stats.s_gsq, stats.q_gsq, idx)
        masked_moments(gap, stats.s_gap, stats.q_gap, idx)
        if averaged:
            xb = x if weight == 0.0 else xbar
            avg_gap = problem.value(xb) - f_star
            masked_moments(avg_gap, stats.s_avg, stats.q_avg, idx)
        if lyap_mode is not None:
            mode, coeff = lyap_mode
            vsq = np.einsum("...i,...i->...", v, v)
            zt = np.einsum("...i,...i->...", v, gr)
            h = gap + 0.5 * vsq
            hbar = gsq + vsq
            # k = 0 records mu = 0, so the vanishing tilt starts at plain H.
            mu_here = mus[k - 1] if k >= 1 else 0.0
            tilt = coeff * mu_here if mode == "vanishing" else coeff
            ht = h + tilt * zt
            dht = np.zeros_like(ht) if ht_prev is None else ht - ht_prev
            masked_moments(h, stats.s_h, None, idx)
            masked_moments(zt, stats.s_zt, None, idx)
            masked_moments(ht, stats.s_ht, None, idx)
            masked_moments(hbar, stats.s_hbar, None, idx)
            masked_moments(dht, stats.s_dht, stats.q_dht, idx)
            ht_prev = ht
        return gr

    if grid[ci] == 0:
        grad_cache = eval_checkpoint(0, ci)
        ci += 1

    raws = None
    raw_base = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, horizon + 1):
            if raws is None or k - raw_base >= raws.shape[1]:
                nb = min(_RAW_BLOCK, horizon - k + 1)
                raws = np.stack([oracle.raw_block(g, nb) for g in gens])
                raw_base = k
            raw_t = raws[:, k - raw_base]
            alpha = alphas[k - 1]
            mu = mus[k - 1]
            if averaged:
                weight_new = weight + alpha
                xbar = xbar + (alpha / weight_new) * (x - xbar)
                weight = weight_new
            # Step arithmetic mirrors the single-state step functions.
            if method in ("vsgd", "msgd_damped", "msgd_classical"):
                g = None
                if oracle.needs_gradient:
                    g = grad_cache if grad_cache is not None else problem.gradient(x)
                sg = oracle.stoch_grad(x, raw_t, grad=g)
            if method == "vsgd":
                x_prev = x
                x = x - alpha * sg
            elif method == "msgd_damped":
                v = v - mu * alpha * v - alpha * sg
                x_prev = x
                x = x + alpha * v
            elif method == "msgd_classical":
                v = beta * v - alpha * sg
                x_prev = x
                x = x + v
            elif method == "nasgd":
                alpha_prev = alphas[k - 2] if k >= 2 else alpha
                bk = (1.0 - mu * alpha) * alpha / alpha_prev
                y = x + bk * (x - x_prev)
                sg = oracle.stoch_grad(y, raw_t)
                v = (1.0 - mu * alpha) * v - alpha * sg
                x_prev = x
                x = x + alpha * v
            else:  # nesterov_classical
                y = x + beta * (x - x_prev)
                sg = oracle.stoch_grad(y, raw_t)
                x_prev = x
                x = y - alpha * sg
                v = x - x_prev
            grad_cache = None

            finite = np.isfinite(x).all(axis=1)
            norm_sq = np.einsum("...i,...i->...", x, x)
            bad = alive & (~finite | (norm_sq > radius_sq))
            if bad.any():
                for i in np.nonzero(bad)[0]:
                    stats.diverged.append((lo + int(i), k))
                alive &= ~bad
                x[bad] = 0.0
                v[bad] = 0.0
                x_prev[bad] = 0.0
                xbar[bad] = 0.0

            if ci < len(grid) and k == grid[ci]:
                grad_cache = eval_checkpoint(k, ci)
                ci += 1
    return stats


def _mean_se(s, q, n):
    n = n.astype(float)
    mean = s / n
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n > 1, np.maximum(q - s * s / n, 0.0) / np.maximum(n - 1, 1), 0.0)
        se = np.sqrt(var / n)
    return mean, se


def run_experiment(cfg: ExperimentConfig) -> MonteCarloEstimate:
    validate_config(cfg)
    problem, fsp = build_problem(cfg.problem)
    oracle = build_oracle(cfg.oracle, problem, fsp, seed=cfg.seed)
    schedule = build_schedule(cfg.schedule)
    lyap_mode = resolve_lyapunov(cfg, problem, schedule)
    f_star = problem.minimum.f_star
    grid = checkpoint_grid(cfg.horizon, cfg.checkpoint_stride)
    alphas = schedule.alphas(cfg.horizon)
    mus = schedule.mus(cfg.horizon)

    # Zero-noise oracles make every replica identical: one trajectory gives
    # the exact means, and every standard error is exactly 0.
    effective = 1 if oracle.zero_noise else cfg.replicas
    blocks = [(lo, min(lo + _BLOCK_REPLICAS, effective))
              for lo in range(0, effective, _BLOCK_REPLICAS)]

    def work(bounds):
        lo, hi = bounds
        return _simulate_block(problem, oracle, cfg.method, cfg.beta, alphas,
                               mus, cfg.x0, grid, lyap_mode, cfg.averaged,
                               f_star, cfg.seed, lo, hi)

    n_threads = threads_cap()
    if n_threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    total = results[0]
    for extra in results[1:]:
        total.merge(extra)

    diverged = sorted(total.diverged)
    diverged_count = len(diverged) if not oracle.zero_noise else \
        len(diverged) * cfg.replicas
    if diverged_count > cfg.divergence_tolerance * cfg.replicas:
        first_iter = min(it for _, it in diverged)
        raise ExperimentError(
            f"{diverged_count} of {cfg.replicas} replicas diverged "
            f"(tolerance {cfg.divergence_tolerance:.0%}); first failure at "
            f"iteration {first_iter}")
    if np.any(total.n == 0):
        raise ExperimentError("no replica survived to some checkpoint")

    if oracle.zero_noise:
        n = total.n.astype(float)
        zeros = np.zeros(len(grid))
        mean_gsq, se_gsq = total.s_gsq / n, zeros
        mean_gap, se_gap = total.s_gap / n, zeros.copy()
        mean_avg = total.s_avg / n if cfg.averaged else None
        se_avg = zeros.copy() if cfg.averaged else None
        se_dht = zeros.copy() if lyap_mode is not None else None
    else:
        mean_gsq, se_gsq = _mean_se(total.s_gsq, total.q_gsq, total.n)
        mean_gap, se_gap = _mean_se(total.s_gap, total.q_gap, total.n)
        if cfg.averaged:
            mean_avg, se_avg = _mean_se(total.s_avg, total.q_avg, total.n)
        else:
            mean_avg = se_avg = None
        if lyap_mode is not None:
            _, se_dht = _mean_se(total.s_dht, total.q_dht, total.n)

    lyap_series = None
    if lyap_mode is not None:
        nf = total.n.astype(float)
        alpha_at = np.where(grid > 0, schedule.alpha(np.maximum(grid, 1)), 0.0)
        mu_at = np.where(grid > 0, schedule.mu(np.maximum(grid, 1)), 0.0)
        lyap_series = LyapunovSeries(
            checkpoints=grid.copy(),
            alphas=alpha_at,
            mus=mu_at,
            mean_ht=total.s_ht / nf,
            mean_hbar=total.s_hbar / nf,
            se_delta_ht=se_dht,
            replicas=cfg.replicas,
            vanishing=lyap_mode[0] == "vanishing",
        )

    return MonteCarloEstimate(
        checkpoints=grid,
        mean_grad_sq=mean_gsq,
        se_grad_sq=se_gsq,
        mean_gap=mean_gap,
        se_gap=se_gap,
        mean_avg_gap=mean_avg,
        se_avg_gap=se_avg,
        lyap=lyap_series,
        replicas=cfg.replicas,
        diverged=diverged_count,
        diverged_iterations=tuple(diverged),
        config=cfg,
    )


# ---------------------------------------------------------------------------
# Probes


def liminf_probe(est: MonteCarloEstimate) -> np.ndarray:
    """Running minimum of mean ||grad f||^2 across checkpoints."""
    if len(est.checkpoints) < 3:
        raise ExperimentError("liminf probe needs at least 3 checkpoints")
    return np.minimum.accumulate(est.mean_grad_sq)


@dataclass(frozen=True)
class AveragedBoundProbe:
    checkpoints: np.ndarray
    ratios: np.ndarray
    max_ratio: float
    median_ratio: float
    burn_in_count: int

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 2.0 * self.median_ratio


def _partial_sums_at(s: PowerSchedule, ks: np.ndarray):
    horizon = int(ks[-1])
    if horizon <= 2_000_000:
        alphas = s.alphas(horizon)
        cum_a = np.concatenate([[0.0], np.cumsum(alphas)])
        cum_q = np.concatenate([[0.0], np.cumsum(alphas * alphas)])
        return cum_a[ks], cum_q[ks]
    sum_a = np.empty(len(ks))
    sum_q = np.empty(len(ks))
    acc_a = acc_q = 0.0
    prev = 0
    for i, k in enumerate(ks):
        if k > prev:
            j = np.arange(prev + 1, k + 1, dtype=float)
            a = s.coeff_alpha * j ** (-s.exp_alpha)
            acc_a += float(a.sum())
            acc_q += float((a * a).sum())
            prev = int(k)
        sum_a[i] = acc_a
        sum_q[i] = acc_q
    return sum_a, sum_q


def averaged_bound_probe(est: MonteCarloEstimate, s: PowerSchedule | None = None,
                         burn_in_frac: float = 0.05) -> AveragedBoundProbe:
    """Scale-invariance check of the averaged-iterate gap.

    ratio_n = mean_avg_gap(n) * sum_{k<=n} alpha_k / (1 + sum_{k<=n} alpha_k^2)
    should stay bounded along checkpoints; the probe passes when its
    post-burn-in maximum is at most twice its post-burn-in median.
    """
    if est.mean_avg_gap is None:
        raise ExperimentError("averaged bound probe requires an averaged run")
    if s is None:
        s = build_schedule(est.config.schedule)
    keep = est.checkpoints > 0
    ks = est.checkpoints[keep]
    sum_a, sum_q = _partial_sums_at(s, ks)
    ratios = est.mean_avg_gap[keep] * sum_a / (1.0 + sum_q)
    burn = int(np.ceil(burn_in_frac * len(ratios)))
    tail = ratios[burn:] if burn < len(ratios) else ratios
    return AveragedBoundProbe(
        checkpoints=ks,
        ratios=ratios,
        max_ratio=float(tail.max()),
        median_ratio=float(np.median(tail)),
        burn_in_count=burn,
    )


def nasgd_hypothesis(cfg: ExperimentConfig) -> dict:
    """Annotation for accelerated runs: the look-ahead factor limit
    beta_hat = limsup (1 - mu_k alpha_k) alpha_k / alpha_{k-1}, whether
    L * beta_hat < inf_k mu_k holds, and whether convexity covers for it."""
    problem, _ = build_problem(cfg.problem)
    s = build_schedule(cfg.schedule)
    limit_mu_alpha = s.coeff_mu * s.coeff_alpha if (s.exp_alpha + s.exp_mu) == 0 else 0.0
    beta_hat = 1.0 - limit_mu_alpha
    mu_lower = s.coeff_mu if s.exp_mu == 0 else 0.0
    l_beta = problem.smoothness_l * beta_hat
    convex = problem.convexity in (Convexity.CONVEX, Convexity.STRONGLY_CONVEX)
    return {
        "beta_hat": beta_hat,
        "l_times_beta_hat": l_beta,
        "mu_lower": mu_lower,
        "l_beta_lt_mu": bool(l_beta < mu_lower),
        "convex": convex,
        "hypothesis_ok": bool(l_beta < mu_lower or convex),
    }


# ---------------------------------------------------------------------------
# Serialization


def estimates_csv(est: MonteCarloEstimate) -> str:
    cols = ["checkpoint", "mean_grad_sq", "se_grad_sq", "mean_gap", "se_gap"]
    with_avg = est.mean_avg_gap is not None
    if with_avg:
        cols += ["mean_avg_gap", "se_avg_gap"]
    lines = [",".join(cols)]
    for i, k in enumerate(est.checkpoints):
        row = [str(int(k)), repr(float(est.mean_grad_sq[i])), repr(float(est.se_grad_sq[i])),
               repr(float(est.mean_gap[i])), repr(float(est.se_gap[i]))]
        if with_avg:
            row += [repr(float(est.mean_avg_gap[i])), repr(float(est.se_avg_gap[i]))]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def lyapunov_csv(est: MonteCarloEstimate) -> str:
    if est.lyap is None:
        raise ExperimentError("no energy series recorded")
    ser = est.lyap
    lines = ["k,alpha,mu,mean_Ht,mean_Hbar,se_delta_Ht"]
    for i, k in enumerate(ser.checkpoints):
        lines.append(",".join([
            str(int(k)), repr(float(ser.alphas[i])), repr(float(ser.mus[i])),
            repr(float(ser.mean_ht[i])), repr(float(ser.mean_hbar[i])),
            repr(float(ser.se_delta_ht[i])),
        ]))
    return "\n".join(lines) + "\n"


def default_burn_in(horizon: int) -> int:
    """First 5% of iterations."""
    return int(horizon) // 20


def summary_dict(est: MonteCarloEstimate) -> dict:
    cfg = est.config
    i = len(est.checkpoints) - 1
    final = {
        "checkpoint": int(est.checkpoints[i]),
        "mean_grad_sq": float(est.mean_grad_sq[i]),
        "se_grad_sq": float(est.se_grad_sq[i]),
        "mean_gap": float(est.mean_gap[i]),
        "se_gap": float(est.se_gap[i]),
    }
    if est.mean_avg_gap is not None:
        final["mean_avg_gap"] = float(est.mean_avg_gap[i])
        final["se_avg_gap"] = float(est.se_avg_gap[i])
    out = {
        "method": cfg.method,
        "horizon": cfg.horizon,
        "replicas": cfg.replicas,
        "seed": cfg.seed,
        "diverged": est.diverged,
        "divergence_tolerance": cfg.divergence_tolerance,
        "final": final,
        "running_min_grad_sq": float(liminf_probe(est)[-1]),
    }
    if est.mean_avg_gap is not None:
        probe = averaged_bound_probe(est)
        out["averaged_bound_probe"] = {
            "max_ratio": probe.max_ratio,
            "median_ratio": probe.median_ratio,
            "passed": probe.passed,
        }
    if est.lyap is not None:
        fit = descent_fit(est.lyap, default_burn_in(cfg.horizon))
        out["descent_fit"] = {
            "k_hat": fit.k_hat,
            "c_hat": fit.c_hat,
            "violation_fraction": fit.violation_fraction,
            "burn_in": fit.burn_in,
            "status": fit.status,
        }
    if cfg.method == "nasgd":
        out["nasgd_hypothesis"] = nasgd_hypothesis(cfg)
    return out


@dataclass(frozen=True)
class SweepRow:
    method: str
    alpha_a: float
    mu_b: float
    status: str
    mean_grad_sq: float | None = None
    se_grad_sq: float | None = None
    mean_gap: float | None = None
    se_gap: float | None = None
    error: str = ""


@dataclass(frozen=True)
class SweepResult:
    rows: tuple


def sweep(configs: list[ExperimentConfig]) -> SweepResult:
    """Run a grid of configs; per-cell failures are recorded, not raised."""
    from .errors import DivergenceError, ParameterError

    rows = []
    for cfg in configs:
        a = float(cfg.schedule.get("alpha_a", 0.0))
        b = float(cfg.schedule.get("mu_b", 0.0))
        try:
            est = run_experiment(cfg)
            i = len(est.checkpoints) - 1
            rows.append(SweepRow(
                method=cfg.method, alpha_a=a, mu_b=b, status="ok",
                mean_grad_sq=float(est.mean_grad_sq[i]),
                se_grad_sq=float(est.se_grad_sq[i]),
                mean_gap=float(est.mean_gap[i]),
                se_gap=float(est.se_gap[i])))
        except (ExperimentError, DivergenceError, ParameterError, ConfigError) as e:
            rows.append(SweepRow(method=cfg.method, alpha_a=a, mu_b=b,
                                 status="failed", error=str(e)))
    return SweepResult(rows=tuple(rows))


def sweep_csv(result: SweepResult) -> str:
    lines = ["method,alpha_a,mu_b,status,mean_grad_sq,se_grad_sq,mean_gap,se_gap,error"]
    for r in result.rows:
        fmt = lambda v: "" if v is None else repr(v)
        lines.append(",".join([
            r.method, repr(r.alpha_a), repr(r.mu_b), r.status,
            fmt(r.mean_grad_sq), fmt(r.se_grad_sq), fmt(r.mean_gap), fmt(r.se_gap),
            '"%s"' % r.error.replace('"', "'") if r.error else "",
        ]))
    return "\n".join(lines) + "\n"
