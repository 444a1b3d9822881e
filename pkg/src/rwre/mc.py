"""Monte Carlo simulation of the walk itself.

Walk-level sampling is only used where it is unbiased and cheap: raw
stepping, first returns with a certified escape level, and conditioned
paths.  Conditional return times are sampled through the conditioned
(h-transformed) environment, under which the walk returns almost surely,
so no censoring bias ever enters a time estimate.  Averaged-measure
estimation replaces walk averages by the exact quenched values per sampled
environment (Rao-Blackwellization): in the weakly transient regime the
walk-level variance is infinite and environment-level statistics are the
meaningful ones.

Escape certification: a right-transient walk at the right window edge M
returns to the origin with exactly P^M(T_0 < inf) =
Pi_{0,M-1} R_M / (R_{0,M-1} + Pi_{0,M-1} R_M); windows are grown until
that bound is below the requested epsilon, and the bound travels with the
outcome instead of being silently dropped.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .env import EnvLaw, EnvWindow, mean_log_rho, moment_rho, omega_at_sites, sample_window
from .estimate import Estimate, PairTally, Tally, merge_mean, merge_ratio
from .exact import (
    ConvergenceError,
    conditioned_env,
    conditioned_return_expectation,
    r_tail,
    return_decomposition,
)
from .rng import shard_sizes, substream_seed, worker_streams

RETURNED = "returned"
ESCAPED = "escaped"
CENSORED = "censored"

DEFAULT_ESCAPE_EPS = 1e-9
_FAIL_FRACTION = 1e-3  # tolerated fraction of non-convergent environments


@dataclass(frozen=True)
class ReturnOutcome:
    """Outcome of one first-return attempt from the origin."""

    status: str
    first_step: int
    steps: Optional[int] = None  # set when returned
    certified_bound: Optional[float] = None  # set when escaped
    cap: Optional[int] = None  # set when censored

    def __post_init__(self):
        if self.first_step not in (-1, 1):
            raise ValueError("first_step must be +1 or -1")
        if self.status == RETURNED:
            if self.steps is None or self.steps < 2 or self.steps % 2:
                raise ValueError("returned steps must be even and >= 2")
        elif self.status == ESCAPED:
            if self.certified_bound is None:
                raise ValueError("escaped outcomes carry their certified bound")
        elif self.status == CENSORED:
            if self.cap is None:
                raise ValueError("censored outcomes carry the step cap")
        else:
            raise ValueError(f"unknown status {self.status!r}")


def simulate_until(
    env: EnvWindow,
    start: int,
    targets: set[int],
    cap: int,
    stream: np.random.Generator,
) -> tuple[Optional[int], int]:
    """Step the chain from ``start`` until a target site or the step cap.

    Consumes exactly one uniform per step from ``stream``.  Returns
    (site, steps) on arrival, (None, cap) when censored.  Walking off the
    realized window raises: sizing the window is the caller's job.
    """
    if not env.lo <= start <= env.hi:
        raise IndexError("start outside window")
    for t in targets:
        if not env.lo <= t <= env.hi:
            raise IndexError("target outside window")
    pos = start
    if pos in targets:
        return pos, 0
    omega = env.omega
    lo, hi = env.lo, env.hi
    for step in range(1, cap + 1):
        if pos < lo or pos > hi:
            raise RuntimeError(f"walked off the realized window at {pos}")
        pos += 1 if stream.random() < omega[pos - lo] else -1
        if pos in targets:
            return pos, step
    return None, cap


def _walk_batch(
    env: EnvWindow,
    starts: np.ndarray,
    target_mask: np.ndarray,
    cap: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Step many independent paths on one window until targets or cap.

    Returns (end_sites, steps); end_site = -2**62 marks a censored path.
    All paths step in lockstep, so the k-th uniform vector drives step k.
    """
    lo, hi = env.lo, env.hi
    omega = env.omega
    pos = np.array(starts, dtype=np.int64, copy=True)
    n = pos.size
    end = np.full(n, -(2**62), dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    alive = np.nonzero(~target_mask[pos - lo])[0]
    end[target_mask[pos - lo]] = pos[target_mask[pos - lo]]
    for step in range(1, cap + 1):
        if not alive.size:
            break
        u = rng.random(alive.size)
        w = omega[pos[alive] - lo]
        pos[alive] += np.where(u < w, 1, -1)
        pa = pos[alive]
        if np.any((pa < lo) | (pa > hi)):
            raise RuntimeError("batch walk left the realized window; size it larger")
        done = target_mask[pa - lo]
        idx = alive[done]
        end[idx] = pos[idx]
        steps[idx] = step
        alive = alive[~done]
    steps[alive] = cap
    return end, steps


@functools.lru_cache(maxsize=4096)
def _escape_bound(law: EnvLaw, seed: int, m: int) -> float:
    """Exact quenched P^m(T_0 < inf) for a right-transient environment."""
    om = omega_at_sites(law, seed, np.arange(0, m, dtype=np.int64))
    cum = np.cumsum(np.log((1.0 - om) / om))  # cum[k] = log Pi_{0,k}
    tail = r_tail(law, seed, m)
    if not tail.converged:
        raise ConvergenceError(f"tail sum at {m} did not converge")
    log_num = cum[-1] + math.log(tail.value)
    log_den = np.logaddexp(logsumexp(cum), log_num)
    return float(np.exp(log_num - log_den))


def _right_escape_edge(law: EnvLaw, seed: int, escape_eps: float) -> tuple[int, float]:
    """Near-minimal M with P^M(T_0 < inf) <= escape_eps.

    Doubles until certified, then bisects back: crossing a sub-ballistic
    stretch is expensive, so the edge should not overshoot.
    """
    m = 32
    while _escape_bound(law, seed, m) > escape_eps:
        m *= 2
        if m > 2**22:
            raise RuntimeError("escape level certification did not reach epsilon")
    lo = m // 2  # bound(lo) > eps (or lo is the floor)
    hi = m
    while hi - lo > 1 and lo >= 32:
        mid = (lo + hi) // 2
        if _escape_bound(law, seed, mid) <= escape_eps:
            hi = mid
        else:
            lo = mid
    return hi, _escape_bound(law, seed, hi)


def _left_guard_edge(law: EnvLaw, seed: int, eps: float) -> int:
    """Depth L with P^{-1}(T_{-L} < T_0) <= eps, by doubling."""
    depth = 32
    while True:
        om = omega_at_sites(law, seed, np.arange(-depth, 0, dtype=np.int64))
        cum = np.cumsum(np.log((1.0 - om) / om))  # over sites -depth..-1
        # P^{-1}(T_{-L} < T_0) with a=-depth, x=-1, b=0: suffix block of cum
        p_left = float(np.exp(logsumexp(cum[-1:]) - logsumexp(cum)))
        if p_left <= eps:
            return depth
        depth *= 2
        if depth > 2**22:
            raise RuntimeError("left guard certification did not reach epsilon")


def sample_first_return(
    env: EnvWindow,
    cap: int,
    escape_eps: float,
    stream: np.random.Generator,
) -> ReturnOutcome:
    """One first-return attempt from the origin on a certified window.

    The window's right edge M must already satisfy P^M(T_0 < inf) <=
    escape_eps (checked exactly); reaching M is then reported as an escape
    carrying that bound.  Step exhaustion is censored, never silently
    retried.
    """
    if not env.lo < 0 <= env.hi:
        raise ValueError("window must contain the origin and a negative guard region")
    bound = _escape_bound(env.law, env.seed, env.hi)
    if bound > escape_eps:
        raise ValueError(
            f"window too small: escape bound {bound:.3e} > escape_eps {escape_eps:.3e}"
        )
    omega0 = env.omega_at(0)
    first = 1 if stream.random() < omega0 else -1
    pos = first
    lo, hi = env.lo, env.hi
    omega = env.omega
    for step in range(2, cap + 1):
        if pos <= lo:
            raise RuntimeError("walk reached the left guard edge; enlarge the window")
        pos += 1 if stream.random() < omega[pos - lo] else -1
        if pos == 0:
            return ReturnOutcome(status=RETURNED, first_step=first, steps=step)
        if pos == hi:
            return ReturnOutcome(status=ESCAPED, first_step=first, certified_bound=bound)
    return ReturnOutcome(status=CENSORED, first_step=first, cap=cap)


def first_return_window(
    law: EnvLaw, seed: int, escape_eps: float = DEFAULT_ESCAPE_EPS
) -> EnvWindow:
    """Realize a window sized for first-return sampling from the origin."""
    m, _ = _right_escape_edge(law, seed, escape_eps)
    depth = _left_guard_edge(law, seed, escape_eps)
    return sample_window(law, seed, -depth, m)


def _first_return_batch(
    env: EnvWindow,
    n: int,
    cap: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """n first-return attempts: (status codes 0=ret/1=esc/2=cens, steps, first)."""
    omega0 = env.omega_at(0)
    first = np.where(rng.random(n) < omega0, 1, -1).astype(np.int64)
    mask = np.zeros(env.hi - env.lo + 1, dtype=bool)
    mask[0 - env.lo] = True
    mask[env.hi - env.lo] = True
    end, steps = _walk_batch(env, first, mask, cap - 1, rng)
    status = np.full(n, 2, dtype=np.int8)
    status[end == 0] = 0
    status[end == env.hi] = 1
    return status, steps + 1, first


def conditioned_sampler(
    env_or_law: Union[EnvWindow, tuple[EnvLaw, int]],
    mode: str,
    n: int,
    cap: int = 10_000_000,
    seed: int = 0,
    workers: int = 1,
    escape_eps: float = 1e-6,
    tol: float = 1e-12,
) -> np.ndarray:
    """i.i.d. samples of (T_0 from 1 | T_0 < inf) on one environment.

    mode="h_transform" walks the conditioned environment, where the return
    happens almost surely: every sample is exact.  mode="rejection" walks
    the original environment and keeps paths that reach 0 before the
    certified escape level (discarding escapes biases the kept law by at
    most escape_eps).  Path-cap or window-edge exhaustion raises; it is
    never silently dropped.
    """
    if isinstance(env_or_law, EnvWindow):
        law, env_seed = env_or_law.law, env_or_law.seed
    else:
        law, env_seed = env_or_law
    drift = mean_log_rho(law)
    if not drift < 0.0:
        raise ValueError("conditioned sampling needs a right-transient law")

    if mode == "h_transform":
        hi = max(64, int((math.log(max(n, 2)) + 21.0) / -drift) + 32)
        window = conditioned_env(law, env_seed, hi, tol=tol)
    elif mode == "rejection":
        m, _ = _right_escape_edge(law, env_seed, escape_eps)
        window = sample_window(law, env_seed, 0, m)
    else:
        raise ValueError("mode must be 'h_transform' or 'rejection'")

    mask = np.zeros(window.hi + 1, dtype=bool)
    mask[0] = True
    if mode == "rejection":
        mask[window.hi] = True

    out: list[np.ndarray] = []
    for widx, (rng, quota) in enumerate(zip(worker_streams(seed, workers), shard_sizes(n, workers))):
        got: list[np.ndarray] = []
        have = 0
        while have < quota:
            batch = quota - have if mode == "h_transform" else max(64, 2 * (quota - have))
            starts = np.ones(batch, dtype=np.int64)
            end, steps = _walk_batch(window, starts, mask, cap, rng)
            if np.any(end == -(2**62)):
                raise RuntimeError(f"worker {widx}: path cap {cap} exhausted")
            if mode == "h_transform":
                if np.any(end != 0):
                    raise RuntimeError("conditioned walk reached the window edge; enlarge hi")
                kept = steps
            else:
                kept = steps[end == 0]
            kept = kept[: quota - have]
            got.append(kept)
            have += kept.size
        out.append(np.concatenate(got) if got else np.empty(0, dtype=np.int64))
    return np.concatenate(out)


def estimate_return_conditional(
    law: EnvLaw,
    mode: str,
    n_env: int = 1000,
    n_walk: int = 0,
    tol: float = 1e-10,
    seed: int = 0,
    workers: int = 1,
) -> Estimate:
    """E[r | r < inf], the expected return time given return.

    mode="quenched": evaluates the exact first-step decomposition on the
    single environment keyed by ``seed`` (a point value with zero standard
    error); when n_walk > 0 an independent walk-level Monte Carlo check is
    run on the same environment and a gross mismatch raises.

    mode="averaged": Rao-Blackwellized ratio estimator over n_env sampled
    environments -- per environment the exact quenched E[r 1{r<inf}] and
    P(r<inf), combined as a ratio of means with a delta-method standard
    error (numerator and denominator share environments).  When the law
    sits in the weakly transient regime (E[rho] >= 1) the finite-sample
    value is still produced but flagged ``theory_infinite``.
    """
    flags: tuple[str, ...] = ()
    if moment_rho(law, 1.0) >= 1.0 - 1e-12:
        flags = ("theory_infinite",)

    if mode == "quenched":
        rd = return_decomposition(law, seed, tol=tol)
        extras = {}
        if n_walk > 0:
            # The decomposition's leading constant counts every start,
            # returned or not; the walk-conditional mean replaces it by the
            # return probability.
            walk_expected = (rd.e_return_indicator - 1.0 + rd.p_return) / rd.p_return
            window = first_return_window(law, seed)
            rng = worker_streams(seed, 1)[0]
            status, steps, _ = _first_return_batch(window, n_walk, 50_000_000, rng)
            ret = steps[status == 0].astype(np.float64)
            if ret.size < 2:
                raise ArithmeticError("cross-check produced too few returns")
            _, mc_mean, mc_se, _, _ = merge_mean([Tally.of(ret)])
            extras = {"mc_check": mc_mean, "mc_check_se": mc_se, "mc_check_n": float(ret.size)}
            if abs(mc_mean - walk_expected) > 5.0 * mc_se + 1e-9:
                raise ArithmeticError(
                    f"walk-level cross-check {mc_mean:.6g} +- {mc_se:.2g} disagrees "
                    f"with exact conditional mean {walk_expected:.6g}"
                )
        return Estimate(
            value=rd.e_return_given_return,
            std_error=0.0,
            n=1,
            method="return-conditional-quenched-exact",
            seed=seed,
            flags=flags,
            extras=extras,
        )

    if mode != "averaged":
        raise ValueError("mode must be 'quenched' or 'averaged'")

    sizes = shard_sizes(n_env, workers)
    offsets = np.concatenate(([0], np.cumsum(sizes))).astype(int)
    tallies: list[PairTally] = []
    failures = 0
    for w in range(workers):
        xs, ys = [], []
        for j in range(offsets[w], offsets[w + 1]):
            env_seed = substream_seed(seed, 1, j)
            try:
                rd = return_decomposition(law, env_seed, tol=tol)
            except ConvergenceError:
                failures += 1
                continue
            xs.append(rd.p_return)
            ys.append(rd.e_return_indicator)
        tallies.append(PairTally.of(np.asarray(xs), np.asarray(ys)))
    if failures > _FAIL_FRACTION * n_env:
        raise ConvergenceError(f"{failures}/{n_env} environments failed to converge")
    n_ok, ratio, se = merge_ratio(tallies)
    return Estimate(
        value=ratio,
        std_error=se,
        n=n_ok,
        method="return-conditional-averaged-rb",
        seed=seed,
        flags=flags,
        extras={"env_failures": float(failures)},
    )


@dataclass(frozen=True)
class DivergenceReport:
    """Diagnostics for weak transience (growth without asserting a rate)."""

    schedule: tuple[int, ...]
    running_means: tuple[tuple[int, float], ...]  # weighted conditional return stat
    running_ses: tuple[tuple[int, float], ...]  # delta-method SEs of the above
    hill_index: float  # tail-index estimate on the top 1% (diagnostic only)
    lemma_points: tuple[tuple[float, float], ...]  # (t, t * P-hat(R_1 >= t))
    lemma_min: float
    regression_index: Optional[float]  # -slope of log P-hat(R_1 > t) vs log t
    kappa: Optional[float]
    n_env: int
    env_failures: int
    seed: int


def divergence_diagnostic(
    law: EnvLaw,
    schedule: Sequence[int],
    seed: int = 0,
    tol: float = 1e-8,
) -> DivergenceReport:
    """Probe whether the averaged conditional return time is diverging.

    Per sampled environment the exact quenched conditional return
    expectation y = E^1[T_0 | T_0 < inf] and the return probability
    w = R_1/(1+R_1) are computed (walk-level sampling has infinite variance
    exactly where this diagnostic matters); the running w-weighted mean of
    y is reported at each schedule point.  The same environments supply R_1
    samples for a Hill tail-index estimate (top 1%, no bias correction), the
    empirical floor min_t t * P(R_1 >= t) over t in {10, 100, 1000}, and a
    log-log regression index compared against the moment-equation root
    kappa.  All outputs are diagnostic.
    """
    from .env import kappa_root  # local import to keep module load light

    schedule = tuple(sorted(int(s) for s in schedule))
    n_env = schedule[-1]
    ys = np.empty(n_env)
    ws = np.empty(n_env)
    r1s = np.empty(n_env)
    failures = 0
    kept = 0
    for j in range(n_env):
        env_seed = substream_seed(seed, 7, j)
        try:
            r1 = r_tail(law, env_seed, 1, tol=tol)
            cond = conditioned_return_expectation(law, env_seed, tol=tol)
            if not (r1.converged and cond.converged):
                raise ConvergenceError("series budget exhausted")
        except ConvergenceError:
            failures += 1
            continue
        r1s[kept] = r1.value
        ws[kept] = r1.value / (1.0 + r1.value)
        ys[kept] = cond.value
        kept += 1
    if failures > _FAIL_FRACTION * n_env:
        raise ConvergenceError(f"{failures}/{n_env} environments failed to converge")
    ys, ws, r1s = ys[:kept], ws[:kept], r1s[:kept]

    wy = ws * ys
    cum_wy = np.cumsum(wy)
    cum_w = np.cumsum(ws)
    cum_ww = np.cumsum(ws * ws)
    cum_wywy = np.cumsum(wy * wy)
    cum_wwy = np.cumsum(ws * wy)
    running = []
    running_ses = []
    for s in schedule:
        m = min(s, kept)
        xbar, ybar = cum_w[m - 1] / m, cum_wy[m - 1] / m
        ratio = ybar / xbar
        running.append((s, float(ratio)))
        if m > 1:
            var_x = max(0.0, (cum_ww[m - 1] - m * xbar * xbar) / (m - 1))
            var_y = max(0.0, (cum_wywy[m - 1] - m * ybar * ybar) / (m - 1))
            cov = (cum_wwy[m - 1] - m * xbar * ybar) / (m - 1)
            var_r = max(0.0, var_y - 2.0 * ratio * cov + ratio * ratio * var_x)
            running_ses.append((s, float(math.sqrt(var_r / m) / xbar)))
        else:
            running_ses.append((s, 0.0))
    running = tuple(running)
    running_ses = tuple(running_ses)

    k = max(10, int(math.ceil(0.01 * kept)))
    top = np.sort(ys)[::-1]
    hill_gamma = float(np.mean(np.log(top[:k] / top[k])))
    hill_index = 1.0 / hill_gamma if hill_gamma > 0 else math.inf

    lemma_points = tuple(
        (float(t), float(t * np.mean(r1s >= t))) for t in (10.0, 100.0, 1000.0)
    )
    lemma_min = min(v for _, v in lemma_points)

    grid = np.geomspace(10.0, 1000.0, 13)
    surv = np.array([np.mean(r1s > t) for t in grid])
    ok = surv > 0
    regression_index = None
    if ok.sum() >= 3:
        slope = np.polyfit(np.log(grid[ok]), np.log(surv[ok]), 1)[0]
        regression_index = float(-slope)

    return DivergenceReport(
        schedule=schedule,
        running_means=running,
        running_ses=running_ses,
        hill_index=hill_index,
        lemma_points=lemma_points,
        lemma_min=lemma_min,
        regression_index=regression_index,
        kappa=kappa_root(law),
        n_env=n_env,
        env_failures=failures,
        seed=seed,
    )


def speed_estimate(
    law: EnvLaw,
    horizon: int,
    reps: int,
    seed: int = 0,
    workers: int = 1,
) -> Estimate:
    """Averaged-law speed: mean of X_horizon / horizon over fresh environments.

    Each replicate draws its own environment on [-horizon, horizon] (the
    walk cannot leave it in ``horizon`` steps).  Replicates are sharded
    across worker streams and processed in memory-bounded sub-batches whose
    sizes depend only on the parameters, so results are bit-identical for a
    given (seed, workers).
    """
    window_len = 2 * horizon + 1
    sub = max(1, min(reps, (1 << 23) // window_len))
    tallies = []
    rep0 = 0
    for w, (rng, n_w) in enumerate(zip(worker_streams(seed, workers), shard_sizes(reps, workers))):
        done = 0
        finals = np.empty(n_w, dtype=np.float64)
        while done < n_w:
            b = min(sub, n_w - done)
            omegas = np.empty((b, window_len))
            for i in range(b):
                env_seed = substream_seed(seed, 11, rep0 + done + i)
                omegas[i] = omega_at_sites(
                    law, env_seed, np.arange(-horizon, horizon + 1, dtype=np.int64)
                )
            pos = np.zeros(b, dtype=np.int64)
            rows = np.arange(b)
            for _ in range(horizon):
                u = rng.random(b)
                step_right = u < omegas[rows, pos + horizon]
                pos += np.where(step_right, 1, -1)
            finals[done : done + b] = pos / horizon
            done += b
        tallies.append(Tally.of(finals))
        rep0 += n_w
    n_tot, mean, se, _, _ = merge_mean(tallies)
    return Estimate(value=mean, std_error=se, n=n_tot, method="speed-mc", seed=seed)
