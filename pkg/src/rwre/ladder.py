"""Negative-drift random-walk analytics: exponential tilting, level-crossing
tails, lattice overshoot, and the pre-passage exponential functional.

For an i.i.d. walk S_n = xi_1 + ... + xi_n with E[xi] < 0 and a positive
root gamma of the moment equation E[e^{gamma xi}] = 1, the tilted law Q
with dQ/dP = e^{gamma S_n} turns the drift positive and gives the exact
level-crossing identity

    P(sup_n S_n >= t) = E_Q[ e^{-gamma S_tau(t)} ],   tau(t) = inf{n>=1: S_n >= t},

which is the zero-bias importance-sampling estimator used here.  On a
lattice a*Z the scaled crossing probabilities e^{gamma a k} P(sup >= a k)
converge to a constant (a renewal-theory age limit), which
``overshoot_constant`` probes empirically.  ``phi_estimate`` targets
phi(t) = E[ sum_{n=0}^{nu(t)-1} e^{-S_n} ] with nu(t) = inf{n>=1: S_n <= -t}.

Lattice laws are simulated in exact integer units so that skip-free
importance weights are bit-identical across paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .env import EnvLaw
from .estimate import Estimate, Tally, merge_mean
from .rng import shard_sizes, worker_streams

LATTICE_ATOL = 1e-9
_STEP_GUARD = 10_000_000_000  # total step budget per worker; trips on misuse


def _float_gcd(values: Sequence[float], scale: float) -> float:
    g = 0.0
    stop = LATTICE_ATOL * scale
    for v in values:
        a, b = abs(float(v)), g
        while b > stop:
            a, b = b, math.fmod(a, b)
        g = a
    return g


def _detect_lattice(values: Sequence[float]) -> Optional[tuple[float, tuple[int, ...]]]:
    scale = max(abs(v) for v in values)
    g = _float_gcd(values, scale)
    # Spacings below 1e-6 of the value scale are indistinguishable from an
    # irrational ratio at the 1e-9 tolerance; treat them as non-lattice.
    if g <= 1e-6 * scale:
        return None
    units = [round(v / g) for v in values]
    if any(u == 0 and abs(v) > LATTICE_ATOL for v, u in zip(values, units)):
        return None
    # Least-squares refinement of the spacing through the rounded units.
    a = math.fsum(v * u for v, u in zip(values, units)) / math.fsum(u * u for u in units)
    if any(abs(v - u * a) > LATTICE_ATOL * max(1.0, abs(v)) for v, u in zip(values, units)):
        return None
    return a, tuple(units)


@dataclass(frozen=True)
class StepLaw:
    """Finite-support increment law for the auxiliary walk.

    ``lattice`` is the positive spacing a with every support value in a*Z
    (within 1e-9), or None for non-lattice support; ``units`` holds the
    integer multiples when lattice.
    """

    weights: tuple[float, ...]
    values: tuple[float, ...]
    lattice: Optional[float] = None
    units: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.values):
            raise ValueError("step law needs matching weights and values")
        if any(w <= 0 for w in self.weights):
            raise ValueError("weights must be strictly positive")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        if self.lattice is not None:
            if self.lattice <= 0 or self.units is None:
                raise ValueError("lattice laws need a > 0 and integer units")
            for v, u in zip(self.values, self.units):
                if abs(v - u * self.lattice) > LATTICE_ATOL * max(1.0, abs(v)):
                    raise ValueError("support value not an integer multiple of the lattice")

    @staticmethod
    def of(
        pairs: Sequence[tuple[float, float]],
        lattice: Union[str, float, None] = "detect",
    ) -> "StepLaw":
        """Build from (weight, value) pairs.

        lattice="detect" derives the spacing by a float gcd; an explicit
        float is verified; None forces non-lattice treatment.
        """
        weights = tuple(float(w) for w, _ in pairs)
        values = tuple(float(v) for _, v in pairs)
        if lattice == "detect":
            found = _detect_lattice(values)
            if found is None:
                return StepLaw(weights, values)
            a, units = found
            return StepLaw(weights, values, lattice=a, units=units)
        if lattice is None:
            return StepLaw(weights, values)
        a = float(lattice)
        units = tuple(round(v / a) for v in values)
        return StepLaw(weights, values, lattice=a, units=units)

    @property
    def mean(self) -> float:
        return math.fsum(w * v for w, v in zip(self.weights, self.values))

    def mgf(self, u: float) -> float:
        return math.fsum(w * math.exp(u * v) for w, v in zip(self.weights, self.values))


def step_from_env(law: EnvLaw) -> StepLaw:
    """Increment law of log rho under a finite-support environment law."""
    pairs = [(w, math.log(rho)) for w, rho in law.rho_support()]
    return StepLaw.of(pairs)


@dataclass(frozen=True)
class TiltedLaw:
    """Exponentially tilted increment law q_i = p_i e^{gamma x_i}."""

    base: StepLaw
    gamma: float
    q_weights: tuple[float, ...]

    @property
    def mean(self) -> float:
        return math.fsum(q * v for q, v in zip(self.q_weights, self.base.values))


def gamma_root(step: StepLaw, tol: float = 1e-12, bracket_cap: float = 64.0) -> float:
    """Positive root gamma of E[e^{gamma xi}] = 1.

    Needs E[xi] < 0 and some positive support (otherwise no root exists and
    a ValueError is raised); raises if the geometric bracket expansion hits
    ``bracket_cap`` before the moment crosses 1.  Also verifies the strict
    convexity consequence E[e^{(gamma/2) xi}] < 1.
    """
    if not step.mean < 0.0:
        raise ValueError(f"gamma_root needs E[xi] < 0, got {step.mean}")
    if not any(v > 0 for v in step.values):
        raise ValueError("gamma_root: no positive support, the moment never returns to 1")

    def f(u: float) -> float:
        return step.mgf(u) - 1.0

    lo, hi = 0.0, None
    u = 1.0
    while u <= bracket_cap:
        if f(u) > tol:
            hi = u
            break
        lo = u
        u *= 2.0
    if hi is None:
        raise RuntimeError(f"gamma_root: no crossing of 1 below bracket cap {bracket_cap}")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-14 and abs(f(0.5 * (lo + hi))) <= tol:
            break
    gamma = 0.5 * (lo + hi)
    if not step.mgf(gamma / 2.0) < 1.0:
        raise ArithmeticError("convexity check E[e^{(gamma/2) xi}] < 1 failed")
    return gamma


def tilt(step: StepLaw, gamma: float) -> TiltedLaw:
    """Tilted law with q_i = p_i e^{gamma x_i}.

    The weights must already sum to 1 within 1e-9 (i.e. gamma solves the
    moment equation; gamma = 0 gives the identity tilt); they are then
    normalized exactly for sampling.
    """
    q = [w * math.exp(gamma * v) for w, v in zip(step.weights, step.values)]
    z = math.fsum(q)
    if abs(z - 1.0) > 1e-9:
        raise ValueError(f"tilt weights sum to {z}, not 1: gamma is not a moment root")
    return TiltedLaw(base=step, gamma=gamma, q_weights=tuple(qi / z for qi in q))


def _cumw(weights) -> np.ndarray:
    c = np.cumsum(np.asarray(weights, dtype=np.float64))
    c[-1] = 1.0
    return c


def _unit_level(t: float, a: float) -> int:
    """Smallest integer u with u*a >= t (snapping exact multiples)."""
    return math.ceil(t / a - 1e-9)


def _sim_crossing_up(
    cumw: np.ndarray,
    incs: np.ndarray,
    level,
    n: int,
    rng: np.random.Generator,
    integer_units: bool,
):
    """Walk n paths to the first time S >= level; returns (S_tau, tau)."""
    dtype = np.int64 if integer_units else np.float64
    s_final = np.empty(n, dtype=dtype)
    tau_final = np.empty(n, dtype=np.int64)
    s = np.zeros(n, dtype=dtype)
    tau = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    guard = 0
    while alive.size:
        u = rng.random(alive.size)
        s[alive] += incs[np.searchsorted(cumw, u)]
        tau[alive] += 1
        done = s[alive] >= level
        idx = alive[done]
        s_final[idx] = s[idx]
        tau_final[idx] = tau[idx]
        alive = alive[~done]
        guard += int(done.size)
        if guard > _STEP_GUARD:
            raise RuntimeError("crossing simulation exceeded the step budget")
    return s_final, tau_final


def _sim_two_sided(
    cumw: np.ndarray,
    incs: np.ndarray,
    up_level,
    down_level,
    n: int,
    rng: np.random.Generator,
    integer_units: bool,
) -> np.ndarray:
    """Walk n paths until S >= up_level (hit=1) or S <= down_level (hit=0)."""
    dtype = np.int64 if integer_units else np.float64
    hit = np.zeros(n, dtype=np.float64)
    s = np.zeros(n, dtype=dtype)
    alive = np.arange(n)
    guard = 0
    while alive.size:
        u = rng.random(alive.size)
        s[alive] += incs[np.searchsorted(cumw, u)]
        sa = s[alive]
        up = sa >= up_level
        down = sa <= down_level
        hit[alive[up]] = 1.0
        alive = alive[~(up | down)]
        guard += int(sa.size)
        if guard > _STEP_GUARD:
            raise RuntimeError("two-sided simulation exceeded the step budget")
    return hit


def sup_tail(
    step: StepLaw,
    t: float,
    n: int,
    method: str = "importance",
    seed: int = 0,
    workers: int = 1,
    censor_eps: float = 1e-12,
) -> Estimate:
    """Estimate P(sup_{n>=1} S_n >= t) for a negative-drift walk.

    method="importance" simulates under the tilted law Q up to tau(t)
    (almost surely finite there) and averages e^{-gamma S_tau}; for a
    skip-free-up lattice law at a lattice level all weights coincide, so
    the estimator has zero variance.

    method="naive" simulates under the original law and abandons a path as
    a certified miss once it falls to a level -m with
    e^{-gamma (t+m)} < censor_eps; the censoring bias bound is reported in
    ``error_budget``, never mixed into the standard error.
    """
    if not step.mean < 0.0:
        raise ValueError("sup_tail needs E[xi] < 0")
    gamma = gamma_root(step)
    lattice = step.lattice is not None
    tallies = []
    streams = worker_streams(seed, workers)
    sizes = shard_sizes(n, workers)

    if method == "importance":
        q = tilt(step, gamma)
        cumw = _cumw(q.q_weights)
        incs = np.asarray(step.units if lattice else step.values)
        level = _unit_level(t, step.lattice) if lattice else t
        spread_lo, spread_hi = math.inf, -math.inf
        for rng, n_w in zip(streams, sizes):
            if n_w == 0:
                continue
            s_tau, _ = _sim_crossing_up(cumw, incs, level, n_w, rng, lattice)
            s_real = s_tau * step.lattice if lattice else s_tau
            weights = np.exp(-gamma * s_real)
            tl = Tally.of(weights)
            tallies.append(tl)
            spread_lo = min(spread_lo, tl.minimum)
            spread_hi = max(spread_hi, tl.maximum)
        n_tot, mean, se, _, _ = merge_mean(tallies)
        return Estimate(
            value=mean,
            std_error=se,
            n=n_tot,
            method="sup-tail-importance",
            seed=seed,
            extras={"gamma": gamma, "weight_spread": spread_hi - spread_lo},
        )

    if method == "naive":
        m = max(0.0, -math.log(censor_eps) / gamma - t)
        cumw = _cumw(step.weights)
        incs = np.asarray(step.units if lattice else step.values)
        if lattice:
            up = _unit_level(t, step.lattice)
            down = min(-1, math.floor(-m / step.lattice + 1e-9))
        else:
            # a path at or below -m is abandoned; when m = 0 any dip below 0
            # already certifies the miss, so the level just excludes 0 itself
            up, down = t, min(-1e-300, -m)
        for rng, n_w in zip(streams, sizes):
            if n_w == 0:
                continue
            hits = _sim_two_sided(cumw, incs, up, down, n_w, rng, lattice)
            tallies.append(Tally.of(hits))
        n_tot, mean, se, _, _ = merge_mean(tallies)
        return Estimate(
            value=mean,
            std_error=se,
            n=n_tot,
            method="sup-tail-naive",
            seed=seed,
            error_budget=censor_eps,
            extras={"gamma": gamma, "censor_level": -m},
        )

    raise ValueError("method must be 'importance' or 'naive'")


@dataclass(frozen=True)
class OvershootEntry:
    k: int
    level: float
    scaled: float  # e^{gamma a k} * P-hat(sup >= a k)
    scaled_se: float


@dataclass(frozen=True)
class WaldCheck:
    k: int
    mean_s_tau: float
    se_s_tau: float
    mean_tau: float
    se_tau: float
    drift_q: float  # E_Q[xi]


@dataclass(frozen=True)
class OvershootScan:
    gamma: float
    lattice_a: float
    entries: tuple[OvershootEntry, ...]
    overshoot_pmf: dict[int, float]  # overshoot in lattice units, at largest k
    wald: WaldCheck
    n_per_level: int
    seed: int


def overshoot_constant(
    step: StepLaw,
    k_range: Sequence[int],
    n: int,
    seed: int = 0,
    workers: int = 1,
) -> OvershootScan:
    """Scaled crossing probabilities e^{gamma a k} P(sup >= a k) over k.

    The scaled sequence stabilizes to the renewal limit constant; its value
    is estimated, never asserted.  Also records the empirical overshoot
    distribution and the Wald-identity data (mean S_tau vs E_Q[xi] mean tau)
    at the largest k.  Non-lattice laws are rejected: only the lattice
    limit is probed here.
    """
    if step.lattice is None:
        raise ValueError("overshoot_constant needs a lattice step law")
    gamma = gamma_root(step)
    q = tilt(step, gamma)
    cumw = _cumw(q.q_weights)
    incs = np.asarray(step.units)
    a = step.lattice
    ks = sorted(int(k) for k in k_range)
    entries = []
    pmf: dict[int, float] = {}
    wald = None
    for k in ks:
        streams = worker_streams(seed, workers)
        sizes = shard_sizes(n, workers)
        w_tallies, s_tallies, tau_tallies = [], [], []
        over_counts: dict[int, int] = {}
        for rng, n_w in zip(streams, sizes):
            if n_w == 0:
                continue
            s_tau, tau = _sim_crossing_up(cumw, incs, k, n_w, rng, True)
            w_tallies.append(Tally.of(np.exp(-gamma * (s_tau * a))))
            if k == ks[-1]:
                s_tallies.append(Tally.of(s_tau * a))
                tau_tallies.append(Tally.of(tau.astype(np.float64)))
                for u, c in zip(*np.unique(s_tau - k, return_counts=True)):
                    over_counts[int(u)] = over_counts.get(int(u), 0) + int(c)
        n_tot, mean, se, _, _ = merge_mean(w_tallies)
        scale = math.exp(gamma * a * k)
        entries.append(
            OvershootEntry(k=k, level=a * k, scaled=scale * mean, scaled_se=scale * se)
        )
        if k == ks[-1]:
            _, ms, ses, _, _ = merge_mean(s_tallies)
            _, mt, set_, _, _ = merge_mean(tau_tallies)
            wald = WaldCheck(
                k=k, mean_s_tau=ms, se_s_tau=ses, mean_tau=mt, se_tau=set_, drift_q=q.mean
            )
            total = sum(over_counts.values())
            pmf = {u: c / total for u, c in sorted(over_counts.items())}
    return OvershootScan(
        gamma=gamma,
        lattice_a=a,
        entries=tuple(entries),
        overshoot_pmf=pmf,
        wald=wald,
        n_per_level=n,
        seed=seed,
    )


def phi_estimate(
    step: StepLaw,
    t: float,
    n: int,
    seed: int = 0,
    workers: int = 1,
) -> Estimate:
    """Monte Carlo value of phi(t) = E[ sum_{n=0}^{nu(t)-1} e^{-S_n} ].

    nu(t) = inf{n>=1: S_n <= -t} is the first drop below -t; it has
    exponential tails under any negative-drift finite-support law, so the
    paths are simulated to completion under the original measure.  The
    n = 0 term contributes e^{-S_0} = 1 to every path.
    """
    if not step.mean < 0.0:
        raise ValueError("phi_estimate needs E[xi] < 0")
    lattice = step.lattice is not None
    cumw = _cumw(step.weights)
    incs = np.asarray(step.units if lattice else step.values)
    if lattice:
        # S <= -t in units: u*a <= -t  <=>  u <= floor(-t/a) (snapped)
        down = math.floor(-t / step.lattice + 1e-9)
    else:
        down = -t
    tallies = []
    for rng, n_w in zip(worker_streams(seed, workers), shard_sizes(n, workers)):
        if n_w == 0:
            continue
        dtype = np.int64 if lattice else np.float64
        s = np.zeros(n_w, dtype=dtype)
        f = np.ones(n_w)
        alive = np.arange(n_w)
        guard = 0
        while alive.size:
            u = rng.random(alive.size)
            s[alive] += incs[np.searchsorted(cumw, u)]
            sa = s[alive]
            cont = sa > down
            keep = alive[cont]
            s_real = s[keep] * step.lattice if lattice else s[keep]
            f[keep] += np.exp(-s_real)
            alive = keep
            guard += int(sa.size)
            if guard > _STEP_GUARD:
                raise RuntimeError("phi simulation exceeded the step budget")
        tallies.append(Tally.of(f))
    n_tot, mean, se, _, _ = merge_mean(tallies)
    return Estimate(value=mean, std_error=se, n=n_tot, method="phi-mc", seed=seed)
