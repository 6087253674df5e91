"""Seeded samplers for the random ingredients of the transition kernels.

Covers Gamma/Beta/Dirichlet/Exponential variates, the inverse-gamma
absorption time of a squared Bessel process of dimension -1, Euler
discretizations of squared Bessel paths, the density-specified mass of the
leading block created by a surviving block, and the jump point process of
the exponentially tilted stable(1/2) subordinator.

All Gamma laws use the (shape, rate) convention.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy.special import erfc

from .rng import RandomSource

__all__ = [
    "BesqPath",
    "JumpSet",
    "sample_gamma",
    "sample_beta",
    "sample_dirichlet",
    "sample_exponential",
    "sample_inverse_gamma_lifetime",
    "besq_euler",
    "besq_euler_batch",
    "subordinator_levy_density",
    "subordinator_tail_rate",
    "truncated_jump_mass_bound",
    "sample_subordinator_jumps",
    "sample_jump_sizes",
    "leading_block_log_density",
    "sample_leading_block_mass",
    "DEFAULT_JUMP_TRUNCATION_REL",
]

# Relative jump-size truncation: a kernel step over elapsed time y drops
# subordinator jumps below DEFAULT_JUMP_TRUNCATION_REL * y.
DEFAULT_JUMP_TRUNCATION_REL = 1e-8


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if not (value > 0):
            raise ValueError(f"{name} must be positive, got {value!r}")


def sample_gamma(shape: float, rate: float, rng: RandomSource, size=None):
    """Gamma(shape, rate) variate(s); density rate^a x^(a-1) e^(-rate x)/Gamma(a)."""
    _check_positive(shape=shape, rate=rate)
    return rng.generator.gamma(shape, 1.0 / rate, size=size)


def sample_beta(a: float, b: float, rng: RandomSource, size=None):
    _check_positive(a=a, b=b)
    return rng.generator.beta(a, b, size=size)


def sample_dirichlet(weights, rng: RandomSource) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        raise ValueError("weights must be nonempty")
    if not np.all(weights > 0):
        raise ValueError("weights must be positive")
    if weights.size == 1:
        return np.array([1.0])
    return rng.generator.dirichlet(weights)


def sample_exponential(rate: float, rng: RandomSource, size=None):
    _check_positive(rate=rate)
    return rng.generator.exponential(1.0 / rate, size=size)


def sample_inverse_gamma_lifetime(start_mass: float, rng: RandomSource, size=None):
    """Absorption time of a squared Bessel(-1) from start_mass.

    InverseGamma(3/2, start_mass/2): reciprocal of a Gamma(3/2, rate=start_mass/2)
    variate, density proportional to t^(-5/2) exp(-start_mass/(2t)).
    """
    _check_positive(start_mass=start_mass)
    g = rng.generator.gamma(1.5, 2.0 / start_mass, size=size)
    return 1.0 / g


# ---------------------------------------------------------------------------
# Squared Bessel paths (Euler-Maruyama)


@dataclass
class BesqPath:
    """Euler-discretized squared Bessel path on a uniform grid.

    values[i] approximates the process at time i*step.  For parameter_theta <= 0
    the path is absorbed at zero: values are 0 from absorption_index onward.
    For theta > 0 negative excursions are clamped to 0 without absorbing.
    """

    start_mass: float
    parameter_theta: float
    step: float
    values: np.ndarray
    absorption_index: Optional[int] = None

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(len(self.values))

    @property
    def absorption_time(self) -> Optional[float]:
        if self.absorption_index is None:
            return None
        return self.absorption_index * self.step

    def value_at(self, t: float) -> float:
        """Value at the last grid time <= t (paths are grid objects)."""
        i = min(int(t / self.step + 1e-9), len(self.values) - 1)
        return float(self.values[i])


@njit(cache=True)
def _besq_euler_core(z0, theta, dt, normals, absorb):
    n = normals.shape[0]
    out = np.empty(n + 1)
    out[0] = z0
    z = z0
    sqdt = np.sqrt(dt)
    absorbed_at = -1
    for i in range(n):
        z = z + theta * dt + 2.0 * np.sqrt(z) * sqdt * normals[i]
        if z <= 0.0:
            z = 0.0
            if absorb:
                absorbed_at = i + 1
                for j in range(i + 1, n + 1):
                    out[j] = 0.0
                return out, absorbed_at
        out[i + 1] = z
    return out, absorbed_at


def besq_euler(
    start_mass: float,
    theta: float,
    step: float,
    horizon: float,
    rng: RandomSource,
) -> BesqPath:
    """Euler path of a squared Bessel(theta) from start_mass over [0, horizon].

    Z_{n+1} = max(0, Z_n + theta*step + 2*sqrt(Z_n * step) * N(0,1)); for
    theta <= 0 the first nonpositive value absorbs the path at zero.
    """
    if start_mass < 0:
        raise ValueError("start_mass must be nonnegative")
    _check_positive(step=step, horizon=horizon)
    if step > horizon:
        raise ValueError("step must not exceed horizon")
    n = int(round(horizon / step))
    normals = rng.generator.standard_normal(n)
    values, idx = _besq_euler_core(start_mass, theta, step, normals, theta <= 0)
    return BesqPath(
        start_mass=start_mass,
        parameter_theta=theta,
        step=step,
        values=values,
        absorption_index=None if idx < 0 else int(idx),
    )


@njit(cache=True)
def _besq_euler_batch_core(z, theta, dt, normals, absorb):
    nsteps, npaths = normals.shape
    sqdt = np.sqrt(dt)
    absorbed_at = np.full(npaths, -1, dtype=np.int64)
    for i in range(nsteps):
        for p in range(npaths):
            zp = z[p]
            if zp <= 0.0 and absorb:
                continue
            zp = zp + theta * dt + 2.0 * np.sqrt(zp) * sqdt * normals[i, p]
            if zp <= 0.0:
                zp = 0.0
                if absorb and absorbed_at[p] < 0:
                    absorbed_at[p] = i + 1
            z[p] = zp
    return z, absorbed_at


def besq_euler_batch(start_masses, theta, step, horizon, rng: RandomSource):
    """Terminal values and absorption indices for many independent Euler paths.

    Returns (values_at_horizon, absorption_times) with absorption_times nan
    where the path was not absorbed.  Memory-bounded: normals are drawn in
    chunks, so long horizons are fine.
    """
    _check_positive(step=step, horizon=horizon)
    z = np.asarray(start_masses, dtype=float).copy()
    n = int(round(horizon / step))
    absorbed = np.full(z.shape, np.nan)
    done_steps = 0
    chunk = max(1, min(n, int(4e6 // max(1, z.size))))
    while done_steps < n:
        m = min(chunk, n - done_steps)
        normals = rng.generator.standard_normal((m, z.size))
        z, idx = _besq_euler_batch_core(z, theta, step, normals, theta <= 0)
        newly = (idx >= 0) & np.isnan(absorbed)
        absorbed[newly] = (done_steps + idx[newly]) * step
        done_steps += m
    return z, absorbed


# ---------------------------------------------------------------------------
# Tilted stable(1/2) subordinator jumps
#
# Levy density nu(dx) = (2 sqrt(pi))^-1 x^(-3/2) exp(-x/2y) dx, whose Laplace
# exponent is sqrt(lambda + 1/2y) - sqrt(1/2y).


@dataclass
class JumpSet:
    """Jumps of the tilted stable(1/2) subordinator over [0, horizon).

    Jumps below the truncation threshold are dropped, not redistributed;
    dust_mass_bound = horizon * sqrt(truncation/pi) bounds the mass removed.
    """

    horizon: float
    times: np.ndarray
    sizes: np.ndarray
    truncation: float
    dust_mass_bound: float

    @property
    def total_mass(self) -> float:
        return float(self.sizes.sum())


def subordinator_levy_density(x, elapsed: float):
    x = np.asarray(x, dtype=float)
    return x ** (-1.5) * np.exp(-x / (2.0 * elapsed)) / (2.0 * math.sqrt(math.pi))


def subordinator_tail_rate(truncation: float, elapsed: float) -> float:
    """nu((truncation, infinity)); closed form via the complementary error function."""
    _check_positive(truncation=truncation, elapsed=elapsed)
    e, y = truncation, elapsed
    return math.exp(-e / (2 * y)) / math.sqrt(math.pi * e) - erfc(math.sqrt(e / (2 * y))) / math.sqrt(2 * y)


def truncated_jump_mass_bound(horizon: float, truncation: float) -> float:
    """Upper bound horizon*sqrt(truncation/pi) on the expected mass of dropped jumps."""
    return horizon * math.sqrt(truncation / math.pi)


def sample_jump_sizes(n: int, elapsed: float, truncation: float, rng: RandomSource) -> np.ndarray:
    """n i.i.d. jump sizes from the normalized Levy tail density on (truncation, inf).

    Proposal truncation/U^2 from the untilted stable(1/2) tail; accept with
    probability exp(-(x - truncation)/2y).  Acceptance is near 1 whenever
    truncation << elapsed.
    """
    if n == 0:
        return np.empty(0)
    gen = rng.generator
    out = np.empty(n)
    need = n
    filled = 0
    while need > 0:
        m = int(need * 1.2) + 16
        x = truncation / gen.random(m) ** 2
        acc = gen.random(m) < np.exp(-(x - truncation) / (2.0 * elapsed))
        got = x[acc]
        take = min(need, got.size)
        out[filled : filled + take] = got[:take]
        filled += take
        need -= take
    return out


def sample_subordinator_jumps(
    elapsed: float,
    horizon: float,
    truncation: float,
    rng: RandomSource,
) -> JumpSet:
    """Poisson point process of jumps with sizes > truncation over [0, horizon).

    Count ~ Poisson(horizon * nu(truncation, inf)); times i.i.d. uniform,
    returned sorted; sizes i.i.d. from the normalized tail density.
    """
    _check_positive(elapsed=elapsed, horizon=horizon, truncation=truncation)
    gen = rng.generator
    rate = subordinator_tail_rate(truncation, elapsed)
    n = gen.poisson(horizon * rate)
    times = np.sort(gen.random(n) * horizon)
    sizes = sample_jump_sizes(n, elapsed, truncation, rng)
    return JumpSet(
        horizon=horizon,
        times=times,
        sizes=sizes,
        truncation=truncation,
        dust_mass_bound=truncated_jump_mass_bound(horizon, truncation),
    )


# ---------------------------------------------------------------------------
# Leading block mass of a surviving block.
#
# A block of mass w that survives a kernel step of elapsed time y contributes
# a new leading block whose mass L has density
#   (2 pi)^{-1/2} sqrt(y) u^{-3/2} e^{-u/2y} / (e^{w/2y} - 1)
#       * (1 - cosh(sqrt(wu)/y) + (sqrt(wu)/y) sinh(sqrt(wu)/y)).
# The law scales: L(w, y) = y * L(w/y, 1), so tables are cached in the single
# rescaled parameter w/y.


def _log_bump(x: np.ndarray) -> np.ndarray:
    """log(1 - cosh x + x sinh x), computed stably across regimes."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-4
    big = x > 30.0
    mid = ~(small | big)
    xs = x[small]
    with np.errstate(divide="ignore"):
        out[small] = 2.0 * np.log(xs) - math.log(2.0) + np.log1p(xs**2 / 4 + xs**4 / 72)
    xm = x[mid]
    out[mid] = np.log(1.0 - np.cosh(xm) + xm * np.sinh(xm))
    xb = x[big]
    out[big] = xb + np.log((xb - 1.0) / 2.0 + np.exp(-xb))
    return out


def _log_expm1_half(w: float) -> float:
    # log(e^{w/2} - 1)
    z = w / 2.0
    if z > 30.0:
        return z
    return math.log(math.expm1(z))


def leading_block_log_density(u, block_mass: float, elapsed: float):
    """Log density of the leading-block mass for block_mass w and elapsed y."""
    u = np.asarray(u, dtype=float)
    w, y = block_mass, elapsed
    x = np.sqrt(w * u) / y
    return (
        -0.5 * math.log(2 * math.pi)
        + 0.5 * math.log(y)
        - 1.5 * np.log(u)
        - u / (2 * y)
        - _log_expm1_half(w / y)
        + _log_bump(x)
    )


class _LeadingBlockTables:
    """Inverse-CDF tables for the rescaled leading-block law, keyed by w/y.

    Buckets round log(w/y) to 1% relative precision; tables are built on a
    sqrt-mass grid (the density is bounded there) and kept in an LRU cache.
    """

    def __init__(self, knots: int = 4096, max_entries: int = 1024):
        self.knots = knots
        self.max_entries = max_entries
        self._cache: OrderedDict[int, tuple[np.ndarray, np.ndarray]] = OrderedDict()

    @staticmethod
    def _bucket(ratio: float) -> int:
        return int(round(math.log(ratio) / 0.01))

    def _build(self, ratio: float) -> tuple[np.ndarray, np.ndarray]:
        r = ratio
        s_peak = math.sqrt(r)
        s_hi = s_peak + 12.0
        if s_peak > 24.0:
            coarse = np.linspace(0.0, s_peak - 12.0, self.knots // 8, endpoint=False)
            fine = np.linspace(s_peak - 12.0, s_hi, self.knots - self.knots // 8)
            s = np.concatenate([coarse, fine])
        else:
            s = np.linspace(0.0, max(s_hi, 7.0), self.knots)
        v = s * s
        # density of s = sqrt(v): q(s) = f(v) * 2 s = sqrt(2/pi) s^-2 exp(E); finite at 0
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.sqrt(r) * s
            loge = -v / 2.0 - _log_expm1_half(r) + _log_bump(x)
            logq = 0.5 * math.log(2.0 / math.pi) - 2.0 * np.log(s) + loge
        q = np.exp(logq)
        if s[0] == 0.0:
            # limit s->0: q -> sqrt(2/pi) * (r/2) / (e^{r/2}-1)
            q[0] = math.sqrt(2.0 / math.pi) * math.exp(math.log(r / 2.0) - _log_expm1_half(r))
        q = np.nan_to_num(q, nan=0.0, posinf=0.0)
        cdf = np.concatenate([[0.0], np.cumsum((q[1:] + q[:-1]) * 0.5 * np.diff(s))])
        total = cdf[-1]
        if not (total > 0):
            raise RuntimeError(f"degenerate leading-block table for ratio {ratio!r}")
        return s, cdf / total

    def table(self, ratio: float) -> tuple[np.ndarray, np.ndarray]:
        key = self._bucket(ratio)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        tab = self._build(math.exp(key * 0.01))
        self._cache[key] = tab
        if len(self._cache) > self.max_entries:
            self._cache.popitem(last=False)
        return tab


_TABLES = _LeadingBlockTables()

# Above this block-to-elapsed ratio the rescaled density concentrates at
# sqrt(v) = sqrt(ratio) + N(0,1) up to an explicit factor, sampled exactly by
# rejection; the neglected terms are O(e^(-ratio/8)).
_LARGE_RATIO = 900.0


def _sample_leading_large_ratio(ratio: float, rng: RandomSource) -> float:
    """Rescaled draw v = u/elapsed for large w/elapsed.

    In s = sqrt(v) - sqrt(ratio) the density is proportional to
    (1 + s/sqrt(ratio))^(-1) (1 - 1/x) e^(-s^2/2) with x = ratio + s*sqrt(ratio);
    rejection from a standard normal with envelope 2 on s > -sqrt(ratio)/2.
    """
    root = math.sqrt(ratio)
    gen = rng.generator
    while True:
        s = gen.standard_normal()
        if s <= -0.5 * root:
            continue
        x = ratio + s * root
        h = (1.0 - 1.0 / x) / (1.0 + s / root)
        if gen.random() * 2.0 < h:
            return (root + s) ** 2


def sample_leading_block_mass(block_mass: float, elapsed: float, rng: RandomSource) -> float:
    """One draw of the leading-block mass for a surviving block.

    Tabulated inverse-CDF in the rescaled variable u/elapsed, with the
    parameter w/elapsed bucketed to 1% relative precision; large ratios use
    an exact Gaussian-rejection sampler instead of a table.
    """
    _check_positive(block_mass=block_mass, elapsed=elapsed)
    ratio = block_mass / elapsed
    if ratio > _LARGE_RATIO:
        return elapsed * _sample_leading_large_ratio(ratio, rng)
    s_grid, cdf = _TABLES.table(ratio)
    u = rng.generator.random()
    s = float(np.interp(u, cdf, s_grid))
    return elapsed * s * s
