"""Brute-force oracles for the verification suites.

Everything here is independent of the transition-kernel code paths it is
used to check: plain Euler discretizations, quadrature, and exhaustive
enumeration only.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import integrate

from .primitives import besq_euler_batch
from .rng import RandomSource

__all__ = [
    "euler_besq_terminal",
    "euler_besq_first_passage",
    "euler_wright_fisher",
    "quad_positive",
    "leading_block_density_checks",
]


def euler_besq_terminal(
    start_masses,
    theta: float,
    horizon: float,
    rng: RandomSource,
    step: float = 1e-4,
) -> np.ndarray:
    """Terminal values of independent Euler squared-Bessel(theta) paths."""
    values, _ = besq_euler_batch(start_masses, theta, step, horizon, rng)
    return values


def euler_besq_first_passage(
    start_masses,
    theta: float,
    barrier: float,
    rng: RandomSource,
    step: float = 1e-4,
    horizon: float = 50.0,
) -> np.ndarray:
    """First times Euler squared-Bessel(theta) paths fall to or below a
    barrier; paths that never do within the horizon report +inf."""
    z = np.asarray(start_masses, dtype=float).copy()
    n = int(round(horizon / step))
    hit = np.full(z.shape, np.inf)
    gen = rng.generator
    sq = math.sqrt(step)
    active = z > barrier
    for i in range(1, n + 1):
        if not active.any():
            break
        za = z[active]
        za = za + theta * step + 2.0 * np.sqrt(np.maximum(za, 0.0)) * sq * gen.standard_normal(za.size)
        za = np.maximum(za, 0.0)
        z[active] = za
        crossed = za <= barrier
        idx = np.where(active)[0][crossed]
        hit[idx] = i * step
        active[idx] = False
    return hit


def euler_wright_fisher(
    initial: np.ndarray,
    parameters,
    horizon: float,
    rng: RandomSource,
    step: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler paths of the multi-allele Wright-Fisher diffusion with the given
    signed parameters, killed when a coordinate leaves (0, 1).

    Generator convention: drift (1/2)(theta_i - |theta| x_i) and covariance
    x_i (delta_ij - x_j); the simplex constraint is preserved exactly by the
    projected noise.  Returns (coordinates at the horizon, alive mask).
    """
    x = np.array(initial, dtype=float)
    if x.ndim != 2:
        raise ValueError("initial must be (replicates, coordinates)")
    theta = np.asarray(parameters, dtype=float)
    total = theta.sum()
    n = int(round(horizon / step))
    gen = rng.generator
    alive = np.ones(x.shape[0], dtype=bool)
    sq = math.sqrt(step)
    for _ in range(n):
        idx = np.where(alive)[0]
        if idx.size == 0:
            break
        xa = x[idx]
        drift = 0.5 * (theta - total * xa)
        z = gen.standard_normal(xa.shape)
        root = np.sqrt(np.maximum(xa, 0.0))
        noise = root * z - xa * (root * z).sum(axis=1, keepdims=True)
        xa = xa + drift * step + sq * noise
        x[idx] = xa
        dead = (xa <= 0.0).any(axis=1) | (xa >= 1.0).any(axis=1)
        alive[idx[dead]] = False
    return x, alive


def quad_positive(f: Callable[[float], float], lo: float = 0.0, hi: float = np.inf, **kw) -> float:
    val, _ = integrate.quad(f, lo, hi, limit=400, **kw)
    return val


def leading_block_density_checks(block_mass: float, elapsed: float) -> dict:
    """Quadrature facts about the leading-block density: total mass and mean.

    Integrates in s = sqrt(u) where the integrand is smooth; used to gate the
    tabulated sampler.
    """
    from .primitives import leading_block_log_density

    def f_s(s):
        u = s * s
        return math.exp(leading_block_log_density(u, block_mass, elapsed)) * 2.0 * s

    hi = math.sqrt(block_mass) + 14.0 * math.sqrt(elapsed)
    total = integrate.quad(f_s, 0.0, hi, limit=600)[0]
    mean = integrate.quad(lambda s: s * s * f_s(s), 0.0, hi, limit=600)[0]
    return {"total": total, "mean": mean}
