"""Monte Carlo verification suites.

Each suite maps one closed-form law of the evolutions to a statistical test
with an explicit threshold, runs it from a fixed seed, and emits a
machine-readable report.  Thresholds budget for Monte Carlo error plus the
documented discretization and truncation biases (clock Euler step, jump
truncation, stick-breaking dust); the per-suite `details` record the knobs.

All oracles are independent of the kernels under test: Euler paths,
quadrature, exhaustive enumeration, or direct closed-form sampling.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .depoisson import depoissonize, wf_slice
from .evolution import (
    EvolutionConfig,
    resampling_kernel,
    run_killed,
    run_nonresampling,
    run_resampling,
    sample_brownian_reduced_ktree,
)
from .oracles import (
    euler_besq_first_passage,
    euler_besq_terminal,
    euler_wright_fisher,
)
from .partition import IntervalPartition
from .primitives import sample_jump_sizes, subordinator_tail_rate
from .rng import RandomSource
from .stats import chi2_gof, mixed_ks_2samp, moment_compare
from .trees import KTree, TreeShape, enumerate_shapes, project_to, shape_text, swap_and_reduce_shape, validate_shape
from .transitions import Type1State, type1_transition

__all__ = ["TestReport", "SUITES", "run_suite", "run_all"]

# default Monte Carlo knobs shared by the evolution suites
_SUITE_CFG = dict(grid_step=1e-3, jump_truncation_rel=1e-6, clock_step_rel=1e-3, pdip_blocks=800)


@dataclass
class TestReport:
    """Outcome of one verification suite."""

    suite: str
    statistic: str  # KS | chi2 | moment | exact
    observed: float
    threshold: float
    n: int
    seed: int
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _pseudostationary_tree(k: int, gamma: float, rng: RandomSource, pdip_blocks: int) -> KTree:
    mass = rng.generator.gamma(k - 0.5, 1.0 / gamma)
    return sample_brownian_reduced_ktree(k, mass, rng, pdip_blocks)


def _unit_tree(k: int, rng: RandomSource, pdip_blocks: int) -> KTree:
    tree = sample_brownian_reduced_ktree(k, 1.0, rng, pdip_blocks)
    m = tree.mass  # stored mass differs from 1 by stick-breaking dust
    from .partition import scale as pscale

    tops = {i: x / m for i, x in tree.tops.items()}
    parts = {e: pscale(p, 1.0 / m) if len(p) else p for e, p in tree.partitions.items()}
    return KTree(tree.shape, tops, parts)


# ---------------------------------------------------------------------------


def suite_survival(seed: int = 1101, n: int = 20000, k: int = 3, gamma: float = 1.0, y: float = 0.5) -> TestReport:
    """Pseudo-stationary killed run: survival beyond y is (2*y*gamma+1)^(-k)."""
    rng = RandomSource(seed)
    cfg = EvolutionConfig(**_SUITE_CFG)
    survived = 0
    for _ in range(n):
        tree = _pseudostationary_tree(k, gamma, rng, cfg.pdip_blocks)
        traj = run_killed(tree, cfg, y, rng)
        survived += traj.terminal == "horizon"
    target = (2.0 * y * gamma + 1.0) ** (-k)
    threshold = max(0.02, 4.0 * math.sqrt(target * (1 - target) / n))
    observed = abs(survived / n - target)
    return TestReport(
        "survival",
        "moment",
        observed,
        threshold,
        n,
        seed,
        observed <= threshold,
        {"empirical": survived / n, "target": target, "k": k, "gamma": gamma, "y": y},
    )


def suite_dropped_label(seed: int = 1102, n: int = 10000, k: int = 3, gamma: float = 1.0) -> TestReport:
    """Dropped-label law at first degeneration: P(J=2) = 2/(k(2k-3)) and
    P(J=j) = (4j-5)/(k(2k-3)); label 1 is never dropped."""
    if k < 2:
        raise ValueError("k must be >= 2")
    probs = np.array([2.0 / (k * (2 * k - 3))] + [(4 * j - 5) / (k * (2 * k - 3)) for j in range(3, k + 1)])
    assert math.isclose(probs.sum(), 1.0, rel_tol=1e-12), "dropped-label probabilities must sum to 1"
    rng = RandomSource(seed)
    cfg = EvolutionConfig(**_SUITE_CFG)
    counts = np.zeros(k - 1)
    label_one_drops = 0
    for _ in range(n):
        tree = _pseudostationary_tree(k, gamma, rng, cfg.pdip_blocks)
        traj = run_resampling(tree, cfg, 100.0, rng, stop_after_events=1)
        j = traj.events[0].dropped
        if j == 1:
            label_one_drops += 1
        else:
            counts[j - 2] += 1
    stat, p = chi2_gof(counts, probs)
    passed = p > 0.01 and label_one_drops == 0
    return TestReport(
        "dropped_label",
        "chi2",
        p,
        0.01,
        n,
        seed,
        passed,
        {
            "frequencies": (counts / n).tolist(),
            "targets": probs.tolist(),
            "label_one_drops": label_one_drops,
            "chi2": stat,
            "k": k,
        },
    )


def suite_total_mass(seed: int = 1103, n: int = 5000, k: int = 3, y: float = 0.1) -> TestReport:
    """Total mass of resampling and non-resampling runs from unit mass is a
    squared Bessel(-1) marginal (Euler oracle), atom at zero included."""
    rng = RandomSource(seed)
    cfg = EvolutionConfig(record_times=(y,), **_SUITE_CFG)
    results = {}
    for mode, runner in (("resampling", run_resampling), ("nonresampling", run_nonresampling)):
        masses = np.empty(n)
        for i in range(n):
            tree = _unit_tree(k, rng, cfg.pdip_blocks)
            traj = runner(tree, cfg, y, rng)
            masses[i] = traj.states[traj.times[-1]].mass if traj.terminal == "horizon" else 0.0
        oracle = euler_besq_terminal(np.ones(n), -1.0, y, rng.replicate_sources(1)[0], step=1e-4)
        mk = mixed_ks_2samp(masses, oracle)
        results[mode] = mk
    worst = min(results.values(), key=lambda r: r.ks_pvalue)
    passed = all(r.passed() for r in results.values())
    return TestReport(
        "total_mass",
        "KS",
        worst.ks_pvalue,
        0.01,
        n,
        seed,
        passed,
        {
            mode: {"ks_p": r.ks_pvalue, "ks_D": r.ks_statistic, "atom_z": r.atom_zscore, "atoms": r.atom_freqs}
            for mode, r in results.items()
        }
        | {"k": k, "y": y},
    )


def suite_pseudostationarity(
    seed: int = 1104, n: int = 20000, k: int = 3, gamma: float = 1.0, y: float = 0.5
) -> TestReport:
    """Killed run conditioned on survival: mass is Gamma(k-1/2, gamma/(2 g y+1))
    with mean (k-1/2)(2 g y+1)/gamma; surviving shapes stay uniform and
    normalized top masses match fresh Brownian reduced k-trees."""
    rng = RandomSource(seed)
    cfg = EvolutionConfig(record_times=(y,), **_SUITE_CFG)
    shapes = {shape_text(s): idx for idx, s in enumerate(enumerate_shapes(range(1, k + 1)))}
    shape_counts = np.zeros(len(shapes))
    masses, top_fracs = [], []
    for _ in range(n):
        tree = _pseudostationary_tree(k, gamma, rng, cfg.pdip_blocks)
        traj = run_killed(tree, cfg, y, rng)
        if traj.terminal != "horizon":
            continue
        state = traj.states[traj.times[-1]]
        m = state.mass
        masses.append(m)
        shape_counts[shapes[shape_text(state.shape)]] += 1
        top_fracs.append([state.tops[i] / m for i in state.sorted_labels()])
    masses = np.asarray(masses)
    target_mean = (k - 0.5) * (2 * gamma * y + 1) / gamma
    se = masses.std(ddof=1) / math.sqrt(masses.size)
    mean_z = (masses.mean() - target_mean) / se
    _, shape_p = chi2_gof(shape_counts, np.full(len(shapes), 1.0 / len(shapes)))
    # fresh Brownian reduced trees as the normalized-top oracle
    fresh = np.array(
        [
            [t.tops[i] / t.mass for i in t.sorted_labels()]
            for t in (_unit_tree(k, rng, 256) for _ in range(masses.size))
        ]
    )
    top_fracs = np.asarray(top_fracs)
    top_ps = [stats.ks_2samp(top_fracs[:, c], fresh[:, c]).pvalue for c in range(k)]
    passed = abs(mean_z) <= 3.0 and shape_p > 0.01 and all(p > 0.01 for p in top_ps)
    return TestReport(
        "pseudostationarity",
        "moment",
        abs(mean_z),
        3.0,
        n,
        seed,
        passed,
        {
            "survivors": int(masses.size),
            "conditional_mean": float(masses.mean()),
            "target_mean": target_mean,
            "shape_p": shape_p,
            "top_ks_p": top_ps,
            "k": k,
            "gamma": gamma,
            "y": y,
        },
    )


def _fixed_two_tree() -> KTree:
    shape = TreeShape.from_edges([[1, 2]])
    return KTree(shape, {1: 0.3, 2: 0.3}, {frozenset([1, 2]): IntervalPartition([0.25, 0.15])})


def _coords_2tree(tree: KTree) -> tuple[float, float, float]:
    x1 = tree.tops.get(1, 0.0)
    x2 = tree.tops.get(2, 0.0)
    edge = frozenset([1, 2])
    beta = tree.partitions[edge].mass if edge in tree.partitions else 0.0
    return x1, x2, beta


def suite_consistency(seed: int = 1105, n: int = 5000, k: int = 3, j: int = 2, y: float = 0.2) -> TestReport:
    """Projection consistency: the j-tree projection of a k-tree run equals a
    direct j-tree run in law, for resampling runs started from the iterated
    resampling-kernel initial law and for non-resampling runs from a fixed
    tree; total mass is preserved pathwise under the coupled projection."""
    if not (2 <= j < k):
        raise ValueError("need 2 <= j < k")
    if j != 2 or k != 3:
        raise ValueError("this suite is calibrated for the (k, j) = (3, 2) comparison")
    rng = RandomSource(seed)
    cfg = EvolutionConfig(record_times=(y,), **_SUITE_CFG)
    base = _fixed_two_tree()

    proj_r, direct_r = [], []
    mass_gap = 0.0
    for _ in range(n):
        start3, _ = resampling_kernel(base, 3, rng, cfg.pdip_blocks)
        traj = run_resampling(start3, cfg, y, rng)
        state = traj.states[traj.times[-1]] if traj.terminal == "horizon" else None
        if state is None:
            proj_r.append((0.0, 0.0, 0.0))
        else:
            p = project_to(state, j)
            mass_gap = max(mass_gap, abs(p.mass - state.mass))
            proj_r.append(_coords_2tree(p))
        traj2 = run_resampling(base, cfg, y, rng)
        st2 = traj2.states[traj2.times[-1]] if traj2.terminal == "horizon" else None
        direct_r.append(_coords_2tree(st2) if st2 is not None else (0.0, 0.0, 0.0))

    rng_fix = RandomSource(seed, stream=999)
    start3_fixed, _ = resampling_kernel(base, 3, rng_fix, cfg.pdip_blocks)
    base2 = project_to(start3_fixed, j)
    proj_n, direct_n = [], []
    for _ in range(n):
        traj = run_nonresampling(start3_fixed, cfg, y, rng)
        state = traj.states[traj.times[-1]] if traj.terminal == "horizon" else None
        if state is not None and any(i <= j for i in state.labels):
            proj_n.append(_coords_2tree(project_to(state, j)))
        else:
            proj_n.append((0.0, 0.0, 0.0))
        traj2 = run_nonresampling(base2, cfg, y, rng)
        st2 = traj2.states[traj2.times[-1]] if traj2.terminal == "horizon" else None
        direct_n.append(_coords_2tree(st2) if st2 is not None else (0.0, 0.0, 0.0))

    names = ["x1", "x2", "beta"]
    detail = {"coupled_mass_gap": mass_gap}
    all_ps = []
    for tag, a, b in (("resampling", proj_r, direct_r), ("nonresampling", proj_n, direct_n)):
        a = np.asarray(a)
        b = np.asarray(b)
        for c, nm in enumerate(names):
            mk = mixed_ks_2samp(a[:, c], b[:, c])
            detail[f"{tag}_{nm}"] = {"ks_p": mk.ks_pvalue, "atom_z": mk.atom_zscore}
            detail[f"{tag}_{nm}_pass"] = mk.passed()
            all_ps.append(mk.ks_pvalue)
    passed = all(detail[f"{t}_{nm}_pass"] for t in ("resampling", "nonresampling") for nm in names)
    passed = passed and mass_gap < 1e-9
    return TestReport(
        "consistency",
        "KS",
        min(all_ps),
        0.01,
        n,
        seed,
        passed,
        detail | {"k": k, "j": j, "y": y},
    )


def suite_wright_fisher(seed: int = 1106, n: int = 5000, u: float = 0.2) -> TestReport:
    """Stationary de-Poissonized 2-tree: the coordinates (x1, x2, ||beta||)
    read at u/4 and conditioned on no coordinate vanishing match a killed
    Wright-Fisher diffusion with parameters (-1/2, -1/2, +1/2) started from
    Dirichlet(1/2, 1/2, 1/2), in first and second moments."""
    rng = RandomSource(seed)
    target = u / 4.0
    horizon = 8.0 * target
    rec = tuple(np.arange(0.0005, horizon, 0.0005))
    cfg = EvolutionConfig(record_times=rec, **_SUITE_CFG | {"pdip_blocks": 512})
    rows = []
    for _ in range(n):
        tree = _unit_tree(2, rng, 512)
        traj = run_resampling(tree, cfg, horizon, rng)
        try:
            depoi = depoissonize(traj, [target])
        except ValueError:
            continue
        sl = wf_slice(depoi, [u])
        row = sl.coords[0]
        if sl.killed_at is None and not np.isnan(row).any():
            rows.append(row)
    pipeline = np.asarray(rows)
    oracle_rng = rng.replicate_sources(1)[0]
    init = oracle_rng.generator.dirichlet([0.5, 0.5, 0.5], size=n)
    final, alive = euler_wright_fisher(init, (-0.5, -0.5, 0.5), u, oracle_rng, step=1e-4)
    oracle = final[alive]
    per_coord = []
    passed = True
    for c in range(3):
        cmp = moment_compare(pipeline[:, c], oracle[:, c], sigmas=3.0)
        per_coord.append(
            {
                "mean_z": cmp["mean"]["zscore"],
                "second_z": cmp["second"]["zscore"],
                "pipeline_mean": cmp["mean"]["a"],
                "oracle_mean": cmp["mean"]["b"],
            }
        )
        passed = passed and cmp["mean"]["pass"] and cmp["second"]["pass"]
    worst = max(abs(pc["mean_z"]) for pc in per_coord)
    worst = max(worst, max(abs(pc["second_z"]) for pc in per_coord))
    sums = pipeline.sum(axis=1)
    passed = passed and np.allclose(sums, 1.0, atol=1e-9)
    return TestReport(
        "wright_fisher",
        "moment",
        worst,
        3.0,
        n,
        seed,
        passed,
        {
            "survivors_pipeline": int(pipeline.shape[0]),
            "survivors_oracle": int(oracle.shape[0]),
            "coords": per_coord,
            "u": u,
        },
    )


def suite_accumulation(seed: int = 1107, n: int = 5000, k: int = 3, mass_floor: float = 1e-4) -> TestReport:
    """Degenerations accumulate exactly at mass extinction: first passage of
    the tree's mass below the floor matches the same-floor first passage of a
    squared Bessel(-1) Euler oracle; every replicate logs finitely many
    events."""
    rng = RandomSource(seed)
    horizon = 60.0
    cfg = EvolutionConfig(mass_floor=mass_floor, **_SUITE_CFG)
    times = np.empty(n)
    max_events = 0
    for i in range(n):
        tree = _unit_tree(k, rng, cfg.pdip_blocks)
        traj = run_resampling(tree, cfg, horizon, rng)
        times[i] = traj.terminal_time if traj.terminal == "mass_floor" else horizon
        max_events = max(max_events, len(traj.events))
    oracle = euler_besq_first_passage(np.ones(n), -1.0, mass_floor, rng.replicate_sources(1)[0], step=1e-4, horizon=horizon)
    oracle = np.where(np.isinf(oracle), horizon, oracle)
    ks = stats.ks_2samp(times, oracle)
    passed = ks.statistic < 0.03
    return TestReport(
        "accumulation",
        "KS",
        float(ks.statistic),
        0.03,
        n,
        seed,
        passed,
        {
            "ks_p": float(ks.pvalue),
            "mean_extinction": float(times.mean()),
            "oracle_mean": float(oracle.mean()),
            "max_events": max_events,
            "mass_floor": mass_floor,
            "k": k,
        },
    )


def suite_semigroup(seed: int = 1108, n: int = 10000, y: float = 0.5) -> TestReport:
    """Composing two exact type-1 kernel steps of size y/2 equals one step of
    size y in law (total mass compared, atom at zero included)."""
    rng = RandomSource(seed)
    state = Type1State(0.3, IntervalPartition([0.4, 0.2, 0.1]))
    trunc = _SUITE_CFG["jump_truncation_rel"]
    one = np.empty(n)
    two = np.empty(n)
    for i in range(n):
        one[i] = type1_transition(state, y, rng, trunc).mass
    for i in range(n):
        s = type1_transition(state, y / 2, rng, trunc)
        if not s.degenerate:
            s = type1_transition(s, y / 2, rng, trunc)
        two[i] = s.mass
    mk = mixed_ks_2samp(one, two)
    return TestReport(
        "semigroup",
        "KS",
        mk.ks_pvalue,
        0.01,
        n,
        seed,
        mk.passed(),
        {"ks_D": mk.ks_statistic, "atom_z": mk.atom_zscore, "atoms": mk.atom_freqs, "y": y},
    )


def suite_subordinator(
    seed: int = 1109,
    n: int = 100000,
    y: float = 1.0,
    horizon: float = 1.0,
    eps: float = 1e-8,
    lambdas: tuple = (0.5, 1.0, 2.0),
) -> TestReport:
    """Laplace transform of the total truncated jump mass against the closed
    form exp(-horizon*(sqrt(lambda + 1/2y) - sqrt(1/2y)))."""
    rng = RandomSource(seed)
    gen = rng.generator
    rate = subordinator_tail_rate(eps, y)
    worst = 0.0
    per_lambda = {}
    chunk = 2000
    transforms = {lam: 0.0 for lam in lambdas}
    done = 0
    while done < n:
        m = min(chunk, n - done)
        counts = gen.poisson(horizon * rate, size=m)
        total = int(counts.sum())
        sizes = sample_jump_sizes(total, y, eps, rng)
        bounds = np.concatenate([[0], np.cumsum(counts)])[:-1]
        masses = np.add.reduceat(sizes, bounds) if total else np.zeros(m)
        masses[counts == 0] = 0.0
        for lam in lambdas:
            transforms[lam] += np.exp(-lam * masses).sum()
        done += m
    for lam in lambdas:
        emp = transforms[lam] / n
        exact = math.exp(-horizon * (math.sqrt(lam + 1 / (2 * y)) - math.sqrt(1 / (2 * y))))
        rel = abs(emp - exact) / exact
        per_lambda[lam] = {"empirical": emp, "exact": exact, "rel_error": rel}
        worst = max(worst, rel)
    return TestReport(
        "subordinator",
        "moment",
        worst,
        0.02,
        n,
        seed,
        worst < 0.02,
        {"per_lambda": {str(k): v for k, v in per_lambda.items()}, "eps": eps, "y": y},
    )


def suite_combinatorics(seed: int = 1110, n: int = 0, k_max: int = 5) -> TestReport:
    """Exhaustive shape checks: shape counts equal (2k-3)!!, every enumerated
    shape validates, swap-and-reduce closes over all (shape, label) pairs and
    reproduces a hand-worked nine-leaf example."""
    detail = {}
    ok = True
    for k in range(2, k_max + 1):
        shapes = enumerate_shapes(range(1, k + 1))
        want = 1
        for m in range(2 * k - 3, 0, -2):
            want *= m
        detail[f"count_{k}"] = len(shapes)
        ok = ok and len(shapes) == want
        ok = ok and all(not validate_shape(s) for s in shapes)
        if k <= 5:
            for s in shapes:
                for i in range(1, k + 1):
                    reduced, j = swap_and_reduce_shape(s, i)
                    ok = ok and not validate_shape(reduced) and j >= 2
    nine = TreeShape.from_edges(
        [[1, 2, 3, 4, 5, 6, 7, 8, 9], [5, 7], [1, 2, 3, 4, 6, 8, 9], [1, 2, 4, 6, 8, 9], [1, 6], [2, 4, 8, 9], [4, 8, 9], [4, 8]]
    )
    reduced, j = swap_and_reduce_shape(nine, 2)
    expect = TreeShape.from_edges(
        [[1, 2, 3, 5, 6, 7, 8, 9], [5, 7], [1, 2, 3, 6, 8, 9], [1, 2, 6, 8, 9], [1, 6], [2, 8, 9], [2, 8]]
    )
    worked = (j == 4) and (reduced == expect)
    detail["nine_leaf_example"] = worked
    ok = ok and worked
    return TestReport("combinatorics", "exact", 0.0 if ok else 1.0, 0.5, 0, seed, ok, detail)


SUITES: dict[str, Callable[..., TestReport]] = {
    "survival": suite_survival,
    "dropped_label": suite_dropped_label,
    "total_mass": suite_total_mass,
    "pseudostationarity": suite_pseudostationarity,
    "consistency": suite_consistency,
    "wright_fisher": suite_wright_fisher,
    "accumulation": suite_accumulation,
    "semigroup": suite_semigroup,
    "subordinator": suite_subordinator,
    "combinatorics": suite_combinatorics,
}


def run_suite(name: str, **kwargs) -> TestReport:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; known: {sorted(SUITES)}")
    return SUITES[name](**kwargs)


def run_all() -> list[TestReport]:
    return [SUITES[name]() for name in SUITES]
