"""Monte Carlo experiment orchestration.

Each replica owns an independent random stream derived from
``SeedSequence((master_seed, replica_index))``; aggregation is
order-independent, so reports are pure functions of (configuration,
master seed) and invariant under the worker count.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .characteristics import Characteristic, counted_process
from .errors import CmjError
from .genealogy import TimeHorizon, biggins, complex_martingale, nerman_w, simulate
from .models import BirthLaw
from .renewal import RenewalKernel, SigmaSquared, key_renewal_limit, mean_process
from .spectral import MalthusianSolution


def replica_seed(master_seed: int, index: int, *tags: int) -> np.random.SeedSequence:
    """The documented seed split: one stream per (master seed, replica index)."""
    return np.random.SeedSequence((master_seed, index) + tags)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# -- replica records ---------------------------------------------------------


@dataclass(frozen=True)
class ReplicaRecord:
    seed: int
    survived: bool
    z_t: int
    z_phi_t: float
    w_main: float
    w_ext: float
    normalized_stat: Optional[float]


@dataclass(frozen=True)
class CltReport:
    n_replicas: int
    n_survived: int
    t: float
    t_big: float
    alpha: float
    beta: float
    a_alpha: float
    sigma2_formula: float
    sigma2_se: float
    degenerate: bool
    ks_statistic: Optional[float]
    ks_p_value: Optional[float]
    anderson_darling_stat: Optional[float]
    empirical_variance: Optional[float]
    sigma2_ratio: Optional[float]

    def to_json(self) -> dict:
        return asdict(self)


def _clt_replica(args) -> tuple[ReplicaRecord, Optional[float]]:
    (law, char, alpha, beta, c_alpha, t, t_big, a_eff, sigma2, master_seed, idx) = args
    ss = replica_seed(master_seed, idx)
    rng = np.random.default_rng(ss)
    pop = simulate(law, TimeHorizon(t_big), rng)
    z_t = pop.count_births(t)
    z_phi = counted_process(pop, char, t)
    w_main = nerman_w(pop, alpha, t)
    w_ext = nerman_w(pop, alpha, t_big)
    survived = w_ext > 0.0
    stat = None
    y = None
    if survived and sigma2 > 0.0:
        centred = z_phi - a_eff * math.exp(alpha * t) * w_ext
        # distributional statistic: count normalization (the population
        # size at t is measurable at t, unlike the extended-horizon
        # martingale, so it does not correlate with the proxy error)
        stat = math.sqrt(c_alpha / z_t) * centred / math.sqrt(sigma2)
        # variance cross-validation keeps the tilted-martingale scaling
        y = math.exp(-alpha * t / 2.0) * centred / math.sqrt(w_ext / beta)
    return ReplicaRecord(_seed_int(ss), survived, z_t, z_phi, w_main, w_ext, stat), y


def _map_replicas(worker, args_list, threads: int):
    if threads <= 1:
        return [worker(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        chunk = max(1, len(args_list) // (8 * threads))
        return list(pool.map(worker, args_list, chunksize=chunk))


def anderson_darling_statistic(values: Sequence[float]) -> float:
    """A^2 against the standard normal with fully specified parameters."""
    from scipy.stats import norm

    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    cdf = np.clip(norm.cdf(x), 1e-300, 1.0 - 1e-16)
    i = np.arange(1, n + 1)
    return float(-n - np.mean((2 * i - 1) * (np.log(cdf) + np.log(1.0 - cdf[::-1]))))


def run_clt(
    law: BirthLaw,
    char: Characteristic,
    solution: MalthusianSolution,
    sigma: SigmaSquared,
    *,
    t: float,
    t_big: float,
    n_replicas: int,
    master_seed: int,
    c_alpha: Optional[float] = None,
    a_alpha_bias: float = 0.0,
    threads: int = 1,
) -> tuple[CltReport, list[ReplicaRecord]]:
    """Distributional test of the normalized fluctuation statistic.

    Per surviving replica the statistic
    ``sqrt(c_alpha / Z_t) (Z_t^phi - a exp(alpha t) W_hat) / sigma``
    is compared against the standard normal; ``W_hat`` is the
    coming-generation martingale at the extended horizon ``t_big``.  The
    empirical variance of the companion quantity
    ``exp(-alpha t/2) (Z_t^phi - a exp(alpha t) W_hat) / sqrt(W_hat/beta)``
    cross-validates the variance constant.  A relative bias on the
    growth constant serves as a negative control.
    """
    if t_big < t:
        raise CmjError("extended horizon must not precede the main horizon")
    alpha, beta = solution.alpha, solution.beta
    if c_alpha is None:
        if solution.lattice_span is not None:
            d = solution.lattice_span
            c_alpha = d / (1.0 - math.exp(-alpha * d))
        else:
            c_alpha = 1.0 / alpha
    a_eff = sigma.a_alpha * (1.0 + a_alpha_bias)
    degenerate = sigma.value <= max(1e-12, 4.0 * sigma.standard_error)
    sigma2 = 0.0 if degenerate else sigma.value
    args = [
        (law, char, alpha, beta, c_alpha, t, t_big, a_eff, sigma2, master_seed, i)
        for i in range(n_replicas)
    ]
    results = _map_replicas(_clt_replica, args, threads)
    records = [r for r, _ in results]
    n_survived = sum(1 for r in records if r.survived)
    if degenerate:
        report = CltReport(
            n_replicas=n_replicas,
            n_survived=n_survived,
            t=t,
            t_big=t_big,
            alpha=alpha,
            beta=beta,
            a_alpha=sigma.a_alpha,
            sigma2_formula=sigma.value,
            sigma2_se=sigma.standard_error,
            degenerate=True,
            ks_statistic=None,
            ks_p_value=None,
            anderson_darling_stat=None,
            empirical_variance=None,
            sigma2_ratio=None,
        )
        return report, records
    from scipy.stats import kstest

    vs = np.array([r.normalized_stat for r in records if r.survived])
    ys = np.array([y for (r, y) in results if r.survived])
    ks = kstest(vs, "norm")
    emp_var = float(np.var(ys, ddof=1))
    report = CltReport(
        n_replicas=n_replicas,
        n_survived=n_survived,
        t=t,
        t_big=t_big,
        alpha=alpha,
        beta=beta,
        a_alpha=sigma.a_alpha,
        sigma2_formula=sigma.value,
        sigma2_se=sigma.standard_error,
        degenerate=False,
        ks_statistic=float(ks.statistic),
        ks_p_value=float(ks.pvalue),
        anderson_darling_stat=anderson_darling_statistic(vs),
        empirical_variance=emp_var,
        sigma2_ratio=sigma.value / emp_var if emp_var > 0 else None,
    )
    return report, records


# -- law of large numbers -----------------------------------------------------


@dataclass(frozen=True)
class LlnRow:
    t: float
    mc_mean: float
    mc_se: float
    predicted: float        # finite-horizon mean, exp(-alpha t) m_t
    predicted_limit: float  # key renewal limit constant
    z_score: float


def _lln_replica(args):
    law, char, alpha, horizons, master_seed, idx = args
    ss = replica_seed(master_seed, idx)
    pop = simulate(law, TimeHorizon(max(horizons)), np.random.default_rng(ss))
    return [
        math.exp(-alpha * t) * counted_process(pop, char, t) for t in horizons
    ]


def run_lln(
    law: BirthLaw,
    char: Characteristic,
    solution: MalthusianSolution,
    kernel: RenewalKernel,
    *,
    horizons: Sequence[float],
    n_replicas: int,
    master_seed: int,
    threads: int = 1,
) -> list[LlnRow]:
    """Compare Monte Carlo means of the tilted counted process with the
    finite-horizon renewal mean; the limit constant is reported alongside."""
    alpha = solution.alpha
    horizons = sorted(horizons)
    if kernel.span is not None:
        d = kernel.span
        snapped = [round(t / d) * d for t in horizons]
        horizons = sorted(set(snapped))
    limit = key_renewal_limit(kernel, char.mean)
    args = [
        (law, char, alpha, tuple(horizons), master_seed, i) for i in range(n_replicas)
    ]
    samples = np.array(_map_replicas(_lln_replica, args, threads))
    rows = []
    for j, t in enumerate(horizons):
        col = samples[:, j]
        mean = float(col.mean())
        se = float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else 0.0
        m_t, _ = mean_process(kernel, char.mean, t)
        predicted = math.exp(-alpha * t) * m_t
        rows.append(LlnRow(t, mean, se, predicted, limit, _z_score(mean, predicted, se)))
    return rows


def _z_score(mean: float, target: float, se: float) -> float:
    """Standardized deviation with a floor for numerically degenerate spreads."""
    floor = 1e-12 * (1.0 + abs(target))
    if se > floor:
        return (mean - target) / se
    return 0.0 if abs(mean - target) <= 1e-9 * (1 + abs(target)) else math.inf


# -- fringe census ------------------------------------------------------------


@dataclass(frozen=True)
class FringeRow:
    pattern: str
    mean_fraction: float
    se: float
    predicted_fraction: float
    z_score: float


def _census_replica(args):
    law, chars, t, master_seed, idx = args
    ss = replica_seed(master_seed, idx)
    pop = simulate(law, TimeHorizon(t), np.random.default_rng(ss))
    z = pop.count_births(t)
    return [counted_process(pop, c, t) / z for c in chars]


def run_fringe_census(
    law: BirthLaw,
    chars: Sequence[Characteristic],
    solution: MalthusianSolution,
    kernel: RenewalKernel,
    *,
    t: float,
    n_replicas: int,
    master_seed: int,
    threads: int = 1,
) -> list[FringeRow]:
    """Empirical fringe-pattern fractions against their renewal predictions.

    The predicted long-run fraction of pattern T is
    ``a(phi_T) * beta / c_alpha``: the pattern's limit constant divided
    by the one of plain birth counting.
    """
    if kernel.span is not None:
        t = round(t / kernel.span) * kernel.span
    args = [(law, tuple(chars), t, master_seed, i) for i in range(n_replicas)]
    samples = np.array(_map_replicas(_census_replica, args, threads))
    rows = []
    for j, char in enumerate(chars):
        col = samples[:, j]
        mean = float(col.mean())
        se = float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else 0.0
        a_pat = key_renewal_limit(kernel, char.mean)
        predicted = a_pat * kernel.beta / kernel.c_alpha
        rows.append(FringeRow(char.name, mean, se, predicted, _z_score(mean, predicted, se)))
    return rows


# -- martingale suite ---------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    kind: str      # "w", "biggins", "complex"
    param: str     # theta / lambda / blank
    index: float   # t or n or i
    mean: float
    se: float
    variance: float
    target: float
    z_score: float
    flagged: bool


@dataclass(frozen=True)
class MartingaleSuite:
    rows: tuple[TraceRow, ...]
    variance_nondecreasing: bool
    skipped: tuple[str, ...]


def _martingale_replica(args):
    (law, alpha, muhat, times, horizon, thetas, gens, roots, master_seed, idx) = args
    ss = replica_seed(master_seed, idx)
    pop = simulate(law, TimeHorizon(horizon), np.random.default_rng(ss))
    w_vals = [nerman_w(pop, alpha, t) for t in times]
    big_vals = [
        biggins(pop, muhat[th], th, n) for th in thetas for n in gens
    ]
    complex_vals = []
    for lam, i in roots:
        z = complex_martingale(pop, lam, i, times[-1])
        complex_vals.append(z.real)
    return w_vals, big_vals, complex_vals


def run_martingale_suite(
    law: BirthLaw,
    solution: MalthusianSolution,
    *,
    times: Sequence[float] = (2.0, 4.0, 6.0),
    biggins_gens: Sequence[int] = (1, 2, 3, 4, 5, 6),
    theta_offsets: Sequence[float] = (0.0, -0.1),
    n_replicas: int = 10000,
    master_seed: int = 0,
    threads: int = 1,
    flag_z: float = 4.0,
) -> MartingaleSuite:
    """Mean/variance traces for the additive martingales.

    The coming-generation martingale has mean one at every time for
    every law.  The generation-indexed martingale needs every
    generation-(n-1) individual materialized, which is impossible for
    laws of infinite total intensity; those laws record a skip reason
    instead.
    """
    alpha = solution.alpha
    times = tuple(sorted(times))
    skipped = []
    thetas: tuple[float, ...] = ()
    gens: tuple[int, ...] = ()
    horizon = max(times)
    if math.isfinite(law.max_offset):
        thetas = tuple(alpha + off for off in theta_offsets)
        gens = tuple(biggins_gens)
        horizon = max(horizon, max(gens) * law.max_offset)
    else:
        skipped.append(
            "biggins: generations are never fully materialized (infinite "
            "total intensity)"
        )
    roots: list[tuple[complex, int]] = []
    if math.isfinite(law.max_offset):
        for lam, mult in solution.roots:
            for i in range(mult):
                roots.append((lam, i))
    else:
        skipped.append("complex traces: coming generation has latent births")
    from .models import intensity_data

    data = intensity_data(law)
    muhat = {th: float(data.laplace(th).real) for th in thetas}

    args = [
        (law, alpha, muhat, times, horizon, thetas, gens, tuple(roots), master_seed, i)
        for i in range(n_replicas)
    ]
    results = _map_replicas(_martingale_replica, args, threads)
    w_mat = np.array([r[0] for r in results])
    big_mat = np.array([r[1] for r in results]) if gens else np.empty((n_replicas, 0))
    cpx_mat = np.array([r[2] for r in results]) if roots else np.empty((n_replicas, 0))

    rows: list[TraceRow] = []

    def add_row(kind, param, index, col, target):
        mean = float(col.mean())
        se = float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else 0.0
        var = float(col.var(ddof=1)) if len(col) > 1 else 0.0
        z = _z_score(mean, target, se)
        rows.append(TraceRow(kind, param, index, mean, se, var, target, z, abs(z) > flag_z))

    for j, t in enumerate(times):
        add_row("w", "", t, w_mat[:, j], 1.0)
    col_idx = 0
    for th in thetas:
        for n in gens:
            add_row("biggins", f"{th:.12g}", n, big_mat[:, col_idx], 1.0)
            col_idx += 1
    for j, (lam, i) in enumerate(roots):
        target = 1.0 if i == 0 else 0.0
        add_row("complex", f"{lam.real:.12g}{lam.imag:+.12g}j", i, cpx_mat[:, j], target)

    w_vars = [r.variance for r in rows if r.kind == "w"]
    nondecreasing = all(b >= a * (1 - 0.25) - 1e-12 for a, b in zip(w_vars, w_vars[1:]))
    return MartingaleSuite(tuple(rows), nondecreasing, tuple(skipped))


# -- output writers ------------------------------------------------------------


def write_replicas_csv(records: Sequence[ReplicaRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["seed", "survived", "z_t", "z_phi_t", "w_main", "w_ext", "normalized_stat"]
        )
        for r in records:
            writer.writerow(
                [
                    r.seed,
                    int(r.survived),
                    r.z_t,
                    _fmt(r.z_phi_t),
                    _fmt(r.w_main),
                    _fmt(r.w_ext),
                    "" if r.normalized_stat is None else _fmt(r.normalized_stat),
                ]
            )


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows_csv(rows: Sequence, fieldnames: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            out = []
            for name in fieldnames:
                val = getattr(row, name)
                out.append(_fmt(val) if isinstance(val, float) else val)
            writer.writerow(out)


def write_sigma_points_csv(sigma: SigmaSquared, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["s", "chi_sq_mean", "chi_sq_se", "weight"])
        for s, mean, se, weight in sigma.points:
            writer.writerow([_fmt(s), _fmt(mean), _fmt(se), _fmt(weight)])
