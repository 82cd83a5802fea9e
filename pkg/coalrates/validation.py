from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .coalescent import SpeciesTree3, sample_gene_trees
from .estimators import MethodGroup, MethodId, TieBreaker, estimate
from .montecarlo import (
    DominationViolation,
    ExperimentConfig,
    OracleRangeError,
    domination_test,
    exact_glass_failure,
    exact_rstar_auxiliary,
    exact_rstar_failure,
    run_experiment,
    wilson_interval,
)
from .rate_functions import (
    LARGE_T_SWITCH,
    ChernoffPreconditionError,
    Regime,
    SolverError,
    alpha_glass,
    alpha_rstar,
    alpha_steac,
    alpha_steac_direct,
    asymptote,
    chernoff_rate,
    find_crossover,
    rstar_mgf,
    solve_sigma_star,
    steac_fixed_point_map,
    steac_mgf,
)

logger = logging.getLogger("coalrates.validation")

VALIDATION_HEADER = ("suite", "check", "passed", "detail")
EQUIVALENT_PAIRS = (
    (MethodId.STAR, MethodId.RSTAR),
    (MethodId.MDC, MethodId.RSTAR),
    (MethodId.ML, MethodId.GLASS_MT),
    (MethodId.SC, MethodId.STEAC),
)


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def to_row(self) -> list[str]:
        return [self.suite, self.name, "pass" if self.passed else "FAIL", self.detail]


def _check(suite: str, name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    try:
        passed, detail = fn()
    except (
        SolverError,
        ChernoffPreconditionError,
        DominationViolation,
        OracleRangeError,
        ValueError,
    ) as exc:
        logger.warning("%s/%s raised %s", suite, name, exc)
        return CheckResult(suite, name, False, f"{type(exc).__name__}: {exc}")
    if not passed:
        logger.warning("%s/%s failed: %s", suite, name, detail)
    return CheckResult(suite, name, bool(passed), detail)


def equivalences(seed: int, *, datasets: int = 1000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    tie = TieBreaker(rng=np.random.default_rng([seed, 1]))
    agree = {pair: 0 for pair in EQUIVALENT_PAIRS}
    for _ in range(datasets):
        t = float(2.0 * (1.0 - rng.random()))
        loci = int(rng.integers(1, 201))
        trees = sample_gene_trees(SpeciesTree3.from_branch(t), loci, rng)
        for left, right in EQUIVALENT_PAIRS:
            a = estimate(left, trees, tie.copy())
            b = estimate(right, trees, tie.copy())
            agree[(left, right)] += int(a.topology == b.topology)
        tie.draw()

    return [
        _check(
            "equivalences",
            f"{left.value}=={right.value}",
            lambda n=agree[(left, right)]: (n == datasets, f"{n}/{datasets} datasets agree"),
        )
        for left, right in EQUIVALENT_PAIRS
    ]


def _mc_vs_exact(
    method: MethodId, t: float, loci: int, replicates: int, seed: int
) -> tuple[bool, str]:
    if method.group is MethodGroup.GLASS:
        exact = exact_glass_failure(t, loci)
    else:
        exact = exact_rstar_failure(t, loci)
    cfg = ExperimentConfig(SpeciesTree3.from_branch(t), loci, replicates, (method,), seed)
    (result,) = run_experiment(cfg)
    low, high = wilson_interval(result.failures, replicates, 0.99)
    detail = f"p_hat={result.p_hat:.5f} exact={exact:.5f} ci99=[{low:.5f}, {high:.5f}]"
    return low <= exact <= high, detail


def oracles(seed: int, *, replicates: int = 1_000_000) -> list[CheckResult]:
    def two_locus_symmetry() -> tuple[bool, str]:
        value = exact_rstar_failure(0.0, 2)
        return abs(value - 2.0 / 3.0) < 1e-12, f"{value:.15f}"

    def auxiliary_sandwich() -> tuple[bool, str]:
        worst = ""
        for t in (0.1, 0.5, 1.0):
            for loci in (5, 15, 30):
                b = exact_rstar_auxiliary(t, loci)
                if not (b.auxiliary <= b.strict <= 2.0 * b.auxiliary and b.strict <= b.failure):
                    worst = f"t={t} L={loci}: {b}"
        return not worst, worst or "P[aux] <= P[strict] <= 2 P[aux]"

    return [
        _check("oracles", "rstar_two_locus_symmetry", two_locus_symmetry),
        _check("oracles", "rstar_auxiliary_sandwich", auxiliary_sandwich),
        _check(
            "oracles",
            "glass_mc_vs_exact",
            lambda: _mc_vs_exact(MethodId.GLASS_MT, 0.05, 20, replicates, seed),
        ),
        _check(
            "oracles",
            "rstar_mc_vs_exact",
            lambda: _mc_vs_exact(MethodId.RSTAR, 0.3, 20, replicates, seed + 1),
        ),
    ]


def _residuals() -> tuple[bool, str]:
    worst_fixed = worst_rstar = worst_steac = 0.0
    for t in np.logspace(-3, 2, 30):
        t = float(t)
        _, s = alpha_steac(t)
        if not (0.0 < s < 1.0):
            return False, f"s*={s} outside (0, 1) at t={t}"
        worst_fixed = max(worst_fixed, abs(steac_fixed_point_map(t, s) - s))
        worst_steac = max(worst_steac, abs(steac_mgf(t).tilt(s)))
        _, s_r = alpha_rstar(t)
        worst_rstar = max(worst_rstar, abs(rstar_mgf(t).tilt(s_r) - 1.0))
    ok = worst_fixed < 1e-10 and worst_steac < 1e-9 and worst_rstar < 1e-9
    return ok, f"fixed={worst_fixed:.2e} steac={worst_steac:.2e} rstar={worst_rstar:.2e}"


def _chernoff_equivalence() -> tuple[bool, str]:
    worst = 0.0
    for t in (0.1, 0.5, 1.0):
        worst = max(worst, abs(chernoff_rate(rstar_mgf(t))[0] - alpha_rstar(t)[0]))
        worst = max(worst, abs(chernoff_rate(steac_mgf(t))[0] - alpha_steac(t)[0]))
    return worst < 1e-9, f"max gap {worst:.2e}"


def _grid_properties() -> tuple[bool, str]:
    grid = np.linspace(0.1, 100.0, 1000)
    glass = np.array([alpha_glass(float(t)) for t in grid])
    rstar = np.array([alpha_rstar(float(t))[0] for t in grid])
    steac = np.array([alpha_steac(float(t))[0] for t in grid])
    increasing = all(np.all(np.diff(a) > 0.0) for a in (glass, rstar, steac))
    dominated = bool(np.all(glass >= rstar) and np.all(glass >= steac))
    exact = bool(np.array_equal(glass, grid))
    return increasing and dominated and exact, (
        f"increasing={increasing} dominated={dominated} glass_exact={exact}"
    )


def _small_t() -> tuple[bool, str]:
    r = alpha_rstar(0.01)[0] / 1e-4
    s = alpha_steac(0.01)[0] / 1e-4
    ok = abs(r / 0.75 - 1.0) <= 0.05 and abs(s / 0.375 - 1.0) <= 0.05
    return ok, f"rstar/t^2={r:.4f} steac/t^2={s:.4f}"


def _large_t() -> tuple[bool, str]:
    gap_rstar = abs(alpha_rstar(40.0)[0] - asymptote(MethodGroup.RSTAR, 40.0, Regime.LARGE))
    beta = 500.0 - math.log(500.0) - alpha_steac(500.0)[0]
    sigma_gap = solve_sigma_star() - math.log(2.0)
    ok = gap_rstar < 1e-6 and abs(beta - 0.1656) < 0.005 and abs(sigma_gap - 0.1656) < 5e-4
    return ok, f"rstar gap={gap_rstar:.2e} beta_500={beta:.4f} sigma*-ln2={sigma_gap:.5f}"


def _regime_switch() -> tuple[bool, str]:
    gap = abs(alpha_steac(LARGE_T_SWITCH + 1e-9)[0] - alpha_steac_direct(LARGE_T_SWITCH + 1e-9))
    return gap < 1e-8, f"sigma vs direct at t={LARGE_T_SWITCH:g}: {gap:.2e}"


def _crossover() -> tuple[bool, str]:
    coarse = find_crossover(steps=64)
    fine = find_crossover(steps=257)
    below = alpha_rstar(coarse - 0.05)[0] > alpha_steac(coarse - 0.05)[0]
    above = alpha_steac(coarse + 0.05)[0] > alpha_rstar(coarse + 0.05)[0]
    return abs(coarse - fine) < 1e-6 and below and above, f"t_x={coarse:.8f}"


def _discussion_numbers() -> tuple[bool, str]:
    rstar = math.exp(-500.0 * alpha_rstar(0.1)[0])
    steac = math.exp(-500.0 * alpha_steac(0.1)[0])
    glass = exact_glass_failure(0.1, 500)
    ok = abs(rstar - 0.038) <= 0.002 and 0.14 <= steac <= 0.17 and 1.2e-22 <= glass <= 1.4e-22
    return ok, f"rstar={rstar:.4f} steac={steac:.4f} glass={glass:.3e}"


def rates(seed: int) -> list[CheckResult]:
    del seed
    checks = {
        "solver_residuals": _residuals,
        "chernoff_equivalence": _chernoff_equivalence,
        "grid_monotone_and_dominated": _grid_properties,
        "small_t_constants": _small_t,
        "large_t_constants": _large_t,
        "regime_switch_agreement": _regime_switch,
        "crossover": _crossover,
        "discussion_numbers": _discussion_numbers,
    }
    return [_check("rates", name, fn) for name, fn in checks.items()]


def domination(seed: int, *, replicates: int = 100_000) -> list[CheckResult]:
    def run() -> tuple[bool, str]:
        report = domination_test(0.2, 30, replicates, seed)
        detail = ", ".join(
            f"{m.value}: diff={report.paired_difference[m]:.4f}±{report.paired_stderr[m]:.4f}"
            for m in report.paired_difference
        )
        return report.holds, f"{detail}; sub-event replicates={report.sub_event_replicates}"

    return [_check("domination", "glass_dominates_paired", run)]


SUITES: dict[str, Callable[..., list[CheckResult]]] = {
    "equivalences": equivalences,
    "oracles": oracles,
    "rates": rates,
    "domination": domination,
}


def run_suite(
    suite: str,
    seed: int,
    *,
    replicates: Optional[int] = None,
    datasets: Optional[int] = None,
) -> list[CheckResult]:
    if suite == "all":
        names = list(SUITES)
    elif suite in SUITES:
        names = [suite]
    else:
        raise ValueError(f"Unknown suite {suite!r}; valid suites: {', '.join([*SUITES, 'all'])}")

    results: list[CheckResult] = []
    for name in names:
        kwargs: dict[str, int] = {}
        if name in {"oracles", "domination"} and replicates is not None:
            kwargs["replicates"] = replicates
        if name == "equivalences" and datasets is not None:
            kwargs["datasets"] = datasets
        logger.info("Running %s suite", name)
        results.extend(SUITES[name](seed, **kwargs))
    return results
