from __future__ import annotations

import asyncio
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np
from scipy.stats import binomtest, multinomial

from .coalescent import SpeciesTree3, pairwise_time_matrix, simulate_batch
from .estimators import MethodGroup, MethodId, decide_batch
from .eta import progress_message
from .rate_functions import alpha, rstar_mgf, steac_mgf
from .settings import settings

logger = logging.getLogger("coalrates.montecarlo")

T = TypeVar("T")

SEED_SCHEME = "numpy.SeedSequence(master_seed, spawn_key=(block,)).spawn(2) -> Philox"
REPORT_HEADER = (
    "method",
    "t",
    "L",
    "replicates",
    "failures",
    "p_hat",
    "ci_low",
    "ci_high",
    "empirical_rate",
    "analytic_rate",
    "seed",
)


class OracleRangeError(ValueError):
    pass


class DominationViolation(AssertionError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    species: SpeciesTree3
    loci: int
    replicates: int
    methods: tuple[MethodId, ...]
    master_seed: int

    def __post_init__(self) -> None:
        if self.loci < 1:
            raise ValueError(f"L must be >= 1, got {self.loci}")
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")
        if self.master_seed < 0:
            raise ValueError(f"Seed must be non-negative, got {self.master_seed}")
        methods = tuple(dict.fromkeys(MethodId(m) for m in self.methods))
        if not methods:
            raise ValueError("At least one method is required")
        object.__setattr__(self, "methods", methods)


@dataclass(frozen=True)
class McResult:
    method: MethodId
    t: float
    loci: int
    failures: int
    replicates: int
    ci_low: float
    ci_high: float
    seed: int

    @property
    def p_hat(self) -> float:
        return self.failures / self.replicates

    @property
    def rate_defined(self) -> bool:
        return self.failures > 0

    @property
    def empirical_rate(self) -> Optional[float]:
        if not self.rate_defined:
            return None
        return -math.log(self.p_hat) / self.loci

    @property
    def analytic_rate(self) -> float:
        return alpha(self.method.group, self.t)

    def to_row(self) -> list[str]:
        rate = self.empirical_rate
        return [
            self.method.value,
            _fmt(self.t),
            str(self.loci),
            str(self.replicates),
            str(self.failures),
            _fmt(self.p_hat),
            _fmt(self.ci_low),
            _fmt(self.ci_high),
            "" if rate is None else _fmt(rate),
            _fmt(self.analytic_rate),
            str(self.seed),
        ]


@dataclass(frozen=True)
class TrendPoint:
    loci: int
    failures: int
    replicates: int
    empirical_rate: Optional[float]


@dataclass(frozen=True)
class AuxiliaryBounds:
    """R* failure events from one enumeration.

    ``auxiliary`` is P[N_AC > N_AB], ``strict`` is P[N_AB < max(N_AC, N_BC)]
    and ``failure`` adds the tie-break credit.
    """

    auxiliary: float
    strict: float
    failure: float


@dataclass(frozen=True)
class MgfSample:
    s: float
    empirical: float
    stderr: float
    analytic: float


@dataclass(frozen=True)
class CoverageReport:
    method: MethodId
    exact: float
    covered: int
    repetitions: int
    confidence: float

    @property
    def fraction(self) -> float:
        return self.covered / self.repetitions


@dataclass
class DominationReport:
    t: float
    loci: int
    replicates: int
    seed: int
    success: dict[MethodId, float] = field(default_factory=dict)
    paired_difference: dict[MethodId, float] = field(default_factory=dict)
    paired_stderr: dict[MethodId, float] = field(default_factory=dict)
    sub_event_replicates: int = 0
    sub_event_violations: int = 0

    def dominates(self, method: MethodId, sigmas: float = 3.0) -> bool:
        return self.paired_difference[method] >= -sigmas * self.paired_stderr[method]

    @property
    def holds(self) -> bool:
        return self.sub_event_violations == 0 and all(
            self.dominates(m) for m in self.paired_difference
        )


@dataclass
class _BlockOutcome:
    correct: dict[MethodId, np.ndarray]
    any_success: np.ndarray


def _fmt(value: float) -> str:
    return format(value, ".17g")


def wilson_interval(failures: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n < 1:
        raise ValueError(f"Need at least one trial, got {n}")
    if not (0 <= failures <= n):
        raise ValueError(f"failures must lie in [0, {n}], got {failures}")
    ci = binomtest(failures, n).proportion_ci(confidence_level=confidence, method="wilson")
    p_hat = failures / n
    return max(0.0, min(float(ci.low), p_hat)), min(1.0, max(float(ci.high), p_hat))


def _block_sizes(replicates: int, block_size: int) -> list[int]:
    block_size = max(1, block_size)
    full, rest = divmod(replicates, block_size)
    return [block_size] * full + ([rest] if rest else [])


def _block_rngs(master_seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    data_seq, tie_seq = np.random.SeedSequence(master_seed, spawn_key=(index,)).spawn(2)
    return (
        np.random.Generator(np.random.Philox(data_seq)),
        np.random.Generator(np.random.Philox(tie_seq)),
    )


def _run_block(
    species: SpeciesTree3,
    methods: Sequence[MethodId],
    loci: int,
    size: int,
    master_seed: int,
    index: int,
) -> _BlockOutcome:
    data_rng, tie_rng = _block_rngs(master_seed, index)
    batch = simulate_batch(species, size, loci, data_rng)
    uniforms = tie_rng.random(size)
    truth = species.topology.value
    correct = {m: decide_batch(m, batch, uniforms)[0] == truth for m in methods}
    return _BlockOutcome(correct=correct, any_success=(~batch.failed).any(axis=1))


async def _gather_blocks(jobs: Sequence[Callable[[], T]], *, label: str) -> list[T]:
    semaphore = asyncio.Semaphore(settings.worker_count())
    started = time.monotonic()
    last_log = started
    done = 0

    async def _one(job: Callable[[], T]) -> T:
        nonlocal done, last_log
        async with semaphore:
            result = await asyncio.to_thread(job)
        done += 1
        now = time.monotonic()
        if now - last_log >= settings.progress_interval_seconds:
            last_log = now
            logger.info(
                "%s: %s",
                label,
                progress_message(done=done, total=len(jobs), elapsed_seconds=now - started),
            )
        return result

    results = await asyncio.gather(*(_one(job) for job in jobs))
    logger.debug("%s: %d blocks in %.2fs", label, len(jobs), time.monotonic() - started)
    return list(results)


def _simulate(
    species: SpeciesTree3,
    methods: Sequence[MethodId],
    loci: int,
    replicates: int,
    master_seed: int,
) -> list[_BlockOutcome]:
    sizes = _block_sizes(replicates, settings.block_size)
    jobs = [
        (lambda size=size, index=index: _run_block(species, methods, loci, size, master_seed, index))
        for index, size in enumerate(sizes)
    ]
    label = f"t={species.t:g} L={loci} R={replicates}"
    return asyncio.run(_gather_blocks(jobs, label=label))


def _stack(outcomes: Iterable[_BlockOutcome], method: MethodId) -> np.ndarray:
    return np.concatenate([o.correct[method] for o in outcomes])


def run_experiment(cfg: ExperimentConfig) -> list[McResult]:
    outcomes = _simulate(cfg.species, cfg.methods, cfg.loci, cfg.replicates, cfg.master_seed)
    results: list[McResult] = []
    for method in cfg.methods:
        successes = int(sum(int(o.correct[method].sum()) for o in outcomes))
        failures = cfg.replicates - successes
        low, high = wilson_interval(failures, cfg.replicates)
        results.append(
            McResult(
                method=method,
                t=cfg.species.t,
                loci=cfg.loci,
                failures=failures,
                replicates=cfg.replicates,
                ci_low=low,
                ci_high=high,
                seed=cfg.master_seed,
            )
        )
    return results


def _check_oracle_args(t: float, loci: int) -> None:
    if not (t >= 0.0):
        raise ValueError(f"Branch length must be >= 0, got {t}")
    if loci < 1:
        raise ValueError(f"L must be >= 1, got {loci}")


def exact_glass_failure(t: float, loci: int) -> float:
    _check_oracle_args(t, loci)
    return 2.0 / 3.0 * math.exp(-t * loci)


def _rstar_enumeration(t: float, loci: int) -> tuple[np.ndarray, np.ndarray]:
    _check_oracle_args(t, loci)
    if loci > settings.exact_max_loci:
        raise OracleRangeError(
            f"Exact R* enumeration supports L <= {settings.exact_max_loci}, got {loci}"
        )
    w = math.exp(-t) / 3.0
    counts = np.array(
        [(a, b, loci - a - b) for a in range(loci + 1) for b in range(loci + 1 - a)],
        dtype=np.int64,
    )
    probs = multinomial.pmf(counts, n=loci, p=[1.0 - 2.0 * w, w, w])
    return counts, np.asarray(probs, dtype=float)


def _tie_failure_weight(n_ab: int, n_ac: int, n_bc: int) -> float:
    top = max(n_ac, n_bc)
    if n_ab < top:
        return 1.0
    if n_ab > top:
        return 0.0
    if n_ac == n_bc:
        return 2.0 / 3.0
    return 0.5


def exact_rstar_auxiliary(t: float, loci: int) -> AuxiliaryBounds:
    counts, probs = _rstar_enumeration(t, loci)
    auxiliary: list[float] = []
    strict: list[float] = []
    failure: list[float] = []
    for (n_ab, n_ac, n_bc), prob in zip(counts.tolist(), probs.tolist()):
        if 2 * n_ac + n_bc > loci:
            auxiliary.append(prob)
        if n_ab < max(n_ac, n_bc):
            strict.append(prob)
        weight = _tie_failure_weight(n_ab, n_ac, n_bc)
        if weight:
            failure.append(weight * prob)
    return AuxiliaryBounds(
        auxiliary=math.fsum(auxiliary), strict=math.fsum(strict), failure=math.fsum(failure)
    )


def exact_rstar_failure(t: float, loci: int) -> float:
    return exact_rstar_auxiliary(t, loci).failure


def domination_test(t: float, loci: int, replicates: int, seed: int) -> DominationReport:
    """Paired GLASS vs R* vs STEAC successes on shared datasets.

    Raises DominationViolation if GLASS misses on a replicate where some locus
    coalesced inside the internal branch.
    """
    species = SpeciesTree3.from_branch(t)
    glass, others = MethodId.GLASS_MT, (MethodId.RSTAR, MethodId.STEAC)
    outcomes = _simulate(species, (glass,) + others, loci, replicates, seed)

    glass_ok = _stack(outcomes, glass)
    any_success = np.concatenate([o.any_success for o in outcomes])
    report = DominationReport(t=t, loci=loci, replicates=replicates, seed=seed)
    report.success[glass] = float(glass_ok.mean())
    report.sub_event_replicates = int(any_success.sum())
    report.sub_event_violations = int((any_success & ~glass_ok).sum())
    for method in others:
        ok = _stack(outcomes, method)
        diff = glass_ok.astype(float) - ok.astype(float)
        report.success[method] = float(ok.mean())
        report.paired_difference[method] = float(diff.mean())
        spread = float(diff.std(ddof=1)) if replicates > 1 else 0.0
        report.paired_stderr[method] = spread / math.sqrt(replicates)

    if report.sub_event_violations:
        raise DominationViolation(
            f"GLASS failed on {report.sub_event_violations} replicates with a successful locus"
        )
    logger.info(
        "Domination t=%g L=%d: success %s",
        t,
        loci,
        ", ".join(f"{m.value}={p:.4f}" for m, p in report.success.items()),
    )
    return report


def empirical_rate_trend(
    method: MethodId,
    t: float,
    loci_list: Sequence[int],
    replicates: int,
    seed: int,
) -> list[TrendPoint]:
    species = SpeciesTree3.from_branch(t)
    points: list[TrendPoint] = []
    for loci in loci_list:
        cfg = ExperimentConfig(species, loci, replicates, (method,), seed)
        (result,) = run_experiment(cfg)
        if not result.rate_defined:
            logger.warning("No %s failures at t=%g L=%d; rate left undefined", method.value, t, loci)
        points.append(TrendPoint(loci, result.failures, replicates, result.empirical_rate))
    return points


def _per_locus_increment(group: MethodGroup, t: float, samples: int, seed: int) -> np.ndarray:
    species = SpeciesTree3.from_branch(t)
    batch = simulate_batch(species, samples, 1, np.random.default_rng(seed))
    if group is MethodGroup.RSTAR:
        failed, topology = batch.failed[:, 0], batch.topology[:, 0]
        return 2.0 * (failed & (topology == 1)) + 1.0 * (failed & (topology == 2))
    if group is MethodGroup.STEAC:
        times = pairwise_time_matrix(batch)[:, 0, :]
        return times[:, 0] - times[:, 1]
    raise ValueError(f"No per-locus increment for the {group.value} group")


def empirical_mgf(
    group: MethodGroup, t: float, s_values: Sequence[float], samples: int, seed: int
) -> list[MgfSample]:
    group = MethodGroup(group)
    y = _per_locus_increment(group, t, samples, seed)
    mgf = rstar_mgf(t) if group is MethodGroup.RSTAR else steac_mgf(t)
    out: list[MgfSample] = []
    for s in s_values:
        values = np.exp(s * y)
        stderr = float(values.std(ddof=1)) / math.sqrt(samples) if samples > 1 else math.inf
        out.append(MgfSample(float(s), float(values.mean()), stderr, mgf.phi(float(s))))
    return out


def _exact_failure(method: MethodId, t: float, loci: int) -> float:
    if method.group is MethodGroup.GLASS:
        return exact_glass_failure(t, loci)
    if method.group is MethodGroup.RSTAR:
        return exact_rstar_failure(t, loci)
    raise ValueError(f"No exact failure oracle for {method.value}")


def coverage_check(
    method: MethodId,
    t: float,
    loci: int,
    replicates: int,
    repetitions: int,
    seed: int,
    confidence: float = 0.95,
) -> CoverageReport:
    exact = _exact_failure(method, t, loci)
    species = SpeciesTree3.from_branch(t)
    covered = 0
    for child in np.random.SeedSequence(seed).spawn(repetitions):
        run_seed = int(child.generate_state(1, np.uint64)[0])
        (result,) = run_experiment(ExperimentConfig(species, loci, replicates, (method,), run_seed))
        low, high = wilson_interval(result.failures, replicates, confidence)
        covered += int(low <= exact <= high)
    return CoverageReport(method, exact, covered, repetitions, confidence)
