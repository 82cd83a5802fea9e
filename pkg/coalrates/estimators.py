from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .coalescent import (
    PAIRS,
    GeneTree3,
    GeneTreeBatch,
    SpeciesTree3,
    Topology,
    log_likelihood,
    pairwise_time_matrix,
)


class MethodGroup(str, Enum):
    GLASS = "glass"
    RSTAR = "rstar"
    STEAC = "steac"


class MethodId(str, Enum):
    ML = "ml"
    GLASS_MT = "glass_mt"
    RSTAR = "rstar"
    STAR = "star"
    MDC = "mdc"
    STEAC = "steac"
    SC = "sc"

    @property
    def group(self) -> MethodGroup:
        return _GROUPS[self]

    @classmethod
    def parse(cls, text: str) -> MethodId:
        key = text.strip().lower().replace("-", "_").replace("/", "_")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError as exc:
            valid = ", ".join(m.value for m in cls)
            raise ValueError(f"Unknown method {text!r}; valid methods: {valid}") from exc


_GROUPS = {
    MethodId.ML: MethodGroup.GLASS,
    MethodId.GLASS_MT: MethodGroup.GLASS,
    MethodId.RSTAR: MethodGroup.RSTAR,
    MethodId.STAR: MethodGroup.RSTAR,
    MethodId.MDC: MethodGroup.RSTAR,
    MethodId.STEAC: MethodGroup.STEAC,
    MethodId.SC: MethodGroup.STEAC,
}
_ALIASES = {"glass": "glass_mt", "mt": "glass_mt", "r*": "rstar"}


@dataclass(frozen=True)
class Estimate:
    topology: Topology
    divergence_times: Optional[tuple[float, float]] = None
    tie: bool = False

    def __post_init__(self) -> None:
        if self.divergence_times is not None:
            cherry, root = self.divergence_times
            if cherry > root:
                raise ValueError(f"Cherry time {cherry} exceeds root time {root}")


def tied_choice(k: int, u: float) -> int:
    """Index among k tied candidates for a uniform draw u in [0, 1)."""
    return min(int(u * k), k - 1)


class TieBreaker:
    """Uniform tie resolution; draws exactly one uniform per decision."""

    def __init__(
        self,
        seed: int | np.random.SeedSequence | None = None,
        *,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        self._rng = rng if rng is not None else np.random.default_rng(seed)

    def draw(self) -> float:
        return float(self._rng.random())

    def choose(self, candidates: Sequence[Topology]) -> tuple[Topology, bool]:
        ordered = sorted(candidates)
        u = self.draw()
        return ordered[tied_choice(len(ordered), u)], len(ordered) > 1

    def copy(self) -> TieBreaker:
        return TieBreaker(rng=copy.deepcopy(self._rng))


def _require_loci(gene_trees: Sequence[GeneTree3]) -> None:
    if len(gene_trees) == 0:
        raise ValueError("At least one locus is required")


def _argmin(stats: Sequence[float], tie: TieBreaker) -> tuple[Topology, bool]:
    best = min(stats)
    candidates = [Topology(j) for j, value in enumerate(stats) if value == best]
    return tie.choose(candidates)


def _minimum_times(gene_trees: Sequence[GeneTree3]) -> list[float]:
    return [min(g.pairwise_time(pair) for g in gene_trees) for pair in PAIRS]


def _topology_counts(gene_trees: Sequence[GeneTree3]) -> list[int]:
    counts = [0, 0, 0]
    for g in gene_trees:
        counts[g.topology.value] += 1
    return counts


def _mt_times(minima: Sequence[float], candidate: Topology) -> tuple[float, float]:
    cherry = minima[candidate.value]
    others = [m for j, m in enumerate(minima) if j != candidate.value]
    return cherry, max(min(others), cherry)


def glass_mt(gene_trees: Sequence[GeneTree3], tie: TieBreaker) -> Estimate:
    _require_loci(gene_trees)
    minima = _minimum_times(gene_trees)
    topology, tied = _argmin(minima, tie)
    return Estimate(topology, _mt_times(minima, topology), tied)


def ml(
    gene_trees: Sequence[GeneTree3],
    tie: TieBreaker,
    species_grid: Optional[Sequence[tuple[float, float]]] = None,
) -> Estimate:
    """Maximum likelihood over the three rooted topologies.

    Each candidate is scored at the largest divergence times compatible with
    every gene tree. ``species_grid`` holds (cherry, root) offsets subtracted
    from those times; the best point over the grid is kept per candidate.
    """
    _require_loci(gene_trees)
    minima = _minimum_times(gene_trees)
    scores: list[float] = []
    times: list[tuple[float, float]] = []
    for candidate in Topology:
        tau_c, tau_r = _mt_times(minima, candidate)
        best = log_likelihood(gene_trees, SpeciesTree3(tau_c, tau_r, candidate))
        best_times = (tau_c, tau_r)
        for d_cherry, d_root in species_grid or ():
            c, r = tau_c - d_cherry, tau_r - d_root
            if c < 0.0 or c > r:
                continue
            value = log_likelihood(gene_trees, SpeciesTree3(c, r, candidate))
            if value > best:
                best, best_times = value, (c, r)
        scores.append(-best)
        times.append(best_times)
    topology, tied = _argmin(scores, tie)
    return Estimate(topology, times[topology.value], tied)


def rstar(gene_trees: Sequence[GeneTree3], tie: TieBreaker) -> Estimate:
    _require_loci(gene_trees)
    counts = _topology_counts(gene_trees)
    topology, tied = _argmin([-c for c in counts], tie)
    return Estimate(topology, tie=tied)


def star(gene_trees: Sequence[GeneTree3], tie: TieBreaker) -> Estimate:
    # Rank 1 for the shallower node, 2 for the root; distance is twice the rank.
    _require_loci(gene_trees)
    totals = [0, 0, 0]
    for g in gene_trees:
        for j in range(len(PAIRS)):
            totals[j] += 2 if g.topology.value == j else 4
    topology, tied = _argmin([total / len(gene_trees) for total in totals], tie)
    return Estimate(topology, tie=tied)


def mdc(gene_trees: Sequence[GeneTree3], tie: TieBreaker) -> Estimate:
    # A discordant locus leaves one extra lineage on the internal branch.
    _require_loci(gene_trees)
    counts = _topology_counts(gene_trees)
    topology, tied = _argmin([len(gene_trees) - c for c in counts], tie)
    return Estimate(topology, tie=tied)


def _average_times(gene_trees: Sequence[GeneTree3]) -> list[float]:
    n = len(gene_trees)
    return [math.fsum(g.pairwise_time(pair) for g in gene_trees) / n for pair in PAIRS]


def steac(gene_trees: Sequence[GeneTree3], tie: TieBreaker) -> Estimate:
    _require_loci(gene_trees)
    topology, tied = _argmin(_average_times(gene_trees), tie)
    return Estimate(topology, tie=tied)


def sc(gene_trees: Sequence[GeneTree3], tie: TieBreaker) -> Estimate:
    # With one allele per population the shallowest coalescence is the only one.
    _require_loci(gene_trees)
    topology, tied = _argmin(_average_times(gene_trees), tie)
    return Estimate(topology, tie=tied)


steac_sc = steac

ESTIMATORS: dict[MethodId, Callable[[Sequence[GeneTree3], TieBreaker], Estimate]] = {
    MethodId.ML: ml,
    MethodId.GLASS_MT: glass_mt,
    MethodId.RSTAR: rstar,
    MethodId.STAR: star,
    MethodId.MDC: mdc,
    MethodId.STEAC: steac,
    MethodId.SC: sc,
}


def estimate(method: MethodId, gene_trees: Sequence[GeneTree3], tie: TieBreaker) -> Estimate:
    return ESTIMATORS[method](gene_trees, tie)


ESTIMATE_HEADER = ("method", "topology", "tau_cherry", "tau_root", "tie")


def estimate_to_row(method: MethodId, est: Estimate) -> list[str]:
    cherry, root = ("", "")
    if est.divergence_times is not None:
        cherry, root = (format(x, ".17g") for x in est.divergence_times)
    return [method.value, est.topology.name, cherry, root, "true" if est.tie else "false"]


# Batch decisions over GeneTreeBatch arrays. Statistics are "lower is better"
# and ties are resolved by the same rule as TieBreaker.choose.


def choose_batch(stats: np.ndarray, uniforms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    best = stats.min(axis=1, keepdims=True)
    mask = stats == best
    k = mask.sum(axis=1)
    pick = np.minimum(np.floor(uniforms * k).astype(np.int64), k - 1)
    rank = np.cumsum(mask, axis=1)
    chosen = np.argmax(mask & (rank == (pick + 1)[:, None]), axis=1)
    return chosen.astype(np.int8), k > 1


def _batch_counts(batch: GeneTreeBatch) -> np.ndarray:
    return np.stack([(batch.topology == j).sum(axis=1) for j in range(len(PAIRS))], axis=1)


def _batch_minima(batch: GeneTreeBatch) -> np.ndarray:
    return pairwise_time_matrix(batch).min(axis=1)


def _batch_ml_scores(batch: GeneTreeBatch) -> np.ndarray:
    minima = _batch_minima(batch)
    scores = np.empty_like(minima)
    t1, t2 = batch.t1, batch.t2
    for j in range(len(PAIRS)):
        others = np.delete(minima, j, axis=1).min(axis=1)
        tau_c = minima[:, j]
        tau_r = np.maximum(others, tau_c)
        tc, tr = tau_c[:, None], tau_r[:, None]
        in_cherry = t1 < tr
        consistent = (t1 >= tc) & (~in_cherry | ((batch.topology == j) & (t2 >= tr)))
        exponent = np.where(
            in_cherry,
            -(t1 - tc) - (t2 - tr),
            -(tr - tc) - 3.0 * (t1 - tr) - (t2 - t1),
        )
        ll = np.where(consistent.all(axis=1), exponent.sum(axis=1), -np.inf)
        scores[:, j] = -ll
    return scores


def batch_statistics(method: MethodId, batch: GeneTreeBatch) -> np.ndarray:
    loci = batch.loci
    if method is MethodId.ML:
        return _batch_ml_scores(batch)
    if method is MethodId.GLASS_MT:
        return _batch_minima(batch)
    if method is MethodId.RSTAR:
        return -_batch_counts(batch)
    if method is MethodId.STAR:
        counts = _batch_counts(batch)
        return (2 * counts + 4 * (loci - counts)) / loci
    if method is MethodId.MDC:
        return loci - _batch_counts(batch)
    return pairwise_time_matrix(batch).mean(axis=1)


def decide_batch(
    method: MethodId, batch: GeneTreeBatch, uniforms: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Chosen topology code and tie flag per replicate."""
    return choose_batch(batch_statistics(method, batch), uniforms)
