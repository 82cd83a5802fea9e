from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

TAXA = ("A", "B", "C")
# Pair order matches Topology values: pair j is the cherry of Topology(j).
PAIRS: tuple[tuple[str, str], ...] = (("A", "B"), ("A", "C"), ("B", "C"))
ROOT_POPULATION = "ABC"


class InconsistentGeneTreeError(ValueError):
    pass


def pair_index(x: str, y: str) -> int:
    key = tuple(sorted((x.upper(), y.upper())))
    try:
        return PAIRS.index(key)  # type: ignore[arg-type]
    except ValueError as exc:
        raise ValueError(f"Not a taxon pair: {x!r}, {y!r}") from exc


class Topology(Enum):
    AB_C = 0
    AC_B = 1
    BC_A = 2

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return self.value < other.value

    @property
    def cherry(self) -> tuple[str, str]:
        return PAIRS[self.value]

    @property
    def outgroup(self) -> str:
        return next(x for x in TAXA if x not in self.cherry)

    @property
    def label(self) -> str:
        return "".join(self.cherry) + "|" + self.outgroup

    @classmethod
    def from_pair(cls, x: str, y: str) -> Topology:
        return cls(pair_index(x, y))

    @classmethod
    def parse(cls, text: str) -> Topology:
        cleaned = text.strip().upper().replace("|", "_")
        try:
            return cls[cleaned]
        except KeyError as exc:
            valid = ", ".join(t.name for t in cls)
            raise ValueError(f"Unknown topology {text!r}; expected one of {valid}") from exc

    def permute(self, perm: Mapping[str, str]) -> Topology:
        x, y = self.cherry
        return Topology.from_pair(perm[x], perm[y])


@dataclass(frozen=True)
class SpeciesTree3:
    """Three-taxon ultrametric species tree; times in coalescent units."""

    tau_ab: float
    tau_abc: float
    topology: Topology = Topology.AB_C

    def __post_init__(self) -> None:
        if not (self.tau_ab >= 0.0):
            raise ValueError(f"tau_ab must be >= 0, got {self.tau_ab}")
        if not (self.tau_abc >= self.tau_ab):
            raise ValueError(
                f"tau_abc must be >= tau_ab, got {self.tau_abc} < {self.tau_ab}"
            )

    @classmethod
    def from_branch(
        cls, t: float, *, tau_ab: float = 0.0, topology: Topology = Topology.AB_C
    ) -> SpeciesTree3:
        if t < 0:
            raise ValueError(f"Internal branch length must be >= 0, got {t}")
        return cls(tau_ab=tau_ab, tau_abc=tau_ab + t, topology=topology)

    @property
    def t(self) -> float:
        return self.tau_abc - self.tau_ab

    @property
    def p(self) -> float:
        """Probability that the cherry lineages coalesce in the internal branch."""
        return -math.expm1(-self.t)

    @property
    def cherry_population(self) -> str:
        return "".join(self.topology.cherry)


@dataclass(frozen=True)
class GeneTree3:
    topology: Topology
    t1: float
    t2: float
    failed: bool = False

    def __post_init__(self) -> None:
        if not (0.0 <= self.t1 <= self.t2):
            raise ValueError(f"Gene tree needs 0 <= t1 <= t2, got t1={self.t1}, t2={self.t2}")

    def pairwise_time(self, pair: Sequence[str]) -> float:
        x, y = pair
        if pair_index(x, y) == self.topology.value:
            return self.t1
        return self.t2

    def pairwise_times(self) -> tuple[float, float, float]:
        return tuple(self.pairwise_time(pair) for pair in PAIRS)  # type: ignore[return-value]

    def relabel(self, perm: Mapping[str, str]) -> GeneTree3:
        return GeneTree3(self.topology.permute(perm), self.t1, self.t2, self.failed)


def pairwise_time(g: GeneTree3, pair: Sequence[str]) -> float:
    return g.pairwise_time(pair)


def permute_gene_tree(g: GeneTree3, perm: Mapping[str, str]) -> GeneTree3:
    return g.relabel(perm)


def species_tree_from_branch(
    t: float, tau_ab: float = 0.0, topology: Topology = Topology.AB_C
) -> SpeciesTree3:
    return SpeciesTree3.from_branch(t, tau_ab=tau_ab, topology=topology)


@dataclass(frozen=True)
class PopulationLineages:
    name: str
    entering: int
    exiting: int
    start: float
    end: float
    coalescences: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not (self.entering >= self.exiting >= 1):
            raise ValueError(
                f"{self.name}: need entering >= exiting >= 1, "
                f"got {self.entering} -> {self.exiting}"
            )
        if len(self.coalescences) != self.entering - self.exiting:
            raise ValueError(f"{self.name}: coalescence count does not match lineages")
        for c in self.coalescences:
            if not (self.start <= c < self.end):
                raise ValueError(f"{self.name}: coalescence {c} outside [{self.start}, {self.end})")

    def intervals(self) -> Iterable[tuple[int, float]]:
        """Yield (lineage count, duration) pieces with at least two lineages."""
        k = self.entering
        previous = self.start
        for c in self.coalescences:
            yield k, c - previous
            previous = c
            k -= 1
        if k >= 2:
            yield k, self.end - previous

    def exponent(self) -> float:
        return -math.fsum(math.comb(k, 2) * length for k, length in self.intervals())


@dataclass(frozen=True)
class LineageSchedule:
    populations: tuple[PopulationLineages, ...]

    def __getitem__(self, name: str) -> PopulationLineages:
        for pop in self.populations:
            if pop.name == name:
                return pop
        raise KeyError(name)

    def exponent(self) -> float:
        return math.fsum(pop.exponent() for pop in self.populations)


def build_schedule(g: GeneTree3, species: SpeciesTree3) -> LineageSchedule:
    tau_c, tau_r = species.tau_ab, species.tau_abc
    cherry = species.topology.cherry
    if g.t1 < tau_c:
        raise InconsistentGeneTreeError(
            f"First coalescence {g.t1} predates the cherry divergence {tau_c}"
        )
    in_cherry = g.t1 < tau_r
    if in_cherry and g.topology != species.topology:
        raise InconsistentGeneTreeError(
            f"Topology {g.topology.label} coalesced below the root divergence "
            f"of a {species.topology.label} species tree"
        )
    if in_cherry and g.t2 < tau_r:
        raise InconsistentGeneTreeError(
            f"Root coalescence {g.t2} predates the root divergence {tau_r}"
        )

    leaves = tuple(
        PopulationLineages(x, 1, 1, 0.0, tau_c if x in cherry else tau_r) for x in TAXA
    )
    if in_cherry:
        cherry_pop = PopulationLineages(
            species.cherry_population, 2, 1, tau_c, tau_r, (g.t1,)
        )
        root = PopulationLineages(ROOT_POPULATION, 2, 1, tau_r, math.inf, (g.t2,))
    else:
        cherry_pop = PopulationLineages(species.cherry_population, 2, 2, tau_c, tau_r)
        root = PopulationLineages(ROOT_POPULATION, 3, 1, tau_r, math.inf, (g.t1, g.t2))
    return LineageSchedule(leaves + (cherry_pop, root))


def log_likelihood(gene_trees: Iterable[GeneTree3], species: SpeciesTree3) -> float:
    """Coalescent exponent summed over loci; -inf if any locus is impossible."""
    terms: list[float] = []
    for g in gene_trees:
        try:
            terms.append(build_schedule(g, species).exponent())
        except InconsistentGeneTreeError:
            return -math.inf
    return math.fsum(terms)


def sample_gene_tree(species: SpeciesTree3, rng: np.random.Generator) -> GeneTree3:
    p = species.p
    if rng.random() < p:
        # Exponential(1) conditioned below t, by inverse CDF.
        wait = -math.log1p(-rng.random() * p)
        t1 = min(species.tau_ab + wait, math.nextafter(species.tau_abc, 0.0))
        t2 = species.tau_abc + rng.exponential(1.0)
        return GeneTree3(species.topology, t1, t2, failed=False)
    topology = Topology(int(rng.integers(3)))
    t1 = species.tau_abc + rng.exponential(1.0 / 3.0)
    t2 = t1 + rng.exponential(1.0)
    return GeneTree3(topology, t1, t2, failed=True)


def sample_gene_trees(
    species: SpeciesTree3, n: int, rng: np.random.Generator
) -> list[GeneTree3]:
    return [sample_gene_tree(species, rng) for _ in range(n)]


@dataclass
class GeneTreeBatch:
    """Replicated multilocus datasets as (replicates, loci) arrays."""

    topology: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    failed: np.ndarray

    @property
    def replicates(self) -> int:
        return int(self.topology.shape[0])

    @property
    def loci(self) -> int:
        return int(self.topology.shape[1])

    def replicate(self, index: int) -> list[GeneTree3]:
        return [
            GeneTree3(Topology(int(code)), float(a), float(b), bool(f))
            for code, a, b, f in zip(
                self.topology[index], self.t1[index], self.t2[index], self.failed[index]
            )
        ]

    @classmethod
    def from_gene_trees(cls, datasets: Sequence[Sequence[GeneTree3]]) -> GeneTreeBatch:
        loci = {len(d) for d in datasets}
        if len(loci) != 1:
            raise ValueError("All replicates must have the same number of loci")
        return cls(
            topology=np.array([[g.topology.value for g in d] for d in datasets], dtype=np.int8),
            t1=np.array([[g.t1 for g in d] for d in datasets], dtype=float),
            t2=np.array([[g.t2 for g in d] for d in datasets], dtype=float),
            failed=np.array([[g.failed for g in d] for d in datasets], dtype=bool),
        )


def simulate_batch(
    species: SpeciesTree3, replicates: int, loci: int, rng: np.random.Generator
) -> GeneTreeBatch:
    shape = (replicates, loci)
    p = species.p
    success = rng.random(shape) < p
    wait = -np.log1p(-rng.random(shape) * p)
    root_wait = rng.exponential(1.0, shape)
    first_fail = rng.exponential(1.0 / 3.0, shape)
    second_fail = rng.exponential(1.0, shape)
    fail_topology = rng.integers(0, 3, shape)

    cherry_t1 = np.minimum(species.tau_ab + wait, np.nextafter(species.tau_abc, 0.0))
    t1 = np.where(success, cherry_t1, species.tau_abc + first_fail)
    t2 = np.where(success, species.tau_abc + root_wait, t1 + second_fail)
    topology = np.where(success, species.topology.value, fail_topology).astype(np.int8)
    return GeneTreeBatch(topology=topology, t1=t1, t2=t2, failed=~success)


def pairwise_time_matrix(batch: GeneTreeBatch) -> np.ndarray:
    """Pairwise times, shape (replicates, loci, 3) in PAIRS order."""
    return np.stack(
        [np.where(batch.topology == j, batch.t1, batch.t2) for j in range(len(PAIRS))],
        axis=-1,
    )


GENE_TREE_HEADER = ("topology", "t1", "t2", "failed")


def _fmt(value: float) -> str:
    return format(value, ".17g")


def write_gene_trees_csv(path: Path, gene_trees: Iterable[GeneTree3]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(GENE_TREE_HEADER)
        for g in gene_trees:
            writer.writerow(
                [g.topology.name, _fmt(g.t1), _fmt(g.t2), "true" if g.failed else "false"]
            )


def read_gene_trees_csv(path: Path) -> list[GeneTree3]:
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = set(GENE_TREE_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [
            GeneTree3(
                Topology.parse(row["topology"]),
                float(row["t1"]),
                float(row["t2"]),
                row["failed"].strip().lower() in {"true", "1", "yes"},
            )
            for row in reader
        ]
