import math
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from coalrates.coalescent import (
    GENE_TREE_HEADER,
    PAIRS,
    GeneTree3,
    GeneTreeBatch,
    SpeciesTree3,
    Topology,
    pairwise_time,
    pairwise_time_matrix,
    permute_gene_tree,
    read_gene_trees_csv,
    sample_gene_tree,
    sample_gene_trees,
    simulate_batch,
    species_tree_from_branch,
    write_gene_trees_csv,
)


def _species(t: float, tau_ab: float = 0.0) -> SpeciesTree3:
    return species_tree_from_branch(t, tau_ab=tau_ab)


def test_species_tree_rejects_bad_times() -> None:
    with pytest.raises(ValueError):
        SpeciesTree3(-0.1, 1.0)
    with pytest.raises(ValueError):
        SpeciesTree3(1.0, 0.5)
    with pytest.raises(ValueError):
        SpeciesTree3.from_branch(-1.0)


def test_species_tree_branch_and_success_probability() -> None:
    species = _species(0.7, tau_ab=0.25)
    assert species.tau_abc == pytest.approx(0.95)
    assert species.t == pytest.approx(0.7)
    assert species.p == pytest.approx(1.0 - math.exp(-0.7))
    assert species.cherry_population == "AB"


def test_topology_parse_and_label() -> None:
    assert Topology.parse("AB|C") is Topology.AB_C
    assert Topology.parse(" bc_a ") is Topology.BC_A
    assert Topology.AC_B.label == "AC|B"
    assert Topology.AC_B.outgroup == "B"
    assert Topology.from_pair("C", "B") is Topology.BC_A
    with pytest.raises(ValueError, match="Unknown topology"):
        Topology.parse("AA|B")


def test_topology_permutation_moves_cherry() -> None:
    perm = {"A": "B", "B": "C", "C": "A"}
    assert Topology.AB_C.permute(perm) is Topology.BC_A
    assert Topology.AC_B.permute(perm) is Topology.AB_C
    assert Topology.BC_A.permute(perm) is Topology.AC_B


def test_gene_tree_requires_ordered_times() -> None:
    with pytest.raises(ValueError):
        GeneTree3(Topology.AB_C, 2.0, 1.0)
    with pytest.raises(ValueError):
        GeneTree3(Topology.AB_C, -0.1, 1.0)


def test_pairwise_time_uses_cherry_for_its_pair() -> None:
    g = GeneTree3(Topology.AC_B, 0.4, 1.3)
    assert pairwise_time(g, ("C", "A")) == 0.4
    assert pairwise_time(g, ("A", "B")) == 1.3
    assert g.pairwise_times() == (1.3, 0.4, 1.3)
    with pytest.raises(ValueError):
        pairwise_time(g, ("A", "D"))


def test_permute_gene_tree_keeps_times() -> None:
    g = GeneTree3(Topology.AB_C, 0.2, 0.9, failed=False)
    moved = permute_gene_tree(g, {"A": "C", "B": "A", "C": "B"})
    assert moved.topology is Topology.AC_B
    assert (moved.t1, moved.t2, moved.failed) == (0.2, 0.9, False)


def test_sample_gene_tree_respects_population_boundaries() -> None:
    species = _species(0.6, tau_ab=0.3)
    rng = np.random.default_rng(11)
    for g in sample_gene_trees(species, 2000, rng):
        if g.failed:
            assert g.t1 >= species.tau_abc
        else:
            assert g.topology is Topology.AB_C
            assert species.tau_ab <= g.t1 < species.tau_abc
            assert g.t2 >= species.tau_abc
        assert g.t1 <= g.t2


def test_star_tree_topologies_are_uniform() -> None:
    batch = simulate_batch(_species(0.0), 1, 30000, np.random.default_rng(5))
    assert batch.failed.all()
    counts = np.bincount(batch.topology.ravel(), minlength=3)
    assert chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize("t", [0.3, 1.0])
def test_failed_loci_topologies_are_uniform_on_resolved_trees(t: float) -> None:
    batch = simulate_batch(_species(t), 4, 10000, np.random.default_rng(11))
    counts = np.bincount(batch.topology[batch.failed], minlength=3)
    assert counts.sum() > 10000
    assert chisquare(counts).pvalue > 1e-3

    scalar = sample_gene_trees(_species(t), 6000, np.random.default_rng(12))
    scalar_counts = np.bincount([g.topology.value for g in scalar if g.failed], minlength=3)
    assert chisquare(scalar_counts).pvalue > 1e-3


def test_batch_success_rate_matches_p() -> None:
    species = _species(0.5)
    batch = simulate_batch(species, 400, 500, np.random.default_rng(7))
    n = batch.failed.size
    rate = 1.0 - batch.failed.mean()
    assert abs(rate - species.p) < 5.0 * math.sqrt(species.p * (1 - species.p) / n)


def test_batch_waiting_time_means() -> None:
    species = _species(0.8, tau_ab=0.1)
    batch = simulate_batch(species, 200, 500, np.random.default_rng(3))
    failed = batch.failed
    first_wait = batch.t1[failed] - species.tau_abc
    root_wait = batch.t2[~failed] - species.tau_abc
    assert first_wait.mean() == pytest.approx(1.0 / 3.0, rel=0.03)
    assert root_wait.mean() == pytest.approx(1.0, rel=0.03)
    assert np.all(batch.topology[~failed] == Topology.AB_C.value)


def test_scalar_and_batch_samplers_agree_in_distribution() -> None:
    species = _species(0.4)
    scalar = sample_gene_trees(species, 20000, np.random.default_rng(1))
    batch = simulate_batch(species, 1, 20000, np.random.default_rng(2))
    scalar_fail = np.mean([g.failed for g in scalar])
    assert abs(scalar_fail - batch.failed.mean()) < 0.02
    assert abs(scalar_fail - math.exp(-0.4)) < 0.02


def test_sample_gene_tree_is_reproducible() -> None:
    species = _species(0.3)
    a = sample_gene_tree(species, np.random.default_rng(99))
    b = sample_gene_tree(species, np.random.default_rng(99))
    assert a == b


def test_pairwise_time_matrix_matches_gene_trees() -> None:
    batch = simulate_batch(_species(0.3), 4, 6, np.random.default_rng(8))
    matrix = pairwise_time_matrix(batch)
    assert matrix.shape == (4, 6, len(PAIRS))
    for i in range(batch.replicates):
        for locus, g in enumerate(batch.replicate(i)):
            assert tuple(matrix[i, locus]) == g.pairwise_times()


def test_batch_from_gene_trees_requires_equal_loci() -> None:
    a = [GeneTree3(Topology.AB_C, 0.1, 0.5)]
    b = [GeneTree3(Topology.AB_C, 0.1, 0.5)] * 2
    with pytest.raises(ValueError):
        GeneTreeBatch.from_gene_trees([a, b])
    batch = GeneTreeBatch.from_gene_trees([b, b])
    assert (batch.replicates, batch.loci) == (2, 2)


def test_gene_tree_csv_round_trip(tmp_path: Path) -> None:
    trees = sample_gene_trees(_species(0.2), 25, np.random.default_rng(4))
    path = tmp_path / "genes" / "trees.csv"
    write_gene_trees_csv(path, trees)

    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[0] == ",".join(GENE_TREE_HEADER)
    assert "\r" not in text
    assert read_gene_trees_csv(path) == trees


def test_read_gene_trees_csv_reports_missing_columns(tmp_path: Path) -> None:
    path = tmp_path / "bad.csv"
    path.write_text("topology,t1\nAB_C,0.1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="missing columns"):
        read_gene_trees_csv(path)
