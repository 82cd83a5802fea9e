import math

import numpy as np
import pytest

from coalrates.coalescent import (
    GeneTree3,
    GeneTreeBatch,
    SpeciesTree3,
    Topology,
    log_likelihood,
    simulate_batch,
)
from coalrates.estimators import (
    ESTIMATE_HEADER,
    Estimate,
    MethodGroup,
    MethodId,
    TieBreaker,
    decide_batch,
    estimate,
    estimate_to_row,
    glass_mt,
    ml,
    rstar,
    sc,
    steac,
    steac_sc,
    tied_choice,
)

AB, AC, BC = Topology.AB_C, Topology.AC_B, Topology.BC_A


def _trees(seed: int, t: float, loci: int) -> list[GeneTree3]:
    batch = simulate_batch(SpeciesTree3.from_branch(t), 1, loci, np.random.default_rng(seed))
    return batch.replicate(0)


def test_method_parse_accepts_aliases() -> None:
    assert MethodId.parse("glass") is MethodId.GLASS_MT
    assert MethodId.parse("R*") is MethodId.RSTAR
    assert MethodId.parse("SC") is MethodId.SC
    assert MethodId.ML.group is MethodGroup.GLASS
    assert MethodId.MDC.group is MethodGroup.RSTAR
    with pytest.raises(ValueError, match="valid methods"):
        MethodId.parse("upgma")


def test_tied_choice_partitions_unit_interval() -> None:
    assert tied_choice(1, 0.99) == 0
    assert tied_choice(2, 0.49) == 0
    assert tied_choice(2, 0.5) == 1
    assert tied_choice(3, 0.9999999) == 2
    assert tied_choice(3, 1.0) == 2


def test_tie_breaker_draws_one_uniform_per_decision() -> None:
    tie = TieBreaker(seed=3)
    twin = tie.copy()
    tie.choose([AB])
    tie.choose([AC, AB])
    twin.draw()
    twin.draw()
    assert tie.draw() == twin.draw()


def test_estimate_rejects_inverted_times() -> None:
    with pytest.raises(ValueError):
        Estimate(AB, (2.0, 1.0))


def test_glass_mt_uses_minimum_pairwise_times() -> None:
    trees = [
        GeneTree3(AC, 1.2, 1.9, failed=True),
        GeneTree3(AB, 0.4, 1.5),
        GeneTree3(BC, 1.1, 1.3, failed=True),
    ]
    est = glass_mt(trees, TieBreaker(0))
    assert est.topology is AB
    assert est.divergence_times == (0.4, 1.1)
    assert not est.tie


def test_ml_matches_glass_times() -> None:
    trees = [GeneTree3(AB, 0.4, 1.5), GeneTree3(AC, 1.2, 1.9, failed=True)]
    est = ml(trees, TieBreaker(0))
    assert est.topology is AB
    assert est.divergence_times == (0.4, 1.2)


def test_ml_grid_never_beats_maximal_times() -> None:
    trees = _trees(9, 0.4, 30)
    base = ml(trees, TieBreaker(1))
    grid = [(0.0, 0.05), (0.05, 0.05), (0.1, 0.2)]
    refined = ml(trees, TieBreaker(1), species_grid=grid)
    assert refined == base


def test_rstar_counts_and_ties() -> None:
    trees = [
        GeneTree3(AB, 0.1, 1.1),
        GeneTree3(AC, 1.2, 1.5, failed=True),
        GeneTree3(AB, 0.2, 1.4),
        GeneTree3(AC, 1.3, 2.0, failed=True),
        GeneTree3(BC, 1.1, 1.8, failed=True),
    ]
    est = rstar(trees, TieBreaker(0))
    assert est.tie
    assert est.topology in {AB, AC}
    assert est.divergence_times is None

    low = rstar(trees, TieBreaker(rng=_FixedRng(0.25)))
    high = rstar(trees, TieBreaker(rng=_FixedRng(0.75)))
    assert (low.topology, high.topology) == (AB, AC)


class _FixedRng:
    def __init__(self, value: float) -> None:
        self.value = value

    def random(self) -> float:
        return self.value


def test_steac_and_sc_average_times() -> None:
    trees = [
        GeneTree3(AC, 0.2, 3.0, failed=True),
        GeneTree3(AB, 0.5, 1.0),
        GeneTree3(AB, 0.6, 1.1),
    ]
    # mean times: AB 4.1/3, AC 2.3/3, BC 5.1/3
    assert steac(trees, TieBreaker(0)).topology is AC
    assert sc(trees, TieBreaker(0)).topology is AC
    assert steac_sc is steac


@pytest.mark.parametrize("seed", range(40))
def test_equivalent_methods_agree_with_shared_ties(seed: int) -> None:
    rng = np.random.default_rng(seed)
    trees = _trees(seed, float(rng.uniform(0.01, 1.5)), int(rng.integers(1, 40)))
    tie = TieBreaker(seed=seed + 1000)
    for left, right in [
        (MethodId.STAR, MethodId.RSTAR),
        (MethodId.MDC, MethodId.RSTAR),
        (MethodId.ML, MethodId.GLASS_MT),
        (MethodId.SC, MethodId.STEAC),
    ]:
        a = estimate(left, trees, tie.copy())
        b = estimate(right, trees, tie.copy())
        assert a.topology is b.topology
        assert a.tie == b.tie
    assert (
        estimate(MethodId.ML, trees, tie.copy()).divergence_times
        == estimate(MethodId.GLASS_MT, trees, tie.copy()).divergence_times
    )


@pytest.mark.parametrize("method", list(MethodId))
def test_estimators_are_equivariant_under_relabelling(method: MethodId) -> None:
    perm = {"A": "C", "B": "A", "C": "B"}
    checked = 0
    for seed in range(30):
        trees = _trees(seed, 0.3, 25)
        est = estimate(method, trees, TieBreaker(seed))
        if est.tie:
            continue
        moved = estimate(method, [g.relabel(perm) for g in trees], TieBreaker(seed))
        assert moved.topology is est.topology.permute(perm)
        checked += 1
    assert checked > 10


@pytest.mark.parametrize("method", list(MethodId))
def test_batch_decisions_match_scalar_estimators(method: MethodId) -> None:
    batch = simulate_batch(SpeciesTree3.from_branch(0.2), 60, 6, np.random.default_rng(21))
    uniforms = np.array([TieBreaker(seed=i).draw() for i in range(batch.replicates)])
    codes, tied = decide_batch(method, batch, uniforms)
    for i in range(batch.replicates):
        est = estimate(method, batch.replicate(i), TieBreaker(seed=i))
        assert codes[i] == est.topology.value
        assert bool(tied[i]) == est.tie


def test_batch_round_trip_of_datasets() -> None:
    datasets = [_trees(1, 0.5, 5), _trees(2, 0.5, 5)]
    batch = GeneTreeBatch.from_gene_trees(datasets)
    assert batch.replicate(1) == datasets[1]


def test_estimate_rows() -> None:
    est = Estimate(AC, (0.25, 1.0), tie=True)
    assert estimate_to_row(MethodId.GLASS_MT, est) == ["glass_mt", "AC_B", "0.25", "1", "true"]
    assert estimate_to_row(MethodId.RSTAR, Estimate(AB)) == ["rstar", "AB_C", "", "", "false"]
    assert len(ESTIMATE_HEADER) == 5


def test_estimators_require_loci() -> None:
    for method in MethodId:
        with pytest.raises(ValueError):
            estimate(method, [], TieBreaker(0))


def _symmetric_trees() -> list[GeneTree3]:
    return [GeneTree3(t, 1.0, 2.0, failed=True) for t in (AB, AC, BC)]


@pytest.mark.parametrize("method", [MethodId.GLASS_MT, MethodId.ML, MethodId.RSTAR, MethodId.STEAC])
def test_symmetric_ties_pick_each_topology_a_third_of_the_time(method: MethodId) -> None:
    trees = _symmetric_trees()
    n = 10_000
    counts = {t: 0 for t in Topology}
    for seed in range(n):
        est = estimate(method, trees, TieBreaker(seed))
        assert est.tie
        counts[est.topology] += 1
    sigma = math.sqrt(n * (1.0 / 3.0) * (2.0 / 3.0))
    for count in counts.values():
        assert abs(count - n / 3.0) <= 3.0 * sigma


def test_ml_follows_glass_mt_under_a_three_way_tie() -> None:
    trees = _symmetric_trees()
    for seed in range(200):
        a = ml(trees, TieBreaker(seed))
        b = glass_mt(trees, TieBreaker(seed))
        assert a.tie and b.tie
        assert a.topology is b.topology
        assert a.divergence_times == b.divergence_times == (1.0, 1.0)


def test_likelihood_peaks_at_maximal_times_on_random_datasets() -> None:
    offsets = [(0.01, 0.0), (0.0, 0.01), (0.05, 0.05), (0.1, 0.02), (0.0, 0.3)]
    for seed in range(100):
        rng = np.random.default_rng(seed)
        trees = _trees(seed, float(rng.uniform(0.01, 1.5)), int(rng.integers(1, 40)))
        est = ml(trees, TieBreaker(seed))
        cherry, root = est.divergence_times
        best = log_likelihood(trees, SpeciesTree3(cherry, root, est.topology))
        assert math.isfinite(best)
        for d_cherry, d_root in offsets:
            c, r = cherry - d_cherry, root - d_root
            if c < 0.0 or c > r:
                continue
            assert log_likelihood(trees, SpeciesTree3(c, r, est.topology)) <= best
