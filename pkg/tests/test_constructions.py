import itertools

import numpy as np
import pytest

from janossy_bounds.constructions import (
    ObstructionInstance,
    build_axis_set,
    build_grid,
    build_injection,
    build_labeled_cubes,
    min_cross_distance,
    sample_obstruction,
    target_g,
    target_g_batch,
)
from janossy_bounds.geometry import assign_region, delta_embed


@pytest.fixture(scope="module")
def small_instance():
    return sample_obstruction(1, 3, 1, samples_per_region=16, seed=0)


def test_grid_for_three_points():
    grid = build_grid(1, 3, 1)
    assert grid.size == 3
    assert np.array_equal(grid.points[:, 0], [0.0, 0.5, 1.0])


def test_grid_size_uses_integer_ceiling():
    assert build_grid(2, 10, 2).size == 5
    # 3 * 5 + 1 = 16 is a perfect square
    assert build_grid(3, 7, 2).size == 4


@pytest.mark.parametrize("d,n", [(1, 2), (1, 5), (3, 4), (2, 9)])
def test_k_one_grid_has_d_n_minus_one_plus_one_points(d, n):
    grid = build_grid(d, n, 1)
    assert grid.size == d * (n - 1) + 1
    assert np.array_equal(grid.points[0], np.zeros(d))
    assert len({tuple(p) for p in grid.points}) == grid.size


def test_grid_rejects_k_not_below_n():
    with pytest.raises(ValueError):
        build_grid(1, 3, 3)


@pytest.mark.parametrize("d,n,k,expected", [(1, 3, 1, 1), (2, 10, 2, 9), (1, 11, 2, 7)])
def test_axis_set_cardinality(d, n, k, expected):
    axis = build_axis_set(build_grid(d, n, k))
    assert len(axis) == expected
    assert all(0 in t for t in axis.tuples)


def test_axis_set_cardinality_matches_enumeration_over_range():
    for d in range(1, 5):
        for n in range(2, 13):
            for k in range(1, min(n, 4)):
                grid = build_grid(d, n, k)
                enumerated = sum(1 for t in itertools.product(range(grid.size), repeat=k) if 0 in t)
                assert len(build_axis_set(grid)) == enumerated == grid.size**k - (grid.size - 1) ** k


def test_injection_for_three_points():
    chi = build_injection(build_grid(1, 3, 1))
    assert chi.domain_size == 3
    assert [float(chi(r)[0, 0]) for r in (1, 2, 3)] == [0.0, 0.5, 1.0]
    with pytest.raises(ValueError):
        chi(4)


@pytest.mark.parametrize("d,n,k", [(1, 3, 1), (2, 5, 2), (1, 6, 3), (3, 4, 2)])
def test_injection_is_injective_with_full_domain(d, n, k):
    chi = build_injection(build_grid(d, n, k))
    assert chi.domain_size == d * (n - k) + 1
    images = {chi(r).tobytes() for r in range(1, chi.domain_size + 1)}
    assert len(images) == chi.domain_size


def test_sampled_points_have_obstruction_form(small_instance):
    inst = small_instance
    assert inst.e_plus.shape == (3 * 16, 3, 1)
    assert np.bincount(inst.regions, minlength=4)[1:].tolist() == [16, 16, 16]
    for u, r, plus, minus in zip(inst.directions, inst.regions, inst.e_plus, inst.e_minus):
        assert assign_region(inst.cover, u) == r
        assert np.array_equal(plus[:1], inst.chi(int(r)))
        assert np.array_equal(plus[1:], delta_embed(inst.delta, u, 1))
        assert np.array_equal(minus[1:], delta_embed(inst.delta, u, -1))
    assert np.all((inst.e_plus >= 0.0) & (inst.e_plus <= 1.0))
    assert set(np.unique(inst.e_plus[:, 0, 0])) <= set(inst.grid.points[:, 0])


def test_sampled_sets_are_disjoint(small_instance):
    assert min_cross_distance(small_instance.e_plus, small_instance.e_minus) > 0.0


def test_sampling_is_seeded():
    first = sample_obstruction(2, 3, 1, samples_per_region=4, seed=5)
    second = sample_obstruction(2, 3, 1, samples_per_region=4, seed=5)
    assert first.fingerprint() == second.fingerprint()
    assert first.fingerprint() != sample_obstruction(2, 3, 1, samples_per_region=4, seed=6).fingerprint()


def test_sampling_budget_is_enforced():
    with pytest.raises(RuntimeError, match="exhausted"):
        sample_obstruction(1, 3, 1, samples_per_region=4, seed=0, max_draws=0)


def test_target_g_is_one_on_e_plus_and_zero_on_e_minus(small_instance):
    inst = small_instance
    assert np.all(target_g_batch(inst, inst.e_plus) == 1.0)
    assert np.all(target_g_batch(inst, inst.e_minus) == 0.0)
    assert target_g(inst, inst.e_plus[3]) == 1.0


def test_target_g_is_half_at_the_tail_centre(small_instance):
    inst = small_instance
    point = np.vstack([inst.chi(2), inst.delta.center])
    assert target_g(inst, point) == pytest.approx(0.5, abs=1e-12)


def test_target_g_stays_in_unit_interval(small_instance):
    points = np.random.default_rng(1).uniform(size=(300, 3, 1))
    values = target_g_batch(small_instance, points)
    assert np.all((values >= 0.0) & (values <= 1.0))
    with pytest.raises(ValueError):
        target_g(small_instance, np.zeros((2, 1)))


def test_instance_dict_round_trip(small_instance):
    rebuilt = ObstructionInstance.from_dict(small_instance.to_dict())
    assert rebuilt.fingerprint() == small_instance.fingerprint()
    assert np.array_equal(rebuilt.e_minus, small_instance.e_minus)


def test_instance_dict_with_tampered_regions_is_rejected(small_instance):
    data = small_instance.to_dict()
    data["regions"] = [1] * len(data["regions"])
    with pytest.raises(ValueError):
        ObstructionInstance.from_dict(data)


def test_with_extra_points_appends_without_touching_original(small_instance):
    extra = small_instance.point(1, small_instance.directions[0], 1)
    grown = small_instance.with_extra_points(plus=extra)
    assert grown.e_plus.shape[0] == small_instance.e_plus.shape[0] + 1
    assert grown.e_minus.shape == small_instance.e_minus.shape


def test_labeled_cubes_for_two_points():
    cubes = build_labeled_cubes(1, 2)
    assert cubes.side == 0.25
    assert np.allclose(cubes.offsets[:, 0], [0.125, 0.625])
    assert cubes.apply(0, [0.0])[0] == 0.125
    assert cubes.apply(0, [1.0])[0] == 0.375
    assert cubes.min_separation() == pytest.approx(0.25)


@pytest.mark.parametrize("d,n", [(1, 3), (2, 4), (3, 5), (2, 7)])
def test_labeled_cubes_are_separated_inside_the_open_cube(d, n):
    cubes = build_labeled_cubes(d, n)
    assert cubes.min_separation() >= 1.0 / (2 * n) - 1e-12
    assert np.all(cubes.offsets > 0.0)
    assert np.all(cubes.offsets + cubes.side < 1.0)
    embedded = cubes.embed(np.random.default_rng(0).uniform(size=(n, d)))
    for j in range(n):
        assert np.all((embedded[j] >= cubes.offsets[j]) & (embedded[j] <= cubes.offsets[j] + cubes.side))
