import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from janossy_bounds.geometry import (
    DeltaMap,
    SphereDirection,
    antipodal_free_violation,
    antipodal_violations,
    assign_region,
    assign_regions,
    delta_embed,
    region_members,
    regular_simplex,
    sample_sphere,
    sample_sphere_array,
)


def centroid_simplex(b):
    """Standard basis of R^{b+1}, centred and normalised; lives in a b-dim subspace."""
    points = np.eye(b + 1) - 1.0 / (b + 1)
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def test_one_dimensional_cover_is_plus_minus_one():
    assert np.array_equal(regular_simplex(1).vertices, [[1.0], [-1.0]])


def test_two_dimensional_cover_angles():
    angles = np.degrees(np.arctan2(regular_simplex(2).vertices[:, 1], regular_simplex(2).vertices[:, 0])) % 360
    assert np.allclose(angles, [90.0, 210.0, 330.0])


@pytest.mark.parametrize("b", [1, 2, 3, 6, 10, 32, 64])
def test_simplex_gram_and_centroid(b):
    cover = regular_simplex(b)
    expected = np.full((b + 1, b + 1), -1.0 / b)
    np.fill_diagonal(expected, 1.0)
    assert np.abs(cover.gram() - expected).max() <= 1e-10
    assert np.linalg.norm(cover.vertices.sum(axis=0)) <= 1e-10


@pytest.mark.parametrize("b", [2, 3, 5])
def test_recursive_simplex_is_isometric_to_centroid_construction(b):
    reference = centroid_simplex(b)
    assert np.allclose(regular_simplex(b).gram(), reference @ reference.T, atol=1e-12)


@pytest.mark.parametrize("b", [0, -1, 2.5])
def test_regular_simplex_rejects_bad_dimension(b):
    with pytest.raises(ValueError):
        regular_simplex(b)


def test_assign_region_breaks_ties_towards_lowest_index():
    cover = regular_simplex(2)
    u = SphereDirection([0.0, -1.0])
    assert region_members(cover, u) == {2, 3}
    assert assign_region(cover, u) == 2


def test_assign_region_matches_vectorised_form():
    cover = regular_simplex(4)
    directions = sample_sphere_array(4, 50, seed=3)
    assert [assign_region(cover, u) for u in directions] == assign_regions(cover, directions).tolist()


@pytest.mark.parametrize("b", [1, 2, 3, 6, 10])
def test_no_region_contains_an_antipodal_pair(b):
    cover = regular_simplex(b)
    directions = sample_sphere_array(b, 100_000, seed=b)
    assert int(antipodal_violations(cover, directions).sum()) == 0


def test_every_region_is_hit():
    cover = regular_simplex(3)
    counts = np.bincount(assign_regions(cover, sample_sphere_array(3, 4000, seed=0)), minlength=5)[1:]
    assert np.all(counts > 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=1, max_size=8))
def test_antipodal_freeness_for_arbitrary_directions(values):
    vector = np.array(values)
    assume(np.linalg.norm(vector) > 1e-3)
    u = SphereDirection.normalized(vector)
    assert not antipodal_free_violation(regular_simplex(u.b), u)


def test_sphere_direction_requires_unit_norm():
    with pytest.raises(ValueError):
        SphereDirection([1.0, 1.0])
    u = SphereDirection.normalized([3.0, 4.0])
    assert np.allclose(u.coords, [0.6, 0.8])
    assert np.array_equal((-u).coords, -u.coords)
    with pytest.raises(ValueError):
        SphereDirection.normalized([0.0, 0.0])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"d": 1, "n": 3, "k": 3},
        {"d": 0, "n": 3, "k": 1},
        {"d": 1, "n": 3, "k": 1, "epsilon": 0.5},
        {"d": 1, "n": 3, "k": 1, "epsilon": 0.0},
    ],
)
def test_delta_map_validation(kwargs):
    with pytest.raises(ValueError):
        DeltaMap(**kwargs)


def test_delta_embed_stays_in_cube_and_flips_with_sign():
    delta = DeltaMap(d=2, n=4, k=1)
    u = sample_sphere(delta.sphere_dim, 1, seed=9)[0]
    plus = delta_embed(delta, u, 1)
    minus = delta_embed(delta, u, -1)
    assert plus.shape == (3, 2)
    assert np.all((plus >= 0.25) & (plus <= 0.75))
    assert np.allclose(plus + minus, 1.0)
    with pytest.raises(ValueError):
        delta_embed(delta, u, 0)
    with pytest.raises(ValueError):
        delta_embed(delta, [1.0, 0.0], 1)


def test_sphere_samples_are_seeded_unit_vectors():
    first = sample_sphere_array(5, 20, seed=1)
    assert np.array_equal(first, sample_sphere_array(5, 20, seed=1))
    assert np.allclose(np.linalg.norm(first, axis=1), 1.0)


def test_sphere_samples_are_centred():
    samples = sample_sphere(3, 100_000, seed=0)
    mean = np.mean([direction.coords for direction in samples], axis=0)
    assert np.linalg.norm(mean) <= 0.02
