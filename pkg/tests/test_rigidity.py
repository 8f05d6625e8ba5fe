import numpy as np
import pytest

from janossy_bounds.architectures import EncoderSpec, random_encoder
from janossy_bounds.constructions import build_axis_set, build_grid
from janossy_bounds.numerics import affine_mlp
from janossy_bounds.rigidity import (
    CubeIncrement,
    alternating_difference,
    check_axes_to_grid,
    check_rigidity,
    product_map,
    random_increment,
    random_tails,
)

SETTINGS = [(1, 3, 1), (1, 4, 2), (2, 3, 1), (2, 4, 2), (1, 5, 3)]


def test_alternating_difference_of_indexed_linear_encoder():
    members = tuple(affine_mlp([[float(i)]]) for i in (1, 2))
    enc = EncoderSpec("indexed_janossy", 1, 2, 1, 1, members)
    inc = CubeIncrement([[0.2]], [[0.3]])
    for tail in (0.0, 0.7, 1.0):
        assert alternating_difference(enc, inc, [[tail]])[0] == pytest.approx(0.3, abs=1e-15)


def test_alternating_difference_of_callable():
    def squared_sum(x):
        return np.array([np.sum(x) ** 2])

    inc = CubeIncrement([[0.0], [0.0]], [[1.0], [1.0]])
    for tail in (0.0, 0.4, 0.9):
        assert alternating_difference(squared_sum, inc, [[tail]])[0] == pytest.approx(2.0)


def test_zero_increments_give_zero():
    enc = random_encoder("shared_janossy", 1, 3, 2, 2, seed=1)
    inc = CubeIncrement([[0.3], [0.6]], [[0.0], [0.0]])
    assert np.array_equal(alternating_difference(enc, inc, [[0.5]]), np.zeros(2))


@pytest.mark.parametrize("d,n,k", SETTINGS)
def test_sum_pooled_encoders_are_rigid(d, n, k):
    rng = np.random.default_rng(100 + 10 * d + n + k)
    for index in range(20):
        enc = random_encoder("indexed_janossy", d, n, k, 1 + index % 4, seed=index)
        report = check_rigidity(enc, random_increment(d, k, rng), random_tails(d, n, k, 20, rng))
        assert report.passed, report.to_dict()
        assert report.max_deviation <= 1e-9
        assert (report.n, report.k, report.tail_count) == (n, k, 20)


@pytest.mark.parametrize("d,n,k", [(1, 3, 2), (2, 4, 1)])
def test_shared_encoders_are_rigid_through_their_indexed_embedding(d, n, k):
    rng = np.random.default_rng(5)
    enc = random_encoder("shared_janossy", d, n, k, 3, seed=9)
    assert check_rigidity(enc, random_increment(d, k, rng), random_tails(d, n, k, 20, rng)).passed


@pytest.mark.parametrize("d,n,k", [(1, 3, 1), (1, 4, 2), (2, 3, 1)])
def test_product_map_is_not_rigid(d, n, k):
    rng = np.random.default_rng(7)
    report = check_rigidity(product_map, random_increment(d, k, rng), random_tails(d, n, k, 20, rng))
    assert not report.passed
    assert report.max_deviation > 1e-3


def test_rigidity_needs_two_tails():
    enc = random_encoder("deep_sets", 1, 3, 1, 1, seed=0)
    with pytest.raises(ValueError):
        check_rigidity(enc, CubeIncrement([[0.1]], [[0.2]]), [np.zeros((2, 1))])


def test_cube_increment_must_stay_in_unit_cube():
    with pytest.raises(ValueError):
        CubeIncrement([[0.8]], [[0.4]])
    with pytest.raises(ValueError):
        CubeIncrement([[0.1, 0.2]], [[0.1]])
    inc = CubeIncrement([[0.1], [0.2]], [[0.3], [0.4]])
    assert [sign for sign, _ in inc.vertices()] == [1, -1, -1, 1]


def test_encoder_shape_mismatch_is_reported():
    enc = random_encoder("shared_janossy", 1, 4, 2, 1, seed=0)
    with pytest.raises(ValueError):
        alternating_difference(enc, CubeIncrement([[0.1]], [[0.2]]), np.zeros((3, 1)))


def test_equal_tails_propagate_from_axes_to_grid():
    grid = build_grid(1, 5, 2)
    enc = random_encoder("indexed_janossy", 1, 5, 2, 2, seed=3)
    tail = np.full((3, 1), 0.4)
    report = check_axes_to_grid(enc, grid, build_axis_set(grid), tail, tail.copy(), tolerance=1e-12)
    assert report.precondition_ok and report.passed
    assert report.axis_deviation == 0.0 and report.grid_deviation == 0.0
    assert report.amplification == 4


def test_single_axis_point_propagates_for_k_one():
    grid = build_grid(1, 3, 1)
    axis = build_axis_set(grid)
    assert axis.tuples == ((0,),)
    # phi_i(x) = x for every slot, so any permutation of the tail leaves every latent unchanged.
    enc = EncoderSpec("indexed_janossy", 1, 3, 1, 1, tuple(affine_mlp([[1.0]]) for _ in range(3)))
    report = check_axes_to_grid(enc, grid, axis, [[0.2], [0.9]], [[0.9], [0.2]], tolerance=1e-12)
    assert report.precondition_ok and report.passed
    assert report.grid_deviation <= 2 * 1e-12


def test_failed_precondition_is_reported_not_passed():
    grid = build_grid(1, 5, 2)
    enc = random_encoder("indexed_janossy", 1, 5, 2, 2, seed=3)
    tail_u, tail_v = random_tails(1, 5, 2, 2, np.random.default_rng(0))
    report = check_axes_to_grid(enc, grid, build_axis_set(grid), tail_u, tail_v, tolerance=1e-12)
    assert not report.precondition_ok
    assert not report.passed
    assert report.to_dict()["worst_grid_tuple"] == list(report.worst_grid_tuple)
