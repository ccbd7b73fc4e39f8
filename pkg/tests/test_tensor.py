import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensor_gp.errors import DimensionError, ParameterError
from tensor_gp.tensor import DesignTensor, GridShape, canonical_index, stack, vectorize, voxel_coords

shapes = st.builds(GridShape, st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(1, 3))


@given(shapes, st.data())
def test_canonical_index_matches_row_major(shape, data):
    i = data.draw(st.integers(0, shape.v - 1))
    j = data.draw(st.integers(0, shape.h - 1))
    k = data.draw(st.integers(0, shape.w - 1))
    a = canonical_index(i, j, k, shape)
    assert a == np.ravel_multi_index((i, j, k), shape.spatial)
    assert voxel_coords(a, shape) == (i, j, k)


def test_canonical_index_hand_values():
    s = GridShape(6, 3, 1)
    assert canonical_index(0, 0, 0, s) == 0
    assert canonical_index(0, 1, 0, s) == 1
    assert canonical_index(1, 0, 0, s) == 3
    assert canonical_index(5, 2, 0, s) == 17
    s3 = GridShape(6, 6, 3)
    assert canonical_index(0, 0, 2, s3) == 2
    assert canonical_index(0, 1, 0, s3) == 3
    assert canonical_index(1, 0, 0, s3) == 18


@pytest.mark.parametrize("bad", [(6, 0, 0), (0, 3, 0), (0, 0, 1), (-1, 0, 0)])
def test_canonical_index_out_of_range(bad):
    with pytest.raises(IndexError):
        canonical_index(*bad, GridShape(6, 3, 1))


def test_voxel_coords_out_of_range():
    with pytest.raises(IndexError):
        voxel_coords(18, GridShape(6, 3, 1))


def test_grid_shape_parse_and_str():
    s = GridShape.parse("6x6x3x2")
    assert (s.v, s.h, s.w, s.p) == (6, 6, 3, 2)
    assert s.n_voxels == 108 and s.size == 216
    assert str(s) == "6x6x3x2"
    assert GridShape.parse("6x3x1") == GridShape(6, 3, 1, 1)
    with pytest.raises((ParameterError, ValueError)):
        GridShape.parse("6x3")
    with pytest.raises((ParameterError, ValueError)):
        GridShape(0, 3, 1)


@given(shapes, st.integers(0, 2**31 - 1))
@settings(max_examples=40)
def test_design_tensor_layout_roundtrip(shape, seed):
    arr = np.random.default_rng(seed).normal(size=(shape.v, shape.h, shape.w, shape.p))
    x = DesignTensor.from_array(arr)
    assert np.array_equal(x.to_array(), arr)
    # properties outermost, then row-major voxels
    assert np.array_equal(x.values, np.moveaxis(arr, -1, 0).ravel())
    for q in range(shape.p):
        assert np.array_equal(vectorize(x, q), arr[..., q].ravel())
    i, j, k, q = shape.v - 1, 0, shape.w - 1, shape.p - 1
    assert x[i, j, k, q] == arr[i, j, k, q]


def test_design_tensor_is_read_only_and_hashable():
    x = DesignTensor(GridShape(2, 2, 1), np.arange(4.0))
    with pytest.raises(ValueError):
        x.values[0] = 1.0
    y = DesignTensor(GridShape(2, 2, 1), np.arange(4.0))
    assert x == y and hash(x) == hash(y)


def test_design_tensor_bad_length():
    with pytest.raises(DimensionError):
        DesignTensor(GridShape(2, 2, 1), np.arange(5.0))


def test_stack_shapes():
    s = GridShape(3, 2, 1, 2)
    xs = [DesignTensor(s, np.arange(12.0) + n) for n in range(4)]
    b = stack(xs)
    assert b.shape == (4, 2, 6)
    assert np.array_equal(b[1].ravel(), xs[1].values)
    assert np.array_equal(stack(b.reshape(4, 12), s), b)
    with pytest.raises(DimensionError):
        stack([xs[0], DesignTensor(GridShape(2, 3, 1, 2), np.zeros(12))])
