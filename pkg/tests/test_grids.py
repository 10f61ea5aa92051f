import struct

import numpy as np
import pytest

from uqseg.grids import (
    GridFormatError,
    LabelGrid,
    PixelIndex,
    ScalarGrid,
    UnitVector2,
    export_pgm,
    load_grid,
    save_grid,
)


def test_scalar_round_trip_zeros(tmp_path):
    g = ScalarGrid(np.zeros((3, 3)))
    path = tmp_path / "z.grid"
    save_grid(g, path)
    assert load_grid(path) == g


def test_scalar_round_trip_random_bits(tmp_path):
    rng = np.random.default_rng(42)
    # payload is f32 on disk, so draw representable values
    vals = rng.uniform(size=(128, 128)).astype(np.float32).astype(np.float64)
    g = ScalarGrid(vals)
    path = tmp_path / "r.grid"
    save_grid(g, path)
    back = load_grid(path)
    assert np.array_equal(back.values, g.values)


def test_label_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    g = LabelGrid(rng.integers(0, 4, size=(16, 9)), num_classes=4)
    path = tmp_path / "l.grid"
    save_grid(g, path)
    assert load_grid(path, num_classes=4) == g


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "bad.grid"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(GridFormatError) as err:
        load_grid(path)
    assert err.value.offset == 0


def test_truncated_payload_rejected(tmp_path):
    g = ScalarGrid(np.ones((4, 4)))
    path = tmp_path / "t.grid"
    save_grid(g, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(GridFormatError):
        load_grid(path)


def test_unknown_kind_rejected(tmp_path):
    path = tmp_path / "k.grid"
    path.write_bytes(b"PRGD" + struct.pack("<BII", 9, 1, 1) + b"\x00" * 4)
    with pytest.raises(GridFormatError) as err:
        load_grid(path)
    assert err.value.offset == 4


def test_save_is_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    g = ScalarGrid(rng.normal(size=(7, 5)))
    p1, p2 = tmp_path / "a.grid", tmp_path / "b.grid"
    save_grid(g, p1)
    save_grid(g, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_one_by_one_grid_size(tmp_path):
    path = tmp_path / "one.grid"
    save_grid(ScalarGrid(np.array([[1.5]])), path)
    # 4 magic + 1 kind + 4 height + 4 width + 4 payload
    assert path.stat().st_size == 17


def test_empty_dimension_rejected_before_write():
    with pytest.raises(ValueError):
        ScalarGrid(np.zeros((0, 3)))


def test_row_major_layout(tmp_path):
    g = ScalarGrid(np.arange(12, dtype=np.float64).reshape(3, 4))
    for r in range(3):
        for c in range(4):
            assert g.values.ravel()[r * 4 + c] == g.values[r, c]
    path = tmp_path / "rm.grid"
    save_grid(g, path)
    payload = np.frombuffer(path.read_bytes()[13:], dtype="<f4")
    assert np.array_equal(payload, np.arange(12, dtype=np.float32))


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        ScalarGrid(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        ScalarGrid(np.array([[np.inf, 0.0]]))


def test_label_invariants():
    with pytest.raises(ValueError):
        LabelGrid(np.array([[0, 3]]), num_classes=3)
    with pytest.raises(ValueError):
        LabelGrid(np.array([[0, -1]]), num_classes=3)
    with pytest.raises(ValueError):
        LabelGrid(np.array([[0, 1]]), num_classes=1)
    with pytest.raises(ValueError):
        LabelGrid(np.array([[0, 1]]), num_classes=300)


def test_grids_immutable():
    g = ScalarGrid(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0


def test_pgm_export(tmp_path):
    g = ScalarGrid(np.array([[0.0, 0.5], [0.75, 1.0]]))
    path = tmp_path / "x.pgm"
    export_pgm(g, path)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n2 2\n255\n")
    assert blob[-4:] == bytes([0, 128, 191, 255])


def test_pixel_index_and_unit_vector():
    with pytest.raises(ValueError):
        PixelIndex(-1, 0)
    assert PixelIndex(2, 3).in_bounds(4, 4)
    assert not PixelIndex(2, 3).in_bounds(4, 3)
    UnitVector2(0.0, 1.0)
    UnitVector2(np.sqrt(0.5), -np.sqrt(0.5))
    with pytest.raises(ValueError):
        UnitVector2(0.5, 0.5)
