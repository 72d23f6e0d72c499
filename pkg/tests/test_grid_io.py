"""Volume container and header+raw file format."""

import os
import struct

import numpy as np
import pytest

from nestedsurf.grid import (BINARY_MASK, REAL_FIELD, VolumeFormatError,
                             VoxelGrid, read_volume, voxel_of_world,
                             world_of_voxel, write_volume)


def _write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _grid(dims, data, kind=REAL_FIELD, spacing=(1.0, 1.0, 1.0),
          origin=(0.0, 0.0, 0.0)):
    return VoxelGrid(dims, spacing, origin, data, kind)


class TestReadVolume:
    def test_known_header_and_raw(self, tmp_path):
        _write_text(tmp_path / "v.mhd",
                    "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
                    "ElementSpacing = 1 1 1\nElementType = MET_FLOAT\n"
                    "ElementDataFile = v.raw\n")
        (tmp_path / "v.raw").write_bytes(struct.pack("<8f", *([1.0] * 8)))
        grid = read_volume(str(tmp_path / "v.mhd"))
        assert grid.dims == (2, 2, 2)
        assert grid.spacing == (1.0, 1.0, 1.0)
        assert grid.kind == REAL_FIELD
        assert np.array_equal(grid.data, np.ones((2, 2, 2), dtype=np.float32))

    def test_raw_size_mismatch(self, tmp_path):
        _write_text(tmp_path / "v.mhd",
                    "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
                    "ElementSpacing = 1 1 1\nElementType = MET_FLOAT\n"
                    "ElementDataFile = v.raw\n")
        (tmp_path / "v.raw").write_bytes(b"\x00" * 16)
        with pytest.raises(VolumeFormatError, match="expected 32 bytes"):
            read_volume(str(tmp_path / "v.mhd"))

    def test_missing_header_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_volume(str(tmp_path / "absent.mhd"))

    def test_missing_raw_file(self, tmp_path):
        _write_text(tmp_path / "v.mhd",
                    "NDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 1 1\n"
                    "ElementType = MET_UCHAR\nElementDataFile = gone.raw\n")
        with pytest.raises(VolumeFormatError, match="not found"):
            read_volume(str(tmp_path / "v.mhd"))

    def test_missing_required_field(self, tmp_path):
        _write_text(tmp_path / "v.mhd",
                    "NDims = 3\nElementSpacing = 1 1 1\n"
                    "ElementType = MET_FLOAT\nElementDataFile = v.raw\n")
        with pytest.raises(VolumeFormatError, match="DimSize"):
            read_volume(str(tmp_path / "v.mhd"))

    def test_unknown_keys_ignored(self, tmp_path):
        _write_text(tmp_path / "v.mhd",
                    "ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\n"
                    "ElementSpacing = 2 2 2\nCompressedData = False\n"
                    "ElementType = MET_UCHAR\nElementDataFile = v.raw\n")
        (tmp_path / "v.raw").write_bytes(b"\x01")
        grid = read_volume(str(tmp_path / "v.mhd"))
        assert grid.kind == BINARY_MASK
        assert grid.data[0, 0, 0] == 1

    def test_unsupported_element_type(self, tmp_path):
        _write_text(tmp_path / "v.mhd",
                    "NDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 1 1\n"
                    "ElementType = MET_SHORT\nElementDataFile = v.raw\n")
        with pytest.raises(VolumeFormatError, match="MET_SHORT"):
            read_volume(str(tmp_path / "v.mhd"))


class TestWriteVolume:
    def test_single_zero_voxel_is_four_bytes(self, tmp_path):
        grid = _grid((1, 1, 1), np.zeros((1, 1, 1), dtype=np.float32))
        write_volume(grid, str(tmp_path / "one.mhd"))
        assert (tmp_path / "one.raw").read_bytes() == b"\x00" * 4

    def test_spacing_header_line(self, tmp_path):
        grid = _grid((1, 1, 1), np.zeros((1, 1, 1), dtype=np.float32),
                     spacing=(0.8, 0.8, 1.0))
        write_volume(grid, str(tmp_path / "s.mhd"))
        header = (tmp_path / "s.mhd").read_text()
        assert "ElementSpacing = 0.8 0.8 1.0" in header

    def test_raw_is_x_fastest(self, tmp_path):
        data = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
        write_volume(_grid((2, 2, 2), data), str(tmp_path / "o.mhd"))
        flat = np.frombuffer((tmp_path / "o.raw").read_bytes(), dtype="<f4")
        # index = x + nx*(y + ny*z): the x axis varies fastest on disk
        expect = [data[x, y, z] for z in range(2) for y in range(2)
                  for x in range(2)]
        assert np.array_equal(flat, np.asarray(expect, dtype=np.float32))

    def test_header_path_must_be_mhd(self, tmp_path):
        grid = _grid((1, 1, 1), np.zeros((1, 1, 1), dtype=np.float32))
        with pytest.raises(ValueError, match="must end in .mhd"):
            write_volume(grid, str(tmp_path / "v.bin"))


class TestRoundTrip:
    def test_random_field_bit_exact(self, tmp_path, philox):
        rng = philox(101)
        data = rng.random((16, 16, 16)).astype(np.float32)
        grid = _grid((16, 16, 16), data, spacing=(0.5, 0.75, 1.25),
                     origin=(-3.0, 4.5, 0.25))
        write_volume(grid, str(tmp_path / "f.mhd"))
        back = read_volume(str(tmp_path / "f.mhd"))
        assert back.dims == grid.dims
        assert back.spacing == grid.spacing
        assert back.origin == grid.origin
        assert back.kind == REAL_FIELD
        assert back.data.tobytes() == data.tobytes()

    def test_random_mask_identical(self, tmp_path, philox):
        rng = philox(102)
        data = (rng.random((32, 32, 32)) < 0.4).astype(np.uint8)
        grid = _grid((32, 32, 32), data, kind=BINARY_MASK)
        write_volume(grid, str(tmp_path / "m.mhd"))
        back = read_volume(str(tmp_path / "m.mhd"))
        assert back.kind == BINARY_MASK
        assert np.array_equal(back.data, data)


class TestVoxelGridInvariants:
    def test_dims_shape_mismatch(self):
        with pytest.raises(ValueError, match="does not match dims"):
            _grid((2, 2, 2), np.zeros((2, 2, 3)))

    def test_nonpositive_spacing(self):
        with pytest.raises(ValueError, match="spacing"):
            _grid((1, 1, 1), np.zeros((1, 1, 1)), spacing=(1.0, 0.0, 1.0))

    def test_mask_values_restricted(self):
        data = np.zeros((2, 2, 2), dtype=np.uint8)
        data[0, 0, 0] = 2
        with pytest.raises(ValueError, match="other than 0 and 1"):
            _grid((2, 2, 2), data, kind=BINARY_MASK)

    def test_data_is_frozen_and_contiguous(self):
        base = np.zeros((4, 4, 4))
        grid = _grid((4, 4, 4), base.transpose(2, 1, 0))
        assert grid.data.flags.c_contiguous
        with pytest.raises(ValueError):
            grid.data[0, 0, 0] = 1.0


class TestCoordinates:
    def test_identity_mapping(self):
        grid = _grid((4, 4, 4), np.zeros((4, 4, 4)))
        assert np.array_equal(world_of_voxel(grid, (3, 0, 0)), (3.0, 0.0, 0.0))

    def test_offset_mapping(self):
        grid = _grid((11, 11, 11), np.zeros((11, 11, 11)),
                     spacing=(0.5, 0.5, 0.5), origin=(-5.0, -5.0, -5.0))
        assert np.array_equal(world_of_voxel(grid, (10, 10, 10)),
                              (0.0, 0.0, 0.0))

    def test_out_of_range_index(self):
        grid = _grid((2, 2, 2), np.zeros((2, 2, 2)))
        with pytest.raises(IndexError):
            world_of_voxel(grid, (2, 0, 0))

    def test_random_inverse_roundtrip(self, philox):
        rng = philox(103)
        for _ in range(25):
            dims = tuple(int(v) for v in rng.integers(1, 12, size=3))
            grid = _grid(dims, np.zeros(dims),
                         spacing=tuple(rng.uniform(0.2, 3.0, size=3)),
                         origin=tuple(rng.uniform(-20.0, 20.0, size=3)))
            idx = tuple(int(rng.integers(0, d)) for d in dims)
            assert voxel_of_world(grid, world_of_voxel(grid, idx)) == idx

    def test_affine_step_property(self, philox):
        rng = philox(104)
        grid = _grid((9, 9, 9), np.zeros((9, 9, 9)),
                     spacing=(0.5, 1.25, 2.0), origin=(3.0, -1.0, 0.5))
        for _ in range(25):
            i = rng.integers(0, 5, size=3)
            d = rng.integers(0, 4, size=3)
            step = world_of_voxel(grid, i + d) - world_of_voxel(grid, i)
            assert np.allclose(step, d * np.asarray(grid.spacing),
                               rtol=0.0, atol=1e-12)
