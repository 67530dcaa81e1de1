"""Containers, MetaImage I/O, interpolation and warping."""

import numpy as np
import pytest

from regmap.volume import (DisplacementField, FormatError, LandmarkPairSet,
                           Volume, load_dvf, read_landmarks, read_mhd,
                           sample_dvf, save_dvf, trilinear_sample, warp,
                           write_landmarks, write_mhd)


def make_volume(dims=(4, 4, 4), spacing=(1.0, 1.0, 1.0), seed=0):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0, 100, size=dims)
    return Volume(data, spacing, (0.0, 0.0, 0.0))


class TestContainers:
    def test_world_mapping(self):
        v = Volume(np.zeros((3, 4, 5)), (2.0, 3.0, 4.0), (10.0, 20.0, 30.0))
        assert np.allclose(v.index_to_world((1, 1, 1)), (12.0, 23.0, 34.0))
        assert np.allclose(v.world_to_index((12.0, 23.0, 34.0)), (1, 1, 1))

    def test_voxel_centers_shape(self):
        v = make_volume((3, 4, 5))
        centers = v.voxel_centers()
        assert centers.shape == (3, 4, 5, 3)
        assert np.allclose(centers[2, 3, 4], (2, 3, 4))

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            Volume(np.zeros((2, 2, 2)), (0.0, 1.0, 1.0), (0, 0, 0))

    def test_rejects_non_finite(self):
        data = np.zeros((2, 2, 2))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Volume(data, (1, 1, 1), (0, 0, 0))

    def test_dvf_shape_validation(self):
        with pytest.raises(ValueError):
            DisplacementField(np.zeros((2, 2, 2, 2)), (1, 1, 1), (0, 0, 0))

    def test_landmarks_validation(self):
        with pytest.raises(ValueError):
            LandmarkPairSet(np.zeros((2, 3)), np.zeros((3, 3)))


class TestMetaImage:
    @pytest.mark.parametrize("dtype", ["u1", "<i2", "<f4"])
    def test_round_trip_bit_exact(self, tmp_path, dtype):
        rng = np.random.default_rng(1)
        data = (rng.uniform(0, 100, size=(3, 4, 5))).astype(dtype)
        v = Volume(data, (0.78, 0.78, 2.5), (1.0, -2.0, 3.0))
        write_mhd(v, tmp_path / "v.mhd")
        back = read_mhd(tmp_path / "v.mhd")
        assert back.data.tobytes() == data.tobytes()
        assert np.array_equal(back.spacing, v.spacing)
        assert np.array_equal(back.origin, v.origin)

    def test_local_mha_round_trip(self, tmp_path):
        v = make_volume()
        write_mhd(v, tmp_path / "v.mha")
        back = read_mhd(tmp_path / "v.mha")
        assert np.allclose(back.data, np.float32(v.data))
        assert not (tmp_path / "v.raw").exists()

    def test_hand_built_header(self, tmp_path):
        payload = np.full(64, 7.0, dtype="<f4").tobytes()
        header = (b"ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\n"
                  b"ElementSpacing = 0.78 0.78 2.5\n"
                  b"ElementType = MET_FLOAT\nElementDataFile = LOCAL\n")
        (tmp_path / "c.mha").write_bytes(header + payload)
        v = read_mhd(tmp_path / "c.mha")
        assert v.dims == (4, 4, 4)
        assert np.allclose(v.spacing, (0.78, 0.78, 2.5))
        assert np.allclose(v.origin, 0.0)  # Offset defaults to zero
        assert np.all(v.data == 7.0)

    def test_single_voxel_payload_is_4_bytes(self, tmp_path):
        v = Volume(np.ones((1, 1, 1), dtype="<f4"), (1, 1, 1), (0, 0, 0))
        write_mhd(v, tmp_path / "one.mhd")
        assert (tmp_path / "one.raw").stat().st_size == 4

    def test_constant_volume_repeats_pattern(self, tmp_path):
        v = Volume(np.full((2, 3, 4), 1.5, dtype="<f4"), (1, 1, 1), (0, 0, 0))
        write_mhd(v, tmp_path / "c.mhd")
        raw = (tmp_path / "c.raw").read_bytes()
        assert raw == np.float32(1.5).tobytes() * 24

    def test_float64_narrowed_to_float32(self, tmp_path):
        v = Volume(np.full((2, 2, 2), 1.0 / 3.0), (1, 1, 1), (0, 0, 0))
        write_mhd(v, tmp_path / "v.mhd")
        back = read_mhd(tmp_path / "v.mhd")
        assert back.data.dtype == np.dtype("<f4")
        assert np.allclose(back.data, 1.0 / 3.0, atol=1e-7)

    def test_file_order_is_x_fastest(self, tmp_path):
        data = np.arange(24, dtype="<f4").reshape(2, 3, 4)
        write_mhd(Volume(data, (1, 1, 1), (0, 0, 0)), tmp_path / "o.mhd")
        raw = np.frombuffer((tmp_path / "o.raw").read_bytes(), dtype="<f4")
        # First two raw values step along x.
        assert raw[0] == data[0, 0, 0] and raw[1] == data[1, 0, 0]

    def test_ndims_2_rejected(self, tmp_path):
        (tmp_path / "b.mhd").write_bytes(
            b"ObjectType = Image\nNDims = 2\nDimSize = 4 4\n"
            b"ElementSpacing = 1 1\nElementType = MET_FLOAT\n"
            b"ElementDataFile = LOCAL\n")
        with pytest.raises(FormatError, match="dimensionality"):
            read_mhd(tmp_path / "b.mhd")

    def test_missing_key_rejected(self, tmp_path):
        (tmp_path / "b.mhd").write_bytes(
            b"ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\n"
            b"ElementType = MET_FLOAT\nElementDataFile = LOCAL\n" + b"\0" * 4)
        with pytest.raises(FormatError, match="ElementSpacing"):
            read_mhd(tmp_path / "b.mhd")

    def test_duplicate_key_rejected(self, tmp_path):
        (tmp_path / "b.mhd").write_bytes(
            b"ObjectType = Image\nObjectType = Image\nNDims = 3\n"
            b"DimSize = 1 1 1\nElementSpacing = 1 1 1\n"
            b"ElementType = MET_FLOAT\nElementDataFile = LOCAL\n" + b"\0" * 4)
        with pytest.raises(FormatError, match="duplicate"):
            read_mhd(tmp_path / "b.mhd")

    def test_big_endian_rejected(self, tmp_path):
        (tmp_path / "b.mhd").write_bytes(
            b"ObjectType = Image\nNDims = 3\nBinaryDataByteOrderMSB = True\n"
            b"DimSize = 1 1 1\nElementSpacing = 1 1 1\n"
            b"ElementType = MET_FLOAT\nElementDataFile = LOCAL\n" + b"\0" * 4)
        with pytest.raises(FormatError, match="big-endian"):
            read_mhd(tmp_path / "b.mhd")

    def test_payload_size_checked(self, tmp_path):
        (tmp_path / "b.mhd").write_bytes(
            b"ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
            b"ElementSpacing = 1 1 1\nElementType = MET_FLOAT\n"
            b"ElementDataFile = LOCAL\n" + b"\0" * 7)
        with pytest.raises(FormatError, match="payload"):
            read_mhd(tmp_path / "b.mhd")


class TestLandmarks:
    def test_round_trip(self, tmp_path):
        pairs = LandmarkPairSet([[1, 2, 3], [4, 5, 6]],
                                [[1.5, 2.5, 3.5], [4, 5, 6]], "case")
        write_landmarks(pairs, tmp_path / "lm.txt")
        back = read_landmarks(tmp_path / "lm.txt", "case")
        assert np.allclose(back.fixed_points, pairs.fixed_points)
        assert np.allclose(back.moving_points, pairs.moving_points)

    def test_comments_and_blanks_skipped(self, tmp_path):
        (tmp_path / "lm.txt").write_text(
            "# header\n\n1 2 3 4 5 6  # trailing comment\n")
        pairs = read_landmarks(tmp_path / "lm.txt")
        assert len(pairs) == 1

    def test_wrong_column_count_rejected(self, tmp_path):
        (tmp_path / "lm.txt").write_text("1 2 3 4 5\n")
        with pytest.raises(FormatError, match="6 values"):
            read_landmarks(tmp_path / "lm.txt")


class TestInterpolation:
    def test_on_grid_returns_stored_value(self):
        v = make_volume(seed=3)
        assert trilinear_sample(v, (2.0, 3.0, 1.0)) == pytest.approx(
            v.data[2, 3, 1])

    def test_midpoint_halves(self):
        data = np.zeros((2, 1, 1))
        data[1] = 10.0
        v = Volume(data, (2.0, 1.0, 1.0), (0, 0, 0))
        assert trilinear_sample(v, (1.0, 0.0, 0.0)) == pytest.approx(5.0)

    def test_outside_clamps_to_boundary(self):
        v = make_volume(seed=4)
        far = trilinear_sample(v, (-100.0, -100.0, -100.0))
        assert far == pytest.approx(v.data[0, 0, 0])

    def test_linear_function_reproduced_exactly(self):
        v = Volume(np.fromfunction(lambda i, j, k: 2 * i + 3 * j - k,
                                   (5, 5, 5)), (1, 1, 1), (0, 0, 0))
        pts = np.random.default_rng(0).uniform(0, 4, size=(50, 3))
        assert np.allclose(trilinear_sample(v, pts),
                           2 * pts[:, 0] + 3 * pts[:, 1] - pts[:, 2])


class TestWarp:
    def test_zero_field_identity(self):
        v = make_volume((5, 5, 5), seed=5)
        dvf = DisplacementField(np.zeros((5, 5, 5, 3)), v.spacing, v.origin)
        assert np.allclose(warp(v, dvf).data, v.data)

    def test_constant_shift_is_index_shift(self):
        v = make_volume((6, 4, 4), spacing=(2.0, 1.0, 1.0), seed=6)
        u = np.zeros((6, 4, 4, 3))
        u[..., 0] = 2.0  # one voxel along x
        out = warp(v, DisplacementField(u, v.spacing, v.origin))
        assert np.allclose(out.data[:-1], v.data[1:])
        assert np.allclose(out.data[-1], v.data[-1])  # clamped

    def test_known_inverse_round_trip(self):
        # Smooth volume, small constant field: warp by u then by -u.
        x = np.linspace(0, np.pi, 12)
        data = np.sin(x)[:, None, None] * np.cos(x)[None, :, None] \
            * np.ones(12)[None, None, :]
        v = Volume(data, (1, 1, 1), (0, 0, 0))
        u = np.full((12, 12, 12, 3), 0.3)
        fwd = warp(v, DisplacementField(u, v.spacing, v.origin))
        back = warp(fwd, DisplacementField(-u, v.spacing, v.origin))
        interior = (slice(2, -2),) * 3
        assert np.max(np.abs(back.data[interior] - v.data[interior])) < 0.05

    def test_sample_dvf_interpolates_vectors(self):
        u = np.zeros((3, 3, 3, 3))
        u[..., 1] = 4.0
        dvf = DisplacementField(u, (1, 1, 1), (0, 0, 0))
        assert np.allclose(sample_dvf(dvf, (1.5, 0.5, 0.5)), (0, 4.0, 0))


class TestDvfFiles:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        u = rng.normal(size=(4, 4, 4, 3)).astype("<f4").astype(float)
        dvf = DisplacementField(u, (1, 1, 2.5), (0, 0, -5))
        save_dvf(dvf, tmp_path, prefix="dvf")
        back = load_dvf(tmp_path, prefix="dvf")
        assert np.array_equal(back.vectors, u)
        assert {p.name for p in tmp_path.glob("*.mhd")} == {
            "dvf_dx.mhd", "dvf_dy.mhd", "dvf_dz.mhd"}
