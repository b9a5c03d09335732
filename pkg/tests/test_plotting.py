"""Heatmap rendering and legend tests."""

import csv

import numpy as np
import pytest

from demandgrid.errors import ConfigError, DataError
from demandgrid.plotting import (
    COLORMAPS,
    colormap_lut,
    read_heatmap,
    render_heatmap,
    write_heatmap,
)
from demandgrid.raster import write_image16


class TestColormapLut:
    def test_shape_and_dtype(self):
        for name in COLORMAPS:
            lut = colormap_lut(name)
            assert lut.shape == (256, 3)
            assert lut.dtype == np.uint8

    def test_endpoints_match_anchor_colors(self):
        for name, stops in COLORMAPS.items():
            lut = colormap_lut(name)
            assert tuple(lut[0]) == stops[0][1]
            assert tuple(lut[255]) == stops[-1][1]

    def test_gray_is_identity_ramp(self):
        lut = colormap_lut("gray")
        expected = np.repeat(np.arange(256, dtype=np.uint8)[:, None], 3, axis=1)
        np.testing.assert_array_equal(lut, expected)

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError, match="unknown colormap"):
            colormap_lut("plasma")


class TestRenderHeatmap:
    def test_zeros_map_to_level_zero(self):
        lut = colormap_lut("viridis")
        rgb = render_heatmap(np.zeros((3, 4)), lut)
        assert rgb.shape == (3, 4, 3)
        assert (rgb == lut[0]).all()

    def test_extremes_and_midpoint(self):
        lut = colormap_lut("viridis")
        rgb = render_heatmap(np.array([[0.0, 5.0, 10.0]]), lut, vmax=10.0)
        np.testing.assert_array_equal(rgb[0, 0], lut[0])
        np.testing.assert_array_equal(rgb[0, 1], lut[128])
        np.testing.assert_array_equal(rgb[0, 2], lut[255])

    def test_values_above_vmax_saturate(self):
        lut = colormap_lut("heat")
        rgb = render_heatmap(np.array([[50.0]]), lut, vmax=10.0)
        np.testing.assert_array_equal(rgb[0, 0], lut[255])

    def test_default_vmax_is_array_max(self):
        lut = colormap_lut("viridis")
        a = np.array([[0, 5], [10, 2]], dtype=np.uint16)
        rgb = render_heatmap(a, lut)
        np.testing.assert_array_equal(rgb[1, 0], lut[255])

    def test_all_zero_array_stays_at_low_end(self):
        lut = colormap_lut("viridis")
        rgb = render_heatmap(np.zeros((2, 2), dtype=np.uint16), lut)
        assert (rgb == lut[0]).all()

    def test_monotone_values_give_monotone_levels(self):
        lut = colormap_lut("gray")
        vals = np.linspace(0.0, 30.0, 100)[None, :]
        rgb = render_heatmap(vals, lut, vmax=30.0)
        levels = rgb[0, :, 0].astype(int)
        assert (np.diff(levels) >= 0).all()

    def test_bad_inputs_rejected(self):
        lut = colormap_lut("gray")
        with pytest.raises(DataError, match="2-D"):
            render_heatmap(np.zeros(4), lut)
        with pytest.raises(DataError, match="negative"):
            render_heatmap(np.array([[-1.0]]), lut)
        with pytest.raises(DataError, match="non-finite"):
            render_heatmap(np.array([[np.nan]]), lut)
        with pytest.raises(ConfigError, match="vmax"):
            render_heatmap(np.ones((2, 2)), lut, vmax=0.0)
        with pytest.raises(ConfigError, match="lut"):
            render_heatmap(np.ones((2, 2)), lut[:100])


class TestWriteHeatmap:
    def test_png_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        counts = rng.integers(0, 300, size=(12, 9)).astype(np.uint16)
        png, legend = write_heatmap(counts, tmp_path / "frame.png")
        assert png.name == "frame.png"
        assert legend.name == "frame_legend.csv"
        expected = render_heatmap(counts, colormap_lut("viridis"))
        np.testing.assert_array_equal(read_heatmap(png), expected)

    def test_legend_levels_values_colors(self, tmp_path):
        counts = np.array([[0, 51]], dtype=np.uint16)
        _, legend = write_heatmap(counts, tmp_path / "f.png", vmax=51.0)
        with open(legend, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 256
        lut = colormap_lut("viridis")
        for i in (0, 100, 255):
            assert int(rows[i]["level"]) == i
            assert float(rows[i]["value"]) == pytest.approx(i * 51.0 / 255)
            got = (int(rows[i]["r"]), int(rows[i]["g"]), int(rows[i]["b"]))
            assert got == tuple(lut[i])
        assert float(rows[255]["value"]) == 51.0

    def test_rewrite_is_byte_identical(self, tmp_path):
        counts = np.arange(20, dtype=np.uint16).reshape(4, 5)
        p1, l1 = write_heatmap(counts, tmp_path / "a.png", colormap="heat")
        p2, l2 = write_heatmap(counts, tmp_path / "b.png", colormap="heat")
        assert p1.read_bytes() == p2.read_bytes()
        assert l1.read_bytes() == l2.read_bytes()

    def test_binary_mask_uses_ramp_ends(self, tmp_path):
        mask = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        png, _ = write_heatmap(mask, tmp_path / "mask.png", colormap="gray")
        rgb = read_heatmap(png)
        np.testing.assert_array_equal(rgb[0, 0], [0, 0, 0])
        np.testing.assert_array_equal(rgb[0, 1], [255, 255, 255])

    def test_read_rejects_grayscale(self, tmp_path):
        write_image16(np.zeros((2, 2), dtype=np.uint16), tmp_path / "g.png")
        with pytest.raises(DataError, match="RGB"):
            read_heatmap(tmp_path / "g.png")
