import json

import numpy as np
import pytest

from gridrank import grid
from gridrank.errors import DataError


@pytest.fixture(scope="module")
def small():
    return grid.generate_synthetic(7, 4, 4, 30, 1)


class TestLocationIndex:
    def test_row_major_bijection(self):
        cols = 5
        seen = set()
        for r in range(3):
            for c in range(cols):
                loc = grid.location_id(r, c, cols)
                assert grid.location_rc(loc, cols) == (r, c)
                seen.add(loc)
        assert seen == set(range(15))

    def test_coordinates_follow_location_order(self):
        coords = grid.cell_coordinates(2, 3)
        assert coords.tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]


class TestWindows:
    def test_counts_and_targets(self):
        g = grid.generate_synthetic(1, 4, 4, 30, 1)
        g10 = grid.StGrid(rows=g.rows, cols=g.cols, periods=10, temporal=g.temporal[:10],
                          spatial=g.spatial, spatiotemporal=g.spatiotemporal[:, :, :10],
                          risk=g.risk[:, :, :10])
        ws = grid.windows(g10, 7)
        assert [w.target for w in ws] == [7, 8, 9]
        assert all(list(w.inputs()) == list(range(w.target - 7, w.target)) for w in ws)

    def test_single_window(self, small):
        g8 = grid.StGrid(rows=small.rows, cols=small.cols, periods=8,
                         temporal=small.temporal[:8], spatial=small.spatial,
                         spatiotemporal=small.spatiotemporal[:, :, :8],
                         risk=small.risk[:, :, :8])
        assert len(grid.windows(g8, 7)) == 1

    def test_length_equal_to_periods_is_error(self, small):
        with pytest.raises(DataError, match="shorter than the study period"):
            grid.windows(small, small.periods)

    def test_window_validates_bounds(self):
        with pytest.raises(DataError):
            grid.Window(target=3, length=7)


class TestSyntheticGenerator:
    def test_deterministic_bit_identical(self):
        a = grid.generate_synthetic(7, 8, 8, 60, 3)
        b = grid.generate_synthetic(7, 8, 8, 60, 3)
        for name in ("temporal", "spatial", "spatiotemporal", "risk"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name

    def test_default_feature_widths(self, small):
        assert (small.d_t, small.d_s, small.d_st) == (4, 6, 3)
        assert small.temporal.shape == (30, 4)
        assert small.risk.min() >= 0

    def test_seeds_differ(self):
        a = grid.generate_synthetic(1, 4, 4, 30, 1)
        b = grid.generate_synthetic(2, 4, 4, 30, 1)
        assert not np.array_equal(a.risk, b.risk)

    def test_hotspot_peak_matches_planted_rate(self):
        g, truth = grid.generate_synthetic(11, 8, 8, 90, 1, return_truth=True)
        mean_risk = g.risk.mean(axis=2)
        peak = np.unravel_index(np.argmax(mean_risk), mean_risk.shape)
        center = truth.centers[0]
        distance = np.hypot(peak[0] - center[0], peak[1] - center[1])
        assert distance <= 2.0 * truth.widths[0]

    def test_all_zero_rate_rejected(self):
        with pytest.raises(DataError, match="zero everywhere"):
            grid.generate_synthetic(3, 4, 4, 30, 1, base_rate=0.0, amplitude=0.0)

    @pytest.mark.parametrize("dims", [(3, 4, 30, 1), (4, 3, 30, 1), (4, 4, 29, 1), (4, 4, 30, 0)])
    def test_invalid_dimensions(self, dims):
        with pytest.raises(DataError, match="invalid dimensions"):
            grid.generate_synthetic(1, *dims)


class TestManifestIO:
    def test_round_trip_bit_exact(self, small, tmp_path):
        manifest = grid.save_grid(small, tmp_path / "ds")
        loaded = grid.load_grid(manifest)
        assert (loaded.rows, loaded.cols, loaded.periods) == (4, 4, 30)
        for name in ("temporal", "spatial", "spatiotemporal", "risk"):
            assert np.array_equal(getattr(loaded, name), getattr(small, name)), name
        assert loaded.normalization == json.loads(json.dumps(small.normalization))

    def test_load_accepts_directory(self, small, tmp_path):
        grid.save_grid(small, tmp_path / "ds")
        loaded = grid.load_grid(tmp_path / "ds")
        assert loaded.periods == small.periods

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing file"):
            grid.load_grid(tmp_path / "nope" / "manifest.json")

    def test_missing_tensor_file(self, small, tmp_path):
        manifest = grid.save_grid(small, tmp_path / "ds")
        (tmp_path / "ds" / "y.csv").unlink()
        with pytest.raises(DataError, match="missing file"):
            grid.load_grid(manifest)

    def test_wrong_T_names_axis(self, small, tmp_path):
        manifest = grid.save_grid(small, tmp_path / "ds")
        payload = json.loads(manifest.read_text())
        payload["T"] = small.periods + 2
        manifest.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="f_t.*T"):
            grid.load_grid(manifest)

    def test_extra_T_rows_named(self, small, tmp_path):
        manifest = grid.save_grid(small, tmp_path / "ds")
        payload = json.loads(manifest.read_text())
        payload["T"] = small.periods - 1
        manifest.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="T"):
            grid.load_grid(manifest)

    def test_nan_reported_with_coordinates(self, small, tmp_path):
        manifest = grid.save_grid(small, tmp_path / "ds")
        y_path = tmp_path / "ds" / "y.csv"
        lines = y_path.read_text().splitlines()
        parts = lines[1].split(",")  # first record: row 0, col 0, t 0
        parts[-1] = "nan"
        lines[1] = ",".join(parts)
        y_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match=r"non-finite value in y at \(0, 0, 0\)"):
            grid.load_grid(manifest)

    def test_negative_risk_rejected(self, small, tmp_path):
        manifest = grid.save_grid(small, tmp_path / "ds")
        y_path = tmp_path / "ds" / "y.csv"
        lines = y_path.read_text().splitlines()
        parts = lines[1].split(",")
        parts[-1] = "-1.0"
        lines[1] = ",".join(parts)
        y_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="negative risk"):
            grid.load_grid(manifest)
