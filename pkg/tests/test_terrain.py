import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegait import terrain
from sparsegait.terrain import (TerrainType, generate, height_at, height_scan,
                                level_params, sparsity)

SE = TerrainType.STONES_EVERYWHERE


class TestLevelParams:
    @pytest.mark.parametrize("level,expected", [
        (0, (0.92, 0.08, 0.036, 0.01)),
        (5, (0.52, 0.18, 0.082, 0.06)),
        (9, (0.20, 0.26, 0.118, 0.10)),
    ])
    def test_stones_anchors(self, level, expected):
        p = level_params(SE, level)
        got = (p.stone_size, p.stone_gap, p.max_shift, p.max_height)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_level3_interpolation(self):
        p = level_params(SE, 3)
        assert p.stone_size == pytest.approx(0.68, abs=1e-9)
        assert p.stone_gap == pytest.approx(0.14, abs=1e-9)
        assert p.max_shift == pytest.approx(0.0633, abs=1e-3)
        assert p.max_height == pytest.approx(0.04, abs=1e-9)

    def test_monotone_in_level(self):
        params = [level_params(SE, lvl) for lvl in range(10)]
        for a, b in zip(params, params[1:]):
            assert b.stone_size < a.stone_size
            assert b.stone_gap > a.stone_gap
            assert b.max_shift > a.max_shift
            assert b.max_height > a.max_height

    @pytest.mark.parametrize("level", [-1, 10, 3.5, "2"])
    def test_level_out_of_range(self, level):
        with pytest.raises(ValueError):
            level_params(SE, level)

    @given(st.sampled_from(list(TerrainType)), st.integers(0, 9))
    @settings(max_examples=40, deadline=None)
    def test_params_valid_everywhere(self, terrain_type, level):
        p = level_params(terrain_type, level)
        assert p.stone_size > 0 and p.stone_gap >= 0
        assert p.max_shift > 0 and p.max_height >= 0


class TestSparsity:
    @pytest.mark.parametrize("level,expected", [
        (0, 0.154), (5, 0.448), (9, 0.811),
    ])
    def test_table_values(self, level, expected):
        assert sparsity(level_params(SE, level)) == pytest.approx(
            expected, abs=1e-3)

    def test_zero_gap_fully_covered(self):
        p = terrain.TerrainParams(SE, 0, stone_size=0.9, stone_gap=0.0,
                                  max_shift=0.03, max_height=0.01)
        assert sparsity(p) == 0.0

    def test_non_stones_rejected(self):
        with pytest.raises(ValueError):
            sparsity(level_params(TerrainType.BALANCE_BEAMS, 0))


def _mc_steppable_fraction(grid, rng, n=200_000):
    p = grid.params
    pitch = p.stone_size + p.stone_gap
    xs = rng.uniform(grid.field_x[0], grid.field_x[1], n)
    n_py = int(terrain.TERRAIN_WIDTH / pitch)
    half = n_py * pitch / 2
    ys = rng.uniform(-half, half, n)
    _, step = height_at(grid, xs, ys)
    return step.mean()


class TestGenerate:
    def test_monte_carlo_matches_analytic(self):
        rng = np.random.default_rng(0)
        for level in (0, 4, 9):
            p = level_params(SE, level)
            grid = generate(p, 100 + level)
            frac = _mc_steppable_fraction(grid, rng)
            assert frac == pytest.approx(1.0 - sparsity(p), abs=0.01)

    def test_deterministic_per_seed(self):
        p = level_params(SE, 0)
        a, b = generate(p, 42), generate(p, 42)
        assert a.heights.tobytes() == b.heights.tobytes()
        assert a.steppable.tobytes() == b.steppable.tobytes()

    def test_seeds_differ(self):
        p = level_params(SE, 0)
        assert not np.array_equal(generate(p, 42).heights,
                                  generate(p, 43).heights)

    def test_2rows_row_counts(self):
        counts = {generate(level_params(TerrainType.STONES_2ROWS, 0),
                           seed).meta["row_count"] for seed in range(100)}
        assert counts == {1, 2, 3}

    @pytest.mark.parametrize("terrain_type", list(TerrainType))
    def test_start_platform_steppable(self, terrain_type):
        grid = generate(level_params(terrain_type, 5), 7)
        x = np.full(200, grid.spawn_x) + np.linspace(-0.5, 0.5, 200)
        _, step = height_at(grid, x, np.zeros(200))
        assert step.all()

    def test_heights_within_bounds(self):
        for level in (0, 9):
            p = level_params(SE, level)
            grid = generate(p, 3)
            h = grid.heights[grid.steppable]
            assert h.min() >= -p.max_height - 1e-6
            assert h.max() <= p.max_height + 1e-6

    @pytest.mark.parametrize("terrain_type", list(TerrainType))
    def test_all_families_generate(self, terrain_type):
        for level in (0, 9):
            grid = generate(level_params(terrain_type, level), 11)
            assert grid.steppable.any()
            assert grid.heights.shape == grid.steppable.shape


class TestHeightAt:
    def test_stone_center(self):
        grid = generate(level_params(SE, 0), 5)
        ix, iy = np.argwhere(grid.steppable)[1000]
        x = grid.origin[0] + (ix + 0.5) * grid.cell_size
        y = grid.origin[1] + (iy + 0.5) * grid.cell_size
        h, step = height_at(grid, x, y)
        assert step and h == pytest.approx(grid.heights[ix, iy])

    def test_gap_returns_fall_height(self):
        grid = generate(level_params(SE, 9), 5)
        ix, iy = np.argwhere(~grid.steppable)[50]
        x = grid.origin[0] + (ix + 0.5) * grid.cell_size
        y = grid.origin[1] + (iy + 0.5) * grid.cell_size
        h, step = height_at(grid, x, y)
        assert not step and h == grid.fall_height

    def test_far_out_of_bounds(self):
        grid = generate(level_params(SE, 0), 5)
        h, step = height_at(grid, 1000.0, 1000.0)
        assert not step and h == grid.fall_height


class TestHeightScan:
    def test_flat_terrain_constant(self):
        grid = terrain.flat_grid()
        scan = height_scan(grid, np.array([0.0, 0.0, 0.6]), 0.0, np.zeros(2))
        assert scan.shape == (terrain.SCAN_DIM,)
        assert np.allclose(scan, -0.6)

    def test_drift_invariant_on_flat(self):
        grid = terrain.flat_grid()
        base = np.array([0.0, 0.0, 0.6])
        a = height_scan(grid, base, 0.3, np.zeros(2))
        b = height_scan(grid, base, 0.3, np.array([0.05, 0.0]))
        assert np.array_equal(a, b)

    def test_gap_cells_match_height_at(self):
        grid = generate(level_params(SE, 9), 5)
        base = np.array([3.0, 0.0, 0.6])
        yaw, drift = 0.4, np.array([0.02, -0.01])
        scan = height_scan(grid, base, yaw, drift)
        c, s = np.cos(yaw), np.sin(yaw)
        pts = terrain._SCAN_GRID
        px = base[0] + c * pts[:, 0] - s * pts[:, 1] + drift[0]
        py = base[1] + s * pts[:, 0] + c * pts[:, 1] + drift[1]
        h, _ = height_at(grid, px, py)
        assert np.array_equal(scan, np.clip(h - base[2], -1.0, 1.0))
        assert scan.min() == -1.0  # some sample hit a gap and clipped


class TestExport:
    def test_writes_all_artifacts(self, tmp_path):
        grid = generate(level_params(SE, 2), 9)
        written = terrain.export(grid, tmp_path)
        names = {p.name for p in written}
        assert names == {"heights.csv", "steppable.pgm", "params.yaml"}
        rows = (tmp_path / "heights.csv").read_text().strip().split("\n")
        assert len(rows) == grid.shape[0]
        pgm = (tmp_path / "steppable.pgm").read_bytes()
        assert pgm.startswith(b"P5\n")
